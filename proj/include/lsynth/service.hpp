// Copyright (c) 2026 The latentsynth Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Synthesis engine behind the JSON message protocol.
//
// Requests:  {"type": "list"|"generate"|"stop"|"status"|"peaks", "id", "payload"}
// Responses: {"type": "ok"|"error", "id", "payload"}
// Each generate is later answered by one event
//   {"type": "result", "id", "wav_base64", "payload": {job_id, state, ...}}
// whose state is done (wav_base64 set), cancelled or failed (wav_base64 null).
//
// One worker thread runs at most one job; a generate arriving while a job
// is queued or running is rejected as busy. Repeating the last completed
// generate payload replays its cached WAV.

#pragma once

#include <algorithm>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lsynth/audio_io.hpp"
#include "lsynth/base64.hpp"
#include "lsynth/config.hpp"
#include "lsynth/corpus.hpp"
#include "lsynth/errors.hpp"
#include "lsynth/latent_synth.hpp"

namespace lsynth {

inline constexpr const char* kCheckpointExtension = ".ckpt";

enum class JobState { Queued, Running, Done, Cancelled, Failed };

inline const char* job_state_name(JobState s) {
  switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Cancelled: return "cancelled";
    case JobState::Failed: return "failed";
  }
  return "?";
}

inline bool is_terminal(JobState s) {
  return s == JobState::Done || s == JobState::Cancelled || s == JobState::Failed;
}

struct GenerateRequest {
  std::string model_id;
  std::string file1;
  double start1 = 0;
  std::string file2;
  double start2 = 0;
  double duration = 0;
  std::vector<double> curve;
  int phase_iterations = 0;
  bool normalize = true;

  friend bool operator==(const GenerateRequest&, const GenerateRequest&) = default;

  nlohmann::json to_json() const {
    return {{"model_id", model_id}, {"file1", file1},   {"start1", start1},
            {"file2", file2},       {"start2", start2}, {"duration", duration},
            {"curve", curve},       {"phase_iterations", phase_iterations},
            {"normalize", normalize}};
  }

  // Exactly the nine payload keys, with JSON types checked.
  static GenerateRequest from_json(const nlohmann::json& p) {
    static const char* keys[] = {"model_id", "file1",    "start1", "file2", "start2",
                                 "duration", "curve", "phase_iterations", "normalize"};
    if (!p.is_object()) throw ValidationError("generate payload must be an object");
    for (const char* k : keys)
      if (!p.contains(k)) throw ValidationError(std::string("missing field '") + k + "'");
    for (const auto& [k, v] : p.items())
      if (std::find_if(std::begin(keys), std::end(keys), [&](const char* x) { return k == x; }) ==
          std::end(keys))
        throw ValidationError("unknown field '" + k + "'");
    auto str = [&](const char* k) {
      if (!p[k].is_string()) throw ValidationError(std::string(k) + " must be a string");
      return p[k].get<std::string>();
    };
    auto num = [&](const char* k) {
      if (!p[k].is_number()) throw ValidationError(std::string(k) + " must be a number");
      return p[k].get<double>();
    };
    GenerateRequest r;
    r.model_id = str("model_id");
    r.file1 = str("file1");
    r.file2 = str("file2");
    r.start1 = num("start1");
    r.start2 = num("start2");
    r.duration = num("duration");
    if (!p["curve"].is_array()) throw ValidationError("curve must be an array of numbers");
    for (const auto& v : p["curve"]) {
      if (!v.is_number()) throw ValidationError("curve must be an array of numbers");
      r.curve.push_back(v.get<double>());
    }
    if (!p["phase_iterations"].is_number_integer())
      throw ValidationError("phase_iterations must be an integer");
    const auto iters = p["phase_iterations"].get<long long>();
    if (iters < 1 || iters > kMaxPhaseIterations)
      throw ValidationError("phase_iterations must lie in [1, 64]");
    r.phase_iterations = static_cast<int>(iters);
    if (!p["normalize"].is_boolean()) throw ValidationError("normalize must be a boolean");
    r.normalize = p["normalize"].get<bool>();
    return r;
  }
};

// Per-bucket minimum and maximum of the samples in [start, start+duration).
struct Peaks {
  std::vector<double> min;
  std::vector<double> max;
};

inline Peaks compute_peaks(std::span<const double> x, std::size_t buckets) {
  if (buckets == 0) throw ValidationError("peaks: bucket count must be positive");
  Peaks p;
  p.min.assign(buckets, 0.0);
  p.max.assign(buckets, 0.0);
  for (std::size_t b = 0; b < buckets; ++b) {
    const std::size_t lo = b * x.size() / buckets, hi = (b + 1) * x.size() / buckets;
    if (lo >= hi) continue;
    const auto [mn, mx] = std::minmax_element(x.begin() + static_cast<std::ptrdiff_t>(lo),
                                              x.begin() + static_cast<std::ptrdiff_t>(hi));
    p.min[b] = *mn;
    p.max[b] = *mx;
  }
  return p;
}

using EventSink = std::function<void(const nlohmann::json&)>;

class SynthesisEngine {
 public:
  // Missing directories are a startup error. With start_worker false, jobs
  // stay queued until start() is called.
  explicit SynthesisEngine(ServiceConfig cfg, bool start_worker = true) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (!std::filesystem::is_directory(cfg_.model_dir))
      throw IoError("model directory not found: " + cfg_.model_dir.string());
    if (!std::filesystem::is_directory(cfg_.audio_dir))
      throw IoError("audio directory not found: " + cfg_.audio_dir.string());
    if (start_worker) start();
  }

  void start() {
    if (!worker_.joinable()) worker_ = std::jthread([this](std::stop_token st) { work(st); });
  }

  ~SynthesisEngine() {
    {
      std::lock_guard lk(mu_);
      for (auto& [id, job] : jobs_) job->stop.request_stop();
    }
    worker_.request_stop();
    cv_.notify_all();
  }

  SynthesisEngine(const SynthesisEngine&) = delete;
  SynthesisEngine& operator=(const SynthesisEngine&) = delete;

  const ServiceConfig& config() const { return cfg_; }

  // Parses one text message. Invalid JSON yields an error response with an
  // empty id. Events for generate requests go to sink, possibly before
  // this call returns.
  nlohmann::json handle_text(std::string_view text, EventSink sink) {
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
      return error_response("", "bad_request", "message is not valid JSON");
    }
    return handle(req, std::move(sink));
  }

  nlohmann::json handle(const nlohmann::json& req, EventSink sink) {
    if (!req.is_object() || !req.contains("type") || !req["type"].is_string())
      return error_response(request_id(req), "bad_request", "message needs a string 'type'");
    const std::string id = request_id(req);
    if (!req.contains("id") || !req["id"].is_string())
      return error_response(id, "bad_request", "message needs a string 'id'");
    const nlohmann::json payload = req.value("payload", nlohmann::json::object());
    const std::string type = req["type"].get<std::string>();
    try {
      if (type == "list") return ok_response(id, list_resources());
      if (type == "generate") return generate(id, payload, std::move(sink));
      if (type == "stop") return ok_response(id, stop(job_id_of(payload)));
      if (type == "status") return ok_response(id, status(job_id_of(payload)));
      if (type == "peaks") return ok_response(id, peaks(payload));
      return error_response(id, "bad_request", "unknown message type '" + type + "'");
    } catch (const Busy& e) {
      return error_response(id, "busy", e.what());
    } catch (const UnknownJob& e) {
      return error_response(id, "unknown_job", e.what());
    } catch (const ValidationError& e) {
      return error_response(id, "validation", e.what());
    } catch (const Error& e) {
      return error_response(id, "error", e.what());
    }
  }

  nlohmann::json list_resources() {
    nlohmann::json models = nlohmann::json::array();
    for (const auto& path : checkpoint_files()) {
      nlohmann::json m{{"id", path.stem().string()}};
      try {
        const auto ck = load_checkpoint(path);
        m["architecture"] = ck.header.at("architecture");
        m["cqt"] = ck.header.at("cqt");
        m["epoch"] = ck.meta.epoch;
        m["losses"] = ck.header.at("losses");
      } catch (const Error& e) {
        m["error"] = e.what();
      }
      models.push_back(std::move(m));
    }
    nlohmann::json files = nlohmann::json::array();
    for (const auto& path : list_audio_files(cfg_.audio_dir)) {
      const std::string id = path.lexically_relative(cfg_.audio_dir).generic_string();
      nlohmann::json f{{"id", id}};
      try {
        auto a = native_audio(id);
        f["duration"] = a->duration();
        f["sample_rate"] = a->sample_rate;
        f["samples"] = a->size();
      } catch (const Error& e) {
        f["error"] = e.what();
      }
      files.push_back(std::move(f));
    }
    return {{"models", models}, {"audio_files", files}};
  }

  nlohmann::json status(const std::string& job_id) {
    std::lock_guard lk(mu_);
    const auto& job = find_job(job_id);
    nlohmann::json s{{"job_id", job->id},
                     {"state", job_state_name(job->state)},
                     {"progress", job->progress}};
    if (!job->error.empty()) s["error"] = job->error;
    return s;
  }

  // Queued jobs are cancelled at once; a running job is cancelled by the
  // worker as soon as it observes the request. Finished jobs are left as
  // they are.
  nlohmann::json stop(const std::string& job_id) {
    std::shared_ptr<Job> job;
    bool cancelled_now = false;
    {
      std::lock_guard lk(mu_);
      job = find_job(job_id);
      if (job->state == JobState::Queued) {
        job->state = JobState::Cancelled;
        if (pending_ == job) pending_.reset();
        cancelled_now = true;
      } else if (job->state == JobState::Running) {
        job->stop.request_stop();
      }
    }
    if (cancelled_now) emit_terminal(*job, nullptr);
    std::lock_guard lk(mu_);
    return {{"job_id", job->id}, {"state", job_state_name(job->state)},
            {"stop_requested", job->stop.stop_requested()}};
  }

  nlohmann::json peaks(const nlohmann::json& p) {
    if (!p.is_object() || !p.contains("file") || !p["file"].is_string())
      throw ValidationError("peaks needs a string 'file'");
    if (!p.contains("buckets") || !p["buckets"].is_number_integer())
      throw ValidationError("peaks needs an integer 'buckets'");
    const auto buckets = p["buckets"].get<long long>();
    if (buckets < 1 || buckets > 1'000'000) throw ValidationError("buckets must lie in [1, 1000000]");
    const auto audio = native_audio(p["file"].get<std::string>());
    ExcerptSelection sel{p["file"].get<std::string>(), p.value("start", 0.0),
                         p.value("duration", audio->duration() - p.value("start", 0.0))};
    const auto [first, count] = excerpt_range(*audio, sel);
    const auto pk = compute_peaks(std::span<const double>(audio->samples).subspan(first, count),
                                  static_cast<std::size_t>(buckets));
    return {{"file", sel.file},         {"start", sel.start}, {"duration", sel.duration},
            {"sample_rate", audio->sample_rate}, {"buckets", buckets},
            {"min", pk.min},            {"max", pk.max}};
  }

 private:
  struct Busy : Error {
    using Error::Error;
  };
  struct UnknownJob : ValidationError {
    using ValidationError::ValidationError;
  };

  struct Job {
    std::string id;
    std::string request_id;
    GenerateRequest req;
    JobState state = JobState::Queued;
    double progress = 0;
    std::string error;
    std::stop_source stop;
    EventSink sink;
    bool reported = false;
    // Resolved at validation time.
    std::shared_ptr<const SynthModel> model;
    std::shared_ptr<const CqtPlan> plan;
    std::shared_ptr<const AudioBuffer> audio1, audio2;
  };

  struct LoadedModel {
    std::filesystem::file_time_type mtime;
    std::shared_ptr<const SynthModel> model;
    std::shared_ptr<const CqtPlan> plan;
  };

  static nlohmann::json ok_response(const std::string& id, nlohmann::json payload) {
    return {{"type", "ok"}, {"id", id}, {"payload", std::move(payload)}};
  }

  static nlohmann::json error_response(const std::string& id, const std::string& code,
                                       const std::string& message) {
    return {{"type", "error"}, {"id", id}, {"payload", {{"code", code}, {"message", message}}}};
  }

  static std::string request_id(const nlohmann::json& req) {
    if (req.is_object() && req.contains("id") && req["id"].is_string()) return req["id"].get<std::string>();
    return "";
  }

  static std::string job_id_of(const nlohmann::json& p) {
    if (!p.is_object() || !p.contains("job_id") || !p["job_id"].is_string())
      throw ValidationError("payload needs a string 'job_id'");
    return p["job_id"].get<std::string>();
  }

  const std::shared_ptr<Job>& find_job(const std::string& id) const {
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw UnknownJob("unknown job '" + id + "'");
    return it->second;
  }

  std::vector<std::filesystem::path> checkpoint_files() const {
    namespace fs = std::filesystem;
    std::vector<fs::path> out;
    std::error_code ec;
    for (fs::directory_iterator it(cfg_.model_dir, ec), end; !ec && it != end; it.increment(ec))
      if (it->is_regular_file() && it->path().extension() == kCheckpointExtension)
        out.push_back(it->path());
    if (ec) throw IoError("cannot read " + cfg_.model_dir.string() + ": " + ec.message());
    std::sort(out.begin(), out.end());
    return out;
  }

  // Only ids that list_resources reports are accepted, so requests cannot
  // reach outside the configured directories.
  std::filesystem::path audio_path(const std::string& id) const {
    for (const auto& p : list_audio_files(cfg_.audio_dir))
      if (p.lexically_relative(cfg_.audio_dir).generic_string() == id) return p;
    throw ValidationError("unknown audio file '" + id + "'");
  }

  std::shared_ptr<const AudioBuffer> native_audio(const std::string& id) {
    const auto path = audio_path(id);
    std::lock_guard lk(cache_mu_);
    auto& slot = native_cache_[id];
    if (!slot) slot = std::make_shared<const AudioBuffer>(decode_wav(read_file_bytes(path)));
    return slot;
  }

  std::shared_ptr<const AudioBuffer> audio_at(const std::string& id, int rate) {
    auto native = native_audio(id);
    if (native->sample_rate == rate) return native;
    std::lock_guard lk(cache_mu_);
    auto& slot = resampled_cache_[{id, rate}];
    if (!slot) {
      AudioBuffer b;
      b.sample_rate = rate;
      b.samples = resample(native->samples, native->sample_rate, rate);
      slot = std::make_shared<const AudioBuffer>(std::move(b));
    }
    return slot;
  }

  LoadedModel model(const std::string& id) {
    namespace fs = std::filesystem;
    for (const auto& path : checkpoint_files()) {
      if (path.stem().string() != id) continue;
      const auto mtime = fs::last_write_time(path);
      std::lock_guard lk(cache_mu_);
      auto it = model_cache_.find(id);
      if (it != model_cache_.end() && it->second.mtime == mtime) return it->second;
      LoadedModel m;
      m.mtime = mtime;
      auto sm = std::make_shared<SynthModel>(synth_model(load_checkpoint(path), id));
      m.plan = std::make_shared<const CqtPlan>(sm->cqt);
      m.model = std::move(sm);
      model_cache_[id] = m;
      return m;
    }
    throw ValidationError("unknown model '" + id + "'");
  }

  nlohmann::json generate(const std::string& rid, const nlohmann::json& payload, EventSink sink) {
    GenerateRequest req = GenerateRequest::from_json(payload);
    InterpolationCurve curve{req.curve, cfg_.max_extrapolation};
    curve.validate();
    {
      std::lock_guard lk(mu_);
      if (pending_ || running_) throw Busy("a job is already in progress");
      if (last_ && last_->req == req) {
        // Play Again: no recomputation.
        nlohmann::json ev{{"type", "result"},
                          {"id", rid},
                          {"wav_base64", last_wav_base64_},
                          {"payload", {{"job_id", last_->id}, {"state", "done"}, {"replay", true},
                                       {"samples", last_samples_}, {"sample_rate", last_rate_}}}};
        if (sink) sink(ev);
        return ok_response(rid, {{"job_id", last_->id}, {"state", "done"}, {"replay", true}});
      }
    }
    auto job = std::make_shared<Job>();
    const LoadedModel m = model(req.model_id);
    job->model = m.model;
    job->plan = m.plan;
    job->audio1 = audio_at(req.file1, m.model->cqt.sample_rate);
    job->audio2 = audio_at(req.file2, m.model->cqt.sample_rate);
    excerpt_range(*job->audio1, {req.file1, req.start1, req.duration});
    excerpt_range(*job->audio2, {req.file2, req.start2, req.duration});
    job->req = std::move(req);
    job->request_id = rid;
    job->sink = std::move(sink);
    {
      std::lock_guard lk(mu_);
      if (pending_ || running_) throw Busy("a job is already in progress");
      job->id = "job-" + std::to_string(++job_counter_);
      jobs_[job->id] = job;
      pending_ = job;
    }
    cv_.notify_all();
    return ok_response(rid, {{"job_id", job->id}, {"state", "queued"}});
  }

  void emit_terminal(Job& job, const std::string* wav_base64) {
    nlohmann::json ev;
    {
      std::lock_guard lk(mu_);
      if (job.reported) return;
      job.reported = true;
      ev = {{"type", "result"},
            {"id", job.request_id},
            {"wav_base64", wav_base64 ? nlohmann::json(*wav_base64) : nlohmann::json(nullptr)},
            {"payload", {{"job_id", job.id}, {"state", job_state_name(job.state)}}}};
      if (job.state == JobState::Done) {
        ev["payload"]["samples"] = last_samples_;
        ev["payload"]["sample_rate"] = last_rate_;
      }
      if (!job.error.empty()) ev["payload"]["error"] = job.error;
    }
    if (job.sink) job.sink(ev);
  }

  void work(std::stop_token st) {
    while (true) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, st, [&] { return pending_ != nullptr; });
        if (st.stop_requested()) return;
        job = std::move(pending_);
        pending_.reset();
        if (job->state != JobState::Queued) continue;
        job->state = JobState::Running;
        running_ = job;
      }
      run(*job);
    }
  }

  void run(Job& job) {
    InterpolationRequest ir;
    ir.first = {job.req.file1, job.req.start1, job.req.duration};
    ir.second = {job.req.file2, job.req.start2, job.req.duration};
    ir.curve = {job.req.curve, cfg_.max_extrapolation};
    ir.phase.n_iters = job.req.phase_iterations;
    ir.normalize = job.req.normalize;
    auto progress = [&](double f) {
      std::lock_guard lk(mu_);
      job.progress = std::max(job.progress, std::clamp(f, 0.0, 1.0));
    };
    std::string wav;
    JobState final_state = JobState::Done;
    std::string error;
    std::size_t samples = 0;
    try {
      const AudioBuffer out = interpolate_two(*job.audio1, *job.audio2, ir, *job.model, *job.plan,
                                              progress, job.stop.get_token());
      samples = out.size();
      wav = base64_encode(encode_wav(out));
    } catch (const Cancelled&) {
      final_state = JobState::Cancelled;
    } catch (const std::exception& e) {
      final_state = JobState::Failed;
      error = e.what();
    }
    {
      std::lock_guard lk(mu_);
      job.state = final_state;
      job.error = error;
      running_.reset();
      if (final_state == JobState::Done) {
        job.progress = 1.0;
        last_ = jobs_.at(job.id);
        last_wav_base64_ = std::move(wav);
        last_samples_ = samples;
        last_rate_ = job.model->cqt.sample_rate;
      }
    }
    emit_terminal(job, final_state == JobState::Done ? &last_wav_base64_ : nullptr);
  }

  ServiceConfig cfg_;
  std::mutex mu_;  // job table, pending/running slots, result cache
  std::condition_variable_any cv_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::shared_ptr<Job> pending_, running_;
  std::shared_ptr<Job> last_;
  std::string last_wav_base64_;
  std::size_t last_samples_ = 0;
  int last_rate_ = 0;
  long job_counter_ = 0;

  std::mutex cache_mu_;
  std::map<std::string, std::shared_ptr<const AudioBuffer>> native_cache_;
  std::map<std::pair<std::string, int>, std::shared_ptr<const AudioBuffer>> resampled_cache_;
  std::map<std::string, LoadedModel> model_cache_;

  std::jthread worker_;  // last member: joined before the rest is destroyed
};

}  // namespace lsynth
