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

// Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when a
// gating criterion fails. Criterion 9 (throughput) is reported only.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include "lsynth/base64.hpp"
#include "lsynth/lsynth.hpp"
#include "test_support.hpp"

namespace {

using namespace lsynth;
using namespace lsynth::testing;
using Clock = std::chrono::steady_clock;
using nlohmann::json;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome cqt_round_trip() {
  const auto t0 = Clock::now();
  const CqtPlan plan{CqtParams{}};
  const auto x = sine(440.0, 1.0);
  const auto y = icqt(cqt_forward(x, plan), plan);
  const double secs = seconds_since(t0);
  const double snr = snr_db(x.samples, y.samples);
  return {snr >= 20.0 && secs < 10.0, "SNR " + fmt("%.1f", snr) + " dB (>= 20), " + fmt("%.2f", secs) + " s (< 10)"};
}

Outcome cqt_correctness() {
  const CqtParams p;
  const CqtPlan plan(p);
  const auto x = noise(0.25, 2026);
  const auto spec = cqt_forward(x, plan);
  double num = 0.0, den = 0.0;
  for (std::size_t t = 0; t < spec.n_frames; ++t)
    for (std::size_t k = 0; k < spec.n_bins; ++k) {
      const auto ref = direct_cqt(x.samples, p, k, t);
      num += std::norm(spec.at(t, k) - ref);
      den += std::norm(ref);
    }
  const double rel = std::sqrt(num / den);
  return {rel <= 1e-6, "relative Frobenius error " + fmt("%.2e", rel) + " (<= 1e-6)"};
}

std::vector<MagnitudeFrame> random_magnitudes(std::size_t frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<MagnitudeFrame> m(frames, MagnitudeFrame(384));
  for (auto& f : m)
    for (auto& v : f) v = u(rng);
  return m;
}

Outcome gla_monotone() {
  const CqtPlan plan{CqtParams{}};
  double worst = 0.0;  // largest relative increase seen
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto mag = random_magnitudes(48, seed);
    PhaseConfig c;
    c.n_iters = 32;
    double prev = -1.0;
    gla(mag, plan, c, [&](const PhaseIterate& it) {
      const double e = consistency_error(mag, it.signal, plan);
      if (prev > 0.0) worst = std::max(worst, (e - prev) / prev);
      prev = e;
    });
  }
  return {worst <= 1e-9, "max per-step relative increase " + fmt("%.2e", worst) + " (<= 1e-9) over 5 inputs x 32 iterations"};
}

Outcome fgla_vs_gla() {
  const CqtPlan plan{CqtParams{}};
  const double f0s[] = {82.4, 110.0, 146.8, 196.0, 220.0, 261.6, 329.6, 392.0, 440.0, 523.3};
  double sum_g = 0.0, sum_f = 0.0;
  bool bitwise = true;
  int i = 0;
  for (double f0 : f0s) {
    const auto mag = cqt_magnitude(cqt_forward(harmonic(f0, 0.3, 4 + i % 4), plan));
    PhaseConfig c;
    c.n_iters = 32;
    c.alpha_fgla = 1.0;
    const auto g = gla(mag, plan, c);
    const auto f = fgla(mag, plan, c);
    // Spectral SNR of the trimmed output against the target magnitudes.
    auto spectral_snr = [&](const AudioBuffer& y) {
      return -20.0 * std::log10(consistency_error(mag, y, plan));
    };
    sum_g += spectral_snr(g);
    sum_f += spectral_snr(f);
    if (i < 2) {
      c.alpha_fgla = 0.0;
      bitwise = bitwise && fgla(mag, plan, c).samples == g.samples;
    }
    ++i;
  }
  const double mg = sum_g / 10.0, mf = sum_f / 10.0;
  return {mf >= mg && bitwise, "mean spectral SNR FGLA " + fmt("%.2f", mf) + " dB vs GLA " + fmt("%.2f", mg) +
                                   " dB; FGLA(alpha=0) == GLA bitwise: " + (bitwise ? "yes" : "no")};
}

Outcome gradient_check_toy() {
  const auto m = gradcheck_model(VaeArchitecture::dense(16, {8}, 4), 17);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixT<double> x(16, 8), eps(4, 8);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = n(rng);
  const auto r = gradient_check(m, x, eps, 1.0);
  return {r.worst <= 1e-4 && r.checked > 0,
          "worst relative error " + fmt("%.2e", r.worst) + " (<= 1e-4) over " + std::to_string(r.checked) + " parameters"};
}

TrainConfig toy_config() {
  TrainConfig c;
  c.epochs = 200;
  return c;
}

VaeArchitecture toy_arch() { return VaeArchitecture::dense(384, {64}, 16); }

Outcome toy_training(VaeModel<float>& trained) {
  const auto ds = toy_dataset(200);
  const auto t0 = Clock::now();
  const auto a = train(ds, toy_arch(), toy_config());
  const double secs = seconds_since(t0);
  const auto b = train(ds, toy_arch(), toy_config());
  CheckpointMeta meta;
  meta.losses = a.log;
  CheckpointMeta meta_b;
  meta_b.losses = b.log;
  const bool same = serialize_checkpoint(a.final_model, meta) == serialize_checkpoint(b.final_model, meta_b);
  const double ratio = a.log.back().reconstruction / a.log.front().reconstruction;
  trained = a.final_model;
  return {ratio <= 0.5 && secs <= 300.0 && same,
          "final/epoch-1 reconstruction " + fmt("%.3f", ratio) + " (<= 0.5), " + fmt("%.1f", secs) +
              " s (<= 300), identical checkpoints: " + (same ? "yes" : "no")};
}

Outcome kld_collapse() {
  const auto ds = toy_dataset(200);
  const auto rep = kld_sweep(ds, {5e-4, 2.0}, toy_arch(), toy_config());
  const double lo = rep.runs[0].final_loss.reconstruction, hi = rep.runs[1].final_loss.reconstruction;
  return {hi >= 2.0 * lo, "reconstruction MSE " + fmt("%.4g", hi) + " at 2.0 vs " + fmt("%.4g", lo) +
                              " at 5e-4 (ratio " + fmt("%.2f", hi / lo) + ", >= 2)"};
}

Outcome interpolation_endpoints(const VaeModel<float>& trained) {
  SynthModel m{"toy", trained, CqtParams{}};
  const CqtPlan plan(m.cqt);
  const auto a = harmonic(196.0, 1.5), b = harmonic(293.7, 1.5, 3);
  const auto s1 = encode_excerpt(a, {"a", 0.1, 1.0}, m, plan);
  const auto s2 = encode_excerpt(b, {"b", 0.4, 1.0}, m, plan);
  const std::size_t t = s1.frames();
  const bool e0 = decode_magnitudes(mix_latents(s1, s2, resample_curve({0.0}, t)), m) == decode_magnitudes(s1, m);
  const bool e1 = decode_magnitudes(mix_latents(s1, s2, resample_curve({1.0}, t)), m) == decode_magnitudes(s2, m);
  const auto z0 = mix_latents(s1, s2, std::vector<double>(t, 0.0)).vectors;
  const auto z1 = mix_latents(s1, s2, std::vector<double>(t, 1.0)).vectors;
  double worst = 0.0;
  for (double v : {-0.3, 0.3, 0.5, 1.2, 1.3}) {
    const auto za = mix_latents(s1, s2, std::vector<double>(t, v)).vectors;
    worst = std::max(worst, ((za - z0) - v * (z1 - z0)).cwiseAbs().maxCoeff());
  }
  return {e0 && e1 && worst <= 1e-7, std::string("a=0 bit-equal: ") + (e0 ? "yes" : "no") + ", a=1 bit-equal: " +
                                         (e1 ? "yes" : "no") + ", affinity error " + fmt("%.1e", worst) + " (<= 1e-7)"};
}

Outcome throughput() {
  auto vae = VaeModel<float>::initialized(VaeArchitecture::dense2048(), 1);
  vae.norm_constant = 0.06;
  const SynthModel m{"dense2048", std::move(vae), CqtParams{}};
  const CqtPlan plan(m.cqt);
  const auto a = harmonic(220.0, 2.0), b = sine(330.0, 2.0);
  InterpolationRequest req;
  req.first = {"a", 0.0, 2.0};
  req.second = {"b", 0.0, 2.0};
  req.curve.values = {0.0, 1.0};
  req.phase.n_iters = 1;
  interpolate_two(a, b, req, m, plan);  // warm-up: preconditioner, caches
  const auto t0 = Clock::now();
  const auto y = interpolate_two(a, b, req, m, plan);
  const double secs = seconds_since(t0);
  return {secs <= 2.0, fmt("%.2f", secs) + " s for " + fmt("%.2f", y.duration()) +
                           " s of output at 1 phase iteration (target <= 2 s, Dense2048)"};
}

Outcome service_protocol() {
  TempDir root;
  std::filesystem::create_directories(root / "models");
  std::filesystem::create_directories(root / "audio");
  {
    auto vae = VaeModel<float>::initialized(VaeArchitecture::dense(384, {16}, 4), 3);
    vae.norm_constant = 0.06;
    save_checkpoint(vae, CheckpointMeta{}, root / "models" / "toy.ckpt");
  }
  write_wav(harmonic(220.0, 10.5), root / "audio" / "a.wav");
  write_wav(sine(440.0, 10.5), root / "audio" / "b.wav");
  ServiceConfig cfg;
  cfg.model_dir = root / "models";
  cfg.audio_dir = root / "audio";
  SynthesisEngine engine(cfg);
  WebSocketServer server(engine, "127.0.0.1", 0);
  server.start();
  WebSocketClient client("127.0.0.1", server.port());

  auto msg = [](const std::string& type, const std::string& id, json payload) {
    return json{{"type", type}, {"id", id}, {"payload", std::move(payload)}};
  };
  auto gen = [](double duration, int iters) {
    return json{{"model_id", "toy"}, {"file1", "a.wav"}, {"start1", 0.0}, {"file2", "b.wav"},
                {"start2", 0.25}, {"duration", duration}, {"curve", {0.0, 1.2}},
                {"phase_iterations", iters}, {"normalize", true}};
  };
  std::ostringstream why;

  // generate -> result
  client.send(msg("generate", "g1", gen(2.0, 2)));
  auto r = client.receive();
  if (r["type"] != "ok") return {false, "generate rejected: " + r.dump()};
  auto ev = client.receive();
  if (ev["type"] != "result" || ev["payload"]["state"] != "done" || !ev["wav_base64"].is_string())
    return {false, "bad result event: " + ev["payload"].dump()};
  const auto wav = decode_wav(base64_decode(ev["wav_base64"].get<std::string>()));
  const std::size_t expect = (frame_count(88200, 128) - 1) * 128;
  if (wav.size() != expect) return {false, "WAV has " + std::to_string(wav.size()) + " samples"};

  // replay
  const auto t_replay = Clock::now();
  client.send(msg("generate", "g2", gen(2.0, 2)));
  bool got_ok = false, got_replay = false;
  while (!(got_ok && got_replay)) {
    const auto m = client.receive();
    if (m["type"] == "ok") got_ok = m["payload"].value("replay", false);
    if (m["type"] == "result")
      got_replay = m["payload"].value("replay", false) && m["wav_base64"] == ev["wav_base64"];
    if (m["type"] == "error") return {false, "replay rejected: " + m.dump()};
    if (m["type"] == "result" && !got_replay) return {false, "replay returned different audio"};
  }
  const double replay_ms = 1000.0 * seconds_since(t_replay);

  // stop mid phase recovery
  client.send(msg("generate", "g3", gen(10.0, 64)));
  r = client.receive();
  if (r["type"] != "ok") return {false, "long generate rejected: " + r.dump()};
  const std::string job = r["payload"]["job_id"];
  double progress = 0.0;
  const auto deadline = Clock::now() + std::chrono::minutes(5);
  while (progress <= 0.0 && Clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    client.send(msg("status", "s", {{"job_id", job}}));
    const auto s = client.receive();
    if (s["payload"]["state"] != "running") return {false, "job left running state early: " + s.dump()};
    progress = s["payload"]["progress"];
  }
  const auto t0 = Clock::now();
  client.send(msg("stop", "x", {{"job_id", job}}));
  double stop_ms = -1.0;
  bool acked = false;
  while (stop_ms < 0.0 || !acked) {
    const auto m = client.receive();
    if (m["type"] == "ok" && m["id"] == "x") acked = true;
    if (m["type"] == "result") {
      if (m["payload"]["state"] != "cancelled") return {false, "stopped job ended " + m["payload"].dump()};
      stop_ms = 1000.0 * seconds_since(t0);
    }
  }
  why << "generate->result (" << wav.size() << " samples) -> replay (" << fmt("%.0f", replay_ms)
      << " ms) -> stop at progress " << fmt("%.3f", progress) << " cancelled in " << fmt("%.0f", stop_ms)
      << " ms (<= 200)";
  return {stop_ms <= 200.0, why.str()};
}

}  // namespace

int main() {
  int gating_failures = 0;
  auto report = [&](int n, bool gating, const std::function<Outcome()>& fn) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass && gating) ++gating_failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << (gating ? "" : " (non-gating)")
              << ": " << o.detail << " [" << fmt("%.1f", seconds_since(t0)) << " s]\n"
              << std::flush;
  };
  VaeModel<float> trained;
  report(1, true, cqt_round_trip);
  report(2, true, cqt_correctness);
  report(3, true, gla_monotone);
  report(4, true, fgla_vs_gla);
  report(5, true, gradient_check_toy);
  report(6, true, [&] { return toy_training(trained); });
  report(7, true, kld_collapse);
  report(8, true, [&] { return interpolation_endpoints(trained); });
  report(9, false, throughput);
  report(10, true, service_protocol);
  return gating_failures == 0 ? 0 : 1;
}
