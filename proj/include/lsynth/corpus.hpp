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

// Corpus ingestion, dataset and checkpoint files, and the multiplier sweep.

#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lsynth/audio_io.hpp"
#include "lsynth/cqt.hpp"
#include "lsynth/dataset.hpp"
#include "lsynth/errors.hpp"
#include "lsynth/tensor_io.hpp"
#include "lsynth/vae.hpp"

namespace lsynth {

inline nlohmann::json to_json(const CqtParams& p) {
  return {{"f1", p.f1},
          {"bins_per_octave", p.bins_per_octave},
          {"n_octaves", p.n_octaves},
          {"hop", p.hop},
          {"q", p.q},
          {"sample_rate", p.sample_rate},
          {"window", window_name(p.window)}};
}

inline CqtParams cqt_params_from_json(const nlohmann::json& j) {
  try {
    CqtParams p;
    p.f1 = j.at("f1").get<double>();
    p.bins_per_octave = j.at("bins_per_octave").get<int>();
    p.n_octaves = j.at("n_octaves").get<int>();
    p.hop = j.at("hop").get<int>();
    p.q = j.at("q").get<double>();
    p.sample_rate = j.at("sample_rate").get<int>();
    p.window = parse_window(j.at("window").get<std::string>());
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad cqt descriptor: ") + e.what());
  }
}

using WarningSink = std::function<void(const std::string&)>;

inline void warn_stderr(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

namespace detail {

inline bool is_wav(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".wav";
}

}  // namespace detail

// WAV files below dir, by lexicographic relative path.
inline std::vector<std::filesystem::path> list_audio_files(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (fs::recursive_directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec))
    if (it->is_regular_file() && detail::is_wav(it->path())) out.push_back(it->path());
  if (ec) throw IoError("cannot read " + dir.string() + ": " + ec.message());
  std::sort(out.begin(), out.end(), [&](const fs::path& a, const fs::path& b) {
    return a.lexically_relative(dir).generic_string() < b.lexically_relative(dir).generic_string();
  });
  return out;
}

// Transforms every readable WAV file below audio_dir and normalises all
// frames by one corpus-wide constant. Files are processed in parallel but
// concatenated in lexicographic order.
inline FrameDataset extract_frames(const std::filesystem::path& audio_dir, const CqtParams& params,
                                   const WarningSink& warn = warn_stderr,
                                   std::stop_token stop = {}, unsigned threads = 0) {
  params.validate();
  const auto files = list_audio_files(audio_dir);
  if (files.empty()) throw ValidationError("no audio found in " + audio_dir.string());
  const CqtPlan plan(params);

  struct Slot {
    std::vector<MagnitudeFrame> frames;
    std::string error;
  };
  std::vector<Slot> slots(files.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < files.size();) {
      if (stop.stop_requested()) return;
      try {
        auto audio = load_audio(files[i], params.sample_rate);
        slots[i].frames = cqt_magnitude(cqt_forward(audio, plan, stop));
      } catch (const Cancelled&) {
        return;
      } catch (const Error& e) {
        slots[i].error = e.what();
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, files.size()));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work);
    work();
  }
  if (stop.stop_requested()) throw Cancelled();

  FrameDataset ds;
  ds.params = params;
  double peak = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (!slots[i].error.empty()) {
      warn("skipping " + files[i].string() + ": " + slots[i].error);
      continue;
    }
    total += slots[i].frames.size();
    for (const auto& f : slots[i].frames)
      for (double v : f) peak = std::max(peak, v);
  }
  if (total == 0) throw ValidationError("no readable audio in " + audio_dir.string());
  if (!(peak > 0)) throw ValidationError("corpus is silent");
  ds.norm_constant = std::log1p(peak);
  ds.frames.resize(params.n_bins(), static_cast<Eigen::Index>(total));
  Eigen::Index col = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (!slots[i].error.empty()) continue;
    const int file_id = static_cast<int>(ds.files.size());
    ds.files.push_back(files[i].lexically_relative(audio_dir).generic_string());
    for (std::size_t t = 0; t < slots[i].frames.size(); ++t, ++col) {
      const auto& f = slots[i].frames[t];
      for (int k = 0; k < params.n_bins(); ++k)
        ds.frames(k, col) = static_cast<float>(normalize_magnitude(f[std::size_t(k)], ds.norm_constant));
      ds.sources.push_back({file_id, static_cast<int>(t)});
    }
  }
  return ds;
}

inline FrameDataset select_frames(const FrameDataset& ds, const std::vector<Eigen::Index>& cols) {
  FrameDataset out;
  out.params = ds.params;
  out.norm_constant = ds.norm_constant;
  out.files = ds.files;
  out.frames.resize(ds.frames.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out.frames.col(static_cast<Eigen::Index>(i)) = ds.frames.col(cols[i]);
    out.sources.push_back(ds.sources[static_cast<std::size_t>(cols[i])]);
  }
  return out;
}

// Seeded shuffle; round(valid_fraction * N) frames go to the validation
// set. Both halves keep the original frame order.
inline std::pair<FrameDataset, FrameDataset> split(const FrameDataset& ds, double valid_fraction,
                                                   std::uint64_t seed) {
  if (!(valid_fraction >= 0 && valid_fraction < 1))
    throw ValidationError("valid_fraction must lie in [0, 1)");
  const auto n = static_cast<Eigen::Index>(ds.size());
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  for (Eigen::Index i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<Eigen::Index> pick(0, i);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  const auto n_valid = static_cast<std::size_t>(std::llround(valid_fraction * static_cast<double>(n)));
  std::vector<Eigen::Index> valid(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_valid));
  std::vector<Eigen::Index> train(idx.begin() + static_cast<std::ptrdiff_t>(n_valid), idx.end());
  std::sort(valid.begin(), valid.end());
  std::sort(train.begin(), train.end());
  return {select_frames(ds, train), select_frames(ds, valid)};
}

inline std::string serialize_dataset(const FrameDataset& ds) {
  constexpr std::size_t kExactFloat = std::size_t{1} << 24;
  TensorFile f;
  f.header = {{"kind", "dataset"},
              {"cqt", to_json(ds.params)},
              {"norm_constant", ds.norm_constant},
              {"files", ds.files}};
  f.tensors.push_back(matrix_tensor("frames", ds.frames.transpose()));
  Tensor src;
  src.name = "source";
  src.dims = {static_cast<std::uint32_t>(ds.sources.size()), 2};
  for (const auto& s : ds.sources) {
    if (static_cast<std::size_t>(s.frame) >= kExactFloat || static_cast<std::size_t>(s.file) >= kExactFloat)
      throw ValidationError("frame index too large for the dataset format");
    src.data.push_back(static_cast<float>(s.file));
    src.data.push_back(static_cast<float>(s.frame));
  }
  f.tensors.push_back(std::move(src));
  return serialize_tensors(f);
}

inline FrameDataset parse_dataset(std::string_view bytes) {
  const TensorFile f = parse_tensors(bytes);
  if (f.header.value("kind", "") != "dataset") throw FormatError("not a dataset file");
  FrameDataset ds;
  try {
    ds.params = cqt_params_from_json(f.header.at("cqt"));
    ds.norm_constant = f.header.at("norm_constant").get<double>();
    ds.files = f.header.at("files").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad dataset header: ") + e.what());
  }
  ds.frames = tensor_matrix(f.at("frames")).transpose();
  const Tensor& src = f.at("source");
  if (ds.frames.rows() != ds.params.n_bins() || src.dims.size() != 2 || src.dims[1] != 2 ||
      src.dims[0] != ds.frames.cols())
    throw FormatError("dataset tensors do not match the header");
  for (std::size_t i = 0; i < src.dims[0]; ++i)
    ds.sources.push_back({static_cast<int>(src.data[2 * i]), static_cast<int>(src.data[2 * i + 1])});
  return ds;
}

inline void save_dataset(const FrameDataset& ds, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_dataset(ds));
}

inline FrameDataset load_dataset(const std::filesystem::path& path) {
  return parse_dataset(read_file_bytes(path));
}

struct CheckpointMeta {
  CqtParams cqt;
  std::uint64_t seed = 42;
  int epoch = 0;
  std::vector<EpochLoss> losses;
};

struct Checkpoint {
  VaeModel<float> model;
  CheckpointMeta meta;
  nlohmann::json header;  // as read from disk
};

inline nlohmann::json to_json(const EpochLoss& l) {
  return {{"epoch", l.epoch},
          {"multiplier", l.multiplier},
          {"reconstruction", l.reconstruction},
          {"kld", l.kld},
          {"total", l.total}};
}

inline std::string serialize_checkpoint(const VaeModel<float>& m, const CheckpointMeta& meta) {
  TensorFile f;
  nlohmann::json losses = nlohmann::json::array();
  for (const auto& l : meta.losses) losses.push_back(to_json(l));
  f.header = {{"kind", "checkpoint"},
              {"architecture", to_json(m.arch())},
              {"cqt", to_json(meta.cqt)},
              {"norm_constant", m.norm_constant},
              {"seed", meta.seed},
              {"epoch", meta.epoch},
              {"losses", losses}};
  m.for_each_tensor([&](const std::string& name, const MatrixT<float>& t) {
    f.tensors.push_back(matrix_tensor(name, t));
  });
  return serialize_tensors(f);
}

inline Checkpoint parse_checkpoint(std::string_view bytes) {
  const TensorFile f = parse_tensors(bytes);
  if (f.header.value("kind", "") != "checkpoint") throw FormatError("not a checkpoint file");
  Checkpoint c;
  c.header = f.header;
  try {
    c.model = VaeModel<float>(architecture_from_json(f.header.at("architecture")));
    c.model.norm_constant = f.header.at("norm_constant").get<double>();
    c.meta.cqt = cqt_params_from_json(f.header.at("cqt"));
    c.meta.seed = f.header.at("seed").get<std::uint64_t>();
    c.meta.epoch = f.header.at("epoch").get<int>();
    for (const auto& l : f.header.at("losses"))
      c.meta.losses.push_back({l.at("epoch").get<int>(), l.at("multiplier").get<double>(),
                               l.at("reconstruction").get<double>(), l.at("kld").get<double>(),
                               l.at("total").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  if (!(c.model.norm_constant > 0)) throw FormatError("checkpoint normalization constant must be positive");
  if (c.model.input_dim() != c.meta.cqt.n_bins())
    throw FormatError("checkpoint input size does not match its cqt bins");
  std::size_t used = 0;
  c.model.for_each_tensor([&](const std::string& name, MatrixT<float>& t) {
    if (!f.contains(name)) throw FormatError("missing tensor '" + name + "'");
    const Tensor& src = f.at(name);
    if (src.dims.size() != 2 || src.dims[0] != t.rows() || src.dims[1] != t.cols())
      throw FormatError("tensor-shape mismatch for '" + name + "'");
    t = tensor_matrix(src);
    ++used;
  });
  if (used != f.tensors.size()) throw FormatError("checkpoint has tensors the architecture does not use");
  if (!c.model.all_finite()) throw FormatError("checkpoint contains non-finite parameters");
  return c;
}

inline void save_checkpoint(const VaeModel<float>& m, const CheckpointMeta& meta,
                            const std::filesystem::path& path) {
  write_file_bytes(path, serialize_checkpoint(m, meta));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return parse_checkpoint(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string loss_csv(const std::vector<EpochLoss>& log) {
  std::string s = "epoch,multiplier,reconstruction,kld,total\n";
  for (const auto& l : log)
    s += std::to_string(l.epoch) + "," + format_number(l.multiplier) + "," +
         format_number(l.reconstruction) + "," + format_number(l.kld) + "," + format_number(l.total) + "\n";
  return s;
}

struct SweepRun {
  double multiplier = 0;
  std::vector<EpochLoss> log;
  LossBreakdown final_loss;  // mean latents over the whole dataset
};

struct SweepReport {
  std::vector<SweepRun> runs;

  // Per-epoch rows, then one "final" row per multiplier.
  std::string csv() const {
    std::string s = "multiplier,epoch,reconstruction,kld,total\n";
    for (const auto& r : runs)
      for (const auto& l : r.log)
        s += format_number(r.multiplier) + "," + std::to_string(l.epoch) + "," +
             format_number(l.reconstruction) + "," + format_number(l.kld) + "," +
             format_number(l.total) + "\n";
    for (const auto& r : runs)
      s += format_number(r.multiplier) + ",final," + format_number(r.final_loss.reconstruction) +
           "," + format_number(r.final_loss.kld) + "," + format_number(r.final_loss.total) + "\n";
    return s;
  }
};

// One training run per multiplier, all from base_cfg's seed.
inline SweepReport kld_sweep(const FrameDataset& ds, const std::vector<double>& multipliers,
                             const VaeArchitecture& arch, const TrainConfig& base_cfg,
                             const std::function<void(double, const EpochLoss&)>& on_epoch = {},
                             std::stop_token stop = {}) {
  if (multipliers.size() < 2) throw ValidationError("a sweep needs at least two multipliers");
  SweepReport rep;
  for (double m : multipliers) {
    TrainConfig cfg = base_cfg;
    cfg.kld_multiplier = m;
    auto cb = on_epoch ? EpochCallback([&](const EpochLoss& l) { on_epoch(m, l); }) : EpochCallback{};
    auto res = train(ds, arch, cfg, cb, stop);
    SweepRun run;
    run.multiplier = m;
    run.log = std::move(res.log);
    run.final_loss = res.final_model.evaluate(ds.frames, m);
    rep.runs.push_back(std::move(run));
  }
  return rep;
}

}  // namespace lsynth
