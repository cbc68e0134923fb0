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

// Command-line front end: extract, train, reconstruct, interpolate, sweep,
// serve.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lsynth/lsynth.hpp"

namespace fs = std::filesystem;
using namespace lsynth;

namespace {

struct CqtFlags {
  std::optional<double> f1;
  std::optional<int> bins_per_octave;
  std::optional<int> octaves;
  std::optional<int> hop;
  std::optional<double> q;
  std::optional<int> sample_rate;
  std::optional<std::string> window;

  void add(CLI::App* app) {
    app->add_option("--f1", f1, "lowest bin frequency in Hz (32.7)");
    app->add_option("--bins-per-octave", bins_per_octave, "bins per octave (48)");
    app->add_option("--octaves", octaves, "number of octaves (8)");
    app->add_option("--hop", hop, "hop size in samples (128)");
    app->add_option("--q", q, "bandwidth scaling in (0, 1] (1)");
    app->add_option("--sample-rate", sample_rate, "analysis sample rate (44100)");
    app->add_option("--window", window, "hann, hamming or blackman (hann)");
  }

  bool any() const {
    return f1 || bins_per_octave || octaves || hop || q || sample_rate || window;
  }

  CqtParams apply(CqtParams p) const {
    if (f1) p.f1 = *f1;
    if (bins_per_octave) p.bins_per_octave = *bins_per_octave;
    if (octaves) p.n_octaves = *octaves;
    if (hop) p.hop = *hop;
    if (q) p.q = *q;
    if (sample_rate) p.sample_rate = *sample_rate;
    if (window) p.window = parse_window(*window);
    p.validate();
    return p;
  }
};

struct PhaseFlags {
  int iterations = 32;
  double alpha = 1.0;
  std::string init = "zeros";
  bool no_normalize = false;

  void add(CLI::App* app) {
    app->add_option("--phase-iterations", iterations, "FGLA iterations, 0 to 64 (32)")
        ->check(CLI::Range(0, kMaxPhaseIterations));
    app->add_option("--alpha-fgla", alpha, "FGLA momentum (1.0)");
    app->add_option("--phase-init", init, "zeros or random (zeros)");
    app->add_flag("--no-normalize", no_normalize, "skip peak normalisation");
  }

  PhaseConfig config(std::uint64_t seed) const {
    PhaseConfig c;
    c.n_iters = iterations;
    c.alpha_fgla = alpha;
    c.seed = seed;
    if (init == "zeros")
      c.init = PhaseInit::Zeros;
    else if (init == "random")
      c.init = PhaseInit::Random;
    else
      throw ValidationError("--phase-init must be zeros or random");
    c.validate();
    return c;
  }
};

struct TrainFlags {
  std::string arch = "dense2048";
  std::string hidden;
  std::optional<int> latent;
  double lr = 1e-4;
  double kld = 5e-4;
  int epochs = 2000;
  int batch_size = 64;
  std::string warmup;

  void add(CLI::App* app) {
    app->add_option("--arch", arch, "dense2048 or deep_conv (dense2048)");
    app->add_option("--hidden", hidden, "comma-separated hidden widths, overriding the architecture");
    app->add_option("--latent", latent, "latent size, overriding the architecture");
    app->add_option("--lr", lr, "learning rate (1e-4)");
    app->add_option("--kld", kld, "KLD multiplier (5e-4)");
    app->add_option("--epochs", epochs, "epochs (2000)");
    app->add_option("--batch-size", batch_size, "batch size (64)");
    app->add_option("--kld-warmup", warmup, "linear warm-up start_epoch:end_epoch:start:end");
  }

  VaeArchitecture architecture(int input_dim) const {
    VaeArchitecture a = parse_arch_kind(arch) == ArchKind::DeepConv ? VaeArchitecture::deep_conv(input_dim)
                                                                    : VaeArchitecture::dense2048(input_dim);
    if (!hidden.empty()) {
      a.hidden.clear();
      std::stringstream ss(hidden);
      for (std::string tok; std::getline(ss, tok, ',');) a.hidden.push_back(std::stoi(tok));
    }
    if (latent) a.latent_dim = *latent;
    a.validate();
    return a;
  }

  TrainConfig config(std::uint64_t seed) const {
    TrainConfig c;
    c.learning_rate = lr;
    c.kld_multiplier = kld;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.seed = seed;
    if (!warmup.empty()) c.warmup = parse_warmup(warmup);
    c.validate();
    return c;
  }
};

std::vector<double> read_curve_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open curve file " + path.string());
  std::vector<double> v;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    std::istringstream ls(line);
    double a = 0;
    if (!(ls >> a) || !(ls >> std::ws).eof())
      throw FormatError(path.string() + ":" + std::to_string(n) + ": expected one number");
    v.push_back(a);
  }
  return v;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    std::size_t used = 0;
    v.push_back(std::stod(tok, &used));
    if (used != tok.size()) throw ValidationError("bad number '" + tok + "'");
  }
  return v;
}

void print_epoch(const EpochLoss& l) {
  std::cout << "epoch " << l.epoch << " multiplier " << format_number(l.multiplier)
            << " reconstruction " << format_number(l.reconstruction) << " kld "
            << format_number(l.kld) << " total " << format_number(l.total) << "\n"
            << std::flush;
}

SynthModel load_model(const fs::path& path, const CqtFlags& flags) {
  Checkpoint ck = load_checkpoint(path);
  if (flags.any() && !(flags.apply(ck.meta.cqt) == ck.meta.cqt))
    throw ValidationError("cqt flags do not match the parameters stored in " + path.string());
  return synth_model(ck, path.stem().string());
}

void write_output(const AudioBuffer& out, const fs::path& path) {
  write_wav(out, path);
  std::cout << "wrote " << path.string() << " (" << out.size() << " samples)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent timbre synthesis: CQT analysis, VAE training, latent interpolation"};
  app.require_subcommand(1);
  std::uint64_t seed = 42;
  app.add_option("--seed", seed, "seed for every random choice (42)");

  // extract
  auto* extract = app.add_subcommand("extract", "transform a directory of WAV files into a frame dataset");
  std::string audio_dir, dataset_out;
  CqtFlags extract_cqt;
  extract->add_option("audio_dir", audio_dir)->required();
  extract->add_option("-o,--out", dataset_out, "dataset file")->required();
  extract_cqt.add(extract);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a VAE on a frame dataset");
  std::string dataset_in, out_dir;
  double valid_fraction = 0;
  TrainFlags train_flags;
  train_cmd->add_option("dataset", dataset_in)->required();
  train_cmd->add_option("-o,--out-dir", out_dir, "directory for checkpoints and losses.csv")->required();
  train_cmd->add_option("--valid-fraction", valid_fraction, "held-out fraction reported after training (0)");
  train_flags.add(train_cmd);

  // reconstruct
  auto* recon = app.add_subcommand("reconstruct", "encode, decode and resynthesise one file");
  std::string ckpt, wav_in, wav_out;
  PhaseFlags recon_phase;
  CqtFlags recon_cqt;
  bool oracle_phase = false;
  recon->add_option("checkpoint", ckpt)->required();
  recon->add_option("wav_in", wav_in)->required();
  recon->add_option("wav_out", wav_out)->required();
  recon->add_flag("--oracle-phase", oracle_phase, "start phase recovery from the input's own phases");
  recon_phase.add(recon);
  recon_cqt.add(recon);

  // interpolate
  auto* interp = app.add_subcommand("interpolate", "blend two equal-length excerpts in latent space");
  std::string file1, file2, curve_file, interp_out;
  double start1 = 0, start2 = 0, duration = 0, max_extra = kDefaultMaxExtrapolation;
  std::optional<double> mix;
  bool swap = false;
  PhaseFlags interp_phase;
  CqtFlags interp_cqt;
  interp->add_option("checkpoint", ckpt)->required();
  interp->add_option("file1", file1)->required();
  interp->add_option("start1", start1, "seconds")->required();
  interp->add_option("file2", file2)->required();
  interp->add_option("start2", start2, "seconds")->required();
  interp->add_option("duration", duration, "seconds")->required();
  auto* curve_opt = interp->add_option("--curve", curve_file, "file with one mix value per line");
  interp->add_option("--mix", mix, "constant mix value")->excludes(curve_opt);
  interp->add_option("--max-extrapolation", max_extra, "largest allowed mix value (1.3)");
  interp->add_flag("--swap-weights", swap, "use a -> 1 - a");
  interp->add_option("-o,--out", interp_out, "output WAV")->required();
  interp_phase.add(interp);
  interp_cqt.add(interp);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "train once per KLD multiplier and report losses");
  std::string multipliers, report_out;
  TrainFlags sweep_flags;
  sweep->add_option("dataset", dataset_in)->required();
  sweep->add_option("--multipliers", multipliers, "comma-separated list")->required();
  sweep->add_option("-o,--out", report_out, "CSV report")->required();
  sweep_flags.add(sweep);

  // serve
  auto* serve = app.add_subcommand("serve", "run the synthesis service");
  std::string config_file;
  std::optional<std::string> host, model_dir, serve_audio_dir;
  std::optional<int> port;
  serve->add_option("--config", config_file, "key = value config file");
  serve->add_option("--host", host);
  serve->add_option("--port", port, "0 picks a free port");
  serve->add_option("--model-dir", model_dir);
  serve->add_option("--audio-dir", serve_audio_dir);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*extract) {
      const CqtParams p = extract_cqt.apply(CqtParams{});
      const auto ds = extract_frames(audio_dir, p);
      save_dataset(ds, dataset_out);
      std::cout << "frames " << ds.size() << "\nfiles " << ds.files.size() << "\nC "
                << format_number(ds.norm_constant) << "\n";
    } else if (*train_cmd) {
      auto ds = load_dataset(dataset_in);
      FrameDataset valid;
      if (valid_fraction > 0) std::tie(ds, valid) = split(ds, valid_fraction, seed);
      const auto arch = train_flags.architecture(static_cast<int>(ds.dim()));
      const auto cfg = train_flags.config(seed);
      fs::create_directories(out_dir);
      const auto res = train(ds, arch, cfg, print_epoch);
      CheckpointMeta meta{ds.params, seed, cfg.epochs - 1, res.log};
      save_checkpoint(res.final_model, meta, fs::path(out_dir) / "final.ckpt");
      meta.epoch = res.best_epoch;
      meta.losses.resize(static_cast<std::size_t>(res.best_epoch) + 1);
      save_checkpoint(res.best_model, meta, fs::path(out_dir) / "best.ckpt");
      write_file_bytes(fs::path(out_dir) / "losses.csv", loss_csv(res.log));
      if (!valid.empty()) {
        const auto v = res.final_model.evaluate(valid.frames, cfg.kld_multiplier);
        std::cout << "validation reconstruction " << format_number(v.reconstruction) << " kld "
                  << format_number(v.kld) << "\n";
      }
      std::cout << "best epoch " << res.best_epoch << "\n";
    } else if (*recon) {
      const SynthModel m = load_model(ckpt, recon_cqt);
      const CqtPlan plan(m.cqt);
      const AudioBuffer in = load_audio(wav_in, m.cqt.sample_rate);
      if (in.empty()) throw ValidationError("empty audio");
      PhaseConfig pc = recon_phase.config(seed);
      if (oracle_phase) {
        const auto spec = cqt_forward(in, plan);
        pc.init = PhaseInit::Provided;
        pc.provided_phases.resize(spec.data.size());
        for (std::size_t i = 0; i < spec.data.size(); ++i) pc.provided_phases[i] = std::arg(spec.data[i]);
      }
      const auto seq = encode_excerpt(in, {wav_in, 0.0, in.duration()}, m, plan);
      write_output(synthesize(seq, m, plan, pc, !recon_phase.no_normalize), wav_out);
    } else if (*interp) {
      const SynthModel m = load_model(ckpt, interp_cqt);
      const CqtPlan plan(m.cqt);
      InterpolationRequest req;
      req.first = {file1, start1, duration};
      req.second = {file2, start2, duration};
      if (mix)
        req.curve.values = {*mix};
      else if (!curve_file.empty())
        req.curve.values = read_curve_file(curve_file);
      else
        throw ValidationError("give either --mix or --curve");
      req.curve.max_extrapolation = max_extra;
      req.phase = interp_phase.config(seed);
      req.normalize = !interp_phase.no_normalize;
      req.swap_weights = swap;
      req.curve.validate();
      const AudioBuffer a1 = load_audio(file1, m.cqt.sample_rate);
      const AudioBuffer a2 = load_audio(file2, m.cqt.sample_rate);
      write_output(interpolate_two(a1, a2, req, m, plan), interp_out);
    } else if (*sweep) {
      const auto ds = load_dataset(dataset_in);
      const auto arch = sweep_flags.architecture(static_cast<int>(ds.dim()));
      const auto rep = kld_sweep(ds, parse_list(multipliers), arch, sweep_flags.config(seed),
                                 [](double m, const EpochLoss& l) {
                                   if ((l.epoch + 1) % 50 == 0) {
                                     std::cout << "[" << format_number(m) << "] ";
                                     print_epoch(l);
                                   }
                                 });
      write_file_bytes(report_out, rep.csv());
      for (const auto& r : rep.runs)
        std::cout << "multiplier " << format_number(r.multiplier) << " final reconstruction "
                  << format_number(r.final_loss.reconstruction) << "\n";
    } else if (*serve) {
      ServiceConfig cfg = load_config(config_file);
      if (host) cfg.host = *host;
      if (port) cfg.port = *port;
      if (model_dir) cfg.model_dir = *model_dir;
      if (serve_audio_dir) cfg.audio_dir = *serve_audio_dir;
      cfg.validate();
      SynthesisEngine engine(cfg);
      WebSocketServer server(engine, cfg.host, cfg.port);
      std::cout << "listening on " << cfg.host << ":" << server.port() << "\n" << std::flush;
      server.run_until_signal();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
