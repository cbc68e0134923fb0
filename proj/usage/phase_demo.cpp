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

// Analyse a mono file (or a generated tone), resynthesise it from the full
// spectrogram and from magnitudes alone, and write the three results.
//
//   lsynth_phase_demo [input.wav] [out_dir]

#include <cmath>
#include <filesystem>
#include <iostream>
#include <numbers>

#include "lsynth/lsynth.hpp"

namespace {

lsynth::AudioBuffer harmonic_tone(double f0, double seconds, int rate) {
  lsynth::AudioBuffer buf;
  buf.sample_rate = rate;
  buf.samples.resize(std::size_t(seconds * rate));
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const double t = double(i) / rate;
    double s = 0.0;
    for (int h = 1; h <= 6; ++h) s += std::sin(2 * std::numbers::pi * f0 * h * t) / h;
    buf.samples[i] = s * std::exp(-2.0 * t);
  }
  return lsynth::peak_normalize(std::move(buf));
}

}  // namespace

int main(int argc, char** argv) try {
  namespace fs = std::filesystem;
  const lsynth::CqtParams params;
  const lsynth::CqtPlan plan(params);
  const fs::path out_dir = argc > 2 ? fs::path(argv[2]) : fs::path(".");
  fs::create_directories(out_dir);

  const lsynth::AudioBuffer input = argc > 1 ? lsynth::load_audio(argv[1], params.sample_rate)
                                             : harmonic_tone(220.0, 1.0, params.sample_rate);
  const auto spec = lsynth::cqt_forward(input, plan);
  const auto mag = lsynth::cqt_magnitude(spec);
  std::cout << spec.n_frames << " frames x " << spec.n_bins << " bins\n";

  const auto inverse = lsynth::icqt(spec, plan);
  std::cout << "icqt          consistency " << lsynth::consistency_error(mag, inverse, plan) << "\n";

  lsynth::PhaseConfig cfg;
  cfg.n_iters = 32;
  const auto slow = lsynth::gla(mag, plan, cfg);
  std::cout << "gla  (32 it)  consistency " << lsynth::consistency_error(mag, slow, plan) << "\n";
  const auto fast = lsynth::fgla(mag, plan, cfg);
  std::cout << "fgla (32 it)  consistency " << lsynth::consistency_error(mag, fast, plan) << "\n";

  lsynth::write_wav(lsynth::peak_normalize(inverse), out_dir / "icqt.wav");
  lsynth::write_wav(lsynth::peak_normalize(slow), out_dir / "gla.wav");
  lsynth::write_wav(lsynth::peak_normalize(fast), out_dir / "fgla.wav");
  return 0;
} catch (const lsynth::Error& e) {
  std::cerr << "error: " << e.what() << "\n";
  return 1;
}
