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

// Two-excerpt latent interpolation: encode both excerpts frame by frame to
// encoder means, blend per frame along a curve, decode, undo the magnitude
// normalisation and recover phase with FGLA.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stop_token>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lsynth/audio_io.hpp"
#include "lsynth/corpus.hpp"
#include "lsynth/cqt.hpp"
#include "lsynth/errors.hpp"
#include "lsynth/phase_recovery.hpp"
#include "lsynth/vae.hpp"

namespace lsynth {

inline constexpr double kDefaultMaxExtrapolation = 1.3;

struct SynthModel {
  std::string id;
  VaeModel<float> vae;
  CqtParams cqt;
};

inline SynthModel synth_model(const Checkpoint& c, std::string id) {
  return {std::move(id), c.model, c.meta.cqt};
}

struct ExcerptSelection {
  std::string file;
  double start = 0;     // seconds
  double duration = 0;  // seconds
};

// Encoder means, one column per frame (latent_dim x T).
struct LatentSequence {
  Eigen::MatrixXd vectors;
  CqtParams params;
  std::string model_id;

  std::size_t frames() const { return static_cast<std::size_t>(vectors.cols()); }
};

struct InterpolationCurve {
  std::vector<double> values;
  double max_extrapolation = kDefaultMaxExtrapolation;

  // Out-of-range values are rejected, never clamped.
  void validate() const {
    if (!(max_extrapolation >= 1.0) || !std::isfinite(max_extrapolation))
      throw ValidationError("max extrapolation must be a finite value >= 1");
    if (values.empty()) throw ValidationError("interpolation curve is empty");
    const double lo = 1.0 - max_extrapolation, hi = max_extrapolation;
    for (double a : values)
      if (!std::isfinite(a) || a < lo || a > hi)
        throw ValidationError("mix value " + format_number(a) + " outside [" + format_number(lo) +
                              ", " + format_number(hi) + "]");
  }
};

// Curve drawn on the [-bound, bound] axis of the UI to mix value a.
inline double ui_to_mix(double v) { return (v + 1.0) / 2.0; }

// Sample range [first, first + count) of a selection.
inline std::pair<std::size_t, std::size_t> excerpt_range(const AudioBuffer& audio,
                                                         const ExcerptSelection& sel) {
  if (!std::isfinite(sel.start) || !std::isfinite(sel.duration) || sel.start < 0)
    throw ValidationError("excerpt start must be >= 0");
  if (!(sel.duration > 0)) throw ValidationError("excerpt duration must be positive");
  const double sr = audio.sample_rate;
  const auto first = static_cast<std::size_t>(std::llround(sel.start * sr));
  const auto count = static_cast<std::size_t>(std::llround(sel.duration * sr));
  if (count == 0) throw ValidationError("excerpt shorter than one sample");
  if (first + count > audio.size())
    throw ValidationError("excerpt " + format_number(sel.start) + "+" + format_number(sel.duration) +
                          " s exceeds file length " + format_number(audio.duration()) + " s");
  return {first, count};
}

inline LatentSequence encode_excerpt(const AudioBuffer& audio, const ExcerptSelection& sel,
                                     const SynthModel& model, const CqtPlan& plan,
                                     std::stop_token stop = {}) {
  if (!(plan.params() == model.cqt))
    throw ValidationError("model was trained with different cqt parameters");
  if (audio.sample_rate != model.cqt.sample_rate)
    throw ValidationError("audio sample rate does not match the model");
  if (model.vae.input_dim() != model.cqt.n_bins())
    throw ValidationError("model input size does not match the cqt bins");
  const auto [first, count] = excerpt_range(audio, sel);
  const auto spec = cqt_forward(slice(audio, first, count), plan, stop);
  const double c = model.vae.norm_constant;
  MatrixT<float> x(spec.n_bins, static_cast<Eigen::Index>(spec.n_frames));
  for (std::size_t t = 0; t < spec.n_frames; ++t)
    for (std::size_t k = 0; k < spec.n_bins; ++k)
      x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) =
          static_cast<float>(normalize_magnitude(std::abs(spec.at(t, k)), c));
  detail::check_stop(stop);
  LatentSequence seq;
  seq.vectors = model.vae.encode_batch(x).first.cast<double>();
  seq.params = model.cqt;
  seq.model_id = model.id;
  return seq;
}

// Linear resampling over normalised position; endpoints are kept.
inline std::vector<double> resample_curve(const std::vector<double>& curve, std::size_t n) {
  if (curve.empty()) throw ValidationError("interpolation curve is empty");
  if (n == curve.size()) return curve;
  std::vector<double> out(n);
  if (n == 0) return out;
  if (curve.size() == 1 || n == 1) {
    std::fill(out.begin(), out.end(), curve.front());
    return out;
  }
  const double scale = double(curve.size() - 1) / double(n - 1);
  for (std::size_t t = 0; t < n; ++t) {
    const double pos = t * scale;
    const auto i = std::min(static_cast<std::size_t>(pos), curve.size() - 2);
    const double f = pos - double(i);
    out[t] = f == 0.0 ? curve[i] : curve[i] + f * (curve[i + 1] - curve[i]);
  }
  out.back() = curve.back();
  return out;
}

// z_t = (1 - a_t) z1_t + a_t z2_t. With swap_weights the roles of the two
// weights are exchanged (a -> 1 - a).
inline LatentSequence mix_latents(const LatentSequence& s1, const LatentSequence& s2,
                                  const std::vector<double>& mix, bool swap_weights = false) {
  if (s1.vectors.rows() != s2.vectors.rows() || s1.frames() != s2.frames() ||
      mix.size() != s1.frames())
    throw ValidationError("mix_latents: length mismatch");
  if (s1.model_id != s2.model_id) throw ValidationError("mix_latents: sequences from different models");
  LatentSequence out = s1;
  for (Eigen::Index t = 0; t < out.vectors.cols(); ++t) {
    const double a = swap_weights ? 1.0 - mix[std::size_t(t)] : mix[std::size_t(t)];
    out.vectors.col(t) = (1.0 - a) * s1.vectors.col(t) + a * s2.vectors.col(t);
  }
  return out;
}

// Decoder output mapped back to linear magnitudes, one frame per vector.
inline std::vector<MagnitudeFrame> decode_magnitudes(const LatentSequence& seq,
                                                     const SynthModel& model) {
  if (seq.vectors.rows() != model.vae.latent_dim())
    throw ValidationError("latent sequence does not match the model");
  if (seq.frames() == 0) throw ValidationError("latent sequence is empty");
  const MatrixT<float> y = model.vae.decode_batch(seq.vectors.cast<float>());
  if (!y.allFinite()) throw Error("decoder produced non-finite output");
  const double c = model.vae.norm_constant;
  std::vector<MagnitudeFrame> mag(seq.frames(), MagnitudeFrame(std::size_t(y.rows())));
  for (Eigen::Index t = 0; t < y.cols(); ++t)
    for (Eigen::Index k = 0; k < y.rows(); ++k)
      mag[std::size_t(t)][std::size_t(k)] = denormalize_magnitude(y(k, t), c);
  return mag;
}

using ProgressFn = std::function<void(double)>;

inline AudioBuffer synthesize(const LatentSequence& seq, const SynthModel& model, const CqtPlan& plan,
                              const PhaseConfig& phase, bool normalize,
                              const ProgressFn& progress = {}, std::stop_token stop = {}) {
  phase.validate();
  const auto mag = decode_magnitudes(seq, model);
  detail::check_stop(stop);
  PhaseObserver obs;
  if (progress)
    obs = [&](const PhaseIterate& it) { progress(double(it.iteration) / std::max(phase.n_iters, 1)); };
  AudioBuffer out = fgla(mag, plan, phase, obs, stop);
  if (normalize) out = peak_normalize(std::move(out));
  if (progress) progress(1.0);
  return out;
}

struct InterpolationRequest {
  ExcerptSelection first;
  ExcerptSelection second;
  InterpolationCurve curve;
  PhaseConfig phase;
  bool normalize = true;
  bool swap_weights = false;
};

inline AudioBuffer interpolate_two(const AudioBuffer& audio1, const AudioBuffer& audio2,
                                   const InterpolationRequest& req, const SynthModel& model,
                                   const CqtPlan& plan, const ProgressFn& progress = {},
                                   std::stop_token stop = {}) {
  if (req.first.duration != req.second.duration)
    throw ValidationError("both excerpts must have the same duration");
  req.curve.validate();
  req.phase.validate();
  const auto s1 = encode_excerpt(audio1, req.first, model, plan, stop);
  const auto s2 = encode_excerpt(audio2, req.second, model, plan, stop);
  const auto mixed = mix_latents(s1, s2, resample_curve(req.curve.values, s1.frames()), req.swap_weights);
  return synthesize(mixed, model, plan, req.phase, req.normalize, progress, stop);
}

}  // namespace lsynth
