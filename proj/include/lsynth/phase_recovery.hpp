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

// Griffin-Lim and fast Griffin-Lim phase estimation over the CQT.
//
// The first inverse is icqt() itself. Inside the loop the inverse is a
// conjugate-gradient least-squares projection warm-started from the signal
// whose transform is the current estimate, which makes every update a
// descent step for || F x - Z ||; the consistency error is therefore
// non-increasing for plain Griffin-Lim.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <stop_token>
#include <vector>

#include "lsynth/cqt.hpp"

namespace lsynth {

enum class PhaseInit { Zeros, Random, Provided };

inline constexpr int kMaxPhaseIterations = 64;

struct PhaseConfig {
  int n_iters = 32;
  double alpha_fgla = 1.0;
  PhaseInit init = PhaseInit::Zeros;
  std::uint64_t seed = 42;
  // Frame-major phases in radians, used with PhaseInit::Provided.
  std::vector<double> provided_phases;
  // Iterations of the initial icqt() (also the whole job for n_iters = 0).
  int icqt_iterations = kDefaultIcqtIterations;
  // CG iterations of each warm-started inverse inside the loop.
  int inner_iterations = 1;

  void validate() const {
    if (n_iters < 0 || n_iters > kMaxPhaseIterations)
      throw ValidationError("phase iterations must lie in [0, 64]");
    if (!(alpha_fgla >= 0.0) || !std::isfinite(alpha_fgla))
      throw ValidationError("alpha_fgla must be a finite value >= 0");
    if (icqt_iterations < 1 || inner_iterations < 1)
      throw ValidationError("inverse iteration counts must be positive");
  }
};

// Reported after each loop iteration. `signal` is the estimate on the full
// solve domain (T * hop - 1 samples), whose analysis equals X_n.
struct PhaseIterate {
  int iteration = 0;
  std::span<const double> signal;
};

using PhaseObserver = std::function<void(const PhaseIterate&)>;

namespace detail {

inline std::vector<double> flatten_magnitudes(const std::vector<MagnitudeFrame>& mag,
                                              std::size_t n_bins) {
  if (mag.empty()) throw ValidationError("phase recovery: empty magnitude input");
  std::vector<double> flat;
  flat.reserve(mag.size() * n_bins);
  for (const auto& frame : mag) {
    if (frame.size() != n_bins)
      throw ValidationError("phase recovery: frame has " + std::to_string(frame.size()) +
                            " bins, expected " + std::to_string(n_bins));
    for (double v : frame) {
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ValidationError("phase recovery: magnitudes must be finite and >= 0");
      flat.push_back(v);
    }
  }
  return flat;
}

// M * exp(i angle(x)), with angle(0) taken as 0.
inline void impose_magnitude(std::span<const double> mag, std::span<const Complex> est,
                             std::vector<Complex>& out) {
  out.resize(mag.size());
  for (std::size_t i = 0; i < mag.size(); ++i) {
    const double a = std::abs(est[i]);
    out[i] = a > 0.0 ? est[i] * (mag[i] / a) : Complex(mag[i], 0.0);
  }
}

inline AudioBuffer run_phase_loop(const std::vector<MagnitudeFrame>& mag, const CqtPlan& plan,
                                  const PhaseConfig& cfg, double alpha,
                                  const PhaseObserver& observer, std::stop_token stop) {
  cfg.validate();
  const std::size_t K = plan.n_bins();
  const std::vector<double> m = flatten_magnitudes(mag, K);
  const std::size_t T = mag.size();
  const int hop = plan.params().hop;
  const CqtOperator op(plan, solve_length(T, hop), T);

  std::vector<Complex> x0(m.size());
  switch (cfg.init) {
    case PhaseInit::Zeros:
      for (std::size_t i = 0; i < m.size(); ++i) x0[i] = Complex(m[i], 0.0);
      break;
    case PhaseInit::Random: {
      std::mt19937_64 rng(cfg.seed);
      std::uniform_real_distribution<double> phase(-M_PI, M_PI);
      for (std::size_t i = 0; i < m.size(); ++i) x0[i] = std::polar(m[i], phase(rng));
      break;
    }
    case PhaseInit::Provided:
      if (cfg.provided_phases.size() != m.size())
        throw ValidationError("phase recovery: provided phases have the wrong size");
      for (std::size_t i = 0; i < m.size(); ++i) x0[i] = std::polar(m[i], cfg.provided_phases[i]);
      break;
  }

  // Y_0 = T(IT(X_0)). For n = 1 the inverse sees the same input again, so
  // Y_1 = Y_0 and the momentum term vanishes.
  CqtOperator::Solution y;
  y.x = op.richardson(x0, cfg.icqt_iterations, stop);
  auto trimmed = [&](std::vector<double> x) {
    AudioBuffer out;
    out.sample_rate = plan.params().sample_rate;
    x.resize((T - 1) * std::size_t(hop));
    out.samples = std::move(x);
    return out;
  };
  if (cfg.n_iters == 0) return trimmed(std::move(y.x));
  y.fx = op.forward(y.x, stop);
  CqtOperator::Solution est = y;  // signal and spectrum of X_n
  if (observer) observer({1, est.x});

  std::vector<Complex> target;
  for (int n = 2; n <= cfg.n_iters; ++n) {
    detail::check_stop(stop);
    impose_magnitude(m, est.fx, target);
    CqtOperator::Solution next = op.least_squares(target, cfg.inner_iterations, &est, stop);
    if (alpha != 0.0) {
      for (std::size_t i = 0; i < next.x.size(); ++i)
        est.x[i] = next.x[i] + alpha * (next.x[i] - y.x[i]);
      for (std::size_t i = 0; i < next.fx.size(); ++i)
        est.fx[i] = next.fx[i] + alpha * (next.fx[i] - y.fx[i]);
      y = std::move(next);
    } else {
      est = std::move(next);
    }
    if (observer) observer({n, est.x});
  }
  return trimmed(std::move(est.x));
}

}  // namespace detail

// Griffin-Lim: X_n = T(IT(|X| exp(i angle X_{n-1}))), output IT(X_N).
inline AudioBuffer gla(const std::vector<MagnitudeFrame>& mag, const CqtPlan& plan,
                       const PhaseConfig& cfg, const PhaseObserver& observer = {},
                       std::stop_token stop = {}) {
  return detail::run_phase_loop(mag, plan, cfg, 0.0, observer, stop);
}

// Fast Griffin-Lim: Y_n as above, X_n = Y_n + alpha (Y_n - Y_{n-1}).
// alpha = 0 takes exactly the Griffin-Lim path.
inline AudioBuffer fgla(const std::vector<MagnitudeFrame>& mag, const CqtPlan& plan,
                        const PhaseConfig& cfg, const PhaseObserver& observer = {},
                        std::stop_token stop = {}) {
  return detail::run_phase_loop(mag, plan, cfg, cfg.alpha_fgla, observer, stop);
}

inline AudioBuffer gla(const std::vector<MagnitudeFrame>& mag, const CqtParams& params,
                       const PhaseConfig& cfg) {
  return gla(mag, CqtPlan(params), cfg);
}

inline AudioBuffer fgla(const std::vector<MagnitudeFrame>& mag, const CqtParams& params,
                        const PhaseConfig& cfg) {
  return fgla(mag, CqtPlan(params), cfg);
}

// || |T(audio)| - M ||_F / ||M||_F, with 0/0 taken as 0. The audio must
// analyse to as many frames as mag has.
inline double consistency_error(const std::vector<MagnitudeFrame>& mag, std::span<const double> audio,
                                const CqtPlan& plan) {
  const std::size_t K = plan.n_bins();
  const std::vector<double> m = detail::flatten_magnitudes(mag, K);
  const int hop = plan.params().hop;
  if (frame_count(audio.size(), hop) != mag.size())
    throw ValidationError("consistency_error: audio length does not match frame count");
  const CqtOperator op(plan, audio.size(), mag.size());
  const auto spec = op.forward(audio);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double d = std::abs(spec[i]) - m[i];
    num += d * d;
    den += m[i] * m[i];
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

inline double consistency_error(const std::vector<MagnitudeFrame>& mag, const AudioBuffer& audio,
                                const CqtPlan& plan) {
  return consistency_error(mag, std::span<const double>(audio.samples), plan);
}

}  // namespace lsynth
