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

// Constant-Q analysis and least-squares synthesis.
//
// Each bin k has a window of N_k samples centred on frame n at sample
// n * hop. Coefficients are the inner products
//
//   X(k, n) = sum_j x(j) conj(a_k(j - n*hop + N_k/2)),
//   a_k(t)  = w(t / N_k) / N_k * exp(-2 pi i t f_k / fs),
//
// over |j - n*hop| <= floor(N_k / 2). Bins whose centre frequency is far
// below Nyquist are evaluated on a decimated copy of the signal (cascade of
// half-band low-pass filters), with kernels sampled on the coarse grid. The
// filters are designed so that the decimated evaluation agrees with full
// rate evaluation to roughly 1e-7 relative error.
//
// The inverse approximates the least-squares solution of || F x - X || with
// a fixed number of preconditioned Richardson steps, so it stays linear in X.
// The preconditioner is the stationary (time-invariant) part of the frame
// operator, applied with an FFT. Conjugate gradients on the same normal
// equations are kept for warm-started refinement inside phase recovery.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <stop_token>
#include <string>
#include <string_view>
#include <vector>

#include "lsynth/audio_io.hpp"
#include "lsynth/errors.hpp"
#include "lsynth/fft.hpp"

namespace lsynth {

using Complex = std::complex<double>;

enum class WindowKind { Hann, Hamming, Blackman };

inline std::string window_name(WindowKind w) {
  switch (w) {
    case WindowKind::Hann: return "hann";
    case WindowKind::Hamming: return "hamming";
    case WindowKind::Blackman: return "blackman";
  }
  return "hann";
}

inline WindowKind parse_window(std::string_view name) {
  if (name == "hann") return WindowKind::Hann;
  if (name == "hamming") return WindowKind::Hamming;
  if (name == "blackman") return WindowKind::Blackman;
  throw ValidationError("unknown window '" + std::string(name) + "'");
}

// Cosine-sum coefficients: w(t) = sum_m c[m] cos(2 pi m t), t in [0, 1].
inline std::vector<double> window_coefficients(WindowKind w) {
  switch (w) {
    case WindowKind::Hann: return {0.5, -0.5};
    case WindowKind::Hamming: return {0.54, -0.46};
    case WindowKind::Blackman: return {0.42, -0.5, 0.08};
  }
  return {0.5, -0.5};
}

inline double window_value(const std::vector<double>& coeffs, double t) {
  double v = 0.0;
  for (std::size_t m = 0; m < coeffs.size(); ++m)
    v += coeffs[m] * std::cos(2.0 * M_PI * double(m) * t);
  return v;
}

struct CqtParams {
  double f1 = 32.7;
  int bins_per_octave = 48;
  int n_octaves = 8;
  int hop = 128;
  double q = 1.0;
  int sample_rate = 44100;
  WindowKind window = WindowKind::Hann;

  int n_bins() const { return bins_per_octave * n_octaves; }

  double highest_frequency() const {
    return f1 * std::pow(2.0, double(n_bins() - 1) / bins_per_octave);
  }

  void validate() const {
    if (!(f1 > 0.0)) throw ValidationError("cqt: f1 must be positive");
    if (bins_per_octave <= 0 || n_octaves <= 0)
      throw ValidationError("cqt: bins_per_octave and n_octaves must be positive");
    if (hop <= 0) throw ValidationError("cqt: hop must be positive");
    if (!(q > 0.0 && q <= 1.0)) throw ValidationError("cqt: q must lie in (0, 1]");
    if (sample_rate <= 0) throw ValidationError("cqt: sample_rate must be positive");
    if (highest_frequency() >= sample_rate / 2.0)
      throw ValidationError("cqt: highest bin " + std::to_string(highest_frequency()) +
                            " Hz is not below Nyquist");
  }

  friend bool operator==(const CqtParams&, const CqtParams&) = default;
};

// f_k = f1 * 2^(k / B) for zero-based k.
inline std::vector<double> center_frequencies(const CqtParams& p) {
  p.validate();
  std::vector<double> f(std::size_t(p.n_bins()));
  for (int k = 0; k < p.n_bins(); ++k)
    f[std::size_t(k)] = p.f1 * std::pow(2.0, double(k) / p.bins_per_octave);
  return f;
}

// N_k = q fs / (f_k (2^(1/B) - 1)), rounded, at least 1.
inline std::vector<long> window_lengths(const CqtParams& p) {
  const auto f = center_frequencies(p);
  const double denom = std::pow(2.0, 1.0 / p.bins_per_octave) - 1.0;
  std::vector<long> n(f.size());
  for (std::size_t k = 0; k < f.size(); ++k)
    n[k] = std::max(1L, std::lround(p.q * p.sample_rate / (f[k] * denom)));
  return n;
}

inline std::size_t frame_count(std::size_t n_samples, int hop) {
  return 1 + n_samples / static_cast<std::size_t>(hop);
}

// Complex coefficients, frame-major: data[t * n_bins + k].
struct CqtSpectrogram {
  std::size_t n_frames = 0;
  std::size_t n_bins = 0;
  std::vector<Complex> data;
  CqtParams params;

  Complex& at(std::size_t t, std::size_t k) { return data[t * n_bins + k]; }
  const Complex& at(std::size_t t, std::size_t k) const { return data[t * n_bins + k]; }
};

// Linear magnitudes of one frame, one value per bin.
using MagnitudeFrame = std::vector<double>;

inline std::vector<MagnitudeFrame> cqt_magnitude(const CqtSpectrogram& spec) {
  std::vector<MagnitudeFrame> out(spec.n_frames, MagnitudeFrame(spec.n_bins));
  for (std::size_t t = 0; t < spec.n_frames; ++t)
    for (std::size_t k = 0; k < spec.n_bins; ++k) out[t][k] = std::abs(spec.at(t, k));
  return out;
}

namespace detail {

inline long floor_div(long a, long b) {
  long q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}
inline long ceil_div(long a, long b) { return -floor_div(-a, b); }

inline void check_stop(const std::stop_token& stop) {
  if (stop.stop_requested()) throw Cancelled();
}

// Kaiser-windowed sinc half-band low-pass: cutoff fs/4, transition
// [0.2, 0.3] fs, ~160 dB attenuation.
inline std::vector<double> halfband_filter() {
  constexpr int kRadius = 53;
  constexpr double kBeta = 16.67;
  std::vector<double> h(2 * kRadius + 1);
  double sum = 0.0;
  for (int i = -kRadius; i <= kRadius; ++i) {
    const double r = double(i) / (kRadius + 1);
    const double win = bessel_i0(kBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) /
                       bessel_i0(kBeta);
    const double v = 0.5 * sinc(0.5 * i) * win;
    h[std::size_t(i + kRadius)] = v;
    sum += v;
  }
  for (double& v : h) v /= sum;
  return h;
}

// |sum_t w(t/N) exp(-i theta t)| over the samples of an N-point window,
// in closed form (cosine-sum of Dirichlet kernels).
inline double window_response(const std::vector<double>& coeffs, long n, double theta) {
  const long count = 2 * (n / 2) + 1;
  auto dirichlet = [count](double phi) {
    const double s = std::sin(0.5 * phi);
    if (std::abs(s) < 1e-12) {
      // Limit; sign alternates with the 2 pi period when count is odd: +1.
      return double(count);
    }
    return std::sin(0.5 * phi * double(count)) / s;
  };
  double acc = coeffs[0] * dirichlet(theta);
  for (std::size_t m = 1; m < coeffs.size(); ++m) {
    const double sign = (m % 2 == 0) ? 1.0 : -1.0;
    const double shift = 2.0 * M_PI * double(m) / double(n);
    acc += sign * 0.5 * coeffs[m] * (dirichlet(theta - shift) + dirichlet(theta + shift));
  }
  return std::abs(acc);
}

}  // namespace detail

// Precomputed kernels and decimation filter for one parameter set. Plans
// are immutable after construction and may be shared across threads.
class CqtPlan {
 public:
  struct Kernel {
    int level = 0;     // evaluated at fs / 2^level
    long half = 0;     // taps cover offsets -half..half (coarse samples)
    std::vector<double> re, im;
  };

  // Largest f_k / rate allowed at a decimated level.
  static constexpr double kMaxRelativeFrequency = 0.1;

  explicit CqtPlan(const CqtParams& params)
      : params_(params), freqs_(center_frequencies(params)), lengths_(window_lengths(params)),
        filter_(detail::halfband_filter()) {
    const auto coeffs = window_coefficients(params.window);
    int hop_twos = 0;
    while ((params.hop >> (hop_twos + 1)) << (hop_twos + 1) == params.hop) ++hop_twos;

    kernels_.resize(freqs_.size());
    for (std::size_t k = 0; k < freqs_.size(); ++k) {
      const long n = lengths_[k];
      int level = 0;
      while (level < hop_twos &&
             freqs_[k] <= kMaxRelativeFrequency * params.sample_rate / double(1L << (level + 1)) &&
             (n / 2) / (1L << (level + 1)) >= 1)
        ++level;
      Kernel& ker = kernels_[k];
      ker.level = level;
      const long d = 1L << level;
      ker.half = (n / 2) / d;
      ker.re.resize(std::size_t(2 * ker.half + 1));
      ker.im.resize(ker.re.size());
      const double omega = 2.0 * M_PI * freqs_[k] / params.sample_rate;
      for (long i = -ker.half; i <= ker.half; ++i) {
        const double t = double(i * d) + 0.5 * double(n);
        const double amp = double(d) * window_value(coeffs, t / double(n)) / double(n);
        ker.re[std::size_t(i + ker.half)] = amp * std::cos(omega * t);
        ker.im[std::size_t(i + ker.half)] = amp * std::sin(omega * t);
      }
      n_levels_ = std::max(n_levels_, level + 1);
    }
  }

  const CqtParams& params() const { return params_; }
  const std::vector<double>& frequencies() const { return freqs_; }
  const std::vector<long>& lengths() const { return lengths_; }
  const std::vector<Kernel>& kernels() const { return kernels_; }
  const std::vector<double>& filter() const { return filter_; }
  int n_levels() const { return n_levels_; }
  std::size_t n_bins() const { return freqs_.size(); }

 private:
  CqtParams params_;
  std::vector<double> freqs_;
  std::vector<long> lengths_;
  std::vector<double> filter_;
  std::vector<Kernel> kernels_;
  int n_levels_ = 1;
};

// The analysis operator for signals of a fixed length and frame count,
// together with its adjoint and the FFT preconditioner used by the
// least-squares inverse.
class CqtOperator {
 public:
  // Regularisation floor of the preconditioner, relative to its peak.
  static constexpr double kDefaultFloor = 0.2;

  CqtOperator(const CqtPlan& plan, std::size_t signal_length, std::size_t n_frames,
              double floor = kDefaultFloor)
      : plan_(&plan), length_(signal_length), frames_(n_frames), floor_(floor) {
    if (n_frames == 0) throw ValidationError("cqt: frame count must be positive");
    const long radius = long(plan.filter().size() / 2);
    levels_.resize(std::size_t(plan.n_levels()));
    for (int l = 0; l < plan.n_levels(); ++l) {
      Level& lv = levels_[std::size_t(l)];
      if (l == 0) {
        lv.a = 0;
        lv.b = long(signal_length);
      } else {
        const Level& up = levels_[std::size_t(l - 1)];
        lv.a = detail::ceil_div(up.a - radius, 2);
        lv.b = detail::floor_div(up.b - 1 + radius, 2) + 1;
      }
      lv.stride = plan.params().hop >> l;
    }
    for (const auto& ker : plan.kernels()) {
      Level& lv = levels_[std::size_t(ker.level)];
      lv.reach = std::max(lv.reach, ker.half);
    }
    for (auto& lv : levels_) {
      lv.lo = std::min(lv.a, -lv.reach);
      lv.hi = std::max(lv.b, long(frames_ - 1) * lv.stride + lv.reach + 1);
    }
  }

  std::size_t signal_length() const { return length_; }
  std::size_t n_frames() const { return frames_; }
  std::size_t n_bins() const { return plan_->n_bins(); }
  std::size_t spectrum_size() const { return frames_ * n_bins(); }
  const CqtPlan& plan() const { return *plan_; }

  // Frame-major coefficients of x (length signal_length()).
  std::vector<Complex> forward(std::span<const double> x, std::stop_token stop = {}) const {
    if (x.size() != length_) throw ValidationError("cqt: signal length mismatch");
    const auto bufs = decimate_all(x, stop);
    std::vector<Complex> out(spectrum_size());
    const std::size_t K = n_bins();
    for (std::size_t k = 0; k < K; ++k) {
      detail::check_stop(stop);
      const auto& ker = plan_->kernels()[k];
      const Level& lv = levels_[std::size_t(ker.level)];
      const double* buf = bufs[std::size_t(ker.level)].data();
      const double* kr = ker.re.data();
      const double* ki = ker.im.data();
      const long taps = 2 * ker.half + 1;
      for (std::size_t n = 0; n < frames_; ++n) {
        const double* base = buf + (long(n) * lv.stride - ker.half - lv.lo);
        double r0 = 0, r1 = 0, r2 = 0, r3 = 0, i0 = 0, i1 = 0, i2 = 0, i3 = 0;
        long i = 0;
        for (; i + 4 <= taps; i += 4) {
          r0 += base[i] * kr[i];
          i0 += base[i] * ki[i];
          r1 += base[i + 1] * kr[i + 1];
          i1 += base[i + 1] * ki[i + 1];
          r2 += base[i + 2] * kr[i + 2];
          i2 += base[i + 2] * ki[i + 2];
          r3 += base[i + 3] * kr[i + 3];
          i3 += base[i + 3] * ki[i + 3];
        }
        for (; i < taps; ++i) {
          r0 += base[i] * kr[i];
          i0 += base[i] * ki[i];
        }
        out[n * K + k] = Complex((r0 + r1) + (r2 + r3), (i0 + i1) + (i2 + i3));
      }
    }
    return out;
  }

  // Adjoint of forward() for the real inner product Re <., .>.
  std::vector<double> adjoint(std::span<const Complex> spec, std::stop_token stop = {}) const {
    if (spec.size() != spectrum_size()) throw ValidationError("cqt: spectrum size mismatch");
    std::vector<std::vector<double>> bufs(levels_.size());
    for (std::size_t l = 0; l < levels_.size(); ++l)
      bufs[l].assign(std::size_t(levels_[l].hi - levels_[l].lo), 0.0);
    const std::size_t K = n_bins();
    for (std::size_t k = 0; k < K; ++k) {
      detail::check_stop(stop);
      const auto& ker = plan_->kernels()[k];
      const Level& lv = levels_[std::size_t(ker.level)];
      double* buf = bufs[std::size_t(ker.level)].data();
      const double* kr = ker.re.data();
      const double* ki = ker.im.data();
      const long taps = 2 * ker.half + 1;
      for (std::size_t n = 0; n < frames_; ++n) {
        const Complex c = spec[n * K + k];
        const double xr = c.real(), xi = c.imag();
        if (xr == 0.0 && xi == 0.0) continue;
        double* base = buf + (long(n) * lv.stride - ker.half - lv.lo);
        for (long i = 0; i < taps; ++i) base[i] += xr * kr[i] + xi * ki[i];
      }
    }
    // Transposed decimation, deepest level first.
    const auto& h = plan_->filter();
    const long radius = long(h.size() / 2);
    for (std::size_t l = levels_.size(); l-- > 1;) {
      detail::check_stop(stop);
      const Level& fine = levels_[l - 1];
      const Level& coarse = levels_[l];
      const double* src = bufs[l].data();
      double* dst = bufs[l - 1].data();
      for (long m = coarse.a; m < coarse.b; ++m) {
        const double v = src[m - coarse.lo];
        if (v == 0.0) continue;
        const long lo = std::max(-radius, 2 * m - fine.b + 1);
        const long hi = std::min(radius, 2 * m - fine.a);
        for (long i = lo; i <= hi; ++i) dst[2 * m - i - fine.lo] += h[std::size_t(i + radius)] * v;
      }
    }
    const Level& top = levels_[0];
    return std::vector<double>(bufs[0].begin() + (0 - top.lo),
                               bufs[0].begin() + (long(length_) - top.lo));
  }

  // Approximate inverse of adjoint(forward(.)) as an FFT filter.
  std::vector<double> precondition(std::span<const double> r) const {
    ensure_preconditioner();
    std::vector<double> padded(r.begin(), r.end());
    auto spec = fft_->forward(padded);
    for (std::size_t b = 0; b < spec.size(); ++b) spec[b] *= inv_symbol_[b];
    auto out = fft_->inverse(spec);
    out.resize(length_);
    return out;
  }

  // Preconditioned Richardson iteration from zero. Unlike conjugate
  // gradients the result is a fixed linear map of the target.
  std::vector<double> richardson(std::span<const Complex> target, int iterations,
                                 std::stop_token stop = {}) const {
    std::vector<double> x(length_, 0.0);
    std::vector<Complex> resid(target.begin(), target.end());
    for (int it = 0; it < iterations; ++it) {
      if (it > 0) {
        const auto fx = forward(x, stop);
        for (std::size_t i = 0; i < resid.size(); ++i) resid[i] = target[i] - fx[i];
      }
      const auto step = precondition(adjoint(resid, stop));
      for (std::size_t i = 0; i < length_; ++i) x[i] += step[i];
    }
    return x;
  }

  struct Solution {
    std::vector<double> x;
    std::vector<Complex> fx;  // forward(x), maintained incrementally
  };

  // Minimises || forward(x) - target || by preconditioned conjugate
  // gradients. With a warm start (x0, forward(x0)) every iteration is
  // guaranteed not to increase the residual relative to x0.
  Solution least_squares(std::span<const Complex> target, int iterations,
                         const Solution* warm = nullptr, std::stop_token stop = {}) const {
    Solution s;
    std::vector<double> r;
    if (warm != nullptr) {
      s = *warm;
      std::vector<Complex> diff(target.begin(), target.end());
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= s.fx[i];
      r = adjoint(diff, stop);
    } else {
      s.x.assign(length_, 0.0);
      s.fx.assign(spectrum_size(), Complex(0.0, 0.0));
      r = adjoint(target, stop);
    }
    if (iterations <= 0) return s;
    std::vector<double> z = precondition(r);
    std::vector<double> p = z;
    double rz = dot(r, z);
    for (int it = 0; it < iterations; ++it) {
      if (!(rz > 0.0)) break;
      const auto fp = forward(p, stop);
      double fp2 = 0.0;
      for (const auto& c : fp) fp2 += std::norm(c);
      if (!(fp2 > 0.0)) break;
      const double alpha = rz / fp2;
      for (std::size_t i = 0; i < length_; ++i) s.x[i] += alpha * p[i];
      for (std::size_t i = 0; i < fp.size(); ++i) s.fx[i] += alpha * fp[i];
      if (it + 1 == iterations) break;
      const auto ap = adjoint(fp, stop);
      for (std::size_t i = 0; i < length_; ++i) r[i] -= alpha * ap[i];
      z = precondition(r);
      const double rz_new = dot(r, z);
      const double beta = rz_new / rz;
      rz = rz_new;
      for (std::size_t i = 0; i < length_; ++i) p[i] = z[i] + beta * p[i];
    }
    return s;
  }

 private:
  struct Level {
    long a = 0, b = 0;    // support of the (filtered) signal
    long lo = 0, hi = 0;  // buffer range including frame reach
    long reach = 0;
    long stride = 1;      // hop at this level
  };

  static double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }

  std::vector<std::vector<double>> decimate_all(std::span<const double> x,
                                                const std::stop_token& stop) const {
    std::vector<std::vector<double>> bufs(levels_.size());
    const auto& h = plan_->filter();
    const long radius = long(h.size() / 2);
    for (std::size_t l = 0; l < levels_.size(); ++l) {
      const Level& lv = levels_[l];
      bufs[l].assign(std::size_t(lv.hi - lv.lo), 0.0);
      if (l == 0) {
        std::copy(x.begin(), x.end(), bufs[0].begin() + (0 - lv.lo));
        continue;
      }
      detail::check_stop(stop);
      const Level& fine = levels_[l - 1];
      const double* src = bufs[l - 1].data();
      double* dst = bufs[l].data();
      for (long m = lv.a; m < lv.b; ++m) {
        const long lo = std::max(-radius, 2 * m - fine.b + 1);
        const long hi = std::min(radius, 2 * m - fine.a);
        double acc = 0.0;
        for (long i = lo; i <= hi; ++i) acc += h[std::size_t(i + radius)] * src[2 * m - i - fine.lo];
        dst[m - lv.lo] = acc;
      }
    }
    return bufs;
  }

  void ensure_preconditioner() const {
    std::call_once(precond_once_, [this] { build_preconditioner(); });
  }

  void build_preconditioner() const {
    const auto& p = plan_->params();
    const std::size_t nfft = next_pow2(length_ + 4096);
    std::vector<double> symbol(nfft, 0.0);
    const auto coeffs = window_coefficients(p.window);
    const auto& f = plan_->frequencies();
    const auto& lens = plan_->lengths();
    const double bin_w = 2.0 * M_PI / double(nfft);
    for (std::size_t k = 0; k < f.size(); ++k) {
      const double wk = 2.0 * M_PI * f[k] / p.sample_rate;
      const long n = lens[k];
      const double width = 24.0 * 2.0 * M_PI / double(n);
      const double scale = 1.0 / (2.0 * p.hop * double(n) * double(n));
      for (double centre : {wk, -wk}) {
        const long b0 = long(std::floor((centre - width) / bin_w));
        const long b1 = long(std::ceil((centre + width) / bin_w));
        for (long b = std::max(b0, -long(nfft / 2)); b <= std::min(b1, long(nfft / 2) - 1); ++b) {
          const double a = detail::window_response(coeffs, n, double(b) * bin_w - centre);
          const std::size_t idx = std::size_t((b + long(nfft)) % long(nfft));
          symbol[idx] += scale * a * a;
        }
      }
    }
    const double peak = *std::max_element(symbol.begin(), symbol.end());
    inv_symbol_.resize(nfft);
    for (std::size_t b = 0; b < nfft; ++b)
      inv_symbol_[b] = 1.0 / std::max(symbol[b], floor_ * peak);
    fft_ = std::make_unique<RealFft>(nfft);
  }

  const CqtPlan* plan_;
  std::size_t length_;
  std::size_t frames_;
  double floor_;
  std::vector<Level> levels_;
  mutable std::once_flag precond_once_;
  mutable std::unique_ptr<RealFft> fft_;
  mutable std::vector<double> inv_symbol_;
};

// Forward transform: T = 1 + floor(len / hop) centred frames.
inline CqtSpectrogram cqt_forward(const AudioBuffer& audio, const CqtPlan& plan,
                                  std::stop_token stop = {}) {
  if (audio.empty()) throw ValidationError("cqt: empty audio");
  if (audio.sample_rate != plan.params().sample_rate)
    throw ValidationError("cqt: audio sample rate " + std::to_string(audio.sample_rate) +
                          " does not match params " +
                          std::to_string(plan.params().sample_rate));
  const CqtOperator op(plan, audio.size(), frame_count(audio.size(), plan.params().hop));
  CqtSpectrogram spec;
  spec.n_frames = op.n_frames();
  spec.n_bins = op.n_bins();
  spec.params = plan.params();
  spec.data = op.forward(audio.samples, stop);
  return spec;
}

inline CqtSpectrogram cqt_forward(const AudioBuffer& audio, const CqtParams& params) {
  const CqtPlan plan(params);
  return cqt_forward(audio, plan);
}

// Refinement iterations used by icqt() unless overridden.
inline constexpr int kDefaultIcqtIterations = 6;

// Longest signal whose analysis has exactly n_frames frames. The
// least-squares inverse is solved on this domain so that any signal
// producing the spectrogram is representable; the result is then trimmed.
inline std::size_t solve_length(std::size_t n_frames, int hop) {
  return n_frames * std::size_t(hop) - 1;
}

// Approximate least-squares inverse, linear in the coefficients.
// Output length (T - 1) * hop.
inline AudioBuffer icqt(const CqtSpectrogram& spec, const CqtPlan& plan,
                        int iterations = kDefaultIcqtIterations, std::stop_token stop = {}) {
  if (!(spec.params == plan.params())) throw ValidationError("icqt: params mismatch");
  if (spec.n_bins != plan.n_bins()) throw ValidationError("icqt: bin count mismatch");
  if (spec.n_frames == 0) throw ValidationError("icqt: empty spectrogram");
  const int hop = plan.params().hop;
  AudioBuffer out;
  out.sample_rate = plan.params().sample_rate;
  const CqtOperator op(plan, solve_length(spec.n_frames, hop), spec.n_frames);
  out.samples = op.richardson(spec.data, iterations, stop);
  out.samples.resize((spec.n_frames - 1) * std::size_t(hop));
  return out;
}

inline AudioBuffer icqt(const CqtSpectrogram& spec, const CqtParams& params) {
  const CqtPlan plan(params);
  return icqt(spec, plan);
}

}  // namespace lsynth
