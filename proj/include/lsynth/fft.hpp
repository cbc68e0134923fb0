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

#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include <unsupported/Eigen/FFT>

namespace lsynth {

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Thin wrapper over Eigen's FFT module for real signals of a fixed size.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {}

  std::size_t size() const { return n_; }

  // Full complex spectrum of the zero-padded input.
  std::vector<std::complex<double>> forward(const std::vector<double>& x) const {
    std::vector<double> in(x);
    in.resize(n_, 0.0);
    std::vector<std::complex<double>> out;
    fft_.fwd(out, in);
    return out;
  }

  std::vector<double> inverse(const std::vector<std::complex<double>>& spec) const {
    std::vector<double> out;
    fft_.inv(out, spec);
    out.resize(n_);
    return out;
  }

 private:
  std::size_t n_;
  mutable Eigen::FFT<double> fft_;
};

}  // namespace lsynth
