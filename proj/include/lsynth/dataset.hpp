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

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lsynth/cqt.hpp"

namespace lsynth {

// Where a frame came from.
struct FrameSource {
  int file = 0;
  int frame = 0;
  friend bool operator==(const FrameSource&, const FrameSource&) = default;
};

// Normalised magnitude frames, one column per frame (n_bins x N), values
// in [0, 1]: log(1 + |X|) / C with C = log(1 + corpus max).
struct FrameDataset {
  Eigen::MatrixXf frames;
  std::vector<FrameSource> sources;
  std::vector<std::string> files;
  CqtParams params;
  double norm_constant = 1.0;

  std::size_t size() const { return static_cast<std::size_t>(frames.cols()); }
  std::size_t dim() const { return static_cast<std::size_t>(frames.rows()); }
  bool empty() const { return frames.cols() == 0; }
};

inline double normalize_magnitude(double mag, double norm_constant) {
  return std::log1p(mag) / norm_constant;
}

inline double denormalize_magnitude(double value, double norm_constant) {
  return std::expm1(value * norm_constant);
}

}  // namespace lsynth
