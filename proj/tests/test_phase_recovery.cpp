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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "lsynth/phase_recovery.hpp"
#include "test_support.hpp"

namespace lsynth {
namespace {

using lsynth::testing::harmonic;
using lsynth::testing::sine;
using lsynth::testing::snr_db;

std::vector<MagnitudeFrame> random_magnitudes(std::size_t frames, std::size_t bins,
                                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1e-3);
  std::vector<MagnitudeFrame> m(frames, MagnitudeFrame(bins));
  for (auto& f : m)
    for (auto& v : f) v = u(rng);
  return m;
}

std::vector<MagnitudeFrame> zero_magnitudes(std::size_t frames, std::size_t bins) {
  return std::vector<MagnitudeFrame>(frames, MagnitudeFrame(bins, 0.0));
}

TEST(PhaseConfig, Validation) {
  PhaseConfig c;
  EXPECT_NO_THROW(c.validate());
  c.n_iters = 65;
  EXPECT_THROW(c.validate(), ValidationError);
  c.n_iters = -1;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.alpha_fgla = -0.1;
  EXPECT_THROW(c.validate(), ValidationError);
  c.alpha_fgla = std::nan("");
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(PhaseRecovery, RejectsBadMagnitudes) {
  const CqtPlan plan{CqtParams{}};
  EXPECT_THROW(gla({}, plan, PhaseConfig{}), ValidationError);
  auto m = zero_magnitudes(4, 384);
  m[1].pop_back();
  EXPECT_THROW(gla(m, plan, PhaseConfig{}), ValidationError);
  m = zero_magnitudes(4, 384);
  m[2][5] = -1.0;
  EXPECT_THROW(gla(m, plan, PhaseConfig{}), ValidationError);
}

TEST(PhaseRecovery, ZeroIterationsWithTruePhaseIsIcqt) {
  const CqtPlan plan{CqtParams{}};
  const auto spec = cqt_forward(harmonic(220.0, 0.3), plan);
  PhaseConfig c;
  c.n_iters = 0;
  c.init = PhaseInit::Provided;
  for (const auto& z : spec.data) c.provided_phases.push_back(std::arg(z));
  const auto y = gla(cqt_magnitude(spec), plan, c);
  const auto ref = icqt(spec, plan);
  ASSERT_EQ(y.size(), ref.size());
  double err = 0.0, peak = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    err = std::max(err, std::abs(y.samples[i] - ref.samples[i]));
    peak = std::max(peak, std::abs(ref.samples[i]));
  }
  // polar(|z|, arg z) differs from z only by rounding
  EXPECT_LT(err, 1e-9 * peak);
}

TEST(PhaseRecovery, ZeroMagnitudeGivesSilence) {
  const CqtPlan plan{CqtParams{}};
  for (auto init : {PhaseInit::Zeros, PhaseInit::Random}) {
    PhaseConfig c;
    c.n_iters = 3;
    c.init = init;
    const auto y = fgla(zero_magnitudes(12, 384), plan, c);
    EXPECT_EQ(y.size(), 11u * 128u);
    EXPECT_TRUE(std::all_of(y.samples.begin(), y.samples.end(), [](double v) { return v == 0.0; }));
  }
}

TEST(PhaseRecovery, FglaWithoutMomentumIsGla) {
  const CqtPlan plan{CqtParams{}};
  const auto mag = cqt_magnitude(cqt_forward(harmonic(330.0, 0.25), plan));
  PhaseConfig c;
  c.n_iters = 6;
  c.init = PhaseInit::Random;
  c.alpha_fgla = 0.0;
  const auto a = fgla(mag, plan, c);
  const auto b = gla(mag, plan, c);
  EXPECT_EQ(a.samples, b.samples);
}

TEST(PhaseRecovery, GlaConsistencyIsNonIncreasing) {
  const CqtPlan plan{CqtParams{}};
  for (std::uint64_t seed : {1u, 2u}) {
    const auto mag = random_magnitudes(30, 384, seed);
    PhaseConfig c;
    c.n_iters = 10;
    std::vector<double> errs;
    gla(mag, plan, c, [&](const PhaseIterate& it) {
      errs.push_back(consistency_error(mag, it.signal, plan));
    });
    ASSERT_EQ(errs.size(), 10u);
    for (std::size_t i = 1; i < errs.size(); ++i)
      EXPECT_LE(errs[i], errs[i - 1] * (1.0 + 1e-9)) << "seed " << seed << " iteration " << i + 1;
  }
}

TEST(PhaseRecovery, RandomInitIsSeeded) {
  const CqtPlan plan{CqtParams{}};
  const auto mag = cqt_magnitude(cqt_forward(sine(500.0, 0.1), plan));
  PhaseConfig c;
  c.n_iters = 2;
  c.init = PhaseInit::Random;
  const auto a = gla(mag, plan, c);
  const auto b = gla(mag, plan, c);
  c.seed = 7;
  const auto d = gla(mag, plan, c);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NE(a.samples, d.samples);
}

TEST(PhaseRecovery, StopTokenCancels) {
  const CqtPlan plan{CqtParams{}};
  const auto mag = random_magnitudes(20, 384, 3);
  std::stop_source src;
  PhaseConfig c;
  c.n_iters = 20;
  EXPECT_THROW(gla(mag, plan, c,
                   [&](const PhaseIterate& it) {
                     if (it.iteration == 2) src.request_stop();
                   },
                   src.get_token()),
               Cancelled);
}

TEST(ConsistencyError, ExactSpectrumAndDegenerateCases) {
  const CqtPlan plan{CqtParams{}};
  auto x = sine(440.0, 1.0);
  x.samples.resize(344 * 128);
  const auto mag = cqt_magnitude(cqt_forward(x, plan));
  EXPECT_EQ(consistency_error(mag, x, plan), 0.0);
  EXPECT_LT(consistency_error(mag, icqt(cqt_forward(x, plan), plan), plan), 1e-3);

  AudioBuffer silent;
  silent.samples.assign(12 * 128, 0.0);
  const auto zero = zero_magnitudes(13, 384);
  EXPECT_EQ(consistency_error(zero, silent, plan), 0.0);
  EXPECT_THROW(consistency_error(zero_magnitudes(5, 384), silent, plan), ValidationError);
}

TEST(ConsistencyError, ScaleInvariant) {
  const CqtPlan plan{CqtParams{}};
  const auto mag = random_magnitudes(10, 384, 9);
  auto y = lsynth::testing::noise(9 * 128 / 44100.0, 4);
  y.samples.resize(9 * 128);
  const double e = consistency_error(mag, y, plan);
  auto mag2 = mag;
  for (auto& f : mag2)
    for (auto& v : f) v *= 4.0;
  for (auto& s : y.samples) s *= 4.0;
  EXPECT_NEAR(consistency_error(mag2, y, plan), e, 1e-12 * e);
}

// Zero-phase initialisation of a single sinusoid. With window-start phase
// referencing the zero-phase frames interfere destructively and the loop
// settles on a detuned partial instead; see the project notes.
TEST(PhaseRecovery, DISABLED_GlaRecoversSinusoidFromZeroPhase) {
  const CqtPlan plan{CqtParams{}};
  auto x = sine(440.0, 1.0);
  const auto mag = cqt_magnitude(cqt_forward(x, plan));
  PhaseConfig c;
  c.n_iters = 32;
  const auto y = gla(mag, plan, c);
  EXPECT_GE(snr_db(x.samples, y.samples), 10.0);
}

}  // namespace
}  // namespace lsynth
