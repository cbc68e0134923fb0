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

#include <cmath>
#include <random>

#include "lsynth/vae.hpp"
#include "test_support.hpp"

namespace lsynth {
namespace {

using lsynth::testing::gradcheck_model;
using lsynth::testing::gradient_check;
using MatD = MatrixT<double>;
using VecD = VectorT<double>;

MatD random_batch(int rows, int cols, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  MatD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

MatD normal_batch(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  MatD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

TEST(VaeArchitecture, DecoderMirrorsEncoder) {
  for (const auto& a : {VaeArchitecture::dense2048(), VaeArchitecture::deep_conv(),
                        VaeArchitecture::dense(10, {7, 5}, 3)}) {
    const auto e = a.encoder_shapes(), d = a.decoder_shapes();
    ASSERT_EQ(e.size(), d.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
      const auto& fwd = e[e.size() - 1 - i];
      EXPECT_EQ(d[i].in, fwd.out);
      EXPECT_EQ(d[i].out, fwd.in);
      EXPECT_EQ(d[i].conv, fwd.conv);
    }
  }
  const auto a = VaeArchitecture::dense2048();
  EXPECT_EQ(a.latent_dim, 256);
  EXPECT_EQ(a.hidden, (std::vector<int>{2048, 2048}));
}

TEST(VaeArchitecture, DeepConvPlane) {
  const auto a = VaeArchitecture::deep_conv();
  EXPECT_EQ(a.conv.rows * a.conv.cols, 384);
  EXPECT_EQ(a.conv.rows, 16);
  EXPECT_EQ(a.conv.cols, 24);
  EXPECT_EQ(a.conv.filters, 32);
  EXPECT_EQ(a.conv.kernel, 3);
  EXPECT_EQ(a.conv.stride, 2);
  EXPECT_EQ(a.latent_dim, 8);
  auto bad = a;
  bad.conv.rows = 15;
  EXPECT_THROW(bad.validate(), ValidationError);
  EXPECT_THROW(VaeModel<float>{bad}, ValidationError);
}

TEST(VaeArchitecture, JsonRoundTrip) {
  for (const auto& a : {VaeArchitecture::dense2048(), VaeArchitecture::deep_conv()})
    EXPECT_EQ(architecture_from_json(to_json(a)), a);
  EXPECT_EQ(parse_arch_kind("dense2048"), ArchKind::Dense2048);
  EXPECT_EQ(parse_arch_kind("deep_conv"), ArchKind::DeepConv);
  EXPECT_THROW(parse_arch_kind("lstm"), ValidationError);
}

TEST(VaeModel, ZeroModelEncodesToStandardPrior) {
  const VaeModel<float> m(VaeArchitecture::dense2048());
  const VectorT<float> x = VectorT<float>::Constant(384, 0.3f);
  const auto d = encode(m, x);
  ASSERT_EQ(d.mu.size(), 256);
  ASSERT_EQ(d.log_var.size(), 256);
  EXPECT_EQ(d.mu.squaredNorm(), 0.0f);
  EXPECT_EQ(d.log_var.squaredNorm(), 0.0f);
}

TEST(VaeModel, EncodeDecodeShapesAndRange) {
  const auto m = VaeModel<float>::initialized(VaeArchitecture::dense(384, {64}, 16), 3);
  const VectorT<float> x = random_batch(384, 1, 1).cast<float>();
  const auto a = encode(m, x), b = encode(m, x);
  EXPECT_EQ(a.mu, b.mu);
  EXPECT_EQ(a.log_var, b.log_var);
  const VectorT<float> z = VectorT<float>::Constant(16, 40.0f);
  const auto y = decode(m, z);
  ASSERT_EQ(y.size(), 384);
  EXPECT_GE(y.minCoeff(), 0.0f);
  EXPECT_LE(y.maxCoeff(), 1.0f);
  EXPECT_EQ(decode(m, z), y);
  EXPECT_THROW(encode(m, VectorT<float>(383)), ValidationError);
  EXPECT_THROW(decode(m, VectorT<float>(15)), ValidationError);
}

TEST(VaeModel, DeepConvShapes) {
  const auto m = VaeModel<float>::initialized(VaeArchitecture::deep_conv(), 5);
  const VectorT<float> x = random_batch(384, 1, 2).cast<float>();
  const auto d = encode(m, x);
  EXPECT_EQ(d.mu.size(), 8);
  const auto y = decode(m, d.mu);
  EXPECT_EQ(y.size(), 384);
  EXPECT_GE(y.minCoeff(), 0.0f);
  EXPECT_LE(y.maxCoeff(), 1.0f);
}

TEST(Reparameterize, VanishingVarianceAndSeeding) {
  LatentDistribution<double> d{VecD::Constant(4, 0.7), VecD::Constant(4, -60.0)};
  std::mt19937_64 rng(1);
  const auto z = reparameterize(d, rng);
  EXPECT_LT((z - d.mu).cwiseAbs().maxCoeff(), 1e-5);

  d.log_var.setZero();
  std::mt19937_64 r1(9), r2(9);
  EXPECT_EQ(reparameterize(d, r1), reparameterize(d, r2));
}

TEST(Reparameterize, SampleMeanConverges) {
  LatentDistribution<double> d{VecD(3), VecD(3)};
  d.mu << 1.0, -2.0, 0.5;
  d.log_var << 0.0, std::log(4.0), std::log(0.25);
  std::mt19937_64 rng(11);
  constexpr int n = 100000;
  VecD mean = VecD::Zero(3);
  for (int i = 0; i < n; ++i) mean += reparameterize(d, rng);
  mean /= n;
  for (int j = 0; j < 3; ++j) {
    const double sd = std::exp(d.log_var[j] / 2.0);
    EXPECT_NEAR(mean[j], d.mu[j], 3.0 * sd / std::sqrt(double(n)));
  }
}

TEST(KlDivergence, ClosedForms) {
  LatentDistribution<double> d{VecD::Zero(1), VecD::Zero(1)};
  EXPECT_EQ(kl_divergence(d), 0.0);
  d.mu[0] = 1.0;
  EXPECT_NEAR(kl_divergence(d), 0.5, 1e-15);
  d.mu[0] = 0.0;
  d.log_var[0] = std::log(4.0);
  EXPECT_NEAR(kl_divergence(d), -0.5 * (1.0 + std::log(4.0) - 4.0), 1e-15);
  EXPECT_NEAR(kl_divergence(d), 0.8069, 1e-4);

  const auto rnd = normal_batch(50, 2, 4);
  LatentDistribution<double> r{rnd.col(0), rnd.col(1) * 3.0};
  EXPECT_GE(kl_divergence(r), 0.0);
}

TEST(Loss, Examples) {
  const VecD x = VecD::Constant(6, 0.25);
  LatentDistribution<double> d{VecD::Zero(2), VecD::Zero(2)};
  auto l = loss(x, x, d, 5e-4);
  EXPECT_EQ(l.total, 0.0);

  VecD x_hat = x;
  x_hat[0] -= 1.0;
  d.mu[0] = 1.0;  // kld 0.5
  l = loss(x, x_hat, d, 0.5);
  EXPECT_DOUBLE_EQ(l.reconstruction, 1.0);
  EXPECT_DOUBLE_EQ(l.kld, 0.5);
  EXPECT_DOUBLE_EQ(l.total, 1.25);
  EXPECT_EQ(loss(x, x_hat, d, 0.0).total, loss(x, x_hat, d, 0.0).reconstruction);
  EXPECT_THROW(loss(x, VecD(5), d, 0.0), ValidationError);
}

TEST(Gradients, DenseMatchesFiniteDifferences) {
  const auto m = gradcheck_model(VaeArchitecture::dense(16, {8, 8}, 4), 7);
  const auto r = gradient_check(m, random_batch(16, 5, 1), normal_batch(4, 5, 2), 0.3);
  EXPECT_GT(r.checked, 200u);
  EXPECT_LE(r.worst, 1e-4) << r.worst_name;
}

TEST(Gradients, SmallToyMatchesFiniteDifferences) {
  const auto m = gradcheck_model(VaeArchitecture::dense(4, {2}, 1), 3);
  const auto r = gradient_check(m, random_batch(4, 3, 5), normal_batch(1, 3, 6), 1.0);
  EXPECT_GT(r.checked, 10u);
  EXPECT_LE(r.worst, 1e-4) << r.worst_name;
}

TEST(Gradients, ConvMatchesFiniteDifferences) {
  VaeArchitecture a;
  a.kind = ArchKind::DeepConv;
  a.input_dim = 24;
  a.latent_dim = 2;
  a.hidden = {8, 4};
  a.conv.filters = 2;
  a.conv.rows = 4;
  a.conv.cols = 6;
  const auto m = gradcheck_model(a, 5);
  const auto r = gradient_check(m, random_batch(24, 3, 8), normal_batch(2, 3, 9), 0.5);
  EXPECT_GT(r.checked, 100u);
  EXPECT_LE(r.worst, 1e-4) << r.worst_name;
}

TEST(Gradients, ZeroModelOnZeroBatch) {
  // Only the output bias sees a signal: sigmoid(0) = 1/2 against target 0
  // gives 2 * 1/2 * 1/4 per component.
  const auto arch = VaeArchitecture::dense(8, {4, 4}, 2);
  const VaeModel<double> m(arch);
  VaeModel<double> g(arch);
  m.loss_gradients(MatD::Zero(8, 3), normal_batch(2, 3, 1), 0.0, g);
  g.for_each_tensor([&](const std::string& name, const MatD& t) {
    if (name == "decoder.2.bias")
      EXPECT_NEAR((t.array() - 0.25).abs().maxCoeff(), 0.0, 1e-15);
    else
      EXPECT_EQ(t.cwiseAbs().maxCoeff(), 0.0) << name;
  });
}

TEST(Gradients, LinearInKldMultiplier) {
  const auto arch = VaeArchitecture::dense(6, {5}, 3);
  const auto m = gradcheck_model(arch, 2);
  const MatD x = random_batch(6, 4, 3), eps = normal_batch(3, 4, 4);
  VaeModel<double> g0(arch), g1(arch), g2(arch);
  m.loss_gradients(x, eps, 0.0, g0);
  m.loss_gradients(x, eps, 1.0, g1);
  m.loss_gradients(x, eps, 2.0, g2);
  std::vector<MatD> t0, t1, t2;
  g0.for_each_tensor([&](const std::string&, const MatD& t) { t0.push_back(t); });
  g1.for_each_tensor([&](const std::string&, const MatD& t) { t1.push_back(t); });
  g2.for_each_tensor([&](const std::string&, const MatD& t) { t2.push_back(t); });
  for (std::size_t i = 0; i < t0.size(); ++i)
    EXPECT_LT((t2[i] - 2.0 * t1[i] + t0[i]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gradients, RngOverloadIsSeeded) {
  const auto m = gradcheck_model(VaeArchitecture::dense(6, {5}, 3), 2);
  const MatD x = random_batch(6, 4, 3);
  std::mt19937_64 r1(5), r2(5);
  const auto [ga, la] = loss_gradients(m, x, 0.1, r1);
  const auto [gb, lb] = loss_gradients(m, x, 0.1, r2);
  EXPECT_EQ(la.total, lb.total);
}

TEST(KldSchedule, Examples) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(kld_schedule(17, c), 5e-4);
  c.warmup = parse_warmup("0:100:0:2");
  EXPECT_DOUBLE_EQ(kld_schedule(0, c), 0.0);
  EXPECT_DOUBLE_EQ(kld_schedule(50, c), 1.0);
  EXPECT_DOUBLE_EQ(kld_schedule(100, c), 2.0);
  EXPECT_DOUBLE_EQ(kld_schedule(150, c), 2.0);
  EXPECT_THROW(kld_schedule(-1, c), ValidationError);
  EXPECT_THROW(parse_warmup("0:100:0"), ValidationError);
  EXPECT_THROW(parse_warmup("10:5:0:1"), ValidationError);
}

TEST(Train, DeterministicForSeed) {
  const auto ds = lsynth::testing::toy_dataset(40);
  const auto arch = VaeArchitecture::dense(384, {16}, 4);
  TrainConfig c;
  c.epochs = 5;
  c.batch_size = 16;
  const auto a = train(ds, arch, c), b = train(ds, arch, c);
  ASSERT_EQ(a.log.size(), 5u);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].total, b.log[i].total);
    EXPECT_EQ(a.log[i].reconstruction, b.log[i].reconstruction);
  }
  std::vector<MatrixT<float>> ta, tb;
  a.final_model.for_each_tensor([&](const std::string&, const MatrixT<float>& t) { ta.push_back(t); });
  b.final_model.for_each_tensor([&](const std::string&, const MatrixT<float>& t) { tb.push_back(t); });
  EXPECT_EQ(ta, tb);
  EXPECT_EQ(a.final_model.norm_constant, ds.norm_constant);
  c.seed = 43;
  EXPECT_NE(train(ds, arch, c).log.back().total, a.log.back().total);
}

TEST(Train, OverfitsThreeFrames) {
  const auto ds = [] {
    auto d = lsynth::testing::toy_dataset(200);
    FrameDataset s = d;
    s.frames = MatrixT<float>(d.frames.rows(), 3);
    s.frames << d.frames.col(10), d.frames.col(60), d.frames.col(120);
    s.sources.resize(3);
    return s;
  }();
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.epochs = 1500;
  const auto r = train(ds, VaeArchitecture::dense(384, {64}, 8), c);
  double mse = 0.0;
  for (Eigen::Index i = 0; i < 3; ++i) {
    const VectorT<float> x = ds.frames.col(i);
    const auto y = decode(r.final_model, encode(r.final_model, x).mu);
    mse += (y - x).squaredNorm() / double(x.size());
  }
  EXPECT_LT(mse / 3.0, 1e-3);
}

TEST(Train, RejectsBadInput) {
  FrameDataset empty;
  EXPECT_THROW(train(empty, VaeArchitecture::dense(384, {8}, 2), TrainConfig{}), ValidationError);
  const auto ds = lsynth::testing::toy_dataset(10);
  TrainConfig c;
  c.epochs = 1;
  EXPECT_THROW(train(ds, VaeArchitecture::dense(100, {8}, 2), c), ValidationError);
  c.learning_rate = 0.0;
  EXPECT_THROW(train(ds, VaeArchitecture::dense(384, {8}, 2), c), ValidationError);
}

TEST(Train, ReportsNonFiniteLoss) {
  auto ds = lsynth::testing::toy_dataset(10);
  ds.frames(0, 0) = std::numeric_limits<float>::quiet_NaN();
  TrainConfig c;
  c.epochs = 2;
  try {
    train(ds, VaeArchitecture::dense(384, {8}, 2), c);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss at epoch 0"), std::string::npos);
  }
}

TEST(Train, StopsOnRequest) {
  const auto ds = lsynth::testing::toy_dataset(10);
  std::stop_source src;
  TrainConfig c;
  c.epochs = 100;
  EXPECT_THROW(train(ds, VaeArchitecture::dense(384, {8}, 2), c,
                     [&](const EpochLoss& e) {
                       if (e.epoch == 1) src.request_stop();
                     },
                     src.get_token()),
               Cancelled);
}

}  // namespace
}  // namespace lsynth
