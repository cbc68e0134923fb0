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

// Variational autoencoder over single normalised magnitude frames.
//
// Two layouts share one implementation: a fully connected stack, and a
// stack with a single strided convolution in front of the dense layers
// (the input frame is reshaped into a rows x cols plane first). The
// decoder mirrors the encoder layer for layer; its last layer is squashed
// by a sigmoid so outputs stay in [0, 1].
//
// Activations are stored one column per sample. Backpropagation is written
// out by hand, the model is templated on the scalar type so gradients can
// be checked in double while training runs in float.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stop_token>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "lsynth/dataset.hpp"
#include "lsynth/errors.hpp"

namespace lsynth {

enum class ArchKind { Dense2048, DeepConv };

inline const char* arch_kind_name(ArchKind k) {
  return k == ArchKind::Dense2048 ? "dense2048" : "deep_conv";
}

inline ArchKind parse_arch_kind(const std::string& s) {
  if (s == "dense2048" || s == "dense") return ArchKind::Dense2048;
  if (s == "deep_conv" || s == "deepconv" || s == "conv") return ArchKind::DeepConv;
  throw ValidationError("unknown architecture '" + s + "'");
}

struct ConvSpec {
  int filters = 32;
  int kernel = 3;
  int stride = 2;
  int padding = 1;
  int rows = 16;
  int cols = 24;

  int out_rows() const { return (rows + 2 * padding - kernel) / stride + 1; }
  int out_cols() const { return (cols + 2 * padding - kernel) / stride + 1; }
  int out_dim() const { return filters * out_rows() * out_cols(); }
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct LayerShape {
  int in = 0;
  int out = 0;
  bool conv = false;
  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

struct VaeArchitecture {
  ArchKind kind = ArchKind::Dense2048;
  int input_dim = 384;
  int latent_dim = 256;
  std::vector<int> hidden{2048, 2048};
  ConvSpec conv;  // DeepConv only

  static VaeArchitecture dense2048(int input_dim = 384) {
    return dense(input_dim, {2048, 2048}, 256);
  }

  static VaeArchitecture dense(int input_dim, std::vector<int> hidden, int latent_dim) {
    VaeArchitecture a;
    a.kind = ArchKind::Dense2048;
    a.input_dim = input_dim;
    a.hidden = std::move(hidden);
    a.latent_dim = latent_dim;
    a.validate();
    return a;
  }

  // Input plane 16 x 24 (one row per half octave at 48 bins per octave),
  // conv 32 @ 3x3 stride 2, then four dense layers halving from 1024.
  static VaeArchitecture deep_conv(int input_dim = 384) {
    VaeArchitecture a;
    a.kind = ArchKind::DeepConv;
    a.input_dim = input_dim;
    a.latent_dim = 8;
    a.hidden = {1024, 512, 256, 128};
    a.conv = ConvSpec{};
    a.conv.cols = 24;
    a.conv.rows = input_dim / 24;
    a.validate();
    return a;
  }

  void validate() const {
    if (input_dim <= 0 || latent_dim <= 0) throw ValidationError("layer sizes must be positive");
    for (int h : hidden)
      if (h <= 0) throw ValidationError("layer sizes must be positive");
    if (kind == ArchKind::DeepConv) {
      if (conv.rows * conv.cols != input_dim)
        throw ValidationError("conv plane " + std::to_string(conv.rows) + "x" +
                              std::to_string(conv.cols) + " does not match input_dim " +
                              std::to_string(input_dim));
      if (conv.filters <= 0 || conv.kernel <= 0 || conv.stride <= 0 || conv.padding < 0 ||
          conv.out_rows() <= 0 || conv.out_cols() <= 0)
        throw ValidationError("invalid convolution spec");
    }
  }

  std::vector<LayerShape> encoder_shapes() const {
    std::vector<LayerShape> s;
    int width = input_dim;
    if (kind == ArchKind::DeepConv) {
      s.push_back({width, conv.out_dim(), true});
      width = conv.out_dim();
    }
    for (int h : hidden) {
      s.push_back({width, h, false});
      width = h;
    }
    s.push_back({width, latent_dim, false});
    return s;
  }

  std::vector<LayerShape> decoder_shapes() const {
    auto e = encoder_shapes();
    std::vector<LayerShape> d;
    for (auto it = e.rbegin(); it != e.rend(); ++it) d.push_back({it->out, it->in, it->conv});
    return d;
  }

  friend bool operator==(const VaeArchitecture&, const VaeArchitecture&) = default;
};

inline nlohmann::json to_json(const VaeArchitecture& a) {
  nlohmann::json j{{"kind", arch_kind_name(a.kind)},
                   {"input_dim", a.input_dim},
                   {"latent_dim", a.latent_dim},
                   {"hidden", a.hidden}};
  if (a.kind == ArchKind::DeepConv)
    j["conv"] = {{"filters", a.conv.filters}, {"kernel", a.conv.kernel},
                 {"stride", a.conv.stride},   {"padding", a.conv.padding},
                 {"rows", a.conv.rows},       {"cols", a.conv.cols}};
  return j;
}

inline VaeArchitecture architecture_from_json(const nlohmann::json& j) {
  try {
    VaeArchitecture a;
    a.kind = parse_arch_kind(j.at("kind").get<std::string>());
    a.input_dim = j.at("input_dim").get<int>();
    a.latent_dim = j.at("latent_dim").get<int>();
    a.hidden = j.at("hidden").get<std::vector<int>>();
    if (a.kind == ArchKind::DeepConv) {
      const auto& c = j.at("conv");
      a.conv.filters = c.at("filters").get<int>();
      a.conv.kernel = c.at("kernel").get<int>();
      a.conv.stride = c.at("stride").get<int>();
      a.conv.padding = c.at("padding").get<int>();
      a.conv.rows = c.at("rows").get<int>();
      a.conv.cols = c.at("cols").get<int>();
    }
    a.validate();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad architecture descriptor: ") + e.what());
  }
}

inline constexpr double kLogVarMin = -30.0;
inline constexpr double kLogVarMax = 20.0;

template <class S>
using MatrixT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VectorT = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class S>
struct LatentDistribution {
  VectorT<S> mu;
  VectorT<S> log_var;
};

struct LossBreakdown {
  double reconstruction = 0;
  double kld = 0;
  double total = 0;
};

template <class S>
S kl_divergence(const LatentDistribution<S>& d) {
  S acc = 0;
  for (Eigen::Index j = 0; j < d.mu.size(); ++j)
    acc += S(1) + d.log_var[j] - d.mu[j] * d.mu[j] - std::exp(d.log_var[j]);
  return S(-0.5) * acc;
}

template <class S>
LossBreakdown loss(const VectorT<S>& x, const VectorT<S>& x_hat, const LatentDistribution<S>& d,
                   double alpha) {
  if (x.size() != x_hat.size()) throw ValidationError("loss: shape mismatch");
  LossBreakdown l;
  l.reconstruction = static_cast<double>((x - x_hat).squaredNorm());
  l.kld = static_cast<double>(kl_divergence(d));
  l.total = l.reconstruction + alpha * l.kld;
  return l;
}

template <class S, class Rng>
VectorT<S> reparameterize(const LatentDistribution<S>& d, Rng& rng) {
  std::normal_distribution<S> normal(S(0), S(1));
  VectorT<S> z(d.mu.size());
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    S lv = std::clamp(d.log_var[j], S(kLogVarMin), S(kLogVarMax));
    z[j] = d.mu[j] + std::exp(lv / S(2)) * normal(rng);
  }
  return z;
}

namespace detail {

// Gather table for a strided 2-D convolution on a single-channel plane:
// entry (a, b) is the plane index read by kernel tap a at output pixel b,
// or -1 for padding.
inline std::vector<int> conv_gather(const ConvSpec& c) {
  const int kk = c.kernel * c.kernel, npix = c.out_rows() * c.out_cols();
  std::vector<int> g(static_cast<std::size_t>(kk) * npix, -1);
  for (int u = 0; u < c.kernel; ++u)
    for (int v = 0; v < c.kernel; ++v)
      for (int i = 0; i < c.out_rows(); ++i)
        for (int j = 0; j < c.out_cols(); ++j) {
          int r = c.stride * i + u - c.padding, q = c.stride * j + v - c.padding;
          if (r >= 0 && r < c.rows && q >= 0 && q < c.cols)
            g[static_cast<std::size_t>(u * c.kernel + v) * npix + i * c.out_cols() + j] =
                r * c.cols + q;
        }
  return g;
}

}  // namespace detail

enum class LayerKind { Dense, Conv, ConvTranspose };

template <class S>
struct Layer {
  std::string name;
  LayerKind kind = LayerKind::Dense;
  MatrixT<S> w;  // dense: out x in; conv and transpose: filters x kernel^2
  MatrixT<S> b;  // column; conv: filters x 1; transpose: 1 x 1
};

template <class S>
class VaeModel {
 public:
  using Mat = MatrixT<S>;
  using Vec = VectorT<S>;

  VaeModel() : VaeModel(VaeArchitecture::dense(1, {}, 1)) {}

  // All parameters zero.
  explicit VaeModel(const VaeArchitecture& arch) : arch_(arch) {
    arch_.validate();
    if (arch_.kind == ArchKind::DeepConv) gather_ = detail::conv_gather(arch_.conv);
    const auto enc = arch_.encoder_shapes();
    const auto dec = arch_.decoder_shapes();
    const int kk = arch_.conv.kernel * arch_.conv.kernel;
    for (std::size_t i = 0; i + 1 < enc.size(); ++i) {
      const auto& s = enc[i];
      if (s.conv)
        encoder_.push_back(make("encoder." + std::to_string(i), LayerKind::Conv,
                                arch_.conv.filters, kk, arch_.conv.filters));
      else
        encoder_.push_back(
            make("encoder." + std::to_string(i), LayerKind::Dense, s.out, s.in, s.out));
    }
    mu_ = make("encoder.mu", LayerKind::Dense, enc.back().out, enc.back().in, enc.back().out);
    log_var_ =
        make("encoder.log_var", LayerKind::Dense, enc.back().out, enc.back().in, enc.back().out);
    for (std::size_t i = 0; i < dec.size(); ++i) {
      const auto& s = dec[i];
      if (s.conv)
        decoder_.push_back(make("decoder." + std::to_string(i), LayerKind::ConvTranspose,
                                arch_.conv.filters, kk, 1));
      else
        decoder_.push_back(
            make("decoder." + std::to_string(i), LayerKind::Dense, s.out, s.in, s.out));
    }
  }

  // Glorot-uniform weights, zero biases.
  static VaeModel initialized(const VaeArchitecture& arch, std::uint64_t seed) {
    VaeModel m(arch);
    std::mt19937_64 rng(seed);
    const int kk = arch.conv.kernel * arch.conv.kernel;
    m.for_each_layer([&](Layer<S>& l) {
      double fan_in = static_cast<double>(l.w.cols()), fan_out = static_cast<double>(l.w.rows());
      if (l.kind == LayerKind::Conv) {
        fan_in = kk;
        fan_out = static_cast<double>(arch.conv.filters) * kk;
      } else if (l.kind == LayerKind::ConvTranspose) {
        fan_in = static_cast<double>(arch.conv.filters) * kk;
        fan_out = kk;
      }
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index c = 0; c < l.w.cols(); ++c)
        for (Eigen::Index r = 0; r < l.w.rows(); ++r) l.w(r, c) = static_cast<S>(dist(rng));
    });
    return m;
  }

  const VaeArchitecture& arch() const { return arch_; }
  int input_dim() const { return arch_.input_dim; }
  int latent_dim() const { return arch_.latent_dim; }

  double norm_constant = 1.0;

  // Visits every parameter tensor in a fixed order: encoder layers, mu head,
  // log-variance head, decoder layers; weight before bias.
  template <class F>
  void for_each_tensor(F&& f) {
    for_each_layer([&](Layer<S>& l) {
      f(l.name + ".weight", l.w);
      f(l.name + ".bias", l.b);
    });
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    for_each_layer([&](const Layer<S>& l) {
      f(l.name + ".weight", l.w);
      f(l.name + ".bias", l.b);
    });
  }

  template <class F>
  void for_each_layer(F&& f) {
    for (auto& l : encoder_) f(l);
    f(mu_);
    f(log_var_);
    for (auto& l : decoder_) f(l);
  }
  template <class F>
  void for_each_layer(F&& f) const {
    for (const auto& l : encoder_) f(l);
    f(mu_);
    f(log_var_);
    for (const auto& l : decoder_) f(l);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, const Mat& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const std::string&, const Mat& m) { ok = ok && m.allFinite(); });
    return ok;
  }

  void set_zero() {
    for_each_tensor([](const std::string&, Mat& m) { m.setZero(); });
  }

  // Batched evaluation, one column per sample.
  struct Trace {
    std::vector<Mat> enc_in;  // input of each encoder layer; back() feeds the heads
    std::vector<Mat> enc_pre;
    Mat mu, log_var_raw, log_var, eps, z;
    std::vector<Mat> dec_in;
    std::vector<Mat> dec_pre;
    Mat out;
  };

  void encode_into(const Mat& x, Trace& t) const {
    check_rows(x, arch_.input_dim, "encode");
    t.enc_in.assign(1, x);
    t.enc_pre.clear();
    for (const auto& l : encoder_) {
      Mat pre = apply(l, t.enc_in.back());
      t.enc_in.push_back(pre.cwiseMax(S(0)));
      t.enc_pre.push_back(std::move(pre));
    }
    t.mu = apply(mu_, t.enc_in.back());
    t.log_var_raw = apply(log_var_, t.enc_in.back());
    t.log_var = t.log_var_raw.cwiseMax(S(kLogVarMin)).cwiseMin(S(kLogVarMax));
  }

  void decode_into(const Mat& z, Trace& t) const {
    check_rows(z, arch_.latent_dim, "decode");
    t.dec_in.assign(1, z);
    t.dec_pre.clear();
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      Mat pre = apply(decoder_[i], t.dec_in.back());
      if (i + 1 < decoder_.size()) t.dec_in.push_back(pre.cwiseMax(S(0)));
      t.dec_pre.push_back(std::move(pre));
    }
    t.out = t.dec_pre.back().unaryExpr([](S v) { return sigmoid(v); });
  }

  // Returns (mu, log_var) matrices.
  std::pair<Mat, Mat> encode_batch(const Mat& x) const {
    Trace t;
    encode_into(x, t);
    return {std::move(t.mu), std::move(t.log_var)};
  }

  Mat decode_batch(const Mat& z) const {
    Trace t;
    decode_into(z, t);
    return std::move(t.out);
  }

  LatentDistribution<S> encode(const Vec& x) const {
    auto [mu, lv] = encode_batch(Mat(x));
    return {mu.col(0), lv.col(0)};
  }

  Vec decode(const Vec& z) const { return decode_batch(Mat(z)).col(0); }

  // Loss (batch means) and gradients for given reparametrisation noise.
  // Returns the loss; grads must have this model's architecture.
  LossBreakdown loss_gradients(const Mat& x, const Mat& eps, double alpha, VaeModel& grads) const {
    if (x.cols() == 0) throw ValidationError("loss_gradients: empty batch");
    if (eps.rows() != arch_.latent_dim || eps.cols() != x.cols())
      throw ValidationError("loss_gradients: noise shape mismatch");
    if (!(grads.arch_ == arch_)) throw ValidationError("loss_gradients: gradient shape mismatch");
    const S inv_b = S(1) / static_cast<S>(x.cols());
    const S a = static_cast<S>(alpha);

    Trace t;
    encode_into(x, t);
    Mat sd = (t.log_var * S(0.5)).array().exp().matrix();
    t.eps = eps;
    t.z = t.mu + sd.cwiseProduct(eps);
    decode_into(t.z, t);

    LossBreakdown l;
    Mat diff = t.out - x;
    l.reconstruction = static_cast<double>(diff.squaredNorm()) * static_cast<double>(inv_b);
    Mat kl_terms = (t.log_var.array() + S(1) - t.mu.array().square() - t.log_var.array().exp()).matrix();
    l.kld = -0.5 * static_cast<double>(kl_terms.sum()) * static_cast<double>(inv_b);
    l.total = l.reconstruction + alpha * l.kld;

    // Decoder.
    Mat d = (S(2) * inv_b) * diff;
    d = d.cwiseProduct(t.out.cwiseProduct((Mat::Ones(t.out.rows(), t.out.cols()) - t.out)));
    for (std::size_t i = decoder_.size(); i-- > 0;) {
      if (i + 1 < decoder_.size()) d = d.cwiseProduct(relu_mask(t.dec_pre[i]));
      Mat din;
      backprop(decoder_[i], t.dec_in[i], d, grads.decoder_[i], &din);
      d = std::move(din);
    }
    // Latent: d is dL/dz.
    Mat dmu = d + (a * inv_b) * t.mu;
    Mat dlv = d.cwiseProduct(eps).cwiseProduct(S(0.5) * sd) +
              (a * inv_b * S(-0.5)) *
                  (Mat::Ones(t.log_var.rows(), t.log_var.cols()) - t.log_var.array().exp().matrix());
    for (Eigen::Index c = 0; c < dlv.cols(); ++c)
      for (Eigen::Index r = 0; r < dlv.rows(); ++r) {
        S raw = t.log_var_raw(r, c);
        if (raw < S(kLogVarMin) || raw > S(kLogVarMax)) dlv(r, c) = S(0);
      }
    Mat dh, tmp;
    backprop(mu_, t.enc_in.back(), dmu, grads.mu_, &dh);
    backprop(log_var_, t.enc_in.back(), dlv, grads.log_var_, &tmp);
    dh += tmp;
    for (std::size_t i = encoder_.size(); i-- > 0;) {
      dh = dh.cwiseProduct(relu_mask(t.enc_pre[i]));
      Mat din;
      backprop(encoder_[i], t.enc_in[i], dh, grads.encoder_[i], i > 0 ? &din : nullptr);
      dh = std::move(din);
    }
    return l;
  }

  // Loss on mean latents (no sampling); batch means.
  LossBreakdown evaluate(const Mat& x, double alpha) const {
    if (x.cols() == 0) throw ValidationError("evaluate: empty batch");
    Trace t;
    encode_into(x, t);
    decode_into(t.mu, t);
    LossBreakdown l;
    const double n = static_cast<double>(x.cols());
    l.reconstruction = static_cast<double>((t.out - x).squaredNorm()) / n;
    Mat kl_terms = (t.log_var.array() + S(1) - t.mu.array().square() - t.log_var.array().exp()).matrix();
    l.kld = -0.5 * static_cast<double>(kl_terms.sum()) / n;
    l.total = l.reconstruction + alpha * l.kld;
    return l;
  }

  template <class T>
  VaeModel<T> cast() const {
    VaeModel<T> m(arch_);
    m.norm_constant = norm_constant;
    std::vector<const Mat*> src;
    for_each_tensor([&](const std::string&, const Mat& t) { src.push_back(&t); });
    std::size_t i = 0;
    m.for_each_tensor([&](const std::string&, MatrixT<T>& t) { t = src[i++]->template cast<T>(); });
    return m;
  }

 private:
  static S sigmoid(S v) {
    return v >= S(0) ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v));
  }

  static Mat relu_mask(const Mat& pre) {
    return pre.unaryExpr([](S v) { return v > S(0) ? S(1) : S(0); });
  }

  static void check_rows(const Mat& m, int rows, const char* what) {
    if (m.rows() != rows)
      throw ValidationError(std::string(what) + ": expected " + std::to_string(rows) +
                            " components, got " + std::to_string(m.rows()));
  }

  static Layer<S> make(std::string name, LayerKind kind, int w_rows, int w_cols, int b_rows) {
    Layer<S> l;
    l.name = std::move(name);
    l.kind = kind;
    l.w = Mat::Zero(w_rows, w_cols);
    l.b = Mat::Zero(b_rows, 1);
    return l;
  }

  int npix() const { return arch_.conv.out_rows() * arch_.conv.out_cols(); }
  int taps() const { return arch_.conv.kernel * arch_.conv.kernel; }

  // Plane (rows*cols) -> patches (taps x npix).
  Mat im2col(const S* plane) const {
    Mat p(taps(), npix());
    const int np = npix();
    for (int a = 0; a < taps(); ++a)
      for (int b = 0; b < np; ++b) {
        int g = gather_[static_cast<std::size_t>(a) * np + b];
        p(a, b) = g >= 0 ? plane[g] : S(0);
      }
    return p;
  }

  // Patches -> plane, summing overlaps.
  void col2im(const Mat& p, S* plane) const {
    const int np = npix();
    std::fill(plane, plane + arch_.input_dim, S(0));
    for (int a = 0; a < taps(); ++a)
      for (int b = 0; b < np; ++b) {
        int g = gather_[static_cast<std::size_t>(a) * np + b];
        if (g >= 0) plane[g] += p(a, b);
      }
  }

  Mat apply(const Layer<S>& l, const Mat& in) const {
    if (l.kind == LayerKind::Dense) return (l.w * in).colwise() + l.b.col(0);
    const Eigen::Index nb = in.cols();
    if (l.kind == LayerKind::Conv) {
      Mat out(arch_.conv.out_dim(), nb);
      for (Eigen::Index c = 0; c < nb; ++c) {
        Mat y = (l.w * im2col(in.col(c).data())).colwise() + l.b.col(0);  // filters x npix
        // Flatten filter-major: row f of y becomes a contiguous block.
        Mat yt = y.transpose();
        out.col(c) = Eigen::Map<const Vec>(yt.data(), yt.size());
      }
      return out;
    }
    Mat out(arch_.input_dim, nb);
    for (Eigen::Index c = 0; c < nb; ++c) {
      Eigen::Map<const Mat> x(in.col(c).data(), npix(), arch_.conv.filters);  // npix x filters
      Mat p = l.w.transpose() * x.transpose();                                  // taps x npix
      col2im(p, out.col(c).data());
      out.col(c).array() += l.b(0, 0);
    }
    return out;
  }

  // Accumulates dL/dW and dL/db into g; writes dL/din when requested.
  void backprop(const Layer<S>& l, const Mat& in, const Mat& dout, Layer<S>& g, Mat* din) const {
    if (l.kind == LayerKind::Dense) {
      g.w.noalias() += dout * in.transpose();
      g.b.col(0) += dout.rowwise().sum();
      if (din) *din = l.w.transpose() * dout;
      return;
    }
    const Eigen::Index nb = in.cols();
    if (din) din->resize(in.rows(), nb);
    if (l.kind == LayerKind::Conv) {
      for (Eigen::Index c = 0; c < nb; ++c) {
        Mat p = im2col(in.col(c).data());
        Eigen::Map<const Mat> dyt(dout.col(c).data(), npix(), arch_.conv.filters);
        Mat dy = dyt.transpose();  // filters x npix
        g.w.noalias() += dy * p.transpose();
        g.b.col(0) += dy.rowwise().sum();
        if (din) {
          Mat dp = l.w.transpose() * dy;
          col2im(dp, din->col(c).data());
        }
      }
      return;
    }
    for (Eigen::Index c = 0; c < nb; ++c) {
      Eigen::Map<const Mat> xt(in.col(c).data(), npix(), arch_.conv.filters);
      Mat dp = im2col(dout.col(c).data());  // taps x npix
      g.w.noalias() += xt.transpose() * dp.transpose();
      g.b(0, 0) += dout.col(c).sum();
      if (din) {
        Mat dx = l.w * dp;  // filters x npix
        Mat dxt = dx.transpose();
        din->col(c) = Eigen::Map<const Vec>(dxt.data(), dxt.size());
      }
    }
  }

  VaeArchitecture arch_;
  std::vector<int> gather_;
  std::vector<Layer<S>> encoder_;
  Layer<S> mu_, log_var_;
  std::vector<Layer<S>> decoder_;

  template <class>
  friend class VaeModel;
};

template <class S>
LatentDistribution<S> encode(const VaeModel<S>& m, const VectorT<S>& x) {
  return m.encode(x);
}

template <class S>
VectorT<S> decode(const VaeModel<S>& m, const VectorT<S>& z) {
  return m.decode(z);
}

// Draws one noise sample per datum from rng, then backpropagates.
template <class S, class Rng>
std::pair<VaeModel<S>, LossBreakdown> loss_gradients(const VaeModel<S>& m, const MatrixT<S>& batch,
                                                     double alpha, Rng& rng) {
  std::normal_distribution<S> normal(S(0), S(1));
  MatrixT<S> eps(m.latent_dim(), batch.cols());
  for (Eigen::Index c = 0; c < eps.cols(); ++c)
    for (Eigen::Index r = 0; r < eps.rows(); ++r) eps(r, c) = normal(rng);
  VaeModel<S> g(m.arch());
  auto l = m.loss_gradients(batch, eps, alpha, g);
  return {std::move(g), l};
}

struct Warmup {
  bool enabled = false;
  int start_epoch = 0;
  int end_epoch = 0;
  double start_value = 0;
  double end_value = 0;
};

// Parses "start_epoch:end_epoch:start_value:end_value".
inline Warmup parse_warmup(const std::string& s) {
  Warmup w;
  w.enabled = true;
  char c1 = 0, c2 = 0, c3 = 0;
  std::istringstream in(s);
  if (!(in >> w.start_epoch >> c1 >> w.end_epoch >> c2 >> w.start_value >> c3 >> w.end_value) ||
      c1 != ':' || c2 != ':' || c3 != ':' || !(in >> std::ws).eof())
    throw ValidationError("warm-up must be start_epoch:end_epoch:start_value:end_value");
  if (w.start_epoch < 0 || w.end_epoch < w.start_epoch || w.start_value < 0 || w.end_value < 0)
    throw ValidationError("invalid warm-up schedule");
  return w;
}

struct TrainConfig {
  double learning_rate = 1e-4;
  double kld_multiplier = 5e-4;
  int epochs = 2000;
  int batch_size = 64;
  std::uint64_t seed = 42;
  Warmup warmup;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0) || !(kld_multiplier >= 0) || epochs <= 0 || batch_size <= 0)
      throw ValidationError("training parameters must be positive");
  }
};

inline double kld_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ValidationError("epoch must be non-negative");
  const Warmup& w = cfg.warmup;
  if (!w.enabled) return cfg.kld_multiplier;
  if (epoch <= w.start_epoch) return w.start_value;
  if (epoch >= w.end_epoch) return w.end_value;
  double t = static_cast<double>(epoch - w.start_epoch) / (w.end_epoch - w.start_epoch);
  return w.start_value + t * (w.end_value - w.start_value);
}

template <class S>
class Adam {
 public:
  Adam(const VaeArchitecture& arch, double beta1, double beta2, double eps)
      : m_(arch), v_(arch), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(VaeModel<S>& model, const VaeModel<S>& grads, double lr) {
    ++t_;
    const S c1 = static_cast<S>(1.0 - std::pow(beta1_, t_));
    const S c2 = static_cast<S>(1.0 - std::pow(beta2_, t_));
    const S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
    const S e = static_cast<S>(eps_), rate = static_cast<S>(lr);
    std::vector<MatrixT<S>*> ms, vs;
    std::vector<const MatrixT<S>*> gs;
    m_.for_each_tensor([&](const std::string&, MatrixT<S>& t) { ms.push_back(&t); });
    v_.for_each_tensor([&](const std::string&, MatrixT<S>& t) { vs.push_back(&t); });
    grads.for_each_tensor([&](const std::string&, const MatrixT<S>& t) { gs.push_back(&t); });
    std::size_t i = 0;
    model.for_each_tensor([&](const std::string&, MatrixT<S>& p) {
      auto& m = *ms[i];
      auto& v = *vs[i];
      const auto& g = *gs[i];
      ++i;
      m = b1 * m + (S(1) - b1) * g;
      v = b2 * v + (S(1) - b2) * g.cwiseProduct(g);
      p.array() -= rate * (m.array() / c1) / ((v.array() / c2).sqrt() + e);
    });
  }

 private:
  VaeModel<S> m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

struct EpochLoss {
  int epoch = 0;
  double multiplier = 0;
  double reconstruction = 0;
  double kld = 0;
  double total = 0;
};

struct TrainResult {
  VaeModel<float> final_model;
  VaeModel<float> best_model;
  int best_epoch = 0;
  std::vector<EpochLoss> log;
};

using EpochCallback = std::function<void(const EpochLoss&)>;

// Mini-batch Adam over the dataset columns. Deterministic for a fixed seed:
// one mt19937_64 drives the initial weights, the per-epoch shuffle and the
// reparametrisation noise, in that order.
inline TrainResult train(const FrameDataset& data, const VaeArchitecture& arch,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                         std::stop_token stop = {}) {
  cfg.validate();
  arch.validate();
  if (data.empty()) throw ValidationError("empty dataset");
  if (static_cast<int>(data.dim()) != arch.input_dim)
    throw ValidationError("dataset frames have " + std::to_string(data.dim()) +
                          " bins, architecture expects " + std::to_string(arch.input_dim));

  std::mt19937_64 rng(cfg.seed);
  TrainResult res;
  res.final_model = VaeModel<float>::initialized(arch, rng());
  res.final_model.norm_constant = data.norm_constant;
  res.best_model = res.final_model;
  VaeModel<float> grads(arch);
  Adam<float> opt(arch, cfg.beta1, cfg.beta2, cfg.epsilon);
  std::normal_distribution<float> normal(0.0f, 1.0f);

  const Eigen::Index n = data.frames.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  double best = std::numeric_limits<double>::infinity();
  MatrixT<float> batch, eps;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (stop.stop_requested()) throw Cancelled();
    const double alpha = kld_schedule(epoch, cfg);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    for (Eigen::Index i = n - 1; i > 0; --i) {
      std::uniform_int_distribution<Eigen::Index> pick(0, i);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
    }
    EpochLoss el;
    el.epoch = epoch;
    el.multiplier = alpha;
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index nb = std::min<Eigen::Index>(cfg.batch_size, n - start);
      batch.resize(arch.input_dim, nb);
      for (Eigen::Index c = 0; c < nb; ++c)
        batch.col(c) = data.frames.col(order[static_cast<std::size_t>(start + c)]);
      eps.resize(arch.latent_dim, nb);
      for (Eigen::Index c = 0; c < nb; ++c)
        for (Eigen::Index r = 0; r < eps.rows(); ++r) eps(r, c) = normal(rng);
      grads.set_zero();
      auto l = res.final_model.loss_gradients(batch, eps, alpha, grads);
      if (!std::isfinite(l.total))
        throw Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                    std::to_string(start));
      opt.step(res.final_model, grads, cfg.learning_rate);
      const double w = static_cast<double>(nb) / static_cast<double>(n);
      el.reconstruction += w * l.reconstruction;
      el.kld += w * l.kld;
    }
    el.total = el.reconstruction + alpha * el.kld;
    if (!res.final_model.all_finite())
      throw Error("non-finite parameters after epoch " + std::to_string(epoch));
    res.log.push_back(el);
    if (el.total < best) {
      best = el.total;
      res.best_epoch = epoch;
      res.best_model = res.final_model;
    }
    if (on_epoch) on_epoch(el);
  }
  return res;
}

}  // namespace lsynth
