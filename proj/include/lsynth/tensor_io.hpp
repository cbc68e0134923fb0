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

// Container for named float32 tensors behind a JSON header.
//
//   u32 header_length | header (UTF-8 JSON) | tensor*
//   tensor := u32 name_length | name | u32 rank | u32 dims[rank] | f32 data
//
// All integers and floats are little-endian, tensor data is row-major. The
// header always carries "format_version" and the ordered list "tensors"
// of names, so a short file is detected even when it ends on a boundary.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "lsynth/audio_io.hpp"
#include "lsynth/errors.hpp"

namespace lsynth {

inline constexpr int kFormatVersion = 1;

struct Tensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

struct TensorFile {
  nlohmann::json header = nlohmann::json::object();
  std::vector<Tensor> tensors;

  const Tensor& at(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw FormatError("missing tensor '" + std::string(name) + "'");
  }
  bool contains(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return true;
    return false;
  }
};

template <class Derived>
Tensor matrix_tensor(std::string name, const Eigen::MatrixBase<Derived>& m) {
  Tensor t;
  t.name = std::move(name);
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(static_cast<float>(m(r, c)));
  return t;
}

inline Eigen::MatrixXf tensor_matrix(const Tensor& t) {
  if (t.dims.size() != 2) throw FormatError("tensor '" + t.name + "' is not rank 2");
  Eigen::MatrixXf m(t.dims[0], t.dims[1]);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.data[i++];
  return m;
}

namespace detail {

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  put_u32(out, bits);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : b_(bytes) {}
  std::uint32_t u32() {
    need(4);
    auto v = read_u32(reinterpret_cast<const unsigned char*>(b_.data() + pos_));
    pos_ += 4;
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void f32s(std::vector<float>& out, std::size_t n) {
    if (n > (b_.size() - pos_) / 4) throw FormatError("corrupt file: truncated tensor data");
    out.resize(n);
    auto p = reinterpret_cast<const unsigned char*>(b_.data() + pos_);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::bit_cast<float>(read_u32(p + 4 * i));
    pos_ += 4 * n;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > b_.size() - pos_) throw FormatError("corrupt file: truncated");
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_tensors(const TensorFile& f) {
  nlohmann::json h = f.header;
  h["format_version"] = kFormatVersion;
  nlohmann::json names = nlohmann::json::array();
  for (const auto& t : f.tensors) names.push_back(t.name);
  h["tensors"] = names;
  const std::string hs = h.dump();
  std::string out;
  detail::put_u32(out, static_cast<std::uint32_t>(hs.size()));
  out += hs;
  for (const auto& t : f.tensors) {
    if (t.data.size() != t.element_count())
      throw ValidationError("tensor '" + t.name + "' data does not match its dims");
    detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) detail::put_u32(out, d);
    for (float v : t.data) detail::put_f32(out, v);
  }
  return out;
}

inline TensorFile parse_tensors(std::string_view bytes) {
  detail::Reader r(bytes);
  TensorFile f;
  const auto hlen = r.u32();
  try {
    f.header = nlohmann::json::parse(r.take(hlen));
  } catch (const nlohmann::json::parse_error&) {
    throw FormatError("corrupt file: unreadable header");
  }
  if (!f.header.is_object() || !f.header.contains("format_version") ||
      !f.header["format_version"].is_number_integer())
    throw FormatError("corrupt file: header has no format_version");
  const int version = f.header["format_version"].get<int>();
  if (version != kFormatVersion)
    throw FormatError("unsupported format version " + std::to_string(version) + " (expected " +
                      std::to_string(kFormatVersion) + ")");
  if (!f.header.contains("tensors") || !f.header["tensors"].is_array())
    throw FormatError("corrupt file: header has no tensor list");
  for (const auto& expected : f.header["tensors"]) {
    if (!expected.is_string()) throw FormatError("corrupt file: bad tensor list");
    Tensor t;
    t.name = std::string(r.take(r.u32()));
    if (t.name != expected.get<std::string>())
      throw FormatError("corrupt file: expected tensor '" + expected.get<std::string>() +
                        "', found '" + t.name + "'");
    const auto rank = r.u32();
    if (rank > 8) throw FormatError("corrupt file: tensor rank " + std::to_string(rank));
    for (std::uint32_t i = 0; i < rank; ++i) t.dims.push_back(r.u32());
    r.f32s(t.data, t.element_count());
    f.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("corrupt file: trailing bytes");
  return f;
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_tensors(const TensorFile& f, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_tensors(f));
}

inline TensorFile read_tensors(const std::filesystem::path& path) {
  return parse_tensors(read_file_bytes(path));
}

}  // namespace lsynth
