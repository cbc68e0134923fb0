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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lsynth/errors.hpp"

namespace lsynth {

// Mono PCM audio with samples nominally in [-1, 1].
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = 44100;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// -1 dBFS.
inline constexpr double kDefaultPeak = 0.891;

namespace detail {

inline double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double half = 0.5 * x;
  for (int k = 1; k < 64; ++k) {
    term *= (half / k) * (half / k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = M_PI * x;
  return std::sin(px) / px;
}

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return std::uint16_t(p[0] | (p[1] << 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}

}  // namespace detail

// Windowed-sinc resampler: 64 taps, Kaiser window. The low-pass cutoff
// follows the lower of the two Nyquist frequencies.
class Resampler {
 public:
  static constexpr int kTaps = 64;
  static constexpr double kBeta = 8.6;

  Resampler(int in_rate, int out_rate) : in_rate_(in_rate), out_rate_(out_rate) {
    if (in_rate <= 0 || out_rate <= 0)
      throw ValidationError("resampler: sample rates must be positive");
    cutoff_ = 0.5 * std::min(1.0, double(out_rate) / in_rate) * 0.97;
    const long g = std::gcd(in_rate, out_rate);
    up_ = out_rate / g;
    down_ = in_rate / g;
    if (up_ <= 4096) {
      table_.resize(std::size_t(up_) * kTaps);
      for (long ph = 0; ph < up_; ++ph) {
        const double frac = double(ph) / up_;
        for (int i = 0; i < kTaps; ++i)
          table_[std::size_t(ph) * kTaps + i] = tap(frac - (i - kTaps / 2 + 1));
      }
    }
  }

  std::vector<double> process(std::span<const double> in) const {
    if (in_rate_ == out_rate_) return {in.begin(), in.end()};
    const std::size_t n_out = static_cast<std::size_t>(
        std::ceil(double(in.size()) * out_rate_ / in_rate_));
    std::vector<double> out(n_out, 0.0);
    const long n_in = static_cast<long>(in.size());
    for (std::size_t n = 0; n < n_out; ++n) {
      // Input position t = n * down / up, split into integer and phase.
      const long num = static_cast<long>(n) * down_;
      const long base = num / up_;
      const long ph = num % up_;
      double acc = 0.0;
      for (int i = 0; i < kTaps; ++i) {
        const long j = base + i - kTaps / 2 + 1;
        if (j < 0 || j >= n_in) continue;
        const double h = table_.empty()
                             ? tap(double(ph) / up_ - (i - kTaps / 2 + 1))
                             : table_[std::size_t(ph) * kTaps + i];
        acc += in[std::size_t(j)] * h;
      }
      out[n] = acc;
    }
    return out;
  }

 private:
  // Filter response at offset tau (input samples) from the output instant.
  double tap(double tau) const {
    const double half = kTaps / 2.0;
    const double r = tau / half;
    if (std::abs(r) >= 1.0) return 0.0;
    const double win = detail::bessel_i0(kBeta * std::sqrt(1.0 - r * r)) /
                       detail::bessel_i0(kBeta);
    return 2.0 * cutoff_ * detail::sinc(2.0 * cutoff_ * tau) * win;
  }

  int in_rate_;
  int out_rate_;
  long up_ = 1;
  long down_ = 1;
  double cutoff_;
  std::vector<double> table_;
};

inline std::vector<double> resample(std::span<const double> in, int in_rate,
                                    int out_rate) {
  return Resampler(in_rate, out_rate).process(in);
}

// Decodes a RIFF/WAVE PCM byte stream (16- or 24-bit, any channel count)
// into a mono buffer at its native rate. Channels are averaged.
inline AudioBuffer decode_wav(std::string_view bytes) {
  using detail::read_u16;
  using detail::read_u32;
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file");

  int channels = 0, rate = 0, bits = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= n) {
    const std::uint32_t len = read_u32(p + pos + 4);
    const unsigned char* body = p + pos + 8;
    const std::size_t avail = n - (pos + 8);
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (len < 16 || avail < 16) throw FormatError("truncated fmt chunk");
      std::uint16_t format = read_u16(body);
      channels = read_u16(body + 2);
      rate = static_cast<int>(read_u32(body + 4));
      bits = read_u16(body + 14);
      if (format == 0xFFFE && len >= 40 && avail >= 40)
        format = read_u16(body + 24);  // WAVE_FORMAT_EXTENSIBLE sub-format
      if (format != 1)
        throw FormatError("unsupported WAV encoding (format tag " +
                          std::to_string(format) + "); only PCM is read");
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      data = body;
      data_len = std::min<std::size_t>(len, avail);
    }
    pos += 8 + len + (len & 1u);
  }
  if (!have_fmt) throw FormatError("missing fmt chunk");
  if (data == nullptr) throw FormatError("missing data chunk");
  if (bits != 16 && bits != 24)
    throw FormatError("unsupported WAV encoding: " + std::to_string(bits) +
                      "-bit PCM");
  if (channels <= 0 || rate <= 0) throw FormatError("invalid fmt chunk");

  const std::size_t width = std::size_t(bits / 8);
  const std::size_t frame = width * std::size_t(channels);
  const std::size_t n_frames = data_len / frame;
  if (n_frames == 0) throw FormatError("empty audio");

  AudioBuffer out;
  out.sample_rate = rate;
  out.samples.resize(n_frames);
  const double scale = bits == 16 ? 1.0 / 32768.0 : 1.0 / 8388608.0;
  for (std::size_t f = 0; f < n_frames; ++f) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const unsigned char* s = data + f * frame + std::size_t(c) * width;
      std::int32_t v;
      if (bits == 16) {
        v = static_cast<std::int16_t>(read_u16(s));
      } else {
        v = std::int32_t(s[0]) | (std::int32_t(s[1]) << 8) | (std::int32_t(s[2]) << 16);
        if (v & 0x800000) v -= 0x1000000;
      }
      acc += v * scale;
    }
    out.samples[f] = acc / channels;
  }
  return out;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

// Loads a PCM WAV file as mono at target_rate.
inline AudioBuffer load_audio(const std::filesystem::path& path, int target_rate) {
  if (!std::filesystem::exists(path)) throw IoError("missing file: " + path.string());
  AudioBuffer buf;
  try {
    buf = decode_wav(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (buf.sample_rate != target_rate) {
    buf.samples = resample(buf.samples, buf.sample_rate, target_rate);
    buf.sample_rate = target_rate;
  }
  return buf;
}

// Scales so that max |sample| equals target_peak. Silent input is returned
// unchanged.
inline AudioBuffer peak_normalize(AudioBuffer buf, double target_peak = kDefaultPeak) {
  if (!(target_peak > 0.0 && target_peak <= 1.0))
    throw ValidationError("target peak must lie in (0, 1]");
  double peak = 0.0;
  for (double s : buf.samples) peak = std::max(peak, std::abs(s));
  if (peak == 0.0) return buf;
  const double gain = target_peak / peak;
  for (double& s : buf.samples) s *= gain;
  return buf;
}

inline std::int16_t quantize16(double s) {
  const double v = std::round(s * 32768.0);
  return static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0));
}

// 16-bit PCM mono WAV image of buf.
inline std::string encode_wav(const AudioBuffer& buf) {
  using detail::put_u16;
  using detail::put_u32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(buf.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(buf.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(buf.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (double s : buf.samples) put_u16(out, static_cast<std::uint16_t>(quantize16(s)));
  return out;
}

inline void write_wav(const AudioBuffer& buf, const std::filesystem::path& path) {
  const std::string bytes = encode_wav(buf);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// Copies samples [start, start + count) with zeros past the end.
inline AudioBuffer slice(const AudioBuffer& buf, std::size_t start, std::size_t count) {
  AudioBuffer out;
  out.sample_rate = buf.sample_rate;
  out.samples.assign(count, 0.0);
  for (std::size_t i = 0; i < count && start + i < buf.samples.size(); ++i)
    out.samples[i] = buf.samples[start + i];
  return out;
}

}  // namespace lsynth
