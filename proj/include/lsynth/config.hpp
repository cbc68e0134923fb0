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

// Service configuration: "key = value" lines, '#' starts a comment.
// Environment variables override the file:
//   LSYNTH_HOST, LSYNTH_PORT, LSYNTH_MODEL_DIR, LSYNTH_AUDIO_DIR,
//   LSYNTH_MAX_EXTRAPOLATION

#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "lsynth/errors.hpp"

namespace lsynth {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8765;
  std::filesystem::path model_dir = "models";
  std::filesystem::path audio_dir = "audio";
  double max_extrapolation = 1.3;

  void validate() const {
    if (port < 0 || port > 65535) throw ValidationError("port must lie in [0, 65535]");
    if (!(max_extrapolation >= 1.0)) throw ValidationError("max_extrapolation must be >= 1");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ValidationError("config: " + key + " must be an integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  double out = 0;
  if (!(in >> out) || !(in >> std::ws).eof())
    throw ValidationError("config: " + key + " must be a number, got '" + v + "'");
  return out;
}

}  // namespace detail

inline void apply_setting(ServiceConfig& c, const std::string& key, const std::string& value) {
  if (key == "host")
    c.host = value;
  else if (key == "port")
    c.port = detail::parse_int(key, value);
  else if (key == "model_dir")
    c.model_dir = value;
  else if (key == "audio_dir")
    c.audio_dir = value;
  else if (key == "max_extrapolation")
    c.max_extrapolation = detail::parse_double(key, value);
  else
    throw ValidationError("config: unknown key '" + key + "'");
}

inline std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("config line " + std::to_string(n) + ": expected key = value");
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

inline void apply_environment(ServiceConfig& c) {
  static const std::pair<const char*, const char*> vars[] = {
      {"LSYNTH_HOST", "host"},
      {"LSYNTH_PORT", "port"},
      {"LSYNTH_MODEL_DIR", "model_dir"},
      {"LSYNTH_AUDIO_DIR", "audio_dir"},
      {"LSYNTH_MAX_EXTRAPOLATION", "max_extrapolation"}};
  for (auto [env, key] : vars)
    if (const char* v = std::getenv(env)) apply_setting(c, key, v);
}

// Defaults, then the file (if given), then the environment.
inline ServiceConfig load_config(const std::filesystem::path& path = {}) {
  ServiceConfig c;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    for (const auto& [k, v] : parse_key_values(in)) apply_setting(c, k, v);
  }
  apply_environment(c);
  c.validate();
  return c;
}

}  // namespace lsynth
