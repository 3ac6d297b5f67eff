#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "flowpose/error.hpp"
#include "flowpose/synth.hpp"

namespace flowpose {

namespace detail {

template <class T>
T parse_value(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  is >> out;
  if (is.fail() || !(is >> std::ws).eof()) throw ConfigError("config key '" + key + "': cannot parse value '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Parses "key = value" lines; '#' starts a comment.
inline std::map<std::string, std::string> parse_key_values(std::istream& is) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (out.count(key)) throw ConfigError("config key '" + key + "' given twice");
    out[key] = detail::trim(line.substr(eq + 1));
  }
  return out;
}

inline std::map<std::string, std::string> load_key_values(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return parse_key_values(is);
}

/// Puppet spec from "key = value" pairs; unspecified keys keep their defaults.
inline PuppetSpec puppet_spec_from(const std::map<std::string, std::string>& kv) {
  PuppetSpec s;
  using detail::parse_value;
  const std::map<std::string, double*> reals = {
      {"root_x", &s.root_x},
      {"root_y", &s.root_y},
      {"shoulder_dx", &s.shoulder_dx},
      {"shoulder_dy", &s.shoulder_dy},
      {"upper_arm", &s.upper_arm},
      {"forearm", &s.forearm},
      {"head_radius", &s.head_radius},
      {"torso_length", &s.torso_length},
      {"torso_radius", &s.torso_radius},
      {"arm_radius", &s.arm_radius},
      {"hand_radius", &s.hand_radius},
      {"elbow_min", &s.elbow_min},
      {"elbow_max", &s.elbow_max},
      {"wrist_min", &s.wrist_min},
      {"wrist_max", &s.wrist_max},
      {"tilt_range", &s.tilt_range},
      {"max_angular_velocity", &s.max_angular_velocity},
      {"angular_accel", &s.angular_accel},
      {"root_range", &s.root_range},
      {"max_root_velocity", &s.max_root_velocity},
      {"root_accel", &s.root_accel},
      {"texture_amplitude", &s.texture_amplitude},
      {"drift_x", &s.drift_x},
      {"drift_y", &s.drift_y},
      {"noise_sigma", &s.noise_sigma},
      {"margin", &s.margin},
  };
  for (const auto& [k, v] : kv) {
    if (auto it = reals.find(k); it != reals.end()) *it->second = parse_value<double>(k, v);
    else if (k == "width") s.width = parse_value<std::size_t>(k, v);
    else if (k == "height") s.height = parse_value<std::size_t>(k, v);
    else if (k == "distractors") s.distractors = parse_value<std::size_t>(k, v);
    else throw ConfigError("unknown config key '" + k + "'");
  }
  validate(s);
  return s;
}

inline PuppetSpec load_puppet_spec(const std::filesystem::path& path) { return puppet_spec_from(load_key_values(path)); }

}  // namespace flowpose
