// Copyright 2026 The kenli Authors.
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

// Per-command parameters. Defaults are overridden by the config file's
// section for the command, which flags override in turn.
//
// Config file layout:
//   {"seed": 7, "train": {"epochs": 50, ...}, "analyze": {...}}

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kenli/common.hpp"

#ifndef KENLI_VERSION
#define KENLI_VERSION "0.0.0"
#endif

namespace kenli::cli {

using nlohmann::json;

inline constexpr uint64_t kDefaultSeed = 20240;

inline std::string FlagName(const std::string& key) {
  std::string f = "--" + key;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

class Command {
 public:
  Command(CLI::App& parent, std::string name, std::string description)
      : name_(std::move(name)), app_(parent.add_subcommand(name_, std::move(description))) {}

  const std::string& name() const { return name_; }
  CLI::App* app() const { return app_; }

  // The default's JSON type fixes the parameter type. A null default is an
  // optional path or string.
  Command& Param(const std::string& key, json def, const std::string& help) {
    defaults_[key] = def;
    order_.push_back(key);
    auto& raw = raw_[key];
    if (def.is_boolean()) {
      app_->add_flag(FlagName(key), flags_[key], help + (def.get<bool>() ? " (default on)" : ""));
    } else if (def.is_array()) {
      app_->add_option(FlagName(key), raw, help + "; repeatable")->allow_extra_args(false);
    } else {
      std::string h = help;
      if (!def.is_null() && !def.is_object()) h += " [" + def.dump() + "]";
      const char* type = def.is_number_integer() ? "INT"
                         : def.is_number_float() ? "FLOAT"
                         : def.is_object()       ? "JSON"
                                                 : "TEXT";
      app_->add_option(FlagName(key), raw, h)->expected(1)->type_name(type);
    }
    return *this;
  }

  // Config-file section, then explicit flags.
  json Resolve(const json& section) const {
    json out = defaults_;
    if (!section.is_null()) {
      if (!section.is_object()) throw Error(ErrorKind::kConfig, "config section '" + name_ + "' must be an object");
      for (const auto& [k, v] : section.items()) {
        auto it = defaults_.find(k);
        if (it == defaults_.end()) throw Error(ErrorKind::kConfig, "unknown key '" + k + "' in config section '" + name_ + "'");
        CheckType(k, *it, v);
        out[k] = v;
      }
    }
    for (const auto& key : order_) {
      const auto& def = defaults_.at(key);
      if (def.is_boolean()) {
        if (flags_.at(key) > 0) out[key] = true;
        continue;
      }
      const auto& raw = raw_.at(key);
      if (raw.empty()) continue;
      out[key] = Coerce(key, def, raw);
    }
    return out;
  }

 private:
  static bool SameType(const json& def, const json& v) {
    if (def.is_null()) return v.is_null() || v.is_string();
    if (def.is_number_float()) return v.is_number();
    if (def.is_number_integer()) return v.is_number_integer();
    return def.type() == v.type();
  }

  static void CheckType(const std::string& key, const json& def, const json& v) {
    if (!SameType(def, v)) {
      throw Error(ErrorKind::kConfig, "config key '" + key + "' expects " +
                                          (def.is_null() ? std::string("string") : std::string(def.type_name())) +
                                          ", got " + v.type_name());
    }
  }

  static json Coerce(const std::string& key, const json& def, const std::vector<std::string>& raw) {
    if (def.is_array()) return raw;
    const std::string& s = raw.back();
    try {
      if (def.is_number_integer()) {
        size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
      }
      if (def.is_number_float()) {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
      }
      if (def.is_object()) {
        auto j = json::parse(s);
        if (!j.is_object()) throw std::invalid_argument(s);
        return j;
      }
    } catch (const std::exception&) {
      throw Error(ErrorKind::kConfig, "flag " + FlagName(key) + ": cannot use '" + s + "' as " + def.type_name());
    }
    return s;
  }

  std::string name_;
  CLI::App* app_;
  json defaults_ = json::object();
  std::vector<std::string> order_;
  std::map<std::string, std::vector<std::string>> raw_;
  std::map<std::string, int> flags_;
};

inline json LoadConfigFile(const std::string& path, const std::set<std::string>& commands) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kNotFound, "cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, path + ": " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::kConfig, path + ": top level must be an object");
  for (const auto& [k, v] : j.items()) {
    if (k != "seed" && !commands.count(k)) throw Error(ErrorKind::kConfig, path + ": unknown section '" + k + "'");
  }
  if (j.contains("seed") && !j["seed"].is_number_unsigned()) {
    throw Error(ErrorKind::kConfig, path + ": seed must be a non-negative integer");
  }
  return j;
}

// Required string parameter.
inline std::string Need(const json& p, const std::string& key) {
  if (!p.contains(key) || !p[key].is_string() || p[key].get<std::string>().empty()) {
    throw Error(ErrorKind::kConfig, "missing required parameter " + FlagName(key));
  }
  return p[key].get<std::string>();
}

inline std::string Opt(const json& p, const std::string& key) {
  return p.contains(key) && p[key].is_string() ? p[key].get<std::string>() : std::string();
}

// "name=path" pairs, in the given order.
inline std::vector<std::pair<std::string, std::string>> NamedPaths(const json& p, const std::string& key) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  for (const auto& e : p.at(key)) {
    const auto s = e.get<std::string>();
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
      throw Error(ErrorKind::kConfig, FlagName(key) + " expects name=path, got '" + s + "'");
    }
    if (!seen.insert(s.substr(0, eq)).second) {
      throw Error(ErrorKind::kConfig, FlagName(key) + ": '" + s.substr(0, eq) + "' given twice");
    }
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

inline void WriteJson(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kNotFound, "cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

inline void WriteText(const std::filesystem::path& path, const std::string& s) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kNotFound, "cannot write '" + path.string() + "'");
  out << s;
}

// Resolved config plus tool version; written first so a failed run still
// records what it was asked to do.
inline void WriteSnapshot(const std::filesystem::path& dir, const std::string& command, uint64_t seed,
                          const json& params) {
  std::filesystem::create_directories(dir);
  WriteJson(dir / "run_config.json", {{"tool", "kenli"},
                                      {"version", KENLI_VERSION},
                                      {"command", command},
                                      {"seed", seed},
                                      {"params", params}});
}

}  // namespace kenli::cli
