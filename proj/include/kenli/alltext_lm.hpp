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

// All-text serialization for a generative LM:
//   LF: Premise: <p> Hypothesis: <h> [LAB] <label> [EXP] <explanation> EOS
//   EF: Premise: <p> Hypothesis: <h> [EXP] <explanation> [LAB] <label> EOS

#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "kenli/common.hpp"
#include "kenli/datamodel.hpp"
#include "httplib.h"

namespace kenli {

enum class LmFormat { kLF, kEF };

struct Markers {
  std::string lab = "[LAB]";
  std::string exp = "[EXP]";
  std::string eos = "EOS";

  void Validate() const {
    if (lab.empty() || exp.empty() || eos.empty()) throw Error(ErrorKind::kConfig, "empty LM marker");
    if (lab == exp || lab == eos || exp == eos) throw Error(ErrorKind::kConfig, "LM markers must differ");
  }
};

struct ParsedOutput {
  Label label = Label::kEntailment;
  std::string explanation;
  bool operator==(const ParsedOutput&) const = default;
};

namespace detail {

inline void CheckNoMarker(std::string_view field, std::string_view text, const Markers& m) {
  for (const auto* mk : {&m.lab, &m.exp, &m.eos}) {
    if (text.find(*mk) != std::string_view::npos) {
      throw Error(ErrorKind::kFormat, std::string(field) + " contains the marker '" + *mk + "'");
    }
  }
}

inline std::string Header(std::string_view premise, std::string_view hypothesis, const Markers& m) {
  CheckNoMarker("premise", premise, m);
  CheckNoMarker("hypothesis", hypothesis, m);
  return "Premise: " + std::string(premise) + " Hypothesis: " + std::string(hypothesis);
}

// Strips [x] or <x> wrapping and trailing punctuation.
inline std::string_view StripLabelDecor(std::string_view tok) {
  while (!tok.empty() && (tok.front() == '[' || tok.front() == '<')) tok.remove_prefix(1);
  while (!tok.empty() && (tok.back() == ']' || tok.back() == '>' || tok.back() == '.' || tok.back() == ',')) {
    tok.remove_suffix(1);
  }
  return tok;
}

// Text up to the terminator (or the end), trimmed.
inline std::string_view UpToTerminator(std::string_view s, const Markers& m) {
  const auto pos = s.find(m.eos);
  return Trim(pos == std::string_view::npos ? s : s.substr(0, pos));
}

}  // namespace detail

// First whitespace token that names a label, tolerating [label] and <label>.
inline std::optional<Label> FindLabelToken(std::string_view s) {
  for (const auto& tok : SplitWhitespace(s)) {
    if (auto l = TryParseLabel(detail::StripLabelDecor(tok))) return l;
  }
  return std::nullopt;
}

inline std::string SerializeLf(std::string_view premise, std::string_view hypothesis, Label label,
                               std::string_view explanation, const Markers& m = {}) {
  detail::CheckNoMarker("explanation", explanation, m);
  return detail::Header(premise, hypothesis, m) + " " + m.lab + " " + std::string(LabelName(label)) + " " +
         m.exp + " " + std::string(explanation) + " " + m.eos;
}

inline std::string SerializeEf(std::string_view premise, std::string_view hypothesis,
                               std::string_view explanation, Label label, const Markers& m = {}) {
  detail::CheckNoMarker("explanation", explanation, m);
  return detail::Header(premise, hypothesis, m) + " " + m.exp + " " + std::string(explanation) + " " + m.lab +
         " " + std::string(LabelName(label)) + " " + m.eos;
}

// Prompts: the serialization cut right after the marker the LM should continue.
inline std::string LfPrompt(std::string_view premise, std::string_view hypothesis, const Markers& m = {}) {
  return detail::Header(premise, hypothesis, m) + " " + m.lab;
}

inline std::string LfExplanationPrompt(std::string_view premise, std::string_view hypothesis, Label label,
                                       const Markers& m = {}) {
  return LfPrompt(premise, hypothesis, m) + " " + std::string(LabelName(label)) + " " + m.exp;
}

inline std::string EfProbePrompt(std::string_view premise, std::string_view hypothesis,
                                 std::string_view explanation, const Markers& m = {}) {
  detail::CheckNoMarker("explanation", explanation, m);
  return detail::Header(premise, hypothesis, m) + " " + m.exp + " " + std::string(explanation) + " " + m.lab;
}

inline ParsedOutput ParseLf(std::string_view text, const Markers& m = {}) {
  const auto lab = text.find(m.lab);
  if (lab == std::string_view::npos) throw Error(ErrorKind::kFormat, "LF text has no " + m.lab);
  const auto exp = text.find(m.exp, lab + m.lab.size());
  if (exp == std::string_view::npos) throw Error(ErrorKind::kFormat, "LF text has no " + m.exp + " after " + m.lab);
  const auto slot = text.substr(lab + m.lab.size(), exp - lab - m.lab.size());
  auto label = FindLabelToken(slot);
  if (!label) throw Error(ErrorKind::kLabel, "LF label slot '" + std::string(Trim(slot)) + "' is not a label");
  return {*label, std::string(detail::UpToTerminator(text.substr(exp + m.exp.size()), m))};
}

inline ParsedOutput ParseEf(std::string_view text, const Markers& m = {}) {
  const auto exp = text.find(m.exp);
  if (exp == std::string_view::npos) throw Error(ErrorKind::kFormat, "EF text has no " + m.exp);
  const auto lab = text.find(m.lab, exp + m.exp.size());
  if (lab == std::string_view::npos) throw Error(ErrorKind::kFormat, "EF text has no " + m.lab + " after " + m.exp);
  const auto slot = detail::UpToTerminator(text.substr(lab + m.lab.size()), m);
  auto label = FindLabelToken(slot);
  if (!label) throw Error(ErrorKind::kLabel, "EF label slot '" + std::string(slot) + "' is not a label");
  return {*label, std::string(Trim(text.substr(exp + m.exp.size(), lab - exp - m.exp.size())))};
}

// --- LM clients ---

struct DecodeSettings {
  bool greedy = true;
  int max_new_tokens = 60;
};

class LMClient {
 public:
  virtual ~LMClient() = default;
  // Must be safe to call concurrently.
  virtual std::string Generate(const std::string& prompt, const DecodeSettings& settings) = 0;
};

// Wraps a function; keeps every prompt it saw.
class MockLMClient final : public LMClient {
 public:
  explicit MockLMClient(std::function<std::string(const std::string&)> fn) : fn_(std::move(fn)) {}

  std::string Generate(const std::string& prompt, const DecodeSettings&) override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      prompts_.push_back(prompt);
    }
    return fn_(prompt);
  }

  std::vector<std::string> prompts() const {
    std::lock_guard<std::mutex> lock(mu_);
    return prompts_;
  }

 private:
  std::function<std::string(const std::string&)> fn_;
  mutable std::mutex mu_;
  std::vector<std::string> prompts_;
};

// Replays a transcript: JSON lines {"prompt": ..., "continuation": ...}.
// Unknown prompts are an error, so offline runs never silently diverge.
class TranscriptLMClient final : public LMClient {
 public:
  static TranscriptLMClient Load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::kNotFound, "cannot open transcript '" + path + "'");
    TranscriptLMClient c;
    std::string line;
    size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (Trim(line).empty()) continue;
      try {
        auto j = nlohmann::json::parse(line);
        c.table_[j.at("prompt").get<std::string>()] = j.at("continuation").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::kParse, path + ": line " + std::to_string(n) + ": " + e.what());
      }
    }
    return c;
  }

  void Add(std::string prompt, std::string continuation) { table_[std::move(prompt)] = std::move(continuation); }

  std::string Generate(const std::string& prompt, const DecodeSettings&) override {
    auto it = table_.find(prompt);
    if (it == table_.end()) throw Error(ErrorKind::kNotFound, "prompt not in transcript: " + prompt);
    return it->second;
  }

 private:
  std::map<std::string, std::string> table_;
};

// Passes calls through and records them for later replay.
class RecordingLMClient final : public LMClient {
 public:
  explicit RecordingLMClient(std::shared_ptr<LMClient> inner) : inner_(std::move(inner)) {}

  std::string Generate(const std::string& prompt, const DecodeSettings& s) override {
    auto out = inner_->Generate(prompt, s);
    std::lock_guard<std::mutex> lock(mu_);
    log_.emplace(prompt, out);
    return out;
  }

  void Save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::kNotFound, "cannot write transcript '" + path + "'");
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& [p, c] : log_) out << nlohmann::json{{"prompt", p}, {"continuation", c}}.dump() << '\n';
  }

 private:
  std::shared_ptr<LMClient> inner_;
  mutable std::mutex mu_;
  std::map<std::string, std::string> log_;
};

// POST <path> {"prompt", "max_new_tokens", "greedy"} -> {"continuation"}.
class HttpLMClient final : public LMClient {
 public:
  explicit HttpLMClient(std::string base_url, std::string path = "/complete")
      : base_url_(std::move(base_url)), path_(std::move(path)) {}

  std::string Generate(const std::string& prompt, const DecodeSettings& s) override {
    httplib::Client client(base_url_);
    client.set_connection_timeout(5);
    client.set_read_timeout(120);
    nlohmann::json req = {{"prompt", prompt}, {"max_new_tokens", s.max_new_tokens}, {"greedy", s.greedy}};
    auto res = client.Post(path_, req.dump(), "application/json");
    if (!res || res->status != 200) {
      throw Error(ErrorKind::kTransport,
                  "LM service: " + (res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error())));
    }
    try {
      return nlohmann::json::parse(res->body).at("continuation").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kParse, std::string("LM service: bad response: ") + e.what());
    }
  }

 private:
  std::string base_url_;
  std::string path_;
};

// --- Predictions ---

inline Prediction PredictLf(const NLIInstance& x, LMClient& lm, const DecodeSettings& s = {},
                            std::string model_id = "gpt-lf", const Markers& m = {}) {
  const std::string prompt = LfPrompt(x.premise, x.hypothesis, m);
  const std::string cont = lm.Generate(prompt, s);
  try {
    auto parsed = ParseLf(prompt + cont, m);
    return {x.id, std::move(model_id), parsed.label, std::move(parsed.explanation)};
  } catch (const Error& e) {
    throw Error(e.kind(), std::string(e.what()) + " (continuation: \"" + cont + "\")");
  }
}

// LF explanation conditioned on a fixed label.
inline std::string ExplainForLabel(const NLIInstance& x, Label label, LMClient& lm, const DecodeSettings& s = {},
                                   const Markers& m = {}) {
  const std::string prompt = LfExplanationPrompt(x.premise, x.hypothesis, label, m);
  return std::string(detail::UpToTerminator(lm.Generate(prompt, s), m));
}

// The EF model's label for a fixed (premise, hypothesis, explanation).
inline Label ConsistencyLabel(std::string_view premise, std::string_view hypothesis, std::string_view explanation,
                              LMClient& ef_lm, const DecodeSettings& s = {}, const Markers& m = {}) {
  const std::string cont = ef_lm.Generate(EfProbePrompt(premise, hypothesis, explanation, m), s);
  if (auto l = FindLabelToken(detail::UpToTerminator(cont, m))) return *l;
  throw Error(ErrorKind::kProbe, "consistency probe: no label in \"" + cont + "\"");
}

}  // namespace kenli
