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

// Core NLI records and their file formats: e-SNLI CSV, stress-test
// record files (JSON lines or TSV) and the prediction exchange file.

#pragma once

#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "kenli/common.hpp"

namespace kenli {

enum class KnowledgeLevel { kLow, kHigh };

inline std::string_view KnowledgeLevelName(KnowledgeLevel k) {
  return k == KnowledgeLevel::kLow ? "low" : "high";
}

inline KnowledgeLevel ParseKnowledgeLevel(std::string_view s) {
  const std::string f = ToLower(Trim(s));
  if (f == "low") return KnowledgeLevel::kLow;
  if (f == "high") return KnowledgeLevel::kHigh;
  throw Error(ErrorKind::kParse, "unknown knowledge level '" + std::string(s) + "'");
}

struct NLIInstance {
  std::string id;
  std::string premise;
  std::string hypothesis;
  std::optional<Label> gold;
  std::vector<std::string> references;
  std::optional<KnowledgeLevel> knowledge_level;

  bool operator==(const NLIInstance&) const = default;
};

struct Prediction {
  std::string instance_id;
  std::string model_id;
  Label label = Label::kEntailment;
  std::string explanation;

  bool operator==(const Prediction&) const = default;
};

enum class Split { kTrain, kDev, kTest, kStress };

inline std::string_view SplitName(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
    case Split::kStress: return "stress";
  }
  return "";
}

inline Split ParseSplit(std::string_view s) {
  const std::string f = ToLower(Trim(s));
  if (f == "train") return Split::kTrain;
  if (f == "dev") return Split::kDev;
  if (f == "test") return Split::kTest;
  if (f == "stress") return Split::kStress;
  throw Error(ErrorKind::kConfig, "unknown split '" + std::string(s) + "'");
}

// Immutable after construction; safe to share between readers.
class Dataset {
 public:
  Dataset(std::string name, Split split, std::vector<NLIInstance> instances,
          size_t skipped_unlabeled = 0)
      : name_(std::move(name)),
        split_(split),
        instances_(std::move(instances)),
        skipped_unlabeled_(skipped_unlabeled) {
    for (size_t i = 0; i < instances_.size(); ++i) {
      if (!index_.emplace(instances_[i].id, i).second) {
        throw Error(ErrorKind::kIntegrity,
                    "duplicate instance id '" + instances_[i].id + "' in " + name_);
      }
    }
  }

  const std::string& name() const { return name_; }
  Split split() const { return split_; }
  const std::vector<NLIInstance>& instances() const { return instances_; }
  size_t size() const { return instances_.size(); }
  // Rows dropped because the gold label was "-" or empty.
  size_t skipped_unlabeled() const { return skipped_unlabeled_; }

  const NLIInstance* Find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &instances_[it->second];
  }

 private:
  std::string name_;
  Split split_;
  std::vector<NLIInstance> instances_;
  size_t skipped_unlabeled_;
  std::unordered_map<std::string, size_t> index_;
};

// --- Delimited text ------------------------------------------------------------

// Reads one record of quote-aware delimited text (RFC 4180 quoting; quoted
// fields may span lines). Returns false at end of input.
inline bool ReadDelimitedRecord(std::istream& in, char delim,
                                std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && field.empty()) {
      in_quotes = true;
    } else if (c == delim) {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      break;
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

namespace detail {

inline std::ifstream OpenInput(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kNotFound, "cannot open '" + path + "'");
  return in;
}

// Case-insensitive header lookup; -1 when absent.
inline int FindColumn(const std::vector<std::string>& header,
                      std::initializer_list<std::string_view> names) {
  for (size_t i = 0; i < header.size(); ++i) {
    const std::string h = ToLower(Trim(header[i]));
    for (auto n : names) {
      if (h == n) return static_cast<int>(i);
    }
  }
  return -1;
}

inline bool IsUnlabeled(std::string_view raw) {
  const auto t = Trim(raw);
  return t.empty() || t == "-";
}

inline std::string ParseLabelError(size_t row, std::string_view raw) {
  return "row " + std::to_string(row) + ": unknown label '" + std::string(raw) + "'";
}

}  // namespace detail

// e-SNLI CSV: gold_label, Sentence1, Sentence2, Explanation_1[, _2, _3].
// Optional pairID column supplies ids; otherwise the 1-based row number does.
inline Dataset LoadEsnli(const std::string& path, Split split,
                         std::ostream* log = nullptr) {
  auto in = detail::OpenInput(path);
  std::vector<std::string> header;
  if (!ReadDelimitedRecord(in, ',', header)) {
    throw Error(ErrorKind::kSchema, path + ": empty file");
  }
  const int c_label = detail::FindColumn(header, {"gold_label", "label"});
  const int c_s1 = detail::FindColumn(header, {"sentence1"});
  const int c_s2 = detail::FindColumn(header, {"sentence2"});
  const int c_id = detail::FindColumn(header, {"pairid", "id"});
  std::vector<int> c_expl;
  for (auto name : {"explanation_1", "explanation_2", "explanation_3"}) {
    int c = detail::FindColumn(header, {name});
    if (c >= 0) c_expl.push_back(c);
  }
  if (c_expl.empty()) c_expl.push_back(detail::FindColumn(header, {"explanation"}));
  for (auto [col, name] : {std::pair{c_label, "gold_label"}, std::pair{c_s1, "Sentence1"},
                           std::pair{c_s2, "Sentence2"}, std::pair{c_expl.front(), "Explanation_1"}}) {
    if (col < 0) {
      throw Error(ErrorKind::kSchema, path + ": missing column " + std::string(name));
    }
  }

  std::vector<NLIInstance> out;
  size_t skipped = 0;
  std::vector<std::string> fields;
  size_t row = 0;
  while (ReadDelimitedRecord(in, ',', fields)) {
    ++row;
    if (fields.size() == 1 && Trim(fields[0]).empty()) continue;  // blank line
    if (fields.size() < header.size()) {
      throw Error(ErrorKind::kParse, path + ": row " + std::to_string(row) + ": expected " +
                                         std::to_string(header.size()) + " fields, got " +
                                         std::to_string(fields.size()));
    }
    const std::string& raw_label = fields[c_label];
    if (detail::IsUnlabeled(raw_label)) {
      ++skipped;
      continue;
    }
    auto label = TryParseLabel(raw_label);
    if (!label) throw Error(ErrorKind::kParse, path + ": " + detail::ParseLabelError(row, raw_label));
    NLIInstance inst;
    inst.id = c_id >= 0 ? std::string(Trim(fields[c_id])) : std::to_string(row);
    inst.premise = std::string(Trim(fields[c_s1]));
    inst.hypothesis = std::string(Trim(fields[c_s2]));
    if (inst.premise.empty() || inst.hypothesis.empty()) {
      throw Error(ErrorKind::kParse, path + ": row " + std::to_string(row) + ": empty sentence");
    }
    inst.gold = *label;
    for (int c : c_expl) {
      auto e = Trim(fields[c]);
      if (!e.empty()) inst.references.emplace_back(e);
    }
    if (inst.references.empty()) {
      throw Error(ErrorKind::kParse, path + ": row " + std::to_string(row) + ": no explanation");
    }
    out.push_back(std::move(inst));
  }
  if (skipped > 0 && log) {
    *log << path << ": skipped " << skipped << " unlabeled row(s)\n";
  }
  return Dataset(path, split, std::move(out), skipped);
}

enum class StressCategory {
  kAntonymy,
  kNumerical,
  kWordOverlap,
  kLengthMismatch,
  kNegation,
  kSpelling,
};

inline constexpr std::array<StressCategory, 6> kAllStressCategories = {
    StressCategory::kAntonymy,       StressCategory::kNumerical, StressCategory::kWordOverlap,
    StressCategory::kLengthMismatch, StressCategory::kNegation,  StressCategory::kSpelling};

inline std::string_view StressCategoryName(StressCategory c) {
  switch (c) {
    case StressCategory::kAntonymy: return "antonymy";
    case StressCategory::kNumerical: return "numerical";
    case StressCategory::kWordOverlap: return "word_overlap";
    case StressCategory::kLengthMismatch: return "length_mismatch";
    case StressCategory::kNegation: return "negation";
    case StressCategory::kSpelling: return "spelling";
  }
  return "";
}

inline StressCategory ParseStressCategory(std::string_view s) {
  const std::string f = ToLower(Trim(s));
  for (auto c : kAllStressCategories) {
    if (f == StressCategoryName(c)) return c;
  }
  throw Error(ErrorKind::kConfig, "unknown stress category '" + std::string(s) + "'");
}

enum class StressSubset { kMatched, kMismatched, kSingle };

inline std::string_view StressSubsetName(StressSubset s) {
  switch (s) {
    case StressSubset::kMatched: return "matched";
    case StressSubset::kMismatched: return "mismatched";
    case StressSubset::kSingle: return "single";
  }
  return "";
}

inline StressSubset ParseStressSubset(std::string_view s) {
  const std::string f = ToLower(Trim(s));
  if (f == "matched") return StressSubset::kMatched;
  if (f == "mismatched") return StressSubset::kMismatched;
  if (f == "single") return StressSubset::kSingle;
  throw Error(ErrorKind::kConfig, "unknown stress subset '" + std::string(s) + "'");
}

inline std::string StressDatasetName(StressCategory c, StressSubset s) {
  return "stress/" + std::string(StressCategoryName(c)) + "/" + std::string(StressSubsetName(s));
}

// Stress-test records: SNLI-style JSON lines (sentence1, sentence2,
// gold_label, optional pairID) or tab-separated text with a header naming
// the same columns. The format is sniffed from the first non-blank byte.
inline Dataset LoadStress(const std::string& path, StressCategory category, StressSubset subset,
                          std::ostream* log = nullptr) {
  auto in = detail::OpenInput(path);
  std::vector<NLIInstance> out;
  size_t skipped = 0;

  auto make = [&](size_t row, std::string id, const std::string& raw_label, std::string s1,
                  std::string s2) {
    if (detail::IsUnlabeled(raw_label)) {
      ++skipped;
      return;
    }
    auto label = TryParseLabel(raw_label);
    if (!label) throw Error(ErrorKind::kParse, path + ": " + detail::ParseLabelError(row, raw_label));
    if (Trim(s1).empty() || Trim(s2).empty()) {
      throw Error(ErrorKind::kParse, path + ": row " + std::to_string(row) + ": empty sentence");
    }
    NLIInstance inst;
    inst.id = id.empty() ? std::to_string(row) : std::move(id);
    inst.premise = std::string(Trim(s1));
    inst.hypothesis = std::string(Trim(s2));
    inst.gold = *label;
    out.push_back(std::move(inst));
  };

  while (std::isspace(in.peek())) in.get();
  if (in.peek() == '{') {
    std::string line;
    size_t row = 0;
    while (std::getline(in, line)) {
      if (Trim(line).empty()) continue;
      ++row;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::kParse, path + ": row " + std::to_string(row) + ": " + e.what());
      }
      auto str = [&](std::initializer_list<const char*> keys) -> std::optional<std::string> {
        for (auto k : keys) {
          if (j.contains(k) && !j[k].is_null()) {
            return j[k].is_string() ? j[k].get<std::string>() : j[k].dump();
          }
        }
        return std::nullopt;
      };
      auto s1 = str({"sentence1"});
      auto s2 = str({"sentence2"});
      auto lab = str({"gold_label", "label"});
      if (!s1 || !s2 || !lab) {
        throw Error(ErrorKind::kParse, path + ": row " + std::to_string(row) +
                                           ": record lacks sentence1/sentence2/gold_label");
      }
      make(row, str({"pairID", "id", "promptID"}).value_or(""), *lab, *s1, *s2);
    }
  } else {
    std::vector<std::string> header;
    if (!ReadDelimitedRecord(in, '\t', header)) {
      throw Error(ErrorKind::kSchema, path + ": empty file");
    }
    const int c_label = detail::FindColumn(header, {"gold_label", "label"});
    const int c_s1 = detail::FindColumn(header, {"sentence1"});
    const int c_s2 = detail::FindColumn(header, {"sentence2"});
    const int c_id = detail::FindColumn(header, {"pairid", "id"});
    if (c_label < 0 || c_s1 < 0 || c_s2 < 0) {
      throw Error(ErrorKind::kSchema, path + ": header must name gold_label, sentence1, sentence2");
    }
    std::vector<std::string> fields;
    size_t row = 0;
    std::string line;
    // Stress TSVs contain unbalanced quotes, so records are plain lines.
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (Trim(line).empty()) continue;
      ++row;
      fields = SplitOn(line, '\t');
      const int need = std::max({c_label, c_s1, c_s2, c_id}) + 1;
      if (static_cast<int>(fields.size()) < need) {
        throw Error(ErrorKind::kParse, path + ": row " + std::to_string(row) + ": missing fields");
      }
      make(row, c_id >= 0 ? fields[c_id] : "", fields[c_label], fields[c_s1], fields[c_s2]);
    }
  }
  if (skipped > 0 && log) *log << path << ": skipped " << skipped << " unlabeled row(s)\n";
  return Dataset(StressDatasetName(category, subset), Split::kStress, std::move(out), skipped);
}

// --- Prediction exchange file ----------------------------------------------------
// One JSON object per line: {"instance_id", "model_id", "label", "explanation"}.
// JSON string escaping keeps delimiters and newlines inside explanations intact.

inline nlohmann::json PredictionToJson(const Prediction& p) {
  return {{"instance_id", p.instance_id},
          {"model_id", p.model_id},
          {"label", std::string(LabelName(p.label))},
          {"explanation", p.explanation}};
}

inline Prediction PredictionFromJson(const nlohmann::json& j) {
  Prediction p;
  p.instance_id = j.at("instance_id").get<std::string>();
  p.model_id = j.at("model_id").get<std::string>();
  p.label = ParseLabel(j.at("label").get<std::string>());
  p.explanation = j.value("explanation", std::string());
  return p;
}

inline void WritePredictions(const std::vector<Prediction>& preds, std::ostream& out) {
  for (const auto& p : preds) {
    if (p.instance_id.empty() || p.model_id.empty()) {
      throw Error(ErrorKind::kIntegrity, "prediction with empty instance or model id");
    }
    out << PredictionToJson(p).dump() << '\n';
  }
}

inline void WritePredictions(const std::vector<Prediction>& preds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kNotFound, "cannot write '" + path + "'");
  WritePredictions(preds, out);
}

inline std::vector<Prediction> ReadPredictions(std::istream& in, const std::string& source = "<stream>") {
  std::vector<Prediction> out;
  std::set<std::pair<std::string, std::string>> seen;
  std::string line;
  size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (Trim(line).empty()) continue;
    Prediction p;
    try {
      p = PredictionFromJson(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kParse, source + ": line " + std::to_string(row) + ": " + e.what());
    }
    if (!seen.emplace(p.instance_id, p.model_id).second) {
      throw Error(ErrorKind::kIntegrity, source + ": line " + std::to_string(row) +
                                             ": duplicate prediction for (" + p.instance_id +
                                             ", " + p.model_id + ")");
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<Prediction> ReadPredictions(const std::string& path) {
  auto in = detail::OpenInput(path);
  return ReadPredictions(in, path);
}

}  // namespace kenli
