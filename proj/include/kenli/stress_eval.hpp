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

// Stress-test scoring. Category accuracy pools counts over the category's
// subsets (micro); the macro column is reported alongside, never instead.

#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "kenli/common.hpp"
#include "kenli/datamodel.hpp"

namespace kenli {

enum class StressGroup { kCompetence, kDistraction, kNoise };

inline StressGroup GroupOf(StressCategory c) {
  switch (c) {
    case StressCategory::kAntonymy:
    case StressCategory::kNumerical: return StressGroup::kCompetence;
    case StressCategory::kWordOverlap:
    case StressCategory::kLengthMismatch:
    case StressCategory::kNegation: return StressGroup::kDistraction;
    case StressCategory::kSpelling: return StressGroup::kNoise;
  }
  return StressGroup::kNoise;
}

inline std::string_view StressGroupName(StressGroup g) {
  switch (g) {
    case StressGroup::kCompetence: return "Competence";
    case StressGroup::kDistraction: return "Distraction";
    case StressGroup::kNoise: return "Noise";
  }
  return "";
}

inline std::string_view StressCategoryTitle(StressCategory c) {
  switch (c) {
    case StressCategory::kAntonymy: return "Antonymy";
    case StressCategory::kNumerical: return "Numerical";
    case StressCategory::kWordOverlap: return "Word Overlap";
    case StressCategory::kLengthMismatch: return "Length Mismatch";
    case StressCategory::kNegation: return "Negation";
    case StressCategory::kSpelling: return "Spelling";
  }
  return "";
}

struct Tally {
  size_t correct = 0;
  size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
  Tally& operator+=(const Tally& o) {
    correct += o.correct;
    total += o.total;
    return *this;
  }
};

// Predictions keyed by (dataset name, instance id): stress subsets reuse ids.
class StressPredictions {
 public:
  static std::string QualifiedId(const std::string& dataset, const std::string& id) { return dataset + "#" + id; }

  void Add(const std::string& dataset, Prediction p) {
    const auto key = QualifiedId(dataset, p.instance_id);
    if (!preds_.emplace(key, std::move(p)).second) {
      throw Error(ErrorKind::kIntegrity, "duplicate stress prediction for '" + key + "'");
    }
  }

  // Inverse of writing predictions with qualified instance ids.
  static StressPredictions FromQualified(const std::vector<Prediction>& preds) {
    StressPredictions out;
    for (auto p : preds) {
      const auto hash = p.instance_id.rfind('#');
      if (hash == std::string::npos) {
        throw Error(ErrorKind::kFormat, "stress prediction id '" + p.instance_id + "' lacks a dataset qualifier");
      }
      const auto ds = p.instance_id.substr(0, hash);
      p.instance_id = p.instance_id.substr(hash + 1);
      out.Add(ds, std::move(p));
    }
    return out;
  }

  const Prediction* Find(const std::string& dataset, const std::string& id) const {
    auto it = preds_.find(QualifiedId(dataset, id));
    return it == preds_.end() ? nullptr : &it->second;
  }

  size_t size() const { return preds_.size(); }

 private:
  std::map<std::string, Prediction> preds_;
};

inline Tally ScoreSubset(const StressPredictions& preds, const Dataset& ds, std::vector<std::string>* missing) {
  Tally t;
  for (const auto& x : ds.instances()) {
    if (!x.gold) continue;
    const auto* p = preds.Find(ds.name(), x.id);
    if (!p) {
      if (missing) missing->push_back(StressPredictions::QualifiedId(ds.name(), x.id));
      continue;
    }
    t.correct += p->label == *x.gold;
    ++t.total;
  }
  return t;
}

namespace detail {

[[noreturn]] inline void ThrowCoverage(const std::vector<std::string>& missing) {
  std::string list;
  for (size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
  if (missing.size() > 20) list += ", ...";
  throw Error(ErrorKind::kCoverage, std::to_string(missing.size()) + " stress instances lack predictions: " + list);
}

}  // namespace detail

struct CategoryResult {
  StressCategory category;
  Tally pooled;
  double macro = 0.0;  // unweighted mean of subset accuracies
  std::vector<std::pair<std::string, Tally>> subsets;
};

// Pooled accuracy over all subsets of one category.
inline CategoryResult EvaluateCategory(StressCategory category, const StressPredictions& preds,
                                       const std::vector<Dataset>& subsets) {
  if (subsets.empty()) {
    throw Error(ErrorKind::kDomain, "category '" + std::string(StressCategoryName(category)) + "' has no subsets");
  }
  CategoryResult r{category, {}, 0.0, {}};
  std::vector<std::string> missing;
  for (const auto& ds : subsets) {
    const Tally t = ScoreSubset(preds, ds, &missing);
    r.subsets.emplace_back(ds.name(), t);
    r.pooled += t;
    r.macro += t.accuracy();
  }
  if (!missing.empty()) detail::ThrowCoverage(missing);
  r.macro /= static_cast<double>(subsets.size());
  return r;
}

struct StressReport {
  std::string model_id;
  std::vector<CategoryResult> categories;  // table order
  Tally total;
};

using StressSuite = std::map<StressCategory, std::vector<Dataset>>;

inline StressReport MakeStressReport(const std::string& model_id, const StressPredictions& preds,
                                     const StressSuite& suite) {
  StressReport r;
  r.model_id = model_id;
  std::vector<std::string> missing;
  for (StressCategory c : kAllStressCategories) {
    auto it = suite.find(c);
    if (it == suite.end()) continue;
    try {
      r.categories.push_back(EvaluateCategory(c, preds, it->second));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kCoverage) throw;
      for (const auto& ds : it->second) ScoreSubset(preds, ds, &missing);
      continue;
    }
    r.total += r.categories.back().pooled;
  }
  if (!missing.empty()) detail::ThrowCoverage(missing);
  return r;
}

inline nlohmann::json StressReportToJson(const StressReport& r) {
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& c : r.categories) {
    nlohmann::json subs = nlohmann::json::array();
    for (const auto& [name, t] : c.subsets) {
      subs.push_back({{"dataset", name}, {"correct", t.correct}, {"total", t.total}, {"accuracy", t.accuracy()}});
    }
    cats.push_back({{"category", StressCategoryName(c.category)},
                    {"group", StressGroupName(GroupOf(c.category))},
                    {"correct", c.pooled.correct},
                    {"total", c.pooled.total},
                    {"accuracy", c.pooled.accuracy()},
                    {"macro_accuracy", c.macro},
                    {"subsets", std::move(subs)}});
  }
  return {{"model_id", r.model_id},
          {"total", {{"correct", r.total.correct}, {"total", r.total.total}, {"accuracy", r.total.accuracy()}}},
          {"categories", std::move(cats)}};
}

// Aligned text table: a group header row, then one row per model with the
// pooled total and the six category accuracies in percent.
inline std::string RenderStressTable(const std::vector<StressReport>& reports, bool macro = false) {
  std::vector<StressCategory> cols;
  for (StressCategory c : kAllStressCategories) {
    for (const auto& r : reports) {
      if (std::any_of(r.categories.begin(), r.categories.end(),
                      [&](const CategoryResult& x) { return x.category == c; })) {
        cols.push_back(c);
        break;
      }
    }
  }
  size_t name_w = 5;
  for (const auto& r : reports) name_w = std::max(name_w, r.model_id.size());
  const int w = 16;
  std::ostringstream out;
  // Group header spans its columns.
  out << std::left << std::setw(static_cast<int>(name_w) + 2) << "" << std::setw(w) << "";
  for (size_t i = 0; i < cols.size();) {
    const auto g = GroupOf(cols[i]);
    size_t j = i;
    while (j < cols.size() && GroupOf(cols[j]) == g) ++j;
    out << std::setw(w * static_cast<int>(j - i)) << (std::string(StressGroupName(g)) + " Test");
    i = j;
  }
  out << "\n" << std::setw(static_cast<int>(name_w) + 2) << "Model" << std::setw(w) << "Total";
  for (auto c : cols) out << std::setw(w) << StressCategoryTitle(c);
  out << "\n" << std::fixed << std::setprecision(2);
  for (const auto& r : reports) {
    out << std::setw(static_cast<int>(name_w) + 2) << r.model_id << std::setw(w) << 100.0 * r.total.accuracy();
    for (auto c : cols) {
      auto it = std::find_if(r.categories.begin(), r.categories.end(),
                             [&](const CategoryResult& x) { return x.category == c; });
      if (it == r.categories.end()) {
        out << std::setw(w) << "-";
      } else {
        out << std::setw(w) << 100.0 * (macro ? it->macro : it->pooled.accuracy());
      }
    }
    out << "\n";
  }
  return out.str();
}

// Manifest: {"categories": {"<category>": [{"subset": "matched", "path": "..."}, ...]}}.
// Relative paths resolve against the manifest's directory.
inline StressSuite LoadStressManifest(const std::string& path, std::ostream* log = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kNotFound, "cannot open stress manifest '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, path + ": " + e.what());
  }
  const auto base = std::filesystem::path(path).parent_path();
  StressSuite suite;
  if (!j.contains("categories") || !j["categories"].is_object()) {
    throw Error(ErrorKind::kSchema, path + ": missing \"categories\" object");
  }
  for (const auto& [name, entries] : j["categories"].items()) {
    const auto cat = ParseStressCategory(name);
    for (const auto& e : entries) {
      std::filesystem::path p = e.at("path").get<std::string>();
      if (p.is_relative()) p = base / p;
      suite[cat].push_back(LoadStress(p.string(), cat, ParseStressSubset(e.value("subset", "single")), log));
    }
  }
  return suite;
}

}  // namespace kenli
