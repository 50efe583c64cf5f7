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

// Human rating study: knowledge-level annotations, sampling, the batch plan,
// rating collection over an append-only journal, filtering and export.

#pragma once

#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "kenli/common.hpp"
#include "kenli/datamodel.hpp"
#include "kenli/embeddings.hpp"

namespace kenli {

// --- Annotations ---

enum class GuidelineTag {
  kPatternMatching,
  kUnrelatedNegation,
  kRephrasing,
  kEasilyDistinguishable,
  kComplexReasoning,
  kAbstractConcepts,
};

inline constexpr std::array<GuidelineTag, 6> kAllGuidelineTags = {
    GuidelineTag::kPatternMatching,       GuidelineTag::kUnrelatedNegation, GuidelineTag::kRephrasing,
    GuidelineTag::kEasilyDistinguishable, GuidelineTag::kComplexReasoning,  GuidelineTag::kAbstractConcepts};

inline std::string_view GuidelineTagName(GuidelineTag t) {
  switch (t) {
    case GuidelineTag::kPatternMatching: return "pattern_matching";
    case GuidelineTag::kUnrelatedNegation: return "unrelated_negation";
    case GuidelineTag::kRephrasing: return "rephrasing";
    case GuidelineTag::kEasilyDistinguishable: return "easily_distinguishable";
    case GuidelineTag::kComplexReasoning: return "complex_reasoning";
    case GuidelineTag::kAbstractConcepts: return "abstract_concepts";
  }
  return "";
}

inline GuidelineTag ParseGuidelineTag(std::string_view s) {
  const auto f = ToLower(Trim(s));
  for (auto t : kAllGuidelineTags) {
    if (f == GuidelineTagName(t)) return t;
  }
  throw Error(ErrorKind::kParse, "unknown guideline tag '" + std::string(s) + "'");
}

inline KnowledgeLevel ImpliedLevel(GuidelineTag t) {
  return t == GuidelineTag::kComplexReasoning || t == GuidelineTag::kAbstractConcepts ? KnowledgeLevel::kHigh
                                                                                       : KnowledgeLevel::kLow;
}

struct KnowledgeAnnotation {
  std::string pair_id;
  std::string annotator_id;
  KnowledgeLevel level = KnowledgeLevel::kLow;
  std::optional<GuidelineTag> tag;

  void Validate() const {
    if (tag && ImpliedLevel(*tag) != level) {
      throw Error(ErrorKind::kIntegrity, "pair '" + pair_id + "': tag " + std::string(GuidelineTagName(*tag)) +
                                             " implies level " + std::string(KnowledgeLevelName(ImpliedLevel(*tag))));
    }
  }
};

struct AgreedPair {
  std::string pair_id;
  KnowledgeLevel level;
  bool operator==(const AgreedPair&) const = default;
};

// Pairs on which both annotators chose the same level, by pair id.
inline std::vector<AgreedPair> AgreementFilter(const std::vector<KnowledgeAnnotation>& a,
                                               const std::vector<KnowledgeAnnotation>& b) {
  auto index = [](const std::vector<KnowledgeAnnotation>& xs) {
    std::map<std::string, KnowledgeLevel> m;
    for (const auto& x : xs) {
      x.Validate();
      if (!m.emplace(x.pair_id, x.level).second) {
        throw Error(ErrorKind::kDuplicate, "pair '" + x.pair_id + "' annotated twice by one annotator");
      }
    }
    return m;
  };
  const auto ma = index(a), mb = index(b);
  std::vector<AgreedPair> out;
  for (const auto& [id, lvl] : ma) {
    auto it = mb.find(id);
    if (it == mb.end()) throw Error(ErrorKind::kCoverage, "pair '" + id + "' missing from the second annotator");
    if (it->second == lvl) out.push_back({id, lvl});
  }
  if (ma.size() != mb.size()) {
    for (const auto& [id, lvl] : mb) {
      if (!ma.count(id)) throw Error(ErrorKind::kCoverage, "pair '" + id + "' missing from the first annotator");
    }
  }
  return out;
}

// CSV with a header; column names configurable.
struct AnnotationColumns {
  std::string pair_id = "pair_id";
  std::string annotator = "annotator_id";
  std::string level = "level";
  std::string tag = "guideline_tag";  // optional column
};

inline std::vector<KnowledgeAnnotation> LoadAnnotationsCsv(const std::string& path, const AnnotationColumns& cols = {}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kNotFound, "cannot open '" + path + "'");
  std::vector<std::string> header, row;
  if (!ReadDelimitedRecord(in, ',', header)) throw Error(ErrorKind::kSchema, path + ": empty file");
  auto col = [&](const std::string& name, bool required) -> std::optional<size_t> {
    for (size_t i = 0; i < header.size(); ++i) {
      if (Trim(header[i]) == name) return i;
    }
    if (required) throw Error(ErrorKind::kSchema, path + ": missing column '" + name + "'");
    return std::nullopt;
  };
  const auto ip = *col(cols.pair_id, true), ia = *col(cols.annotator, true), il = *col(cols.level, true);
  const auto it = col(cols.tag, false);
  std::vector<KnowledgeAnnotation> out;
  size_t line = 1;
  while (ReadDelimitedRecord(in, ',', row)) {
    ++line;
    if (row.size() == 1 && Trim(row[0]).empty()) continue;
    if (row.size() < header.size()) throw Error(ErrorKind::kParse, path + ": row " + std::to_string(line) + " is short");
    KnowledgeAnnotation a{row[ip], row[ia], ParseKnowledgeLevel(row[il]), std::nullopt};
    if (it && !Trim(row[*it]).empty()) a.tag = ParseGuidelineTag(row[*it]);
    a.Validate();
    out.push_back(std::move(a));
  }
  return out;
}

// Seeded sample without replacement, separately per level. Low pairs first.
inline std::vector<AgreedPair> StratifiedSample(const std::vector<AgreedPair>& agreed, size_t n_low, size_t n_high,
                                                uint64_t seed) {
  std::vector<std::string> low, high;
  for (const auto& p : agreed) (p.level == KnowledgeLevel::kLow ? low : high).push_back(p.pair_id);
  if (low.size() < n_low || high.size() < n_high) {
    throw Error(ErrorKind::kDomain, "stratified sample needs " + std::to_string(n_low) + " low / " +
                                        std::to_string(n_high) + " high pairs; pool has " +
                                        std::to_string(low.size()) + " / " + std::to_string(high.size()));
  }
  std::mt19937_64 rng(seed);
  auto draw = [&](std::vector<std::string> pool, size_t n, KnowledgeLevel lvl, std::vector<AgreedPair>& out) {
    std::sort(pool.begin(), pool.end());
    // Partial Fisher-Yates.
    for (size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      out.push_back({pool[i], lvl});
    }
  };
  std::vector<AgreedPair> out;
  draw(low, n_low, KnowledgeLevel::kLow, out);
  draw(high, n_high, KnowledgeLevel::kHigh, out);
  return out;
}

// --- Plan ---

inline const std::vector<std::string>& StudyConditions() {
  static const std::vector<std::string> c = {"vanilla", "comet",        "cont",    "comet+cont",
                                             "gpt-lf",  "filtered-ens", "wt5-11b", "ground-truth"};
  return c;
}

struct BatchItem {
  std::string pair_id;
  std::string condition;
};

struct Batch {
  std::string batch_id;
  size_t group = 0;  // batches in one group share their pairs
  std::vector<BatchItem> items;
};

struct AssignmentPlan {
  std::vector<Batch> batches;
  std::vector<std::string> conditions;
  int ratings_per_cell = 0;
  // Each worker takes at most one batch per group, so a worker never sees
  // a pair twice and the ratings of one cell come from distinct workers.
  bool distinct_workers_per_cell = true;

  size_t total_ratings() const {
    size_t n = 0;
    for (const auto& b : batches) n += b.items.size();
    return n;
  }

  const Batch* Find(const std::string& id) const {
    for (const auto& b : batches) {
      if (b.batch_id == id) return &b;
    }
    return nullptr;
  }
};

// Rotation design. Pairs are shuffled (seeded) and cut into groups of
// batch_size. A group yields C*R batches; in batch r, item i shows
// condition (i + r) mod C. Every (pair, condition) cell thus appears R
// times and each batch's condition counts differ by at most one.
inline AssignmentPlan BuildPlan(std::vector<std::string> pairs, std::vector<std::string> conditions,
                                int ratings_per_cell, int batch_size, uint64_t seed) {
  if (pairs.empty() || conditions.empty()) throw Error(ErrorKind::kConfig, "plan needs pairs and conditions");
  if (ratings_per_cell <= 0 || batch_size <= 0) throw Error(ErrorKind::kConfig, "plan sizes must be positive");
  if (pairs.size() % static_cast<size_t>(batch_size) != 0) {
    throw Error(ErrorKind::kConfig, std::to_string(pairs.size()) + " pairs do not divide into batches of " +
                                        std::to_string(batch_size));
  }
  if (std::set<std::string>(pairs.begin(), pairs.end()).size() != pairs.size() ||
      std::set<std::string>(conditions.begin(), conditions.end()).size() != conditions.size()) {
    throw Error(ErrorKind::kConfig, "plan pairs and conditions must be distinct");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  AssignmentPlan plan;
  plan.conditions = conditions;
  plan.ratings_per_cell = ratings_per_cell;
  const size_t c = conditions.size();
  const size_t hits = c * static_cast<size_t>(ratings_per_cell);
  const size_t groups = pairs.size() / static_cast<size_t>(batch_size);
  size_t serial = 0;
  for (size_t g = 0; g < groups; ++g) {
    // Seeded rotation offset so groups do not all start on one condition.
    const size_t offset = std::uniform_int_distribution<size_t>(0, c - 1)(rng);
    for (size_t r = 0; r < hits; ++r) {
      Batch b;
      char id[32];
      std::snprintf(id, sizeof id, "b%05zu", serial++);
      b.batch_id = id;
      b.group = g;
      for (size_t i = 0; i < static_cast<size_t>(batch_size); ++i) {
        b.items.push_back({pairs[g * static_cast<size_t>(batch_size) + i], conditions[(i + r + offset) % c]});
      }
      plan.batches.push_back(std::move(b));
    }
  }
  return plan;
}

inline nlohmann::json PlanToJson(const AssignmentPlan& p) {
  nlohmann::json bs = nlohmann::json::array();
  for (const auto& b : p.batches) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& it : b.items) items.push_back({{"pair_id", it.pair_id}, {"condition", it.condition}});
    bs.push_back({{"batch_id", b.batch_id}, {"group", b.group}, {"items", std::move(items)}});
  }
  return {{"format", "kenli.study-plan"},
          {"version", 1},
          {"conditions", p.conditions},
          {"ratings_per_cell", p.ratings_per_cell},
          {"distinct_workers_per_cell", p.distinct_workers_per_cell},
          {"batches", std::move(bs)}};
}

inline AssignmentPlan PlanFromJson(const nlohmann::json& j) {
  if (j.value("format", "") != "kenli.study-plan") throw Error(ErrorKind::kFormat, "not a study plan");
  AssignmentPlan p;
  p.conditions = j.at("conditions").get<std::vector<std::string>>();
  p.ratings_per_cell = j.at("ratings_per_cell").get<int>();
  p.distinct_workers_per_cell = j.value("distinct_workers_per_cell", true);
  for (const auto& b : j.at("batches")) {
    Batch batch{b.at("batch_id").get<std::string>(), b.at("group").get<size_t>(), {}};
    for (const auto& it : b.at("items")) {
      batch.items.push_back({it.at("pair_id").get<std::string>(), it.at("condition").get<std::string>()});
    }
    p.batches.push_back(std::move(batch));
  }
  return p;
}

// --- Ratings ---

enum class CommonsenseAnswer { kYes, kNo, kNoNeed };

inline std::string_view CommonsenseName(CommonsenseAnswer a) {
  switch (a) {
    case CommonsenseAnswer::kYes: return "yes";
    case CommonsenseAnswer::kNo: return "no";
    case CommonsenseAnswer::kNoNeed: return "no_need";
  }
  return "";
}

inline CommonsenseAnswer ParseCommonsense(std::string_view s) {
  const auto f = ToLower(Trim(s));
  if (f == "yes" || f == "1" || f == "true") return CommonsenseAnswer::kYes;
  if (f == "no" || f == "0" || f == "false") return CommonsenseAnswer::kNo;
  if (f == "no_need" || f == "no need" || f == "no-need") return CommonsenseAnswer::kNoNeed;
  throw Error(ErrorKind::kParse, "commonsense answer must be yes/no/no_need, got '" + std::string(s) + "'");
}

inline bool ParseYesNo(std::string_view s) {
  const auto f = ToLower(Trim(s));
  if (f == "yes" || f == "1" || f == "true") return true;
  if (f == "no" || f == "0" || f == "false") return false;
  throw Error(ErrorKind::kParse, "expected yes/no, got '" + std::string(s) + "'");
}

struct RatingRecord {
  std::string worker_id;
  std::string pair_id;
  std::string condition;
  bool label_correct = false;
  bool explanation_correct = false;
  bool grammatical = false;
  CommonsenseAnswer commonsense = CommonsenseAnswer::kNo;
  double duration_seconds = 0.0;
  std::string batch_id;
  std::string timestamp;

  bool operator==(const RatingRecord&) const = default;
};

inline nlohmann::json RatingToJson(const RatingRecord& r) {
  auto yn = [](bool b) { return b ? "yes" : "no"; };
  return {{"worker_id", r.worker_id},
          {"pair_id", r.pair_id},
          {"condition", r.condition},
          {"label_correct", yn(r.label_correct)},
          {"explanation_correct", yn(r.explanation_correct)},
          {"grammatical", yn(r.grammatical)},
          {"commonsense", CommonsenseName(r.commonsense)},
          {"duration_seconds", r.duration_seconds},
          {"batch_id", r.batch_id},
          {"timestamp", r.timestamp}};
}

inline RatingRecord RatingFromJson(const nlohmann::json& j) {
  RatingRecord r;
  try {
    r.worker_id = j.at("worker_id").get<std::string>();
    r.pair_id = j.at("pair_id").get<std::string>();
    r.condition = j.at("condition").get<std::string>();
    r.label_correct = ParseYesNo(j.at("label_correct").get<std::string>());
    r.explanation_correct = ParseYesNo(j.at("explanation_correct").get<std::string>());
    r.grammatical = ParseYesNo(j.at("grammatical").get<std::string>());
    r.commonsense = ParseCommonsense(j.at("commonsense").get<std::string>());
    r.duration_seconds = j.at("duration_seconds").get<double>();
    r.batch_id = j.at("batch_id").get<std::string>();
    r.timestamp = j.value("timestamp", "");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kSchema, std::string("rating record: ") + e.what());
  }
  if (!(r.duration_seconds >= 0.0)) throw Error(ErrorKind::kDomain, "rating duration must be non-negative");
  return r;
}

// --- Filtering ---

struct DiscardReport {
  size_t batches_total = 0;
  size_t batches_discarded = 0;
  size_t records_total = 0;
  size_t records_discarded = 0;
  double fraction_discarded() const {
    return records_total ? static_cast<double>(records_discarded) / static_cast<double>(records_total) : 0.0;
  }
};

struct FilterResult {
  std::vector<RatingRecord> kept;
  std::vector<RatingRecord> discarded;
  DiscardReport report;
};

// A (worker, batch) whose item durations sum below the threshold is dropped
// whole. The boundary itself is kept.
inline FilterResult FilterResponses(const std::vector<RatingRecord>& records, double min_batch_seconds = 300.0) {
  std::map<std::pair<std::string, std::string>, double> duration;
  for (const auto& r : records) duration[{r.worker_id, r.batch_id}] += r.duration_seconds;
  FilterResult out;
  out.report.batches_total = duration.size();
  for (const auto& [k, d] : duration) out.report.batches_discarded += d < min_batch_seconds;
  for (const auto& r : records) {
    const bool drop = duration[{r.worker_id, r.batch_id}] < min_batch_seconds;
    (drop ? out.discarded : out.kept).push_back(r);
  }
  out.report.records_total = records.size();
  out.report.records_discarded = out.discarded.size();
  return out;
}

// --- Export / import ---

inline constexpr int kRatingsSchemaVersion = 1;

struct ExportedRating {
  RatingRecord record;
  bool discarded = false;
  bool operator==(const ExportedRating&) const = default;
};

inline void ExportRatings(const std::string& path, const FilterResult& filtered) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kNotFound, "cannot write '" + path + "'");
  out << nlohmann::json{{"format", "kenli.ratings"}, {"schema_version", kRatingsSchemaVersion}}.dump() << '\n';
  auto emit = [&](const RatingRecord& r, bool discarded) {
    auto j = RatingToJson(r);
    j["discarded"] = discarded;
    out << j.dump() << '\n';
  };
  for (const auto& r : filtered.kept) emit(r, false);
  for (const auto& r : filtered.discarded) emit(r, true);
}

inline std::vector<ExportedRating> ImportRatings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kNotFound, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kFormat, path + ": empty ratings file");
  const auto header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "kenli.ratings") {
    throw Error(ErrorKind::kFormat, path + ": missing ratings header");
  }
  if (header.value("schema_version", 0) != kRatingsSchemaVersion) {
    throw Error(ErrorKind::kFormat, path + ": unsupported schema version");
  }
  std::vector<ExportedRating> out;
  size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (Trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorKind::kParse, path + ": line " + std::to_string(n) + " is not JSON");
    out.push_back({RatingFromJson(j), j.value("discarded", false)});
  }
  return out;
}

// Column mapping for third-party rating tables (CSV with header). Empty
// optional columns are skipped.
struct RatingColumns {
  std::string worker_id = "worker_id";
  std::string pair_id = "pair_id";
  std::string condition = "condition";
  std::string label_correct = "label_correct";
  std::string explanation_correct = "explanation_correct";
  std::string grammatical = "grammatical";
  std::string commonsense = "commonsense";
  std::string duration_seconds = "duration_seconds";
  std::string batch_id = "batch_id";
  std::string timestamp = "timestamp";          // optional
  std::string commonsense_level = "";           // optional, low/high per pair
  std::map<std::string, std::string> condition_aliases;  // source value -> condition id

  static RatingColumns FromJson(const nlohmann::json& j) {
    RatingColumns c;
    auto set = [&](const char* k, std::string& f) {
      if (j.contains(k)) f = j.at(k).get<std::string>();
    };
    set("worker_id", c.worker_id);
    set("pair_id", c.pair_id);
    set("condition", c.condition);
    set("label_correct", c.label_correct);
    set("explanation_correct", c.explanation_correct);
    set("grammatical", c.grammatical);
    set("commonsense", c.commonsense);
    set("duration_seconds", c.duration_seconds);
    set("batch_id", c.batch_id);
    set("timestamp", c.timestamp);
    set("commonsense_level", c.commonsense_level);
    if (j.contains("condition_aliases")) c.condition_aliases = j.at("condition_aliases").get<std::map<std::string, std::string>>();
    return c;
  }
};

struct ImportedRating {
  RatingRecord record;
  std::optional<KnowledgeLevel> level;
};

inline std::vector<ImportedRating> ImportRatingsCsv(const std::string& path, const RatingColumns& cols = {}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kNotFound, "cannot open '" + path + "'");
  std::vector<std::string> header, row;
  if (!ReadDelimitedRecord(in, ',', header)) throw Error(ErrorKind::kSchema, path + ": empty file");
  std::map<std::string, size_t> pos;
  for (size_t i = 0; i < header.size(); ++i) pos[std::string(Trim(header[i]))] = i;
  auto col = [&](const std::string& name, bool required) -> std::optional<size_t> {
    if (name.empty()) return std::nullopt;
    auto it = pos.find(name);
    if (it != pos.end()) return it->second;
    if (required) throw Error(ErrorKind::kSchema, path + ": missing column '" + name + "'");
    return std::nullopt;
  };
  const auto cw = *col(cols.worker_id, true), cp = *col(cols.pair_id, true), cc = *col(cols.condition, true),
             cl = *col(cols.label_correct, true), ce = *col(cols.explanation_correct, true),
             cg = *col(cols.grammatical, true), cs = *col(cols.commonsense, true),
             cd = *col(cols.duration_seconds, true), cb = *col(cols.batch_id, true);
  const auto ct = col(cols.timestamp, false), ck = col(cols.commonsense_level, false);
  std::vector<ImportedRating> out;
  size_t line = 1;
  while (ReadDelimitedRecord(in, ',', row)) {
    ++line;
    if (row.size() == 1 && Trim(row[0]).empty()) continue;
    if (row.size() < header.size()) throw Error(ErrorKind::kParse, path + ": row " + std::to_string(line) + " is short");
    try {
      ImportedRating ir;
      auto& r = ir.record;
      r.worker_id = row[cw];
      r.pair_id = row[cp];
      r.condition = std::string(Trim(row[cc]));
      if (auto it = cols.condition_aliases.find(r.condition); it != cols.condition_aliases.end()) r.condition = it->second;
      r.label_correct = ParseYesNo(row[cl]);
      r.explanation_correct = ParseYesNo(row[ce]);
      r.grammatical = ParseYesNo(row[cg]);
      r.commonsense = ParseCommonsense(row[cs]);
      r.duration_seconds = std::stod(row[cd]);
      if (!(r.duration_seconds >= 0)) throw Error(ErrorKind::kDomain, "negative duration");
      r.batch_id = row[cb];
      if (ct) r.timestamp = row[*ct];
      if (ck) ir.level = ParseKnowledgeLevel(row[*ck]);
      out.push_back(std::move(ir));
    } catch (const std::invalid_argument&) {
      throw Error(ErrorKind::kParse, path + ": row " + std::to_string(line) + ": bad duration");
    } catch (const Error& e) {
      throw Error(e.kind(), path + ": row " + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

// --- Collection service ---

// What a rater sees for one item. The slot token is opaque; the condition
// is never exposed.
struct ShownItem {
  std::string slot;
  std::string pair_id;
  std::string premise;
  std::string hypothesis;
  std::string label;
  std::string explanation;
  bool answered = false;
};

struct BatchView {
  std::string batch_id;
  std::vector<ShownItem> items;
  size_t cursor = 0;  // first unanswered item
};

struct RatingSubmission {
  std::string slot;
  std::string submission_token;  // client-chosen; retries reuse it
  std::optional<std::string> label_correct, explanation_correct, grammatical, commonsense;
  double duration_seconds = 0.0;
};

struct Receipt {
  std::string receipt_id;
  bool replayed = false;  // true when the submission token was seen before
};

struct Progress {
  std::string batch_id;  // empty when no batch is open
  size_t answered = 0;
  size_t batch_size = 0;
  size_t batches_completed = 0;
  size_t plan_batches_remaining = 0;
};

// Per-pair texts and what each condition displays for the pair.
struct StudyMaterials {
  struct Pair {
    std::string premise, hypothesis;
  };
  struct Shown {
    Label label;
    std::string explanation;
  };
  std::map<std::string, Pair> pairs;
  std::map<std::pair<std::string, std::string>, Shown> shown;  // (pair, condition)

  nlohmann::json ToJson() const {
    nlohmann::json ps = nlohmann::json::object(), ss = nlohmann::json::array();
    for (const auto& [id, p] : pairs) ps[id] = {{"premise", p.premise}, {"hypothesis", p.hypothesis}};
    for (const auto& [k, s] : shown) {
      ss.push_back({{"pair_id", k.first}, {"condition", k.second}, {"label", LabelName(s.label)},
                    {"explanation", s.explanation}});
    }
    return {{"pairs", std::move(ps)}, {"shown", std::move(ss)}};
  }

  static StudyMaterials FromJson(const nlohmann::json& j) {
    StudyMaterials m;
    for (const auto& [id, p] : j.at("pairs").items()) {
      m.pairs[id] = {p.at("premise").get<std::string>(), p.at("hypothesis").get<std::string>()};
    }
    for (const auto& s : j.at("shown")) {
      m.shown[{s.at("pair_id").get<std::string>(), s.at("condition").get<std::string>()}] = {
          ParseLabel(s.at("label").get<std::string>()), s.at("explanation").get<std::string>()};
    }
    return m;
  }
};

inline std::string UtcNow() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Single-writer service over an append-only JSON-lines journal. State is
// rebuilt by replaying the journal on open.
class StudyService {
 public:
  StudyService(AssignmentPlan plan, StudyMaterials materials, std::string journal_path, std::string secret,
               std::function<std::string()> clock = UtcNow)
      : plan_(std::move(plan)),
        materials_(std::move(materials)),
        journal_path_(std::move(journal_path)),
        secret_(std::move(secret)),
        clock_(std::move(clock)) {
    for (size_t b = 0; b < plan_.batches.size(); ++b) {
      for (size_t i = 0; i < plan_.batches[b].items.size(); ++i) {
        const auto& it = plan_.batches[b].items[i];
        if (!materials_.pairs.count(it.pair_id) || !materials_.shown.count({it.pair_id, it.condition})) {
          throw Error(ErrorKind::kCoverage, "no study material for pair '" + it.pair_id + "' / " + it.condition);
        }
        slots_[SlotToken(plan_.batches[b].batch_id, i)] = {b, i};
      }
    }
    Replay();
    journal_.open(journal_path_, std::ios::app);
    if (!journal_) throw Error(ErrorKind::kNotFound, "cannot open journal '" + journal_path_ + "'");
  }

  // Worker tokens authenticate API calls.
  void AddWorker(const std::string& token, const std::string& worker_id) { tokens_[token] = worker_id; }

  std::optional<std::string> Authenticate(const std::string& token) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = tokens_.find(token);
    if (it == tokens_.end()) return std::nullopt;
    return it->second;
  }

  // The worker's open batch, or a newly assigned one; nullopt when the plan
  // has nothing left this worker may take.
  std::optional<BatchView> FetchBatch(const std::string& worker) {
    std::lock_guard<std::mutex> lock(mu_);
    auto& w = workers_[worker];
    if (!w.open_batch) {
      for (size_t b = 0; b < plan_.batches.size(); ++b) {
        if (assigned_.count(b) || w.groups.count(plan_.batches[b].group)) continue;
        Append({{"type", "assign"}, {"worker_id", worker}, {"batch", plan_.batches[b].batch_id}});
        Assign(worker, b);
        break;
      }
    }
    if (!w.open_batch) return std::nullopt;
    return View(*w.open_batch);
  }

  Receipt Submit(const std::string& worker, const RatingSubmission& s) {
    std::lock_guard<std::mutex> lock(mu_);
    if (s.submission_token.empty()) throw Error(ErrorKind::kSchema, "submission token required");
    if (auto it = receipts_.find(s.submission_token); it != receipts_.end()) {
      if (it->second.first != worker) throw Error(ErrorKind::kDuplicate, "submission token reused by another worker");
      return {it->second.second, true};
    }
    std::vector<std::string> missing;
    if (!s.label_correct) missing.push_back("label_correct");
    if (!s.explanation_correct) missing.push_back("explanation_correct");
    if (!s.grammatical) missing.push_back("grammatical");
    if (!s.commonsense) missing.push_back("commonsense");
    if (!missing.empty()) throw Error(ErrorKind::kSchema, "missing items: " + Join(missing, ", "));
    if (!(s.duration_seconds >= 0.0)) throw Error(ErrorKind::kDomain, "duration must be non-negative");

    auto slot = slots_.find(s.slot);
    auto& w = workers_[worker];
    if (slot == slots_.end() || !w.open_batch || *w.open_batch != slot->second.first) {
      throw Error(ErrorKind::kUnscheduled, "slot is not in this worker's open batch");
    }
    const auto& batch = plan_.batches[slot->second.first];
    const auto& item = batch.items[slot->second.second];
    if (rated_.count({worker, item.pair_id, item.condition})) {
      throw Error(ErrorKind::kDuplicate, "worker already rated this item");
    }
    RatingRecord r{worker,
                   item.pair_id,
                   item.condition,
                   ParseYesNo(*s.label_correct),
                   ParseYesNo(*s.explanation_correct),
                   ParseYesNo(*s.grammatical),
                   ParseCommonsense(*s.commonsense),
                   s.duration_seconds,
                   batch.batch_id,
                   clock_()};
    char id[32];
    std::snprintf(id, sizeof id, "r%07zu", records_.size() + 1);
    Append({{"type", "rating"}, {"receipt", id}, {"submission_token", s.submission_token}, {"record", RatingToJson(r)}});
    Record(r, id, s.submission_token);
    return {id, false};
  }

  Progress GetProgress(const std::string& worker) const {
    std::lock_guard<std::mutex> lock(mu_);
    Progress p;
    auto it = workers_.find(worker);
    if (it != workers_.end()) {
      p.batches_completed = it->second.completed;
      if (it->second.open_batch) {
        const auto& b = plan_.batches[*it->second.open_batch];
        p.batch_id = b.batch_id;
        p.batch_size = b.items.size();
        for (const auto& item : b.items) p.answered += rated_.count({worker, item.pair_id, item.condition});
      }
    }
    p.plan_batches_remaining = plan_.batches.size() - assigned_.size();
    return p;
  }

  std::vector<RatingRecord> Records() const {
    std::lock_guard<std::mutex> lock(mu_);
    return records_;
  }

  const AssignmentPlan& plan() const { return plan_; }

 private:
  struct WorkerState {
    std::optional<size_t> open_batch;
    std::set<size_t> groups;
    size_t completed = 0;
  };

  std::string SlotToken(const std::string& batch_id, size_t idx) const {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(Fnv1a64(secret_ + "|" + batch_id + "|" + std::to_string(idx))));
    return buf;
  }

  BatchView View(size_t b) const {
    const auto& batch = plan_.batches[b];
    BatchView v;
    v.batch_id = batch.batch_id;
    const auto& worker = assigned_.at(b);
    v.cursor = batch.items.size();
    for (size_t i = 0; i < batch.items.size(); ++i) {
      const auto& item = batch.items[i];
      const auto& pair = materials_.pairs.at(item.pair_id);
      const auto& shown = materials_.shown.at({item.pair_id, item.condition});
      const bool answered = rated_.count({worker, item.pair_id, item.condition}) > 0;
      if (!answered && v.cursor == batch.items.size()) v.cursor = i;
      v.items.push_back({SlotToken(batch.batch_id, i), item.pair_id, pair.premise, pair.hypothesis,
                         std::string(LabelName(shown.label)), shown.explanation, answered});
    }
    return v;
  }

  void Assign(const std::string& worker, size_t b) {
    assigned_[b] = worker;
    auto& w = workers_[worker];
    w.open_batch = b;
    w.groups.insert(plan_.batches[b].group);
  }

  void Record(const RatingRecord& r, const std::string& receipt, const std::string& token) {
    records_.push_back(r);
    rated_.insert({r.worker_id, r.pair_id, r.condition});
    receipts_[token] = {r.worker_id, receipt};
    auto& w = workers_[r.worker_id];
    if (w.open_batch) {
      const auto& b = plan_.batches[*w.open_batch];
      const bool done = std::all_of(b.items.begin(), b.items.end(), [&](const BatchItem& it) {
        return rated_.count({r.worker_id, it.pair_id, it.condition}) > 0;
      });
      if (done) {
        w.open_batch.reset();
        ++w.completed;
      }
    }
  }

  void Append(const nlohmann::json& entry) {
    journal_ << entry.dump() << '\n';
    journal_.flush();
    if (!journal_) throw Error(ErrorKind::kNotFound, "journal write failed");
  }

  void Replay() {
    std::ifstream in(journal_path_);
    if (!in) return;
    std::string line;
    size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (Trim(line).empty()) continue;
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) throw Error(ErrorKind::kParse, journal_path_ + ": line " + std::to_string(n));
      const auto type = j.value("type", "");
      if (type == "assign") {
        const auto* b = plan_.Find(j.at("batch").get<std::string>());
        if (!b) throw Error(ErrorKind::kIntegrity, "journal names a batch not in the plan");
        Assign(j.at("worker_id").get<std::string>(), static_cast<size_t>(b - plan_.batches.data()));
      } else if (type == "rating") {
        Record(RatingFromJson(j.at("record")), j.at("receipt").get<std::string>(),
               j.at("submission_token").get<std::string>());
      } else {
        throw Error(ErrorKind::kParse, journal_path_ + ": unknown entry type '" + type + "'");
      }
    }
  }

  AssignmentPlan plan_;
  StudyMaterials materials_;
  std::string journal_path_;
  std::string secret_;
  std::function<std::string()> clock_;
  mutable std::mutex mu_;
  std::ofstream journal_;
  std::map<std::string, std::string> tokens_;
  std::map<std::string, std::pair<size_t, size_t>> slots_;
  std::map<std::string, WorkerState> workers_;
  std::map<size_t, std::string> assigned_;
  std::set<std::tuple<std::string, std::string, std::string>> rated_;
  std::map<std::string, std::pair<std::string, std::string>> receipts_;  // token -> (worker, receipt)
  std::vector<RatingRecord> records_;
};

}  // namespace kenli
