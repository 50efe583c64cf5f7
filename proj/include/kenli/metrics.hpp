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

#pragma once

#include <cmath>
#include <cstdlib>
#include <fstream>
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

// --- Label accuracy ---

struct AccuracyReport {
  size_t correct = 0;
  size_t total = 0;
  double accuracy = 0.0;
};

// Predictions are matched to gold instances by id; both sides must cover
// the same id set.
inline AccuracyReport LabelAccuracy(const std::vector<Prediction>& preds, const std::vector<NLIInstance>& golds) {
  if (golds.empty()) throw Error(ErrorKind::kDomain, "accuracy over an empty set");
  std::map<std::string, const Prediction*> by_id;
  for (const auto& p : preds) {
    if (!by_id.emplace(p.instance_id, &p).second) {
      throw Error(ErrorKind::kIntegrity, "duplicate prediction for '" + p.instance_id + "'");
    }
  }
  if (by_id.size() != golds.size()) {
    throw Error(ErrorKind::kIntegrity, std::to_string(preds.size()) + " predictions for " +
                                           std::to_string(golds.size()) + " gold instances");
  }
  AccuracyReport r;
  for (const auto& g : golds) {
    auto it = by_id.find(g.id);
    if (it == by_id.end()) throw Error(ErrorKind::kIntegrity, "no prediction for '" + g.id + "'");
    if (!g.gold) throw Error(ErrorKind::kLabel, "instance '" + g.id + "' has no gold label");
    r.correct += it->second->label == *g.gold;
    ++r.total;
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

// --- Corpus BLEU ---

using Tokens = std::vector<std::string>;

enum class BleuSmoothing {
  kNone,
  // (m + 1) / (t + 1) for n >= 2.
  kAddOne,
};

struct BleuOptions {
  int max_n = 4;
  BleuSmoothing smoothing = BleuSmoothing::kNone;
};

struct CorpusBleuReport {
  std::vector<size_t> matches;  // clipped n-gram matches, n = 1..max_n
  std::vector<size_t> totals;   // candidate n-grams
  std::vector<double> precisions;
  double brevity_penalty = 0.0;
  double score = 0.0;
  size_t candidate_length = 0;
  size_t reference_length = 0;
};

namespace detail {

inline std::map<std::vector<std::string>, size_t> NGramCounts(const Tokens& t, int n) {
  std::map<std::vector<std::string>, size_t> out;
  for (size_t i = 0; i + static_cast<size_t>(n) <= t.size(); ++i) {
    ++out[std::vector<std::string>(t.begin() + static_cast<long>(i), t.begin() + static_cast<long>(i) + n)];
  }
  return out;
}

// Closest reference length; shorter wins a tie.
inline size_t ClosestRefLength(size_t c, const std::vector<Tokens>& refs) {
  size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [&](size_t x) { return x > c ? x - c : c - x; };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  return best;
}

}  // namespace detail

inline double BrevityPenalty(size_t c, size_t r) {
  if (c == 0) return 0.0;
  return c >= r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
}

inline CorpusBleuReport CorpusBleu(const std::vector<Tokens>& candidates,
                                   const std::vector<std::vector<Tokens>>& references, const BleuOptions& opt = {}) {
  if (candidates.empty()) throw Error(ErrorKind::kDomain, "BLEU over an empty corpus");
  if (candidates.size() != references.size()) {
    throw Error(ErrorKind::kIntegrity, "BLEU: candidate and reference counts differ");
  }
  if (opt.max_n < 1) throw Error(ErrorKind::kConfig, "BLEU: max_n must be positive");
  CorpusBleuReport r;
  r.matches.assign(static_cast<size_t>(opt.max_n), 0);
  r.totals.assign(static_cast<size_t>(opt.max_n), 0);
  for (size_t i = 0; i < candidates.size(); ++i) {
    const auto& cand = candidates[i];
    const auto& refs = references[i];
    if (refs.empty()) throw Error(ErrorKind::kDomain, "BLEU: instance " + std::to_string(i) + " has no reference");
    r.candidate_length += cand.size();
    r.reference_length += detail::ClosestRefLength(cand.size(), refs);
    for (int n = 1; n <= opt.max_n; ++n) {
      // Clip by the maximum count of each n-gram in any one reference.
      std::map<std::vector<std::string>, size_t> max_ref;
      for (const auto& ref : refs) {
        for (const auto& [g, c] : detail::NGramCounts(ref, n)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : detail::NGramCounts(cand, n)) {
        auto it = max_ref.find(g);
        r.matches[static_cast<size_t>(n - 1)] += std::min(c, it == max_ref.end() ? size_t{0} : it->second);
        r.totals[static_cast<size_t>(n - 1)] += c;
      }
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 1; n <= opt.max_n; ++n) {
    const auto k = static_cast<size_t>(n - 1);
    double m = static_cast<double>(r.matches[k]);
    double t = static_cast<double>(r.totals[k]);
    if (opt.smoothing == BleuSmoothing::kAddOne && n >= 2) {
      m += 1.0;
      t += 1.0;
    }
    const double p = t > 0 ? m / t : 0.0;
    r.precisions.push_back(p);
    if (p == 0.0) zero = true;
    else log_sum += std::log(p);
  }
  r.brevity_penalty = BrevityPenalty(r.candidate_length, r.reference_length);
  r.score = zero ? 0.0 : r.brevity_penalty * std::exp(log_sum / opt.max_n);
  return r;
}

enum class ReferenceMode { kFirst, kAll };

inline std::string_view ReferenceModeName(ReferenceMode m) { return m == ReferenceMode::kFirst ? "first" : "all"; }

// Explanation BLEU over predictions aligned to gold instances by id.
inline CorpusBleuReport ExplanationBleu(const std::vector<Prediction>& preds, const std::vector<NLIInstance>& golds,
                                        ReferenceMode mode = ReferenceMode::kAll, const BleuOptions& opt = {}) {
  std::map<std::string, const Prediction*> by_id;
  for (const auto& p : preds) by_id[p.instance_id] = &p;
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  for (const auto& g : golds) {
    auto it = by_id.find(g.id);
    if (it == by_id.end()) throw Error(ErrorKind::kIntegrity, "no prediction for '" + g.id + "'");
    if (g.references.empty()) throw Error(ErrorKind::kDomain, "instance '" + g.id + "' has no reference");
    cands.push_back(Tokenize(it->second->explanation));
    std::vector<Tokens> rs;
    for (size_t k = 0; k < (mode == ReferenceMode::kFirst ? 1 : g.references.size()); ++k) {
      rs.push_back(Tokenize(g.references[k]));
    }
    refs.push_back(std::move(rs));
  }
  return CorpusBleu(cands, refs, opt);
}

// --- Learned metric ---

class LearnedScorerClient {
 public:
  virtual ~LearnedScorerClient() = default;
  virtual std::string version() const = 0;
  virtual double Score(const std::string& candidate, const std::string& reference) = 0;
};

// POST <path> {"candidate", "reference"} -> {"score"}.
class HttpScorerClient final : public LearnedScorerClient {
 public:
  HttpScorerClient(std::string base_url, std::string version, std::string path = "/score")
      : base_url_(std::move(base_url)), version_(std::move(version)), path_(std::move(path)) {}

  std::string version() const override { return version_; }

  double Score(const std::string& candidate, const std::string& reference) override {
    httplib::Client client(base_url_);
    client.set_connection_timeout(5);
    client.set_read_timeout(60);
    auto res = client.Post(path_, nlohmann::json{{"candidate", candidate}, {"reference", reference}}.dump(),
                           "application/json");
    if (!res || res->status != 200) {
      throw Error(ErrorKind::kTransport,
                  "scorer: " + (res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error())));
    }
    try {
      return nlohmann::json::parse(res->body).at("score").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kParse, std::string("scorer: bad response: ") + e.what());
    }
  }

 private:
  std::string base_url_, version_, path_;
};

// Memoizes on (candidate, reference, version). JSON-lines cache file.
class CachingScorer final : public LearnedScorerClient {
 public:
  explicit CachingScorer(std::shared_ptr<LearnedScorerClient> inner) : inner_(std::move(inner)) {}

  std::string version() const override { return inner_->version(); }

  double Score(const std::string& candidate, const std::string& reference) override {
    const Key key{candidate, reference, inner_->version()};
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    const double s = inner_->Score(candidate, reference);
    std::lock_guard<std::mutex> lock(mu_);
    cache_.emplace(key, s);
    return s;
  }

  void Load(const std::string& path) {
    std::ifstream in(path);
    if (!in) return;
    std::string line;
    std::lock_guard<std::mutex> lock(mu_);
    while (std::getline(in, line)) {
      if (Trim(line).empty()) continue;
      auto j = nlohmann::json::parse(line);
      cache_[{j.at("candidate"), j.at("reference"), j.at("version")}] = j.at("score").get<double>();
    }
  }

  void Save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::kNotFound, "cannot write '" + path + "'");
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& [k, s] : cache_) {
      out << nlohmann::json{{"candidate", std::get<0>(k)}, {"reference", std::get<1>(k)},
                            {"version", std::get<2>(k)}, {"score", s}}.dump()
          << '\n';
    }
  }

  size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.size();
  }

 private:
  using Key = std::tuple<std::string, std::string, std::string>;
  std::shared_ptr<LearnedScorerClient> inner_;
  mutable std::mutex mu_;
  std::map<Key, double> cache_;
};

struct LearnedScoreReport {
  std::vector<double> scores;  // aligned with the gold instances
  double mean = 0.0;
  std::string version;
};

// Thrown when scoring stops part way; carries how many instances finished.
class PartialScoreError : public Error {
 public:
  PartialScoreError(size_t completed, size_t total, const std::string& cause)
      : Error(ErrorKind::kTransport, "learned metric: " + std::to_string(completed) + " of " + std::to_string(total) +
                                         " instances scored before failure: " + cause),
        completed_(completed) {}
  size_t completed() const { return completed_; }

 private:
  size_t completed_;
};

// Per-instance score against the first reference, or the best over all
// references in kAll mode.
inline LearnedScoreReport LearnedScores(const std::vector<Prediction>& preds, const std::vector<NLIInstance>& golds,
                                        LearnedScorerClient& client, ReferenceMode mode = ReferenceMode::kFirst) {
  if (golds.empty()) throw Error(ErrorKind::kDomain, "learned metric over an empty set");
  std::map<std::string, const Prediction*> by_id;
  for (const auto& p : preds) by_id[p.instance_id] = &p;
  LearnedScoreReport r;
  r.version = client.version();
  for (const auto& g : golds) {
    auto it = by_id.find(g.id);
    if (it == by_id.end()) throw Error(ErrorKind::kIntegrity, "no prediction for '" + g.id + "'");
    if (g.references.empty()) throw Error(ErrorKind::kDomain, "instance '" + g.id + "' has no reference");
    try {
      double best = client.Score(it->second->explanation, g.references.front());
      if (mode == ReferenceMode::kAll) {
        for (size_t k = 1; k < g.references.size(); ++k) {
          best = std::max(best, client.Score(it->second->explanation, g.references[k]));
        }
      }
      r.scores.push_back(best);
    } catch (const Error& e) {
      throw PartialScoreError(r.scores.size(), golds.size(), e.what());
    }
  }
  double sum = 0.0;
  for (double s : r.scores) sum += s;
  r.mean = sum / static_cast<double>(r.scores.size());
  return r;
}

}  // namespace kenli
