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

// Majority-vote ensembles. The filtered variant drops voters whose label
// disagrees with what the explanation-first LM reads off their explanation.
// The LF model then explains the voted label.

#pragma once

#include <array>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "kenli/alltext_lm.hpp"
#include "kenli/common.hpp"
#include "kenli/datamodel.hpp"

namespace kenli {

inline const std::vector<std::string>& DefaultVoterIds() {
  static const std::vector<std::string> ids = {"vanilla", "cont", "comet", "comet+cont", "gpt-lf"};
  return ids;
}

struct EnsembleConfig {
  // Highest priority first; used only to break count ties.
  std::vector<std::string> tie_break_priority = {"gpt-lf", "comet+cont", "cont", "comet", "vanilla"};
  std::string fallback_voter = "gpt-lf";
  int parallelism = 1;
  DecodeSettings decode;

  void Validate(const std::vector<std::string>& voter_ids) const {
    std::set<std::string> pri(tie_break_priority.begin(), tie_break_priority.end());
    std::set<std::string> ids(voter_ids.begin(), voter_ids.end());
    if (pri.size() != tie_break_priority.size() || ids.size() != voter_ids.size() || pri != ids) {
      throw Error(ErrorKind::kConfig, "tie-break priority must be a permutation of the voter ids");
    }
    if (!ids.count(fallback_voter)) throw Error(ErrorKind::kConfig, "fallback voter '" + fallback_voter + "' is not a voter");
  }

  static EnsembleConfig FromJson(const nlohmann::json& j) {
    EnsembleConfig c;
    if (j.contains("tie_break_priority")) c.tie_break_priority = j.at("tie_break_priority").get<std::vector<std::string>>();
    c.fallback_voter = j.value("fallback_voter", c.fallback_voter);
    c.parallelism = j.value("parallelism", c.parallelism);
    c.decode.max_new_tokens = j.value("max_new_tokens", c.decode.max_new_tokens);
    return c;
  }
};

struct Vote {
  std::string voter;
  Label label;
};

struct VoteOutcome {
  Label label;
  bool tie_break_used = false;
};

inline VoteOutcome MajorityVoteDetailed(const std::vector<Vote>& votes, const std::vector<std::string>& priority) {
  if (votes.empty()) throw Error(ErrorKind::kDomain, "majority vote over no voters");
  std::array<int, 3> counts{};
  for (const auto& v : votes) ++counts[static_cast<size_t>(LabelIndex(v.label))];
  const int best = *std::max_element(counts.begin(), counts.end());
  std::vector<Label> tied;
  for (Label l : kAllLabels) {
    if (counts[static_cast<size_t>(LabelIndex(l))] == best) tied.push_back(l);
  }
  if (tied.size() == 1) return {tied[0], false};
  auto rank = [&](const std::string& id) {
    auto it = std::find(priority.begin(), priority.end(), id);
    if (it == priority.end()) throw Error(ErrorKind::kConfig, "voter '" + id + "' missing from tie-break priority");
    return it - priority.begin();
  };
  const Vote* winner = nullptr;
  for (const auto& v : votes) {
    if (counts[static_cast<size_t>(LabelIndex(v.label))] != best) continue;
    if (!winner || rank(v.voter) < rank(winner->voter)) winner = &v;
  }
  return {winner->label, true};
}

inline Label MajorityVote(const std::vector<Vote>& votes, const std::vector<std::string>& priority) {
  return MajorityVoteDetailed(votes, priority).label;
}

struct Voter {
  std::string id;
  std::function<Prediction(const NLIInstance&)> predict;
};

struct VoterEntry {
  std::string voter;
  Prediction prediction;
  bool eligible = true;
  std::optional<Label> probe_label;
  std::string probe_error;
};

struct VoteRecord {
  std::string instance_id;
  std::string ensemble;  // "basic-ens" or "filtered-ens"
  std::vector<VoterEntry> voters;
  Label voted_label = Label::kEntailment;
  bool tie_break_used = false;
  bool fallback_used = false;
  std::string explanation;
};

inline nlohmann::json VoteRecordToJson(const VoteRecord& r) {
  nlohmann::json vs = nlohmann::json::array();
  for (const auto& v : r.voters) {
    nlohmann::json e = {{"voter", v.voter},
                        {"label", LabelName(v.prediction.label)},
                        {"explanation", v.prediction.explanation},
                        {"eligible", v.eligible}};
    e["probe_label"] = v.probe_label ? nlohmann::json(LabelName(*v.probe_label)) : nlohmann::json(nullptr);
    if (!v.probe_error.empty()) e["probe_error"] = v.probe_error;
    vs.push_back(std::move(e));
  }
  return {{"instance_id", r.instance_id},   {"ensemble", r.ensemble},
          {"voters", std::move(vs)},        {"voted_label", LabelName(r.voted_label)},
          {"tie_break_used", r.tie_break_used}, {"fallback_used", r.fallback_used},
          {"explanation", r.explanation}};
}

inline VoteRecord VoteRecordFromJson(const nlohmann::json& j) {
  VoteRecord r;
  r.instance_id = j.at("instance_id").get<std::string>();
  r.ensemble = j.at("ensemble").get<std::string>();
  for (const auto& e : j.at("voters")) {
    VoterEntry v;
    v.voter = e.at("voter").get<std::string>();
    v.prediction = {r.instance_id, v.voter, ParseLabel(e.at("label").get<std::string>()),
                    e.at("explanation").get<std::string>()};
    v.eligible = e.at("eligible").get<bool>();
    if (!e.at("probe_label").is_null()) v.probe_label = ParseLabel(e.at("probe_label").get<std::string>());
    v.probe_error = e.value("probe_error", "");
    r.voters.push_back(std::move(v));
  }
  r.voted_label = ParseLabel(j.at("voted_label").get<std::string>());
  r.tie_break_used = j.at("tie_break_used").get<bool>();
  r.fallback_used = j.at("fallback_used").get<bool>();
  r.explanation = j.at("explanation").get<std::string>();
  return r;
}

// Recomputes the decision from a record alone.
inline VoteOutcome ReplayVote(const VoteRecord& r, const EnsembleConfig& cfg) {
  std::vector<Vote> votes;
  for (const auto& v : r.voters) {
    if (v.eligible) votes.push_back({v.voter, v.prediction.label});
  }
  if (votes.empty()) {
    for (const auto& v : r.voters) {
      if (v.voter == cfg.fallback_voter) return {v.prediction.label, true};
    }
    throw Error(ErrorKind::kIntegrity, "vote record lacks the fallback voter");
  }
  return MajorityVoteDetailed(votes, cfg.tie_break_priority);
}

namespace detail {

inline std::vector<VoterEntry> CollectVotes(const NLIInstance& x, const std::vector<Voter>& voters,
                                            const EnsembleConfig& cfg) {
  std::vector<std::string> ids;
  for (const auto& v : voters) ids.push_back(v.id);
  cfg.Validate(ids);
  std::vector<VoterEntry> out(voters.size());
  ParallelFor(voters.size(), cfg.parallelism, [&](size_t i) {
    try {
      out[i] = {voters[i].id, voters[i].predict(x), true, std::nullopt, ""};
    } catch (const std::exception& e) {
      const auto kind = dynamic_cast<const Error*>(&e) ? static_cast<const Error&>(e).kind() : ErrorKind::kTransport;
      throw Error(kind, "ensemble: voter '" + voters[i].id + "' failed on '" + x.id + "': " + e.what());
    }
  });
  return out;
}

inline std::pair<Prediction, VoteRecord> Finish(const NLIInstance& x, VoteRecord rec, LMClient& lf_lm,
                                                const EnsembleConfig& cfg) {
  std::vector<Vote> votes;
  for (const auto& v : rec.voters) {
    if (v.eligible) votes.push_back({v.voter, v.prediction.label});
  }
  if (votes.empty()) {
    const auto it = std::find_if(rec.voters.begin(), rec.voters.end(),
                                 [&](const VoterEntry& v) { return v.voter == cfg.fallback_voter; });
    rec.voted_label = it->prediction.label;
    rec.explanation = it->prediction.explanation;
    rec.fallback_used = true;
    rec.tie_break_used = true;
  } else {
    const auto outcome = MajorityVoteDetailed(votes, cfg.tie_break_priority);
    rec.voted_label = outcome.label;
    rec.tie_break_used = outcome.tie_break_used;
    rec.explanation = ExplainForLabel(x, outcome.label, lf_lm, cfg.decode);
  }
  Prediction p{x.id, rec.ensemble, rec.voted_label, rec.explanation};
  return {std::move(p), std::move(rec)};
}

}  // namespace detail

inline std::pair<Prediction, VoteRecord> BasicEnsemble(const NLIInstance& x, const std::vector<Voter>& voters,
                                                       LMClient& lf_lm, const EnsembleConfig& cfg = {}) {
  VoteRecord rec;
  rec.instance_id = x.id;
  rec.ensemble = "basic-ens";
  rec.voters = detail::CollectVotes(x, voters, cfg);
  return detail::Finish(x, std::move(rec), lf_lm, cfg);
}

inline std::pair<Prediction, VoteRecord> FilteredEnsemble(const NLIInstance& x, const std::vector<Voter>& voters,
                                                          LMClient& lf_lm, LMClient& ef_lm,
                                                          const EnsembleConfig& cfg = {}) {
  VoteRecord rec;
  rec.instance_id = x.id;
  rec.ensemble = "filtered-ens";
  rec.voters = detail::CollectVotes(x, voters, cfg);
  ParallelFor(rec.voters.size(), cfg.parallelism, [&](size_t i) {
    auto& v = rec.voters[i];
    try {
      v.probe_label = ConsistencyLabel(x.premise, x.hypothesis, v.prediction.explanation, ef_lm, cfg.decode);
      v.eligible = *v.probe_label == v.prediction.label;
    } catch (const Error& e) {
      // A failed probe counts as inconsistent.
      v.eligible = false;
      v.probe_error = e.what();
    }
  });
  return detail::Finish(x, std::move(rec), lf_lm, cfg);
}

inline void WriteVoteRecords(const std::vector<VoteRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kNotFound, "cannot write '" + path + "'");
  for (const auto& r : records) out << VoteRecordToJson(r).dump() << '\n';
}

// Voter backed by precomputed predictions (e.g. a predictions file per model).
inline Voter TableVoter(std::string id, const std::vector<Prediction>& preds) {
  std::map<std::string, Prediction> by_id;
  for (const auto& p : preds) by_id.emplace(p.instance_id, p);
  return {id, [id, by_id = std::move(by_id)](const NLIInstance& x) {
            auto it = by_id.find(x.id);
            if (it == by_id.end()) throw Error(ErrorKind::kCoverage, "no prediction from '" + id + "' for '" + x.id + "'");
            return it->second;
          }};
}

}  // namespace kenli
