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

// Acceptance suite. One line per criterion:
//
//   PASS|FAIL|NOT RUN  <criterion>  <detail>  (<seconds>s)
//
// Exit status is nonzero iff some criterion failed. The released-ratings
// replication runs only when KENLI_RELEASED_RATINGS names the ratings CSV;
// KENLI_RELEASED_COLUMNS (JSON column mapping), KENLI_RELEASED_LEVELS (pair
// levels) and KENLI_RELEASED_MIN_SECONDS (batch floor, default 300) refine it.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kenli/common.hpp"
#include "kenli/alltext_lm.hpp"
#include "kenli/datamodel.hpp"
#include "kenli/embeddings.hpp"
#include "kenli/ensemble.hpp"
#include "kenli/glmm.hpp"
#include "kenli/knowledge_attention.hpp"
#include "kenli/metrics.hpp"
#include "kenli/pipeline.hpp"
#include "kenli/predict_explain.hpp"
#include "kenli/stress_eval.hpp"
#include "kenli/study_service.hpp"
#include "../glmm_sim.hpp"
#include "../toy_fixture.hpp"

namespace kenli::acceptance {
namespace {

struct Outcome {
  enum Status { kPass, kFail, kNotRun } status;
  std::string detail;
};

Outcome Verdict(bool ok, std::string detail) { return {ok ? Outcome::kPass : Outcome::kFail, std::move(detail)}; }

std::string F(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

double Seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- Constraint reduction -------------------------------------------------------

Outcome ConstraintReduction() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> len(1, 9), dim(1, 6);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  size_t cases = 0;

  // Direct: random token vectors and arbitrary scores.
  for (int t = 0; t < 1000; ++t) {
    const int n = len(rng), m = len(rng), d = dim(rng);
    const auto p = TokenSequence::FromRows(Matrix::NullaryExpr(n, d, [&] { return g(rng); }));
    const auto h = TokenSequence::FromRows(Matrix::NullaryExpr(m, d, [&] { return g(rng); }));
    const Matrix k = Matrix::NullaryExpr(n, m, [&] { return u(rng); });
    const Matrix raw = RawAttention(p, h);
    const auto base = AlignAndCompose(p, h, Constrain(raw, k, {AttentionRule::kNone, 0.0, true})).features;
    for (auto rule : {AttentionRule::kR1, AttentionRule::kR2}) {
      for (bool both : {true, false}) {
        const auto f = AlignAndCompose(p, h, Constrain(raw, k, {rule, 0.0, both})).features;
        if (f.size() != base.size()) return Verdict(false, "feature width differs");
        worst = std::max(worst, (f - base).cwiseAbs().maxCoeff());
        ++cases;
      }
    }
  }

  // Full feature pipeline: sentences over a random word table, scores from it.
  const std::vector<std::string> words = {"dog", "cat", "man", "woman", "runs", "sleeps", "outside", "inside",
                                          "a", "the", "red", "big", "park", "car", "music", "eats"};
  auto table = std::make_shared<WordVectorTable>(5);
  for (const auto& w : words) table->Insert(w, Vector::NullaryExpr(5, [&] { return g(rng); }));
  auto sentence = [&] {
    std::string s;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) s += words[std::uniform_int_distribution<size_t>(0, words.size() - 1)(rng)] + " ";
    // Out-of-table words take the hashed fallback vector.
    if (u(rng) < 0.3) s += "zebra";
    return s;
  };
  for (auto enc : {EncoderKind::kPassthrough, EncoderKind::kRecurrent}) {
    FeatureConfig plain;
    plain.encoder = enc;
    FeatureConfig r1 = plain, r2 = plain;
    r1.attention = {AttentionRule::kR1, 0.0, true};
    r2.attention = {AttentionRule::kR2, 0.0, true};
    const FeatureAssembler fa(table, plain), fb(table, r1), fc(table, r2);
    for (int t = 0; t < 500; ++t) {
      const NLIInstance x{"x", sentence(), sentence(), std::nullopt, {}, {}};
      const auto base = fa.Features(x);
      worst = std::max(worst, (fb.Features(x) - base).cwiseAbs().maxCoeff());
      worst = std::max(worst, (fc.Features(x) - base).cwiseAbs().maxCoeff());
      cases += 2;
    }
  }
  const double secs = Seconds(t0);
  return Verdict(worst <= 1e-12 && cases >= 1000 && secs < 60.0,
                 std::to_string(cases) + " comparisons, max |diff| " + F(worst) + ", " + F(secs, 3) + "s < 60s");
}

// --- R1 monotonicity ------------------------------------------------------------

Outcome R1Monotonicity() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> len(1, 10);
  std::normal_distribution<double> g(0.0, 2.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  size_t violations = 0, strict = 0;
  for (int t = 0; t < 1000; ++t) {
    const int n = len(rng), m = len(rng);
    const Matrix a = Matrix::NullaryExpr(n, m, [&] { return g(rng); });
    const Matrix k = Matrix::NullaryExpr(n, m, [&] { return u(rng); });
    const double lambda = 0.01 + 5.0 * u(rng);
    const int i = std::uniform_int_distribution<int>(0, n - 1)(rng);
    const int j = std::uniform_int_distribution<int>(0, m - 1)(rng);
    Matrix k2 = k;
    k2(i, j) += 1e-3 + u(rng);
    const AttentionConfig cfg{AttentionRule::kR1, lambda, true};
    const auto before = Constrain(a, k, cfg), after = Constrain(a, k2, cfg);
    const double row0 = RowSoftmax(before.constrained_logits)(i, j);
    const double row1 = RowSoftmax(after.constrained_logits)(i, j);
    const double col0 = ColSoftmax(before.constrained_reverse)(i, j);
    const double col1 = ColSoftmax(after.constrained_reverse)(i, j);
    if (row1 < row0 || col1 < col0) ++violations;
    strict += row1 > row0;
  }
  return Verdict(violations == 0, "1000 matrices, " + std::to_string(violations) + " decreases (" +
                                      std::to_string(strict) + " strict increases)");
}

// --- Ensemble oracle --------------------------------------------------------------

Label OracleVote(const std::vector<Vote>& votes, const std::vector<std::string>& priority) {
  std::map<Label, int> tally;
  for (const auto& v : votes) tally[v.label]++;
  int top = 0;
  for (const auto& [l, c] : tally) top = std::max(top, c);
  for (const auto& id : priority) {
    for (const auto& v : votes) {
      if (v.voter == id && tally[v.label] == top) return v.label;
    }
  }
  throw Error(ErrorKind::kDomain, "oracle: no voter on the priority list");
}

Outcome EnsembleOracle() {
  const auto& ids = DefaultVoterIds();
  const EnsembleConfig cfg;
  size_t vote_mismatch = 0;
  for (int code = 0; code < 243; ++code) {
    std::vector<Vote> votes;
    int c = code;
    for (size_t i = 0; i < 5; ++i, c /= 3) votes.push_back({ids[i], LabelFromIndex(c % 3)});
    vote_mismatch += MajorityVote(votes, cfg.tie_break_priority) != OracleVote(votes, cfg.tie_break_priority);
  }

  const NLIInstance x{"i", "A man sleeps.", "A man runs.", Label::kContradiction, {}, {}};
  MockLMClient lf([](const std::string& prompt) {
    const auto lab = prompt.rfind("[LAB]");
    return " because " + std::string(Trim(prompt.substr(lab + 5, prompt.rfind("[EXP]") - lab - 5))) + " EOS";
  });
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<int> lab(0, 2);
  std::bernoulli_distribution fails(0.3);
  size_t all_pass = 0, equal_when_all_pass = 0, filtered_oracle_mismatch = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::array<Label, 5> labels;
    for (auto& l : labels) l = LabelFromIndex(lab(rng));
    std::set<std::string> bad;
    for (const auto& id : ids) {
      if (fails(rng)) bad.insert(id);
    }
    std::vector<Voter> voters;
    for (size_t i = 0; i < 5; ++i) {
      const auto id = ids[i];
      const Label l = labels[i];
      voters.push_back({id, [id, l](const NLIInstance& y) { return Prediction{y.id, id, l, id + " says"}; }});
    }
    MockLMClient ef([&](const std::string& prompt) -> std::string {
      for (size_t i = 0; i < 5; ++i) {
        if (prompt.find("[EXP] " + ids[i] + " says [LAB]") == std::string::npos) continue;
        Label l = labels[i];
        if (bad.count(ids[i])) l = LabelFromIndex((LabelIndex(l) + 1) % 3);
        return " " + std::string(LabelName(l)) + " EOS";
      }
      return "???";
    });
    const auto [fp, frec] = FilteredEnsemble(x, voters, lf, ef, cfg);
    const auto [bp, brec] = BasicEnsemble(x, voters, lf, cfg);
    if (bad.empty()) {
      ++all_pass;
      equal_when_all_pass += fp.label == bp.label && fp.explanation == bp.explanation;
    } else {
      std::vector<Vote> kept;
      for (size_t i = 0; i < 5; ++i) {
        if (!bad.count(ids[i])) kept.push_back({ids[i], labels[i]});
      }
      const Label want = kept.empty() ? labels[4] : OracleVote(kept, cfg.tie_break_priority);
      filtered_oracle_mismatch += fp.label != want;
    }
  }
  return Verdict(vote_mismatch == 0 && all_pass > 0 && equal_when_all_pass == all_pass && filtered_oracle_mismatch == 0,
                 "243/243 assignments " + std::string(vote_mismatch ? "MISMATCH" : "match") + "; 500 probe patterns: " +
                     std::to_string(equal_when_all_pass) + "/" + std::to_string(all_pass) +
                     " all-consistent cases equal basic, " + std::to_string(filtered_oracle_mismatch) +
                     " filtered-vote mismatches");
}

// --- BLEU ---------------------------------------------------------------------------

Outcome BleuCorrectness() {
  const std::vector<Tokens> corpus = {Tokenize("a man is playing a guitar on stage"), Tokenize("two dogs run"),
                                      Tokenize("the sky is blue today and tomorrow")};
  std::vector<std::vector<Tokens>> refs;
  for (const auto& c : corpus) refs.push_back({c});
  const double identity = CorpusBleu(corpus, refs).score;

  const auto hand = CorpusBleu({Tokenize("the the the the the the the")}, {{Tokenize("the cat is on the mat")}});
  const bool p1 = hand.matches[0] == 2 && hand.totals[0] == 7 && hand.precisions[0] == 2.0 / 7.0;

  std::mt19937_64 rng(404);
  std::uniform_int_distribution<int> len(1, 50);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int c = len(rng), r = len(rng);
    Tokens cand, ref;
    for (int i = 0; i < c; ++i) cand.push_back("c" + std::to_string(i));
    for (int i = 0; i < r; ++i) ref.push_back("r" + std::to_string(i));
    const double direct = c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
    worst = std::max(worst, std::abs(CorpusBleu({cand}, {{ref}}).brevity_penalty - direct));
  }
  return Verdict(identity == 1.0 && p1 && worst <= 1e-12,
                 "identity " + F(identity, 17) + ", p1 " + std::to_string(hand.matches[0]) + "/" +
                     std::to_string(hand.totals[0]) + ", BP max |diff| " + F(worst) + " over 100 pairs");
}

// --- Stress aggregation -------------------------------------------------------------

Dataset StressSubsetFixture(StressCategory c, StressSubset s, size_t n, size_t correct, StressPredictions& preds) {
  std::vector<NLIInstance> xs;
  const auto name = StressDatasetName(c, s);
  for (size_t i = 0; i < n; ++i) {
    xs.push_back({std::to_string(i), "p", "h", Label::kNeutral, {}, {}});
    preds.Add(name, {std::to_string(i), "m", i < correct ? Label::kNeutral : Label::kEntailment, ""});
  }
  return Dataset(name, Split::kStress, std::move(xs));
}

Outcome StressAggregation() {
  StressPredictions fixture;
  const std::vector<Dataset> neg = {
      StressSubsetFixture(StressCategory::kNegation, StressSubset::kMatched, 2, 1, fixture),
      StressSubsetFixture(StressCategory::kNegation, StressSubset::kMismatched, 4, 3, fixture)};
  const auto cat = EvaluateCategory(StressCategory::kNegation, fixture, neg);
  const bool pooled = cat.pooled.correct == 4 && cat.pooled.total == 6;

  std::mt19937_64 rng(505);
  std::uniform_int_distribution<size_t> size(1, 40);
  size_t bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    StressPredictions preds;
    StressSuite suite;
    std::map<StressCategory, std::pair<size_t, size_t>> want;
    for (auto c : kAllStressCategories) {
      for (auto s : {StressSubset::kMatched, StressSubset::kMismatched}) {
        const size_t n = size(rng), k = std::uniform_int_distribution<size_t>(0, n)(rng);
        suite[c].push_back(StressSubsetFixture(c, s, n, k, preds));
        want[c].first += k;
        want[c].second += n;
      }
    }
    const auto r = MakeStressReport("m", preds, suite);
    size_t sc = 0, st = 0;
    bad += r.categories.size() != 6;
    for (const auto& x : r.categories) {
      bad += x.pooled.correct != want[x.category].first || x.pooled.total != want[x.category].second;
      sc += want[x.category].first;
      st += want[x.category].second;
    }
    bad += r.total.correct != sc || r.total.total != st;
  }
  return Verdict(pooled && bad == 0, "1/2 + 3/4 -> " + std::to_string(cat.pooled.correct) + "/" +
                                         std::to_string(cat.pooled.total) + "; 100 six-category suites, " +
                                         std::to_string(bad) + " oracle mismatches");
}

// --- LF/EF round trip --------------------------------------------------------------------

std::string RandomText(std::mt19937_64& rng) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyzEOSLABXP []<>.,'!?-  ";
  std::uniform_int_distribution<int> len(0, 40);
  std::uniform_int_distribution<size_t> pick(0, alphabet.size() - 1);
  std::string s;
  for (int i = len(rng); i > 0; --i) s.push_back(alphabet[pick(rng)]);
  return std::string(Trim(s));
}

bool MarkerFree(const std::string& s) {
  return s.find("[LAB]") == std::string::npos && s.find("[EXP]") == std::string::npos &&
         s.find("EOS") == std::string::npos;
}

template <typename F>
bool ThrowsKind(F&& f, ErrorKind kind) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind() == kind;
  }
  return false;
}

Outcome LfEfRoundTrip() {
  std::mt19937_64 rng(606);
  std::uniform_int_distribution<int> lab(0, 2);
  int tested = 0, failures = 0;
  while (tested < 10000) {
    const auto p = RandomText(rng), h = RandomText(rng), e = RandomText(rng);
    if (!MarkerFree(p) || !MarkerFree(h) || !MarkerFree(e)) continue;
    const Label l = LabelFromIndex(lab(rng));
    const ParsedOutput want{l, e};
    failures += !(ParseLf(SerializeLf(p, h, l, e)) == want);
    failures += !(ParseEf(SerializeEf(p, h, e, l)) == want);
    ++tested;
  }
  int malformed_ok = 0;
  const int malformed_total = 7;
  malformed_ok += ThrowsKind([] { ParseLf("premise hypothesis no markers"); }, ErrorKind::kFormat);
  malformed_ok += ThrowsKind([] { ParseLf("[LAB] entailment and nothing else EOS"); }, ErrorKind::kFormat);
  malformed_ok += ThrowsKind([] { ParseLf("[LAB] maybe [EXP] because EOS"); }, ErrorKind::kLabel);
  malformed_ok += ThrowsKind([] { ParseEf("[EXP] because EOS"); }, ErrorKind::kFormat);
  malformed_ok += ThrowsKind([] { ParseEf("[EXP] because [LAB] perhaps EOS"); }, ErrorKind::kLabel);
  malformed_ok += ThrowsKind([] { ParseEf("no explanation marker [LAB] neutral EOS"); }, ErrorKind::kFormat);
  malformed_ok += [] {
    try {
      SerializeLf("p", "h", Label::kNeutral, "sneaky [EXP] marker");
    } catch (const Error&) {
      return true;
    }
    return false;
  }();
  return Verdict(failures == 0 && malformed_ok == malformed_total,
                 std::to_string(tested) + " pairs x {LF, EF}, " + std::to_string(failures) + " failures; " +
                     std::to_string(malformed_ok) + "/" + std::to_string(malformed_total) + " malformed cases rejected");
}

// --- GLMM recovery ------------------------------------------------------------------

// Plain logistic regression by Newton steps and Gauss-Jordan elimination,
// independent of the library's solvers.
std::vector<double> PlainLogistic(const Matrix& X, const std::vector<double>& y) {
  const size_t n = static_cast<size_t>(X.rows()), p = static_cast<size_t>(X.cols());
  std::vector<double> b(p, 0.0);
  for (int it = 0; it < 100; ++it) {
    std::vector<std::vector<double>> a(p, std::vector<double>(p + 1, 0.0));
    for (size_t i = 0; i < n; ++i) {
      double eta = 0;
      for (size_t j = 0; j < p; ++j) eta += X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * b[j];
      const double mu = 1.0 / (1.0 + std::exp(-eta));
      for (size_t j = 0; j < p; ++j) {
        const double xj = X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        a[j][p] += xj * (y[i] - mu);
        for (size_t k = 0; k < p; ++k) a[j][k] += mu * (1 - mu) * xj * X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      }
    }
    for (size_t c = 0; c < p; ++c) {
      size_t piv = c;
      for (size_t r = c + 1; r < p; ++r) {
        if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
      }
      std::swap(a[c], a[piv]);
      for (size_t r = 0; r < p; ++r) {
        if (r == c) continue;
        const double m = a[r][c] / a[c][c];
        for (size_t k = c; k <= p; ++k) a[r][k] -= m * a[c][k];
      }
    }
    double biggest = 0;
    for (size_t j = 0; j < p; ++j) {
      const double d = a[j][p] / a[j][j];
      b[j] += d;
      biggest = std::max(biggest, std::abs(d));
    }
    if (biggest < 1e-13) break;
  }
  return b;
}

Outcome GlmmRecovery() {
  const auto t0 = std::chrono::steady_clock::now();
  const testing::SimConfig cfg;
  const auto study = testing::Simulate(cfg);
  const auto frame = BuildDesign(study.records, study.levels, {});
  const auto fit = FitBinomialGLMM({}, frame);

  // Truth in coefficient order: intercept, seven model types, level.
  std::vector<double> truth = {cfg.intercept};
  truth.insert(truth.end(), cfg.model.begin(), cfg.model.end());
  truth.push_back(cfg.high_level);
  double worst_beta = 0.0;
  std::string worst_name;
  std::ostringstream misses;
  for (size_t j = 0; j < truth.size(); ++j) {
    const double err = std::abs(fit.beta(static_cast<Eigen::Index>(j)) - truth[j]);
    if (err > worst_beta) {
      worst_beta = err;
      worst_name = fit.coef_names[j];
    }
    if (err > 0.15) {
      const double se = std::sqrt(fit.vcov(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)));
      misses << ' ' << fit.coef_names[j] << "=" << F(fit.beta(static_cast<Eigen::Index>(j)), 3) << " (truth "
             << F(truth[j], 3) << ", " << F(err / se, 2) << " SE)";
    }
  }
  const double sw = std::abs(fit.sigma_worker - cfg.sigma_worker) / cfg.sigma_worker;
  const double sq = std::abs(fit.sigma_question - cfg.sigma_question) / cfg.sigma_question;

  GLMMSpec zero;
  zero.zero_variance = true;
  const auto zframe = BuildDesign(study.records, study.levels, zero);
  const auto zfit = FitBinomialGLMM(zero, zframe);
  const auto oracle = PlainLogistic(zframe.X, zframe.y);
  double worst_zero = 0.0;
  for (size_t j = 0; j < oracle.size(); ++j) {
    worst_zero = std::max(worst_zero, std::abs(zfit.beta(static_cast<Eigen::Index>(j)) - oracle[j]));
  }
  const double secs = Seconds(t0);

  // Diagnostic only: mean estimate over further seeds separates estimator
  // bias from single-sample noise. It does not enter the verdict.
  constexpr int kReplicates = 20;
  Vector mean = Vector::Zero(static_cast<Eigen::Index>(truth.size()));
  for (int r = 1; r <= kReplicates; ++r) {
    testing::SimConfig rc;
    rc.seed = cfg.seed + static_cast<uint64_t>(r);
    const auto rs = testing::Simulate(rc);
    mean += FitBinomialGLMM({}, BuildDesign(rs.records, rs.levels, {})).beta / kReplicates;
  }
  double worst_bias = 0.0;
  for (size_t j = 0; j < truth.size(); ++j) {
    worst_bias = std::max(worst_bias, std::abs(mean(static_cast<Eigen::Index>(j)) - truth[j]));
  }

  const bool ok = study.records.size() == 4000 && fit.beta.size() == 9 && worst_beta <= 0.15 && sw <= 0.2 &&
                  sq <= 0.2 && worst_zero <= 1e-6 && secs < 300.0;
  std::string detail = std::to_string(study.records.size()) + " rows; max |beta - truth| " + F(worst_beta, 3) + " (" +
                       worst_name + "); sigma_worker " + F(fit.sigma_worker, 3) + " (" + F(100 * sw, 3) +
                       "% off), sigma_question " + F(fit.sigma_question, 3) + " (" + F(100 * sq, 3) +
                       "% off); variance-0 vs plain logistic max |diff| " + F(worst_zero, 3) + "; " + F(secs, 3) + "s";
  if (!misses.str().empty()) detail += "; outside 0.15:" + misses.str();
  detail += "; diagnostic: max |mean beta - truth| over " + std::to_string(kReplicates) + " other seeds " +
            F(worst_bias, 3);
  return Verdict(ok, detail);
}

// --- Chi-square parity --------------------------------------------------------------------

Outcome ChiSquareParity() {
  struct Triple {
    double chi2;
    int df;
    double p;
    bool upper_bound;
  };
  const std::vector<Triple> published = {
      {13.00, 7, 0.0723, false}, {4.54, 1, 0.0331, false}, {14.20, 7, 0.0479, false}, {24.06, 7, 0.0012, true}};
  std::ostringstream d;
  bool ok = true;
  for (const auto& t : published) {
    const double p = Chi2Sf(t.chi2, t.df);
    const bool hit = t.upper_bound ? p <= t.p + 0.002 : std::abs(p - t.p) <= 0.002;
    ok &= hit;
    d << "chi2(" << t.df << ")=" << F(t.chi2) << " -> " << F(p, 4) << (t.upper_bound ? " (<= " : " (vs ") << t.p
      << ") ";
  }
  return Verdict(ok, d.str());
}

// --- Study plan arithmetic ------------------------------------------------------------

Outcome StudyPlanArithmetic() {
  std::vector<std::string> pairs;
  for (int i = 0; i < 100; ++i) pairs.push_back("pair" + std::to_string(i));
  const auto plan = BuildPlan(pairs, StudyConditions(), 5, 10, 2024);
  std::map<std::string, size_t> per_condition;
  std::map<std::pair<std::string, std::string>, size_t> per_cell;
  size_t total = 0;
  for (const auto& b : plan.batches) {
    for (const auto& it : b.items) {
      ++per_condition[it.condition];
      ++per_cell[{it.pair_id, it.condition}];
      ++total;
    }
  }
  bool ok = total == 4000 && plan.total_ratings() == 4000 && per_condition.size() == 8 && per_cell.size() == 800;
  for (const auto& [c, n] : per_condition) ok &= n == 500;
  for (const auto& [k, n] : per_cell) ok &= n == 5;
  return Verdict(ok, std::to_string(total) + " ratings, " + std::to_string(per_condition.size()) +
                         " conditions x 500, " + std::to_string(per_cell.size()) + " cells x 5, " +
                         std::to_string(plan.batches.size()) + " batches");
}

// --- Toy training ---------------------------------------------------------------------------

Outcome ToyTraining() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = testing::ToyDataset();
  const auto vocab = Vocabulary::Build(ExplanationCorpus(ds));
  const FeatureAssembler fa(testing::ToyWordVectors(), FeatureConfig{});
  const auto xs = BuildExamples(ds, fa, vocab, 30);
  TrainingConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 4;
  cfg.shape = {0, 0, 16, 8, 4};
  auto init = PredictExplainModel::Init(static_cast<int>(xs.front().features.size()), vocab, cfg.shape, 30, 1);
  const auto res = TrainModel(xs, std::move(init), cfg, 1);
  bool finite = res.loss_trace.size() == 200;
  for (double l : res.loss_trace) finite &= std::isfinite(l) && l >= 0.0;
  const double acc = TrainAccuracy(res.model, xs);
  const double secs = Seconds(t0);
  return Verdict(xs.size() == 10 && finite && acc == 1.0 && secs < 120.0,
                 std::to_string(xs.size()) + " instances, accuracy " + F(acc) + " after 200 epochs, loss " +
                     F(res.loss_trace.front()) + " -> " + F(res.loss_trace.back()) +
                     (finite ? ", finite and non-negative" : ", NON-FINITE OR NEGATIVE") + ", " + F(secs, 3) + "s");
}

// --- Released ratings --------------------------------------------------------------------

Outcome ReleasedReplication() {
  const char* path = std::getenv("KENLI_RELEASED_RATINGS");
  if (!path || !*path) return {Outcome::kNotRun, "set KENLI_RELEASED_RATINGS to the released ratings CSV"};
  RatingColumns cols;
  if (const char* c = std::getenv("KENLI_RELEASED_COLUMNS"); c && *c) {
    std::ifstream in(c);
    cols = RatingColumns::FromJson(nlohmann::json::parse(in));
  }
  double min_seconds = 300.0;
  if (const char* s = std::getenv("KENLI_RELEASED_MIN_SECONDS"); s && *s) min_seconds = std::stod(s);
  std::vector<RatingRecord> raw;
  std::map<std::string, KnowledgeLevel> levels;
  for (auto& r : ImportRatingsCsv(path, cols)) {
    if (r.level) levels[r.record.pair_id] = *r.level;
    raw.push_back(std::move(r.record));
  }
  if (const char* lp = std::getenv("KENLI_RELEASED_LEVELS"); lp && *lp) {
    std::ifstream in(lp);
    for (const auto& e : nlohmann::json::parse(in)) {
      levels[e.at("pair_id").get<std::string>()] = ParseKnowledgeLevel(e.at("level").get<std::string>());
    }
  }
  const auto records = FilterResponses(raw, min_seconds).kept;
  const std::vector<std::pair<RatingResponse, double>> published = {{RatingResponse::kLabelCorrect, 13.00},
                                                                     {RatingResponse::kExplanationCorrect, 24.06},
                                                                     {RatingResponse::kGrammatical, 14.20},
                                                                     {RatingResponse::kCommonsense, 20.63}};
  bool ok = true;
  std::ostringstream d;
  std::set<std::pair<std::string, std::string>> significant;
  for (const auto& [resp, chi2] : published) {
    GLMMSpec spec;
    spec.response = resp;
    const auto a = AnalyzeResponse(records, levels, spec);
    ok &= std::abs(a.model_lrt.chi2 - chi2) <= 0.5;
    d << ResponseName(resp) << " chi2(7) " << F(a.model_lrt.chi2) << " vs " << chi2 << "; ";
    if (resp == RatingResponse::kExplanationCorrect) {
      for (const auto& c : a.tukey.contrasts) {
        if (c.p_adjusted < 0.05) significant.insert(std::minmax(c.a, c.b));
      }
    }
  }
  const std::set<std::pair<std::string, std::string>> want = {std::minmax(std::string("filtered-ens"), std::string("vanilla")),
                                                              std::minmax(std::string("comet+cont"), std::string("filtered-ens"))};
  ok &= significant == want;
  d << "explanation Tukey significant pairs:";
  for (const auto& [a, b] : significant) d << ' ' << a << '/' << b;
  return Verdict(ok, d.str());
}

}  // namespace
}  // namespace kenli::acceptance

int main() {
  using namespace kenli::acceptance;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"constraint-reduction", ConstraintReduction},
      {"r1-monotonicity", R1Monotonicity},
      {"ensemble-oracle", EnsembleOracle},
      {"bleu-correctness", BleuCorrectness},
      {"stress-aggregation", StressAggregation},
      {"lf-ef-round-trip", LfEfRoundTrip},
      {"glmm-recovery", GlmmRecovery},
      {"chi-square-parity", ChiSquareParity},
      {"study-plan-arithmetic", StudyPlanArithmetic},
      {"toy-training-smoke", ToyTraining},
      {"released-ratings-replication", ReleasedReplication},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {Outcome::kFail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Outcome::kPass ? "PASS" : o.status == Outcome::kFail ? "FAIL" : "NOT RUN";
    failed += o.status == Outcome::kFail;
    std::printf("%-8s %-30s %s (%.2fs)\n", tag, name.c_str(), o.detail.c_str(), Seconds(t0));
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
