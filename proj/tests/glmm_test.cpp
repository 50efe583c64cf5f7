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

#include "kenli/glmm.hpp"

#include <gtest/gtest.h>

#include "glmm_sim.hpp"

namespace kenli {
namespace {

// --- chi-square tail ---

TEST(Chi2SfTest, ClosedForms) {
  for (double x : {0.01, 0.5, 1.0, 3.84, 10.0, 40.0}) {
    EXPECT_NEAR(Chi2Sf(x, 2), std::exp(-x / 2), 1e-14);
    EXPECT_NEAR(Chi2Sf(x, 1), std::erfc(std::sqrt(x / 2)), 1e-14);
    // df = 4: e^{-x/2} (1 + x/2).
    EXPECT_NEAR(Chi2Sf(x, 4), std::exp(-x / 2) * (1 + x / 2), 1e-14);
  }
  for (int k = 1; k < 12; ++k) EXPECT_EQ(Chi2Sf(0.0, k), 1.0);
  EXPECT_THROW(Chi2Sf(1.0, 0), Error);
  EXPECT_THROW(Chi2Sf(-1.0, 3), Error);
}

// Odd-df series: Q(x; k) = erfc(sqrt(x/2)) + sqrt(2x/pi) e^{-x/2} sum_{j<(k-1)/2} x^j / (1*3*...*(2j+1)).
double Chi2SfOdd(double x, int k) {
  double term = 1.0, sum = 0.0;
  for (int j = 0; j < (k - 1) / 2; ++j) {
    if (j > 0) term *= x / (2 * j + 1);
    sum += term;
  }
  return std::erfc(std::sqrt(x / 2)) + std::sqrt(2 * x / M_PI) * std::exp(-x / 2) * sum;
}

TEST(Chi2SfTest, PublishedTriples) {
  EXPECT_NEAR(Chi2Sf(13.00, 7), 0.0723, 0.002);
  EXPECT_NEAR(Chi2Sf(4.54, 1), 0.0331, 0.002);
  EXPECT_NEAR(Chi2Sf(14.20, 7), 0.0479, 0.002);
  EXPECT_LE(Chi2Sf(24.06, 7), 0.0012 + 0.002);
  for (double x : {13.00, 14.20, 24.06}) EXPECT_NEAR(Chi2Sf(x, 7), Chi2SfOdd(x, 7), 1e-10);
}

TEST(Chi2SfTest, StrictlyDecreasing) {
  // Upper tail checked where it is below one half; above that the
  // complementary lower tail carries the ordering without rounding to 1.
  for (int k : {1, 2, 7, 30}) {
    for (double x = 0.05; x < 80; x += 0.05) {
      const double a = Chi2Sf(x, k), b = Chi2Sf(x + 0.05, k);
      if (a < 0.5) {
        EXPECT_LT(b, a) << k << " " << x;
      } else {
        EXPECT_LT(boost::math::gamma_p(0.5 * k, 0.5 * x), boost::math::gamma_p(0.5 * k, 0.5 * (x + 0.05)));
        EXPECT_LE(b, a);
      }
    }
  }
}

// --- Design ---

testing::SimulatedStudy SmallStudy(uint64_t seed = 3) {
  testing::SimConfig c;
  c.pairs = 40;
  c.ratings_per_cell = 1;
  c.batch_size = 8;
  c.workers = 20;
  c.seed = seed;
  return testing::Simulate(c);
}

TEST(DesignTest, TreatmentCoding) {
  auto s = SmallStudy();
  const auto f = BuildDesign(s.records, s.levels, {});
  EXPECT_EQ(f.X.cols(), 1 + 7 + 1);
  ASSERT_EQ(f.factors.size(), 2u);
  EXPECT_EQ(f.factors[0].levels.front(), "ground-truth");
  EXPECT_EQ(f.factors[0].levels.size(), 8u);
  EXPECT_EQ(f.factors[1].levels, (std::vector<std::string>{"low", "high"}));
  EXPECT_EQ(f.coef_names.back(), "commonsense_level:high");
  for (Eigen::Index i = 0; i < f.X.rows(); ++i) {
    EXPECT_EQ(f.X(i, 0), 1.0);
    EXPECT_LE(f.X.row(i).segment(1, 7).sum(), 1.0);
  }
  EXPECT_EQ(f.worker_levels.size(), 20u);
  EXPECT_EQ(f.question_levels.size(), 40u);
}

TEST(DesignTest, NoNeedDroppedForCommonsenseOnly) {
  auto s = SmallStudy();
  size_t marked = 0;
  for (size_t i = 0; i < s.records.size(); i += 10) {
    s.records[i].commonsense = CommonsenseAnswer::kNoNeed;
    ++marked;
  }
  GLMMSpec spec;
  spec.response = RatingResponse::kCommonsense;
  const auto f = BuildDesign(s.records, s.levels, spec);
  EXPECT_EQ(f.dropped_no_need, marked);
  EXPECT_EQ(f.rows(), s.records.size() - marked);
  spec.response = RatingResponse::kGrammatical;
  EXPECT_EQ(BuildDesign(s.records, s.levels, spec).rows(), s.records.size());
}

TEST(DesignTest, Errors) {
  auto s = SmallStudy();
  for (auto& r : s.records) r.commonsense = CommonsenseAnswer::kNoNeed;
  GLMMSpec spec;
  spec.response = RatingResponse::kCommonsense;
  EXPECT_THROW(BuildDesign(s.records, s.levels, spec), Error);
  auto t = SmallStudy();
  for (auto& r : t.records) r.condition = "cont";
  EXPECT_THROW(BuildDesign(t.records, t.levels, {}), Error);
  auto u = SmallStudy();
  u.levels.erase("q3");
  EXPECT_THROW(BuildDesign(u.records, u.levels, {}), Error);
}

TEST(DesignTest, DegenerateResponseIsSeparation) {
  auto s = SmallStudy();
  for (auto& r : s.records) r.explanation_correct = true;
  const auto f = BuildDesign(s.records, s.levels, {});
  ASSERT_FALSE(f.warnings.empty());
  EXPECT_NE(f.warnings[0].find("all yes"), std::string::npos);
  try {
    FitBinomialGLMM({}, f);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kSeparation);
  }
}

TEST(DesignTest, FirthHandlesOneSeparatedLevel) {
  auto s = SmallStudy(8);
  for (auto& r : s.records) {
    if (r.condition == "wt5-11b") r.explanation_correct = false;
  }
  const auto f = BuildDesign(s.records, s.levels, {});
  ASSERT_FALSE(f.warnings.empty());
  GLMMSpec spec;
  spec.firth = true;
  const auto fit = FitBinomialGLMM(spec, f);
  EXPECT_TRUE(fit.beta.allFinite());
  EXPECT_LT(fit.beta(static_cast<Eigen::Index>(fit.Coef("model_type:wt5-11b"))), -1.5);
  EXPECT_GT(fit.beta(static_cast<Eigen::Index>(fit.Coef("model_type:wt5-11b"))), -15.0);
}

// --- Fitting ---

// Independent plain logistic regression: Newton steps solved by
// Gauss-Jordan elimination on std::vector rows.
std::vector<double> PlainLogistic(const Matrix& X, const std::vector<double>& y) {
  const size_t n = static_cast<size_t>(X.rows()), p = static_cast<size_t>(X.cols());
  std::vector<double> b(p, 0.0);
  for (int it = 0; it < 100; ++it) {
    std::vector<std::vector<double>> a(p, std::vector<double>(p + 1, 0.0));
    for (size_t i = 0; i < n; ++i) {
      double eta = 0;
      for (size_t j = 0; j < p; ++j) eta += X(i, j) * b[j];
      const double mu = 1.0 / (1.0 + std::exp(-eta));
      for (size_t j = 0; j < p; ++j) {
        a[j][p] += X(i, j) * (y[i] - mu);
        for (size_t k = 0; k < p; ++k) a[j][k] += mu * (1 - mu) * X(i, j) * X(i, k);
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

TEST(FitTest, ZeroVarianceMatchesPlainLogistic) {
  const auto s = SmallStudy(5);
  GLMMSpec spec;
  spec.zero_variance = true;
  const auto f = BuildDesign(s.records, s.levels, spec);
  const auto fit = FitBinomialGLMM(spec, f);
  const auto oracle = PlainLogistic(f.X, f.y);
  for (size_t j = 0; j < oracle.size(); ++j) EXPECT_NEAR(fit.beta(static_cast<Eigen::Index>(j)), oracle[j], 1e-6);
  EXPECT_EQ(fit.sigma_worker, 0.0);
  EXPECT_EQ(fit.sigma_question, 0.0);
  EXPECT_EQ(fit.n_params(), 9u);
}

TEST(FitTest, InterceptOnlyIsLogitOfMean) {
  const auto s = SmallStudy(6);
  GLMMSpec spec;
  spec.zero_variance = true;
  spec.fixed_factors = {};
  const auto f = BuildDesign(s.records, s.levels, spec);
  const auto fit = FitBinomialGLMM(spec, f);
  const double m = std::accumulate(f.y.begin(), f.y.end(), 0.0) / static_cast<double>(f.y.size());
  EXPECT_NEAR(fit.beta(0), std::log(m / (1 - m)), 1e-10);
  EXPECT_NEAR(fit.loglik, f.y.size() * (m * std::log(m) + (1 - m) * std::log(1 - m)), 1e-8);
}

// Exactly balanced ratings: every pair, every worker and every condition
// has the same yes rate, so the data are under-dispersed for both
// groupings and the likelihood peaks on the boundary.
TEST(FitTest, BalancedDataFitsBoundary) {
  const auto& conds = StudyConditions();
  std::vector<RatingRecord> recs;
  std::map<std::string, KnowledgeLevel> levels;
  for (int g = 0; g < 4; ++g) {
    for (int i = 0; i < 8; ++i) {
      const auto pid = "p" + std::to_string(8 * g + i);
      levels[pid] = i % 2 ? KnowledgeLevel::kHigh : KnowledgeLevel::kLow;
      for (int r = 0; r < 16; ++r) {
        RatingRecord x;
        x.worker_id = "w" + std::to_string(16 * g + r);
        x.pair_id = pid;
        x.condition = conds[static_cast<size_t>((i + r) % 8)];
        x.explanation_correct = (((i + r) % 8 < 4) != (r >= 8)) != (i % 4 == 1);
        x.batch_id = x.worker_id;
        recs.push_back(x);
      }
    }
  }
  const auto f = BuildDesign(recs, levels, {});
  ASSERT_TRUE(f.warnings.empty());
  const auto fit = FitBinomialGLMM({}, f);
  EXPECT_LE(fit.sigma_worker * fit.sigma_worker, 1e-3);
  EXPECT_LE(fit.sigma_question * fit.sigma_question, 1e-3);
  GLMMSpec zero;
  zero.zero_variance = true;
  const auto plain = FitBinomialGLMM(zero, f);
  // The mixed model nests the plain one and collapses onto it here.
  EXPECT_GE(fit.loglik, plain.loglik - 1e-6);
  EXPECT_NEAR(fit.loglik, plain.loglik, 1e-3);
}

// With question intercepts only, the Laplace log-likelihood splits into
// independent one-dimensional clusters. Recompute it cluster by cluster,
// and compare against 40-node Gauss-Hermite quadrature of the exact
// marginal.
TEST(FitTest, LaplaceMatchesPerClusterOracle) {
  const auto s = SmallStudy(21);
  GLMMSpec spec;
  spec.worker_intercept = false;
  const auto f = BuildDesign(s.records, s.levels, spec);
  const auto fit = FitBinomialGLMM(spec, f);
  const double sg = fit.sigma_question;
  ASSERT_GT(sg, 0.0);
  std::map<int, std::vector<size_t>> rows;
  for (size_t i = 0; i < f.rows(); ++i) rows[f.question[i]].push_back(i);
  // Gauss-Hermite nodes by Golub-Welsch.
  const int nodes = 40;
  Matrix J = Matrix::Zero(nodes, nodes);
  for (int i = 1; i < nodes; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(i / 2.0);
  Eigen::SelfAdjointEigenSolver<Matrix> gw(J);
  double laplace = 0, exact = 0;
  for (const auto& [q, idx] : rows) {
    auto h = [&](double u, double* d1, double* d2) {
      double v = -0.5 * u * u, g = -u, c = -1;
      for (size_t i : idx) {
        const double eta = f.X.row(static_cast<Eigen::Index>(i)).dot(fit.beta) + sg * u;
        const double mu = 1 / (1 + std::exp(-eta));
        v += f.y[i] * eta - std::log1p(std::exp(eta));
        g += sg * (f.y[i] - mu);
        c -= sg * sg * mu * (1 - mu);
      }
      if (d1) *d1 = g;
      if (d2) *d2 = c;
      return v;
    };
    double u = 0, g, c;
    for (int it = 0; it < 100; ++it) {
      h(u, &g, &c);
      u -= g / c;
      if (std::abs(g) < 1e-14) break;
    }
    h(u, &g, &c);
    laplace += h(u, nullptr, nullptr) - 0.5 * std::log(-c);
    // Exact: int exp(h(u)) du / sqrt(2 pi), nodes on the standard scale.
    double sum = 0;
    for (int k = 0; k < nodes; ++k) {
      const double x = gw.eigenvalues()(k), w = std::sqrt(M_PI) * std::pow(gw.eigenvectors()(0, k), 2);
      sum += w * std::exp(h(std::sqrt(2.0) * x, nullptr, nullptr) + x * x);
    }
    exact += std::log(sum * std::sqrt(2.0) / std::sqrt(2 * M_PI));
  }
  EXPECT_NEAR(fit.loglik, laplace, 1e-8);
  EXPECT_NEAR(fit.loglik, exact, 1e-3 * std::abs(exact));
}

// One shared fit of the full-size simulation.
struct Recovery {
  testing::SimConfig cfg;
  testing::SimulatedStudy study;
  GLMMFit fit;
  Recovery() : study(testing::Simulate(cfg)) { fit = FitBinomialGLMM({}, BuildDesign(study.records, study.levels, {})); }
  static const Recovery& Get() {
    static const Recovery r;
    return r;
  }
};

TEST(FitTest, RecoversSimulatedTruth) {
  const auto& r = Recovery::Get();
  ASSERT_EQ(r.study.records.size(), 4000u);
  const auto& fit = r.fit;
  EXPECT_TRUE(fit.converged);
  const auto lvl = static_cast<Eigen::Index>(fit.Coef("commonsense_level:high"));
  EXPECT_NEAR(fit.beta(lvl), r.cfg.high_level, 0.15);
  EXPECT_NEAR(fit.sigma_worker, r.cfg.sigma_worker, 0.2 * r.cfg.sigma_worker);
  EXPECT_NEAR(fit.sigma_question, r.cfg.sigma_question, 0.2 * r.cfg.sigma_question);
  EXPECT_NEAR(fit.beta(0), r.cfg.intercept, 0.3);
  // Model effects within three of their own standard errors.
  for (size_t k = 0; k < 7; ++k) {
    const auto j = static_cast<Eigen::Index>(1 + k);
    EXPECT_NEAR(fit.beta(j), r.cfg.model[k], 3 * std::sqrt(fit.vcov(j, j))) << fit.coef_names[static_cast<size_t>(j)];
  }
}

TEST(FitTest, DiagnosticsAndCovariance) {
  const auto& fit = Recovery::Get().fit;
  for (size_t i = 1; i < fit.deviance_trace.size(); ++i) EXPECT_LE(fit.deviance_trace[i], fit.deviance_trace[i - 1]);
  EXPECT_LE(fit.iterations, 200);
  EXPECT_TRUE(fit.vcov.isApprox(fit.vcov.transpose(), 1e-12));
  Eigen::SelfAdjointEigenSolver<Matrix> es(fit.vcov);
  EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
  EXPECT_NEAR(-2 * fit.loglik, fit.deviance_trace.back(), 1e-9);
}

TEST(FitTest, Deterministic) {
  const auto s = SmallStudy(9);
  const auto f = BuildDesign(s.records, s.levels, {});
  const auto a = FitBinomialGLMM({}, f), b = FitBinomialGLMM({}, f);
  EXPECT_EQ(a.beta, b.beta);
  EXPECT_EQ(a.loglik, b.loglik);
}

// --- LRT ---

TEST(LrtTest, DropModelTypeHasSevenDf) {
  const auto& r = Recovery::Get();
  GLMMSpec reduced;
  reduced.fixed_factors = {kLevelFactor};
  const auto red = FitBinomialGLMM(reduced, BuildDesign(r.study.records, r.study.levels, reduced));
  const auto t = LikelihoodRatioTest(r.fit, red);
  EXPECT_EQ(t.df, 7);
  EXPECT_GE(t.chi2, 0.0);
  EXPECT_EQ(t.p, Chi2Sf(t.chi2, t.df));
  // Simulated model effects are large; the test must detect them.
  EXPECT_LT(t.p, 1e-6);
  EXPECT_THROW(LikelihoodRatioTest(r.fit, r.fit), Error);
  EXPECT_THROW(LikelihoodRatioTest(red, r.fit), Error);
}

TEST(LrtTest, EqualLoglikGivesChiZero) {
  GLMMFit full, reduced;
  full.beta = Vector::Zero(3);
  reduced.beta = Vector::Zero(2);
  full.spec.zero_variance = reduced.spec.zero_variance = true;
  reduced.spec.fixed_factors = {kModelFactor};
  full.loglik = reduced.loglik = -100;
  full.n = reduced.n = 50;
  auto t = LikelihoodRatioTest(full, reduced);
  EXPECT_EQ(t.chi2, 0.0);
  EXPECT_EQ(t.p, 1.0);
  full.loglik = -100.0000001;  // optimizer noise is clamped
  EXPECT_EQ(LikelihoodRatioTest(full, reduced).chi2, 0.0);
  reduced.n = 49;
  EXPECT_THROW(LikelihoodRatioTest(full, reduced), Error);
}

// --- Tukey ---

GLMMFit ManualFit(std::vector<std::string> levels, Vector beta, Matrix vcov) {
  GLMMFit f;
  f.factors = {{"f", std::move(levels), 1}};
  f.beta = std::move(beta);
  f.vcov = std::move(vcov);
  f.column_means = Vector::Zero(f.beta.size());
  f.column_means(0) = 1;
  return f;
}

TEST(TukeyTest, SingleContrastIsTwoSidedZ) {
  Vector b(2);
  b << 0.3, 0.5;
  Matrix v(2, 2);
  v << 0.04, -0.01, -0.01, 0.09;
  const auto t = TukeyPosthoc(ManualFit({"r", "x"}, b, v), "f");
  ASSERT_EQ(t.contrasts.size(), 1u);
  const auto& c = t.contrasts[0];
  EXPECT_NEAR(c.estimate, -0.5, 1e-15);
  EXPECT_NEAR(c.se, 0.3, 1e-15);
  EXPECT_NEAR(c.p_adjusted, std::erfc(0.5 / 0.3 / std::sqrt(2.0)), 1e-15);
  EXPECT_EQ(c.p_adjusted, c.p_unadjusted);
}

// P(max_k |a_k . e| >= t) for e ~ N(0, I_2): integrate the exact inner
// interval probability over e1 on a fine grid.
double MaxAbsTail2d(const std::vector<std::array<double, 2>>& a, double t) {
  const double lim = 9.0, h = 1e-4;
  double inside = 0;
  for (double e1 = -lim; e1 <= lim; e1 += h) {
    double lo = -1e300, hi = 1e300;
    bool empty = false;
    for (const auto& r : a) {
      if (std::abs(r[1]) < 1e-15) {
        if (std::abs(r[0] * e1) >= t) empty = true;
        continue;
      }
      double x = (-t - r[0] * e1) / r[1], y = (t - r[0] * e1) / r[1];
      if (x > y) std::swap(x, y);
      lo = std::max(lo, x);
      hi = std::min(hi, y);
    }
    if (empty || hi <= lo) continue;
    const double phi = std::exp(-0.5 * e1 * e1) / std::sqrt(2 * M_PI);
    inside += h * phi * 0.5 * (std::erfc(-hi / std::sqrt(2.0)) - std::erfc(-lo / std::sqrt(2.0)));
  }
  return 1.0 - inside;
}

TEST(TukeyTest, ThreeLevelsAgainstQuadrature) {
  Vector b(3);
  b << 0.1, 0.45, -0.2;
  Matrix v(3, 3);
  v << 0.05, 0.01, 0.012, 0.01, 0.03, 0.008, 0.012, 0.008, 0.04;
  const auto fit = ManualFit({"g", "m1", "m2"}, b, v);
  const auto t = TukeyPosthoc(fit, "f");
  ASSERT_EQ(t.contrasts.size(), 3u);
  EXPECT_LE(t.precision, 1e-4);
  // Oracle: directions in whitened coordinates of the 2-d level block.
  const Matrix V = v.block(1, 1, 2, 2);
  const Matrix L = Eigen::LLT<Matrix>(V).matrixL();
  std::vector<std::array<double, 2>> dirs;
  std::vector<Vector> cs;
  for (auto [i, j] : {std::pair{0, 1}, std::pair{0, 2}, std::pair{1, 2}}) {
    Vector c = Vector::Zero(2);
    if (i > 0) c(i - 1) += 1;
    c(j - 1) -= 1;
    const Vector d = L.transpose() * c / std::sqrt(c.dot(V * c));
    dirs.push_back({d(0), d(1)});
    cs.push_back(c);
  }
  for (size_t k = 0; k < 3; ++k) {
    const auto& c = t.contrasts[k];
    const double want = MaxAbsTail2d(dirs, std::abs(c.z));
    EXPECT_NEAR(c.p_adjusted, want, 5e-4) << c.a << " vs " << c.b;
    EXPECT_GE(c.p_adjusted, c.p_unadjusted);
    EXPECT_LE(c.p_adjusted, std::min(1.0, 3 * c.p_unadjusted) + 5e-4);
    EXPECT_NEAR(c.estimate, cs[k].dot(b.segment(1, 2)), 1e-15);
  }
}

TEST(TukeyTest, AntisymmetryDeterminismSingularity) {
  const auto& fit = Recovery::Get().fit;
  const auto t = TukeyPosthoc(fit, kModelFactor);
  EXPECT_EQ(t.contrasts.size(), 28u);
  EXPECT_LE(t.precision, 1e-4);
  const auto ab = t.Find("filtered-ens", "vanilla"), ba = t.Find("vanilla", "filtered-ens");
  EXPECT_EQ(ab.estimate, -ba.estimate);
  EXPECT_EQ(ab.p_adjusted, ba.p_adjusted);
  for (const auto& c : t.contrasts) {
    EXPECT_GE(c.p_adjusted, c.p_unadjusted);
    EXPECT_LE(c.p_adjusted, 1.0);
  }
  const auto again = TukeyPosthoc(fit, kModelFactor);
  for (size_t k = 0; k < t.contrasts.size(); ++k) EXPECT_EQ(t.contrasts[k].p_adjusted, again.contrasts[k].p_adjusted);

  Vector b = Vector::Zero(3);
  Matrix v = Matrix::Zero(3, 3);
  v(0, 0) = 1;
  v(1, 1) = v(2, 2) = v(1, 2) = v(2, 1) = 0.04;
  EXPECT_THROW(TukeyPosthoc(ManualFit({"a", "b", "c"}, b, v), "f"), Error);
  EXPECT_THROW(TukeyPosthoc(fit, "nope"), Error);
}

// --- Effect display ---

TEST(EffectTest, ZeroBetaAndInverseLogit) {
  auto fit = ManualFit({"a", "b", "c"}, Vector::Zero(3), Matrix::Identity(3, 3) * 0.01);
  for (const auto& l : MakeEffectDisplay(fit, "f").levels) EXPECT_DOUBLE_EQ(l.probability, 0.5);
  fit.beta << 0.25, 0.75, -3.0;
  const auto e = MakeEffectDisplay(fit, "f");
  EXPECT_NEAR(e.levels[1].probability, 1 / (1 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(e.levels[1].probability, 0.7311, 1e-4);
  for (const auto& l : e.levels) {
    EXPECT_LT(l.lower, l.probability);
    EXPECT_GT(l.upper, l.probability);
    EXPECT_GT(l.lower, 0.0);
    EXPECT_LT(l.upper, 1.0);
  }
  // Wald limits on the link scale: level a has se = 0.1.
  EXPECT_NEAR(e.levels[0].upper, InvLogit(0.25 + 1.959963984540054 * 0.1), 1e-12);
}

TEST(EffectTest, OtherFactorsAtObservedMeans) {
  const auto& fit = Recovery::Get().fit;
  const auto e = MakeEffectDisplay(fit, kModelFactor);
  ASSERT_EQ(e.levels.size(), 8u);
  const double lvl_mean = fit.column_means(static_cast<Eigen::Index>(fit.Coef("commonsense_level:high")));
  EXPECT_NEAR(lvl_mean, 0.5, 1e-12);
  EXPECT_NEAR(e.levels[0].eta, fit.beta(0) + lvl_mean * fit.beta(8), 1e-12);
}

TEST(AnalysisTest, ReportShape) {
  const auto s = SmallStudy(12);
  TukeyOptions fast;
  fast.max_points = 4096;
  const auto a = AnalyzeResponse(s.records, s.levels, {}, fast);
  const auto j = AnalysisToJson(a);
  EXPECT_EQ(j["lrt"]["model_type"]["df"], 7);
  EXPECT_EQ(j["lrt"]["commonsense_level"]["df"], 1);
  EXPECT_EQ(j["tukey"]["contrasts"].size(), 28u);
  EXPECT_EQ(j["effects"][0]["levels"].size(), 8u);
  EXPECT_EQ(j["coefficients"].size(), 9u);
}

}  // namespace
}  // namespace kenli
