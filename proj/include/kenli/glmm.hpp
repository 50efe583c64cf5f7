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

// Binomial GLMM with crossed worker and question intercepts.
//
// The marginal likelihood uses the Laplace approximation. For fixed
// (beta, theta) the spherical random effects u are found by penalized
// Newton steps; the outer problem over (beta, theta) is solved by BFGS with
// central-difference gradients. theta enters only as theta*u, so the
// objective is even in each theta and the boundary theta = 0 needs no
// constraint.

#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/random/sobol.hpp>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "kenli/common.hpp"
#include "kenli/study_service.hpp"

namespace kenli {

// --- Distributions ---

// Upper tail of the chi-square distribution.
inline double Chi2Sf(double x, int df) {
  if (df < 1) throw Error(ErrorKind::kDomain, "chi-square df must be >= 1");
  if (!(x >= 0.0)) throw Error(ErrorKind::kDomain, "chi-square statistic must be >= 0");
  if (x == 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

inline double NormalTwoSidedP(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

inline double NormalQuantile(double p) { return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p); }

inline double InvLogit(double eta) {
  return eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
}

// log(1 + e^x) without overflow.
inline double Softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// --- Model frame ---

enum class RatingResponse { kLabelCorrect, kExplanationCorrect, kGrammatical, kCommonsense };

inline constexpr std::array<RatingResponse, 4> kAllResponses = {
    RatingResponse::kLabelCorrect, RatingResponse::kExplanationCorrect, RatingResponse::kGrammatical,
    RatingResponse::kCommonsense};

inline std::string_view ResponseName(RatingResponse r) {
  switch (r) {
    case RatingResponse::kLabelCorrect: return "label_correct";
    case RatingResponse::kExplanationCorrect: return "explanation_correct";
    case RatingResponse::kGrammatical: return "grammatical";
    case RatingResponse::kCommonsense: return "commonsense";
  }
  return "";
}

inline RatingResponse ParseResponse(std::string_view s) {
  for (auto r : kAllResponses) {
    if (ToLower(Trim(s)) == ResponseName(r)) return r;
  }
  throw Error(ErrorKind::kConfig, "unknown response '" + std::string(s) + "'");
}

inline constexpr const char* kModelFactor = "model_type";
inline constexpr const char* kLevelFactor = "commonsense_level";

struct GLMMSpec {
  RatingResponse response = RatingResponse::kExplanationCorrect;
  std::vector<std::string> fixed_factors = {kModelFactor, kLevelFactor};
  bool worker_intercept = true;
  bool question_intercept = true;
  bool zero_variance = false;  // both variance components fixed at 0
  bool firth = false;          // Jeffreys-type penalty on the fixed effects
  int max_iterations = 200;
  double tolerance = 1e-8;

  bool has_random() const { return !zero_variance && (worker_intercept || question_intercept); }
  size_t variance_parameters() const {
    return zero_variance ? 0 : static_cast<size_t>(worker_intercept) + static_cast<size_t>(question_intercept);
  }
  bool SameStructure(const GLMMSpec& o) const {
    return std::set<std::string>(fixed_factors.begin(), fixed_factors.end()) ==
               std::set<std::string>(o.fixed_factors.begin(), o.fixed_factors.end()) &&
           worker_intercept == o.worker_intercept && question_intercept == o.question_intercept &&
           zero_variance == o.zero_variance && response == o.response;
  }
};

struct FactorCoding {
  std::string name;
  std::vector<std::string> levels;  // reference first
  size_t first_column = 0;          // column of levels[1]
};

struct ModelFrame {
  RatingResponse response = RatingResponse::kExplanationCorrect;
  std::vector<double> y;
  Matrix X;  // column 0 is the intercept
  std::vector<std::string> coef_names;
  std::vector<FactorCoding> factors;
  std::vector<int> worker, question;
  std::vector<std::string> worker_levels, question_levels;
  size_t dropped_no_need = 0;
  std::vector<std::string> warnings;  // separation diagnostics

  size_t rows() const { return y.size(); }
};

namespace detail {

inline std::vector<std::string> OrderLevels(const std::set<std::string>& seen, const std::string& factor) {
  std::vector<std::string> order;
  if (factor == kModelFactor) {
    const auto& conds = StudyConditions();
    if (seen.count("ground-truth")) order.push_back("ground-truth");
    for (const auto& c : conds) {
      if (c != "ground-truth" && seen.count(c)) order.push_back(c);
    }
  } else {
    for (const char* l : {"low", "high"}) {
      if (seen.count(l)) order.push_back(l);
    }
  }
  for (const auto& s : seen) {
    if (std::find(order.begin(), order.end(), s) == order.end()) order.push_back(s);
  }
  return order;
}

inline std::optional<bool> ResponseValue(const RatingRecord& r, RatingResponse resp) {
  switch (resp) {
    case RatingResponse::kLabelCorrect: return r.label_correct;
    case RatingResponse::kExplanationCorrect: return r.explanation_correct;
    case RatingResponse::kGrammatical: return r.grammatical;
    case RatingResponse::kCommonsense:
      if (r.commonsense == CommonsenseAnswer::kNoNeed) return std::nullopt;
      return r.commonsense == CommonsenseAnswer::kYes;
  }
  return std::nullopt;
}

}  // namespace detail

// Treatment-coded design. References: ground-truth for model_type, low for
// commonsense_level. "no_need" commonsense answers are dropped and counted.
inline ModelFrame BuildDesign(const std::vector<RatingRecord>& records,
                              const std::map<std::string, KnowledgeLevel>& pair_levels, const GLMMSpec& spec) {
  ModelFrame f;
  f.response = spec.response;
  std::vector<const RatingRecord*> rows;
  for (const auto& r : records) {
    const auto v = detail::ResponseValue(r, spec.response);
    if (!v) {
      ++f.dropped_no_need;
      continue;
    }
    rows.push_back(&r);
    f.y.push_back(*v ? 1.0 : 0.0);
  }
  if (rows.empty()) throw Error(ErrorKind::kDomain, "model frame is empty after filtering");

  auto value_of = [&](const RatingRecord& r, const std::string& factor) -> std::string {
    if (factor == kModelFactor) return r.condition;
    if (factor == kLevelFactor) {
      auto it = pair_levels.find(r.pair_id);
      if (it == pair_levels.end()) throw Error(ErrorKind::kCoverage, "no knowledge level for pair '" + r.pair_id + "'");
      return std::string(KnowledgeLevelName(it->second));
    }
    throw Error(ErrorKind::kConfig, "unknown fixed factor '" + factor + "'");
  };

  size_t cols = 1;
  f.coef_names = {"(Intercept)"};
  std::vector<std::map<std::string, size_t>> level_index;
  for (const auto& name : spec.fixed_factors) {
    std::set<std::string> seen;
    for (const auto* r : rows) seen.insert(value_of(*r, name));
    if (seen.size() < 2) throw Error(ErrorKind::kDomain, "factor '" + name + "' has a single level");
    FactorCoding fc{name, detail::OrderLevels(seen, name), cols};
    std::map<std::string, size_t> idx;
    for (size_t i = 0; i < fc.levels.size(); ++i) idx[fc.levels[i]] = i;
    for (size_t i = 1; i < fc.levels.size(); ++i) f.coef_names.push_back(name + ":" + fc.levels[i]);
    cols += fc.levels.size() - 1;
    f.factors.push_back(std::move(fc));
    level_index.push_back(std::move(idx));
  }

  f.X = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  std::map<std::string, int> wi, qi;
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    f.X(ii, 0) = 1.0;
    for (size_t k = 0; k < f.factors.size(); ++k) {
      const size_t l = level_index[k].at(value_of(*rows[i], f.factors[k].name));
      if (l > 0) f.X(ii, static_cast<Eigen::Index>(f.factors[k].first_column + l - 1)) = 1.0;
    }
    auto code = [](std::map<std::string, int>& m, std::vector<std::string>& names, const std::string& key) {
      auto [it, fresh] = m.emplace(key, static_cast<int>(names.size()));
      if (fresh) names.push_back(key);
      return it->second;
    };
    f.worker.push_back(code(wi, f.worker_levels, rows[i]->worker_id));
    f.question.push_back(code(qi, f.question_levels, rows[i]->pair_id));
  }

  // Separation: a constant response overall or within a factor level.
  const double total = std::accumulate(f.y.begin(), f.y.end(), 0.0);
  if (total == 0.0 || total == static_cast<double>(f.y.size())) {
    f.warnings.push_back("degenerate response: all " + std::string(total == 0.0 ? "no" : "yes"));
  }
  for (size_t k = 0; k < f.factors.size(); ++k) {
    for (size_t l = 0; l < f.factors[k].levels.size(); ++l) {
      double n = 0, s = 0;
      for (size_t i = 0; i < rows.size(); ++i) {
        if (level_index[k].at(value_of(*rows[i], f.factors[k].name)) == l) {
          n += 1;
          s += f.y[i];
        }
      }
      if (s == 0.0 || s == n) {
        f.warnings.push_back("separation: " + f.factors[k].name + "=" + f.factors[k].levels[l] + " has all-" +
                             (s == 0.0 ? "no" : "yes") + " responses");
      }
    }
  }
  return f;
}

// --- Fitting ---

struct GLMMFit {
  GLMMSpec spec;
  std::vector<std::string> coef_names;
  std::vector<FactorCoding> factors;
  Vector column_means;  // of X, for effect displays
  Vector beta;
  Matrix vcov;
  double sigma_worker = 0.0;
  double sigma_question = 0.0;
  double loglik = 0.0;  // Laplace marginal log-likelihood
  size_t n = 0;
  // Diagnostics.
  int iterations = 0;
  bool converged = false;
  double gradient_norm = 0.0;
  std::vector<double> deviance_trace;  // accepted outer iterations

  size_t n_params() const { return static_cast<size_t>(beta.size()) + spec.variance_parameters(); }

  size_t Coef(const std::string& name) const {
    for (size_t i = 0; i < coef_names.size(); ++i) {
      if (coef_names[i] == name) return i;
    }
    throw Error(ErrorKind::kNotFound, "no coefficient '" + name + "'");
  }
};

struct LogisticFit {
  Vector beta;
  Matrix vcov;
  double deviance = 0.0;
  int iterations = 0;
};

// Plain logistic regression by Newton-Raphson with step halving.
inline LogisticFit FitLogistic(const Matrix& X, const std::vector<double>& y, double tolerance = 1e-10,
                               int max_iterations = 100) {
  const auto n = X.rows(), p = X.cols();
  auto deviance = [&](const Vector& b) {
    const Vector eta = X * b;
    double d = 0;
    for (Eigen::Index i = 0; i < n; ++i) d += 2.0 * (Softplus(eta(i)) - y[static_cast<size_t>(i)] * eta(i));
    return d;
  };
  LogisticFit out;
  out.beta = Vector::Zero(p);
  double dev = deviance(out.beta);
  Matrix info(p, p);
  for (out.iterations = 1; out.iterations <= max_iterations; ++out.iterations) {
    const Vector eta = X * out.beta;
    Vector score = Vector::Zero(p);
    info.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = InvLogit(eta(i)), w = mu * (1 - mu);
      score += X.row(i).transpose() * (y[static_cast<size_t>(i)] - mu);
      info.selfadjointView<Eigen::Lower>().rankUpdate(X.row(i).transpose(), w);
    }
    info = info.selfadjointView<Eigen::Lower>();
    Eigen::LDLT<Matrix> ldlt(info);
    if (ldlt.info() != Eigen::Success) throw Error(ErrorKind::kSeparation, "singular information matrix");
    Vector step = ldlt.solve(score);
    double next = deviance(out.beta + step);
    for (int h = 0; h < 40 && !(next <= dev); ++h) {
      step *= 0.5;
      next = deviance(out.beta + step);
    }
    out.beta += step;
    const double change = dev - next;
    dev = next;
    if (!out.beta.allFinite() || out.beta.cwiseAbs().maxCoeff() > 30) {
      throw Error(ErrorKind::kSeparation, "logistic coefficients diverge (separation); use the penalized fit");
    }
    if (std::abs(change) < tolerance && step.cwiseAbs().maxCoeff() < 1e-8) break;
  }
  out.deviance = dev;
  const Vector eta = X * out.beta;
  info.setZero();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = InvLogit(eta(i));
    info += mu * (1 - mu) * X.row(i).transpose() * X.row(i);
  }
  out.vcov = info.inverse();
  return out;
}

namespace detail {

// Laplace deviance for fixed (beta, theta), with u profiled out.
class LaplaceObjective {
 public:
  LaplaceObjective(const ModelFrame& f, const GLMMSpec& spec) : f_(f), spec_(spec) {
    nw_ = spec.worker_intercept ? f.worker_levels.size() : 0;
    nq_ = spec.question_intercept ? f.question_levels.size() : 0;
    u_ = Vector::Zero(static_cast<Eigen::Index>(nw_ + nq_));
  }

  struct Detail {
    double deviance = 0;        // -2 * Laplace log-likelihood
    double penalized = 0;       // objective actually minimized
    Matrix beta_information;    // Schur complement, for vcov
  };

  // params = [beta; theta_w; theta_q] (absent thetas omitted).
  double operator()(const Vector& params, Detail* detail = nullptr) {
    const auto p = f_.X.cols();
    const Vector beta = params.head(p);
    double tw = 0, tq = 0;
    Eigen::Index k = p;
    if (nw_) tw = params(k++);
    if (nq_) tq = params(k++);
    const Vector offset = f_.X * beta;
    const auto q = static_cast<Eigen::Index>(nw_ + nq_);
    const auto n = static_cast<Eigen::Index>(f_.rows());

    auto eta_at = [&](const Vector& u, Eigen::Index i) {
      double e = offset(i);
      if (nw_) e += tw * u(f_.worker[static_cast<size_t>(i)]);
      if (nq_) e += tq * u(static_cast<Eigen::Index>(nw_) + f_.question[static_cast<size_t>(i)]);
      return e;
    };
    auto g_at = [&](const Vector& u) {
      double g = u.squaredNorm();
      for (Eigen::Index i = 0; i < n; ++i) {
        const double e = eta_at(u, i);
        g += 2.0 * (Softplus(e) - f_.y[static_cast<size_t>(i)] * e);
      }
      return g;
    };
    Matrix H(q, q);
    Vector grad(q);
    Vector w(n);
    auto assemble = [&](const Vector& u) {
      H.setIdentity();
      grad = u;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = InvLogit(eta_at(u, i));
        const double r = f_.y[static_cast<size_t>(i)] - mu;
        w(i) = mu * (1 - mu);
        const Eigen::Index a = nw_ ? f_.worker[static_cast<size_t>(i)] : -1;
        const Eigen::Index b = nq_ ? static_cast<Eigen::Index>(nw_) + f_.question[static_cast<size_t>(i)] : -1;
        if (a >= 0) {
          grad(a) -= tw * r;
          H(a, a) += tw * tw * w(i);
        }
        if (b >= 0) {
          grad(b) -= tq * r;
          H(b, b) += tq * tq * w(i);
        }
        if (a >= 0 && b >= 0) {
          H(a, b) += tw * tq * w(i);
          H(b, a) += tw * tq * w(i);
        }
      }
    };

    Vector u = u_;
    double g = g_at(u);
    Eigen::LLT<Matrix> llt;
    for (int it = 0; it < 100 && q > 0; ++it) {
      assemble(u);
      llt.compute(H);
      Vector step = -llt.solve(grad);
      double next = g_at(u + step);
      for (int h = 0; h < 50 && !(next <= g); ++h) {
        step *= 0.5;
        next = g_at(u + step);
      }
      if (!(next <= g)) break;
      u += step;
      const double change = g - next;
      g = next;
      if (step.cwiseAbs().maxCoeff() < 1e-10 || change < 1e-13) break;
    }
    u_ = u;
    double logdet = 0;
    if (q > 0) {
      assemble(u);
      llt.compute(H);
      logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = InvLogit(offset(i));
        w(i) = mu * (1 - mu);
      }
    }
    const double deviance = g + logdet;
    double objective = deviance;
    if (spec_.firth || detail) {
      Matrix info = f_.X.transpose() * w.asDiagonal() * f_.X;
      if (q > 0) {
        // Schur complement of the random-effect block.
        Matrix zwx = Matrix::Zero(q, p);
        for (Eigen::Index i = 0; i < n; ++i) {
          if (nw_) zwx.row(f_.worker[static_cast<size_t>(i)]) += tw * w(i) * f_.X.row(i);
          if (nq_) zwx.row(static_cast<Eigen::Index>(nw_) + f_.question[static_cast<size_t>(i)]) += tq * w(i) * f_.X.row(i);
        }
        info -= zwx.transpose() * llt.solve(zwx);
      }
      if (spec_.firth) {
        Eigen::LLT<Matrix> li(info);
        if (li.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
        objective -= 2.0 * li.matrixLLT().diagonal().array().log().sum();
      }
      if (detail) detail->beta_information = std::move(info);
    }
    if (detail) {
      detail->deviance = deviance;
      detail->penalized = objective;
    }
    return objective;
  }

 private:
  const ModelFrame& f_;
  const GLMMSpec& spec_;
  size_t nw_ = 0, nq_ = 0;
  Vector u_;
};

}  // namespace detail

inline GLMMFit FitBinomialGLMM(const GLMMSpec& spec, const ModelFrame& frame) {
  if (!frame.warnings.empty() && !spec.firth) {
    throw Error(ErrorKind::kSeparation, frame.warnings.front() + "; refit with the penalized (Firth) option");
  }
  GLMMFit fit;
  fit.spec = spec;
  fit.coef_names = frame.coef_names;
  fit.factors = frame.factors;
  fit.column_means = frame.X.colwise().mean().transpose();
  fit.n = frame.rows();
  const auto p = frame.X.cols();

  // Start: plain logistic (or the null intercept under the penalty).
  Vector beta0 = Vector::Zero(p);
  if (!spec.firth) {
    auto lf = FitLogistic(frame.X, frame.y);
    if (!spec.has_random()) {
      fit.beta = lf.beta;
      fit.vcov = lf.vcov;
      fit.loglik = -0.5 * lf.deviance;
      fit.iterations = lf.iterations;
      fit.converged = true;
      fit.deviance_trace = {lf.deviance};
      return fit;
    }
    beta0 = lf.beta;
  } else {
    const double m = std::clamp(std::accumulate(frame.y.begin(), frame.y.end(), 0.0) / fit.n, 0.01, 0.99);
    beta0(0) = std::log(m / (1 - m));
  }

  GLMMSpec eff = spec;
  if (spec.zero_variance) eff.worker_intercept = eff.question_intercept = false;
  const auto nt = static_cast<Eigen::Index>(eff.variance_parameters());
  detail::LaplaceObjective objective(frame, eff);
  Vector x(p + nt);
  x.head(p) = beta0;
  for (Eigen::Index i = 0; i < nt; ++i) x(p + i) = 0.5;

  const auto dim = x.size();
  auto gradient = [&](const Vector& at) {
    Vector g(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(at(i)));
      Vector a = at, b = at;
      a(i) += h;
      b(i) -= h;
      g(i) = (objective(a) - objective(b)) / (2 * h);
    }
    return g;
  };

  double fx = objective(x);
  Vector gx = gradient(x);
  Matrix Hinv = Matrix::Identity(dim, dim);
  fit.deviance_trace.push_back(fx);
  bool reset = false;
  for (fit.iterations = 1; fit.iterations <= spec.max_iterations; ++fit.iterations) {
    Vector d = -Hinv * gx;
    if (gx.dot(d) >= 0) {
      Hinv.setIdentity();
      d = -gx;
    }
    double t = 1.0, fn = objective(x + d);
    while (!(fn < fx + 1e-4 * t * gx.dot(d)) && t > 1e-12) {
      t *= 0.5;
      fn = objective(x + t * d);
    }
    if (!(fn < fx)) {
      // No descent along the quasi-Newton direction: retry once from
      // steepest descent, then stop at the numerical minimum.
      if (!reset) {
        reset = true;
        Hinv.setIdentity();
        continue;
      }
      fit.converged = gx.norm() < 1e-3 * std::max(1.0, std::abs(fx));
      break;
    }
    reset = false;
    const Vector s = t * d;
    x += s;
    const Vector gn = gradient(x);
    const Vector yv = gn - gx;
    const double sy = s.dot(yv);
    if (sy > 1e-12) {
      const double rho = 1.0 / sy;
      const Matrix I = Matrix::Identity(dim, dim);
      Hinv = (I - rho * s * yv.transpose()) * Hinv * (I - rho * yv * s.transpose()) + rho * s * s.transpose();
    }
    const double change = fx - fn;
    fx = fn;
    gx = gn;
    fit.deviance_trace.push_back(fx);
    if (!x.allFinite() || x.head(p).cwiseAbs().maxCoeff() > 30) {
      throw Error(ErrorKind::kSeparation, "fixed effects diverge (separation); refit with the penalized (Firth) option");
    }
    if (change < spec.tolerance) {
      fit.converged = true;
      break;
    }
  }
  fit.iterations = std::min(fit.iterations, spec.max_iterations);
  fit.gradient_norm = gx.norm();
  if (!fit.converged) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "GLMM did not converge: %d iterations, deviance %.6f, gradient norm %.3g",
                  fit.iterations, fx, fit.gradient_norm);
    throw Error(ErrorKind::kConvergence, buf);
  }

  detail::LaplaceObjective::Detail det;
  objective(x, &det);
  fit.beta = x.head(p);
  Eigen::Index k = p;
  if (eff.worker_intercept) fit.sigma_worker = std::abs(x(k++));
  if (eff.question_intercept) fit.sigma_question = std::abs(x(k++));
  fit.loglik = -0.5 * det.deviance;
  fit.vcov = det.beta_information.inverse();
  fit.vcov = 0.5 * (fit.vcov + fit.vcov.transpose());
  return fit;
}

// --- Tests ---

struct LRTResult {
  double chi2 = 0;
  int df = 0;
  double p = 1;
};

inline LRTResult LikelihoodRatioTest(const GLMMFit& full, const GLMMFit& reduced) {
  if (full.spec.SameStructure(reduced.spec)) throw Error(ErrorKind::kConfig, "LRT needs two different models");
  const std::set<std::string> ff(full.spec.fixed_factors.begin(), full.spec.fixed_factors.end());
  const bool nested =
      full.spec.response == reduced.spec.response && full.n == reduced.n &&
      std::all_of(reduced.spec.fixed_factors.begin(), reduced.spec.fixed_factors.end(),
                  [&](const std::string& s) { return ff.count(s) > 0; }) &&
      (!reduced.spec.has_random() || full.spec.has_random()) &&
      (reduced.spec.zero_variance || !full.spec.zero_variance) &&
      (full.spec.zero_variance || reduced.spec.zero_variance ||
       ((!reduced.spec.worker_intercept || full.spec.worker_intercept) &&
        (!reduced.spec.question_intercept || full.spec.question_intercept)));
  if (!nested || full.n_params() <= reduced.n_params()) {
    throw Error(ErrorKind::kConfig, "reduced model is not nested in the full model");
  }
  LRTResult r;
  r.df = static_cast<int>(full.n_params() - reduced.n_params());
  r.chi2 = std::max(0.0, 2.0 * (full.loglik - reduced.loglik));
  r.p = Chi2Sf(r.chi2, r.df);
  return r;
}

struct Contrast {
  std::string a, b;  // estimate is mean(a) - mean(b) on the link scale
  double estimate = 0, se = 0, z = 0;
  double p_unadjusted = 1, p_adjusted = 1;
};

struct TukeyResult {
  std::string factor;
  std::vector<Contrast> contrasts;
  double precision = 0;  // standard error of the adjusted p-values

  // Contrast for (a, b) in either order.
  Contrast Find(const std::string& a, const std::string& b) const {
    for (const auto& c : contrasts) {
      if (c.a == a && c.b == b) return c;
      if (c.a == b && c.b == a) {
        Contrast r = c;
        std::swap(r.a, r.b);
        r.estimate = -r.estimate;
        r.z = -r.z;
        return r;
      }
    }
    throw Error(ErrorKind::kNotFound, "no contrast " + a + " vs " + b);
  }
};

struct TukeyOptions {
  uint64_t seed = 20240;
  int shifts = 16;
  size_t min_points = 4096;
  size_t max_points = size_t{1} << 19;
  double target_precision = 1e-4;
};

// All-pairwise level comparisons. The single-step adjusted p is
// P(max_k |Z_k| >= |z_obs|) for the joint normal law of the contrast z's,
// integrated by randomly shifted Sobol points.
inline TukeyResult TukeyPosthoc(const GLMMFit& fit, const std::string& factor, const TukeyOptions& opt = {}) {
  const auto fc = std::find_if(fit.factors.begin(), fit.factors.end(), [&](const FactorCoding& f) { return f.name == factor; });
  if (fc == fit.factors.end()) throw Error(ErrorKind::kNotFound, "fit has no factor '" + factor + "'");
  const size_t K = fc->levels.size();
  if (K < 2) throw Error(ErrorKind::kDomain, "factor needs at least two levels");
  const auto d = static_cast<Eigen::Index>(K - 1);
  const auto c0 = static_cast<Eigen::Index>(fc->first_column);
  const Vector b = fit.beta.segment(c0, d);
  const Matrix V = fit.vcov.block(c0, c0, d, d);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(V, Eigen::EigenvaluesOnly);
  Eigen::LLT<Matrix> llt(V);
  if (llt.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= 1e-10 * eig.eigenvalues().maxCoeff()) {
    throw Error(ErrorKind::kDomain, "singular covariance for factor '" + factor + "'");
  }
  const Matrix L = llt.matrixL();

  TukeyResult out;
  out.factor = factor;
  std::vector<Vector> dirs;  // Z_k = dirs[k] . eps
  for (size_t i = 0; i < K; ++i) {
    for (size_t j = i + 1; j < K; ++j) {
      Vector c = Vector::Zero(d);  // mean(i) - mean(j)
      if (i > 0) c(static_cast<Eigen::Index>(i - 1)) += 1;
      c(static_cast<Eigen::Index>(j - 1)) -= 1;
      Contrast ct{fc->levels[i], fc->levels[j], c.dot(b), std::sqrt(c.dot(V * c)), 0, 1, 1};
      ct.z = ct.estimate / ct.se;
      ct.p_unadjusted = NormalTwoSidedP(ct.z);
      ct.p_adjusted = ct.p_unadjusted;
      dirs.push_back(L.transpose() * c / ct.se);
      out.contrasts.push_back(ct);
    }
  }
  if (out.contrasts.size() == 1) return out;

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Vector> shift(static_cast<size_t>(opt.shifts), Vector(d));
  for (auto& s : shift) {
    for (Eigen::Index k = 0; k < d; ++k) s(k) = unif(rng);
  }
  const size_t m = out.contrasts.size();
  std::vector<double> thresholds(m);
  for (size_t k = 0; k < m; ++k) thresholds[k] = std::abs(out.contrasts[k].z);

  Matrix D(static_cast<Eigen::Index>(m), d);
  for (size_t k = 0; k < m; ++k) D.row(static_cast<Eigen::Index>(k)) = dirs[k].transpose();
  const Eigen::Index block = 4096;
  Matrix E(d, block), Z;
  // Each doubling extends the Sobol prefix of every shift.
  std::vector<boost::random::sobol> streams(static_cast<size_t>(opt.shifts), boost::random::sobol(static_cast<size_t>(d)));
  std::vector<std::vector<size_t>> hits(static_cast<size_t>(opt.shifts), std::vector<size_t>(m, 0));
  std::vector<double> p(m);
  size_t have = 0;
  for (size_t points = opt.min_points;; points *= 2) {
    for (int s = 0; s < opt.shifts; ++s) {
      auto& qrng = streams[static_cast<size_t>(s)];
      for (size_t done = have; done < points; done += static_cast<size_t>(block)) {
        const auto cols = static_cast<Eigen::Index>(std::min<size_t>(static_cast<size_t>(block), points - done));
        for (Eigen::Index n = 0; n < cols; ++n) {
          for (Eigen::Index k = 0; k < d; ++k) {
            double u = static_cast<double>(qrng()) / 18446744073709551616.0 + shift[static_cast<size_t>(s)](k);
            u -= std::floor(u);
            E(k, n) = NormalQuantile(std::clamp(u, 1e-16, 1 - 1e-16));
          }
        }
        Z.noalias() = D * E.leftCols(cols);
        const Eigen::RowVectorXd mx = Z.cwiseAbs().colwise().maxCoeff();
        for (size_t k = 0; k < m; ++k) hits[static_cast<size_t>(s)][k] += static_cast<size_t>((mx.array() >= thresholds[k]).count());
      }
    }
    have = points;
    double worst = 0;
    for (size_t k = 0; k < m; ++k) {
      double mean = 0, var = 0;
      for (const auto& h : hits) mean += static_cast<double>(h[k]) / points;
      mean /= opt.shifts;
      for (const auto& h : hits) var += std::pow(static_cast<double>(h[k]) / points - mean, 2);
      var /= (opt.shifts - 1);
      p[k] = mean;
      worst = std::max(worst, std::sqrt(var / opt.shifts));
    }
    out.precision = worst;
    if (worst <= opt.target_precision || points * 2 > opt.max_points) break;
  }
  for (size_t k = 0; k < m; ++k) {
    // The maximum can only exceed a single |Z_k|.
    out.contrasts[k].p_adjusted = std::clamp(std::max(p[k], out.contrasts[k].p_unadjusted), 0.0, 1.0);
  }
  return out;
}

struct EffectLevel {
  std::string level;
  double eta = 0, se = 0;
  double probability = 0, lower = 0, upper = 0;
};

struct EffectDisplay {
  std::string factor;
  std::vector<EffectLevel> levels;
};

// Per-level probability with other factors at their observed means and
// random effects at 0; 95% Wald limits on the link scale.
inline EffectDisplay MakeEffectDisplay(const GLMMFit& fit, const std::string& factor) {
  const auto fc = std::find_if(fit.factors.begin(), fit.factors.end(), [&](const FactorCoding& f) { return f.name == factor; });
  if (fc == fit.factors.end()) throw Error(ErrorKind::kNotFound, "fit has no factor '" + factor + "'");
  const double z = NormalQuantile(0.975);
  EffectDisplay out{factor, {}};
  for (size_t l = 0; l < fc->levels.size(); ++l) {
    Vector x = fit.column_means;
    for (size_t j = 1; j < fc->levels.size(); ++j) x(static_cast<Eigen::Index>(fc->first_column + j - 1)) = 0;
    if (l > 0) x(static_cast<Eigen::Index>(fc->first_column + l - 1)) = 1;
    EffectLevel e;
    e.level = fc->levels[l];
    e.eta = x.dot(fit.beta);
    e.se = std::sqrt(std::max(0.0, x.dot(fit.vcov * x)));
    e.probability = InvLogit(e.eta);
    e.lower = InvLogit(e.eta - z * e.se);
    e.upper = InvLogit(e.eta + z * e.se);
    out.levels.push_back(e);
  }
  return out;
}

// --- Analysis report ---

struct ResponseAnalysis {
  RatingResponse response;
  size_t rows = 0;
  size_t dropped_no_need = 0;
  GLMMFit fit;
  LRTResult model_lrt;
  LRTResult level_lrt;
  TukeyResult tukey;
  EffectDisplay model_effects;
  EffectDisplay level_effects;
};

inline ResponseAnalysis AnalyzeResponse(const std::vector<RatingRecord>& records,
                                        const std::map<std::string, KnowledgeLevel>& pair_levels, GLMMSpec spec,
                                        const TukeyOptions& tukey = {}) {
  spec.fixed_factors = {kModelFactor, kLevelFactor};
  const auto frame = BuildDesign(records, pair_levels, spec);
  ResponseAnalysis a;
  a.response = spec.response;
  a.rows = frame.rows();
  a.dropped_no_need = frame.dropped_no_need;
  a.fit = FitBinomialGLMM(spec, frame);
  auto reduced = [&](const char* keep) {
    GLMMSpec r = spec;
    r.fixed_factors = {keep};
    return FitBinomialGLMM(r, BuildDesign(records, pair_levels, r));
  };
  a.model_lrt = LikelihoodRatioTest(a.fit, reduced(kLevelFactor));
  a.level_lrt = LikelihoodRatioTest(a.fit, reduced(kModelFactor));
  a.tukey = TukeyPosthoc(a.fit, kModelFactor, tukey);
  a.model_effects = MakeEffectDisplay(a.fit, kModelFactor);
  a.level_effects = MakeEffectDisplay(a.fit, kLevelFactor);
  return a;
}

inline nlohmann::json LrtToJson(const LRTResult& r) { return {{"chi2", r.chi2}, {"df", r.df}, {"p", r.p}}; }

inline nlohmann::json EffectsToJson(const EffectDisplay& e) {
  nlohmann::json ls = nlohmann::json::array();
  for (const auto& l : e.levels) {
    ls.push_back({{"level", l.level}, {"probability", l.probability}, {"lower", l.lower}, {"upper", l.upper},
                  {"eta", l.eta}, {"se", l.se}});
  }
  return {{"factor", e.factor}, {"levels", std::move(ls)}};
}

inline nlohmann::json AnalysisToJson(const ResponseAnalysis& a) {
  nlohmann::json coefs = nlohmann::json::array();
  for (size_t i = 0; i < a.fit.coef_names.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    coefs.push_back({{"name", a.fit.coef_names[i]}, {"estimate", a.fit.beta(ii)}, {"se", std::sqrt(a.fit.vcov(ii, ii))}});
  }
  nlohmann::json tk = nlohmann::json::array();
  for (const auto& c : a.tukey.contrasts) {
    tk.push_back({{"a", c.a}, {"b", c.b}, {"estimate", c.estimate}, {"se", c.se}, {"z", c.z},
                  {"p_unadjusted", c.p_unadjusted}, {"p_adjusted", c.p_adjusted}});
  }
  return {{"response", ResponseName(a.response)},
          {"rows", a.rows},
          {"dropped_no_need", a.dropped_no_need},
          {"loglik", a.fit.loglik},
          {"sigma_worker", a.fit.sigma_worker},
          {"sigma_question", a.fit.sigma_question},
          {"iterations", a.fit.iterations},
          {"coefficients", std::move(coefs)},
          {"lrt", {{kModelFactor, LrtToJson(a.model_lrt)}, {kLevelFactor, LrtToJson(a.level_lrt)}}},
          {"tukey", {{"factor", a.tukey.factor}, {"precision", a.tukey.precision}, {"contrasts", std::move(tk)}}},
          {"effects", {EffectsToJson(a.model_effects), EffectsToJson(a.level_effects)}}};
}

}  // namespace kenli
