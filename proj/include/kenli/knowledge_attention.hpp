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

// Premise/hypothesis cross-attention with knowledge-driven constraints.
//
// Raw alignment logits A (n x m) are dot products of encoded tokens. A
// knowledge score matrix K in [0,1] holds the absolute cosine of the
// knowledge-graph vectors of each token pair (0 when either token is out of
// vocabulary). Two rules turn K into additive logit biases:
//
//   R1:  A'_ij = A_ij + lambda * K_ij
//   R2:  A'_ij = A_ij + lambda * K_ij * a_ij,   a = softmax(A) (constant gate)
//
// The constrained logits feed the usual soft alignment and the enhanced
// [x; x~; x - x~; x * x~] representation, pooled by mean and max.

#pragma once

#include <random>
#include <string>
#include <vector>

#include "kenli/common.hpp"
#include "kenli/embeddings.hpp"

namespace kenli {

struct Token {
  std::string surface;
  Vector vector;
};

class TokenSequence {
 public:
  TokenSequence() = default;
  explicit TokenSequence(std::vector<Token> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.empty()) throw Error(ErrorKind::kDomain, "token sequence must be non-empty");
    const auto d = tokens_.front().vector.size();
    for (const auto& t : tokens_) {
      if (t.vector.size() != d) {
        throw Error(ErrorKind::kDimension, "token sequence has mixed vector dimensions");
      }
    }
  }

  // Builds a sequence from the rows of `vectors` with placeholder surfaces.
  static TokenSequence FromRows(const Matrix& vectors, std::vector<std::string> surfaces = {}) {
    std::vector<Token> toks;
    for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
      std::string s = i < static_cast<Eigen::Index>(surfaces.size()) ? surfaces[i]
                                                                      : "t" + std::to_string(i);
      toks.push_back({std::move(s), vectors.row(i).transpose()});
    }
    return TokenSequence(std::move(toks));
  }

  size_t size() const { return tokens_.size(); }
  int dimension() const { return tokens_.empty() ? 0 : static_cast<int>(tokens_[0].vector.size()); }
  const std::vector<Token>& tokens() const { return tokens_; }
  const Token& operator[](size_t i) const { return tokens_[i]; }

  // n x d, one row per token.
  Matrix AsMatrix() const {
    Matrix m(static_cast<Eigen::Index>(tokens_.size()), dimension());
    for (size_t i = 0; i < tokens_.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = tokens_[i].vector;
    return m;
  }

 private:
  std::vector<Token> tokens_;
};

enum class AttentionRule { kNone, kR1, kR2 };

inline std::string_view AttentionRuleName(AttentionRule r) {
  switch (r) {
    case AttentionRule::kNone: return "none";
    case AttentionRule::kR1: return "r1";
    case AttentionRule::kR2: return "r2";
  }
  return "";
}

inline AttentionRule ParseAttentionRule(std::string_view s) {
  const auto f = ToLower(Trim(s));
  if (f == "none") return AttentionRule::kNone;
  if (f == "r1") return AttentionRule::kR1;
  if (f == "r2") return AttentionRule::kR2;
  throw Error(ErrorKind::kConfig, "unknown attention rule '" + std::string(s) + "'");
}

struct AttentionConfig {
  AttentionRule rule = AttentionRule::kNone;
  double lambda = 1.0;
  // Constrain the hypothesis-to-premise direction as well.
  bool both_directions = true;
};

// Numerically stable softmax over each row.
inline Matrix RowSoftmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

inline Matrix ColSoftmax(const Matrix& logits) {
  return RowSoftmax(logits.transpose()).transpose();
}

inline Matrix RawAttention(const TokenSequence& premise, const TokenSequence& hypothesis) {
  if (premise.dimension() != hypothesis.dimension()) {
    throw Error(ErrorKind::kDimension, "raw attention: premise dimension " +
                                           std::to_string(premise.dimension()) + " vs hypothesis " +
                                           std::to_string(hypothesis.dimension()));
  }
  return premise.AsMatrix() * hypothesis.AsMatrix().transpose();
}

// K_ij = |cos(n(p_i), n(h_j))|, 0 when either word is absent from the table
// or has a zero vector.
inline Matrix KnowledgeScores(const TokenSequence& premise, const TokenSequence& hypothesis,
                              const WordVectorTable& table) {
  const auto n = static_cast<Eigen::Index>(premise.size());
  const auto m = static_cast<Eigen::Index>(hypothesis.size());
  Matrix k = Matrix::Zero(n, m);
  std::vector<const Vector*> hv(static_cast<size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    const Vector* v = table.Find(hypothesis[static_cast<size_t>(j)].surface);
    hv[static_cast<size_t>(j)] = (v && v->norm() > 0) ? v : nullptr;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector* pv = table.Find(premise[static_cast<size_t>(i)].surface);
    if (!pv || pv->norm() == 0) continue;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (hv[static_cast<size_t>(j)]) k(i, j) = AbsCosine(*pv, *hv[static_cast<size_t>(j)]);
    }
  }
  return k;
}

// Thresholds continuous scores to the binary relation test {0, 1}.
inline Matrix BinarizeScores(const Matrix& k, double threshold) {
  return (k.array() >= threshold).cast<double>().matrix();
}

namespace detail {
inline void CheckConstraintArgs(const Matrix& a, const Matrix& k, double lambda) {
  if (a.rows() != k.rows() || a.cols() != k.cols()) {
    throw Error(ErrorKind::kDimension, "attention constraint: logits and scores differ in shape");
  }
  if (!(lambda >= 0.0)) throw Error(ErrorKind::kDomain, "attention constraint: lambda must be >= 0");
}
}  // namespace detail

inline Matrix ApplyR1(const Matrix& logits, const Matrix& scores, double lambda) {
  detail::CheckConstraintArgs(logits, scores, lambda);
  return logits + lambda * scores;
}

// The gate is the model's own row-softmax alignment, treated as a constant.
inline Matrix ApplyR2(const Matrix& logits, const Matrix& scores, double lambda) {
  detail::CheckConstraintArgs(logits, scores, lambda);
  return logits + lambda * scores.cwiseProduct(RowSoftmax(logits));
}

struct AttentionState {
  Matrix raw_logits;
  Matrix knowledge_scores;
  // Premise-to-hypothesis logits (normalized over rows).
  Matrix constrained_logits;
  // Hypothesis-to-premise logits, still indexed n x m (normalized over
  // columns). Equal to raw_logits when only one direction is constrained.
  Matrix constrained_reverse;
  AttentionRule rule = AttentionRule::kNone;
  double lambda = 0.0;
};

inline AttentionState Constrain(Matrix raw, Matrix scores, const AttentionConfig& cfg) {
  AttentionState s;
  s.rule = cfg.rule;
  s.lambda = cfg.lambda;
  if (raw.rows() != scores.rows() || raw.cols() != scores.cols()) {
    throw Error(ErrorKind::kDimension, "attention state: logits and scores differ in shape");
  }
  switch (cfg.rule) {
    case AttentionRule::kNone:
      s.constrained_logits = raw;
      s.constrained_reverse = raw;
      break;
    case AttentionRule::kR1:
      s.constrained_logits = ApplyR1(raw, scores, cfg.lambda);
      s.constrained_reverse = cfg.both_directions ? s.constrained_logits : raw;
      break;
    case AttentionRule::kR2:
      s.constrained_logits = ApplyR2(raw, scores, cfg.lambda);
      // The reverse gate is the column-normalized alignment.
      s.constrained_reverse =
          cfg.both_directions
              ? Matrix(ApplyR2(raw.transpose(), scores.transpose(), cfg.lambda).transpose())
              : raw;
      break;
  }
  s.raw_logits = std::move(raw);
  s.knowledge_scores = std::move(scores);
  return s;
}

inline AttentionState Attend(const TokenSequence& premise, const TokenSequence& hypothesis,
                             const WordVectorTable* table, const AttentionConfig& cfg) {
  Matrix raw = RawAttention(premise, hypothesis);
  Matrix k = table ? KnowledgeScores(premise, hypothesis, *table)
                   : Matrix::Zero(raw.rows(), raw.cols());
  return Constrain(std::move(raw), std::move(k), cfg);
}

struct LocalInferenceVector {
  // [mean(m_p); max(m_p); mean(m_h); max(m_h)], each block 4d wide.
  Vector features;

  static constexpr int kWidthPerDim = 16;
  static int DimensionFor(int d) { return kWidthPerDim * d; }
};

namespace detail {

// Rows of m = [x, x~, x - x~, x * x~].
inline Matrix Enhance(const Matrix& x, const Matrix& aligned) {
  const auto n = x.rows();
  const auto d = x.cols();
  Matrix m(n, 4 * d);
  m.leftCols(d) = x;
  m.middleCols(d, d) = aligned;
  m.middleCols(2 * d, d) = x - aligned;
  m.rightCols(d) = x.cwiseProduct(aligned);
  return m;
}

inline Vector MeanMaxPool(const Matrix& m) {
  Vector out(2 * m.cols());
  out.head(m.cols()) = m.colwise().mean().transpose();
  out.tail(m.cols()) = m.colwise().maxCoeff().transpose();
  return out;
}

}  // namespace detail

inline LocalInferenceVector AlignAndCompose(const TokenSequence& premise,
                                            const TokenSequence& hypothesis,
                                            const AttentionState& state) {
  const Matrix p = premise.AsMatrix();
  const Matrix h = hypothesis.AsMatrix();
  if (p.cols() != h.cols()) throw Error(ErrorKind::kDimension, "compose: dimension mismatch");
  const auto& fwd = state.constrained_logits;
  const auto& rev = state.constrained_reverse;
  if (fwd.rows() != p.rows() || fwd.cols() != h.rows() || rev.rows() != p.rows() ||
      rev.cols() != h.rows()) {
    throw Error(ErrorKind::kDimension, "compose: attention shape does not match the sequences");
  }
  const Matrix p_aligned = RowSoftmax(fwd) * h;
  const Matrix h_aligned = ColSoftmax(rev).transpose() * p;
  const Vector vp = detail::MeanMaxPool(detail::Enhance(p, p_aligned));
  const Vector vh = detail::MeanMaxPool(detail::Enhance(h, h_aligned));
  LocalInferenceVector out;
  out.features.resize(vp.size() + vh.size());
  out.features << vp, vh;
  return out;
}

// --- Sentence encoders ---------------------------------------------------------------

enum class EncoderKind { kPassthrough, kRecurrent };

inline EncoderKind ParseEncoderKind(std::string_view s) {
  const auto f = ToLower(Trim(s));
  if (f == "passthrough") return EncoderKind::kPassthrough;
  if (f == "recurrent") return EncoderKind::kRecurrent;
  throw Error(ErrorKind::kConfig, "unknown encoder '" + std::string(s) + "'");
}

inline std::string_view EncoderKindName(EncoderKind k) {
  return k == EncoderKind::kPassthrough ? "passthrough" : "recurrent";
}

// Passthrough returns the input vectors. The recurrent encoder is a seeded
// tanh RNN of width d run over the token vectors (weights fixed at
// construction).
class SequenceEncoder {
 public:
  SequenceEncoder(EncoderKind kind, int input_dim, int output_dim, uint64_t seed)
      : kind_(kind), input_dim_(input_dim), output_dim_(output_dim) {
    if (kind == EncoderKind::kPassthrough && input_dim != output_dim) {
      throw Error(ErrorKind::kConfig, "passthrough encoder needs input dim == d");
    }
    if (kind == EncoderKind::kRecurrent) {
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> g(0.0, 1.0);
      w_in_ = Matrix(output_dim, input_dim).unaryExpr([&](double) { return g(rng); }) /
              std::sqrt(static_cast<double>(input_dim));
      w_rec_ = Matrix(output_dim, output_dim).unaryExpr([&](double) { return g(rng); }) /
               std::sqrt(2.0 * output_dim);
      bias_ = Vector::Zero(output_dim);
    }
  }

  EncoderKind kind() const { return kind_; }
  int output_dim() const { return output_dim_; }

  TokenSequence Encode(const TokenSequence& in) const {
    if (in.dimension() != input_dim_) {
      throw Error(ErrorKind::kDimension, "encoder input dimension " + std::to_string(in.dimension()));
    }
    if (kind_ == EncoderKind::kPassthrough) return in;
    std::vector<Token> out;
    Vector h = Vector::Zero(output_dim_);
    for (const auto& t : in.tokens()) {
      h = (w_in_ * t.vector + w_rec_ * h + bias_).array().tanh().matrix();
      out.push_back({t.surface, h});
    }
    return TokenSequence(std::move(out));
  }

 private:
  EncoderKind kind_;
  int input_dim_;
  int output_dim_;
  Matrix w_in_, w_rec_;
  Vector bias_;
};

}  // namespace kenli
