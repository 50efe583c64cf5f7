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

// Label classifier and explanation decoder over a fused feature vector,
// with a small deterministic training loop.
//
// The decoder is an Elman RNN. Its initial state is
//   h0 = tanh(W_init [features; label_embedding[label]] + b_init)
// and each step consumes the previous token:
//   h_t = tanh(W_x E[y_{t-1}] + W_h h_{t-1} + b_h),  logits_t = W_o h_t + b_o.
// Training uses the gold label and teacher forcing; inference decodes
// greedily from the predicted label.

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "kenli/common.hpp"
#include "kenli/datamodel.hpp"

namespace kenli {

inline Vector Softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp();
  return e / e.sum();
}

// First index of the maximum; lower index wins ties.
inline int ArgMax(const Vector& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

struct LabelDistribution {
  std::array<double, 3> probabilities{};
  // Ties resolve in entailment < neutral < contradiction order.
  Label argmax = Label::kEntailment;
};

struct ClassifierHead {
  Matrix weight;  // 3 x F
  Vector bias;    // 3

  int input_dim() const { return static_cast<int>(weight.cols()); }

  Vector Logits(const Vector& features) const {
    if (features.size() != weight.cols()) {
      throw Error(ErrorKind::kDimension, "classifier expects " + std::to_string(weight.cols()) +
                                             " features, got " + std::to_string(features.size()));
    }
    return weight * features + bias;
  }
};

inline LabelDistribution DistributionFromLogits(const Vector& logits) {
  const Vector p = Softmax(logits);
  LabelDistribution out;
  for (int i = 0; i < 3; ++i) out.probabilities[static_cast<size_t>(i)] = p[i];
  out.argmax = LabelFromIndex(ArgMax(p));
  return out;
}

inline LabelDistribution PredictLabel(const Vector& features, const ClassifierHead& head) {
  return DistributionFromLogits(head.Logits(features));
}

// --- Vocabulary ----------------------------------------------------------------------

class Vocabulary {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;

  Vocabulary() : tokens_{"<s>", "</s>", "<unk>"} { Reindex(); }

  // Tokens with corpus frequency >= min_count, most frequent first (ties by
  // spelling), after the three reserved markers.
  static Vocabulary Build(const std::vector<std::string>& texts, int min_count = 1) {
    std::map<std::string, int> counts;
    for (const auto& t : texts) {
      for (auto& tok : Tokenize(t)) ++counts[tok];
    }
    std::vector<std::pair<std::string, int>> sorted(counts.begin(), counts.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    for (const auto& [tok, c] : sorted) {
      if (c >= min_count) v.tokens_.push_back(tok);
    }
    v.Reindex();
    return v;
  }

  static Vocabulary FromTokens(std::vector<std::string> tokens) {
    if (tokens.size() < 3 || tokens[0] != "<s>" || tokens[1] != "</s>" || tokens[2] != "<unk>") {
      throw Error(ErrorKind::kFormat, "vocabulary must start with <s>, </s>, <unk>");
    }
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    v.Reindex();
    return v;
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& Token(int id) const { return tokens_.at(static_cast<size_t>(id)); }

  int Id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  std::vector<int> Encode(std::string_view text) const {
    std::vector<int> ids;
    for (auto& tok : Tokenize(text)) ids.push_back(Id(tok));
    return ids;
  }

  std::string Decode(const std::vector<int>& ids) const {
    std::vector<std::string> words;
    for (int id : ids) words.push_back(Token(id));
    return Join(words, " ");
  }

 private:
  void Reindex() {
    index_.clear();
    for (size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// --- Decoding ------------------------------------------------------------------------

// Anything that starts a decoder state from (features, label) and maps the
// previous token to next-token logits.
template <typename D>
concept StepDecoder = requires(const D& d, const Vector& f, Label l, typename D::State& s, int tok) {
  { d.Start(f, l) } -> std::same_as<typename D::State>;
  { d.Step(s, tok) } -> std::convertible_to<Vector>;
  { d.bos_id() } -> std::convertible_to<int>;
  { d.eos_id() } -> std::convertible_to<int>;
};

// Greedy decoding: stops at the end marker (not emitted) or after max_length tokens.
template <StepDecoder D>
std::vector<int> GreedyDecode(const D& decoder, const Vector& features, Label label, int max_length) {
  std::vector<int> out;
  auto state = decoder.Start(features, label);
  int prev = decoder.bos_id();
  while (static_cast<int>(out.size()) < max_length) {
    const int next = ArgMax(decoder.Step(state, prev));
    if (next == decoder.eos_id()) break;
    out.push_back(next);
    prev = next;
  }
  return out;
}

struct DecoderShape {
  int feature_dim = 0;
  int vocab_size = 0;
  int hidden = 32;
  int token_embedding = 16;
  int label_embedding = 4;
};

class ExplanationDecoder {
 public:
  struct State {
    Vector h;
  };

  struct Params {
    Matrix w_init;     // H x (F + K)
    Vector b_init;     // H
    Matrix label_emb;  // 3 x K
    Matrix tok_emb;    // V x Em
    Matrix w_x;        // H x Em
    Matrix w_h;        // H x H
    Vector b_h;        // H
    Matrix w_o;        // V x H
    Vector b_o;        // V
  };

  ExplanationDecoder() = default;
  ExplanationDecoder(Params p, int max_length) : p_(std::move(p)), max_length_(max_length) {}

  static ExplanationDecoder Init(const DecoderShape& s, int max_length, std::mt19937_64& rng) {
    auto gauss = [&](Eigen::Index r, Eigen::Index c, double scale) {
      std::normal_distribution<double> g(0.0, scale);
      return Matrix(Matrix::NullaryExpr(r, c, [&] { return g(rng); }));
    };
    Params p;
    const int in = s.feature_dim + s.label_embedding;
    p.w_init = gauss(s.hidden, in, 1.0 / std::sqrt(static_cast<double>(in)));
    p.b_init = Vector::Zero(s.hidden);
    p.label_emb = gauss(3, s.label_embedding, 1.0);
    p.tok_emb = gauss(s.vocab_size, s.token_embedding, 1.0);
    p.w_x = gauss(s.hidden, s.token_embedding, 1.0 / std::sqrt(static_cast<double>(s.token_embedding)));
    p.w_h = gauss(s.hidden, s.hidden, 1.0 / std::sqrt(static_cast<double>(s.hidden)));
    p.b_h = Vector::Zero(s.hidden);
    p.w_o = gauss(s.vocab_size, s.hidden, 1.0 / std::sqrt(static_cast<double>(s.hidden)));
    p.b_o = Vector::Zero(s.vocab_size);
    return ExplanationDecoder(std::move(p), max_length);
  }

  const Params& params() const { return p_; }
  Params& mutable_params() { return p_; }
  int max_length() const { return max_length_; }
  int bos_id() const { return Vocabulary::kBos; }
  int eos_id() const { return Vocabulary::kEos; }
  int feature_dim() const { return static_cast<int>(p_.w_init.cols() - p_.label_emb.cols()); }

  Vector InitInput(const Vector& features, Label label) const {
    if (features.size() != feature_dim()) {
      throw Error(ErrorKind::kDimension, "decoder expects " + std::to_string(feature_dim()) +
                                             " features, got " + std::to_string(features.size()));
    }
    Vector u(p_.w_init.cols());
    u << features, p_.label_emb.row(LabelIndex(label)).transpose();
    return u;
  }

  State Start(const Vector& features, Label label) const {
    return {(p_.w_init * InitInput(features, label) + p_.b_init).array().tanh().matrix()};
  }

  Vector Step(State& s, int prev_token) const {
    s.h = (p_.w_x * p_.tok_emb.row(prev_token).transpose() + p_.w_h * s.h + p_.b_h)
              .array()
              .tanh()
              .matrix();
    return p_.w_o * s.h + p_.b_o;
  }

 private:
  Params p_;
  int max_length_ = 30;
};

static_assert(StepDecoder<ExplanationDecoder>);

inline std::vector<int> DecodeExplanation(const Vector& features, Label label,
                                          const ExplanationDecoder& decoder) {
  return GreedyDecode(decoder, features, label, decoder.max_length());
}

// --- Model, loss and gradients ---------------------------------------------------------------

struct PredictExplainModel {
  ClassifierHead head;
  ExplanationDecoder decoder;
  Vocabulary vocab;

  static PredictExplainModel Init(int feature_dim, Vocabulary vocab, const DecoderShape& shape_in,
                                  int max_length, uint64_t seed) {
    std::mt19937_64 rng(seed);
    PredictExplainModel m;
    std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(static_cast<double>(std::max(1, feature_dim))));
    m.head.weight = Matrix::NullaryExpr(3, feature_dim, [&] { return g(rng); });
    m.head.bias = Vector::Zero(3);
    DecoderShape shape = shape_in;
    shape.feature_dim = feature_dim;
    shape.vocab_size = vocab.size();
    m.decoder = ExplanationDecoder::Init(shape, max_length, rng);
    m.vocab = std::move(vocab);
    return m;
  }

  Prediction Predict(const Vector& features, const std::string& instance_id,
                     const std::string& model_id) const {
    const Label label = PredictLabel(features, head).argmax;
    return {instance_id, model_id, label, vocab.Decode(DecodeExplanation(features, label, decoder))};
  }
};

struct TrainingExample {
  Vector features;
  Label label = Label::kEntailment;
  std::vector<int> target;  // reference explanation token ids, no markers
};

// Same layout as the trainable parameters.
struct ModelGradients {
  Matrix head_w;
  Vector head_b;
  ExplanationDecoder::Params dec;

  static ModelGradients ZerosLike(const PredictExplainModel& m) {
    ModelGradients g;
    g.head_w = Matrix::Zero(m.head.weight.rows(), m.head.weight.cols());
    g.head_b = Vector::Zero(m.head.bias.size());
    const auto& p = m.decoder.params();
    auto z = [](const Matrix& x) { return Matrix(Matrix::Zero(x.rows(), x.cols())); };
    auto zv = [](const Vector& x) { return Vector(Vector::Zero(x.size())); };
    g.dec = {z(p.w_init), zv(p.b_init), z(p.label_emb), z(p.tok_emb), z(p.w_x),
             z(p.w_h),    zv(p.b_h),    z(p.w_o),       zv(p.b_o)};
    return g;
  }
};

// Visits (parameter, gradient) pairs in a fixed order.
template <typename F>
void ForEachParam(PredictExplainModel& m, ModelGradients& g, F&& f) {
  auto& p = m.decoder.mutable_params();
  f(m.head.weight, g.head_w);
  f(m.head.bias, g.head_b);
  f(p.w_init, g.dec.w_init);
  f(p.b_init, g.dec.b_init);
  f(p.label_emb, g.dec.label_emb);
  f(p.tok_emb, g.dec.tok_emb);
  f(p.w_x, g.dec.w_x);
  f(p.w_h, g.dec.w_h);
  f(p.b_h, g.dec.b_h);
  f(p.w_o, g.dec.w_o);
  f(p.b_o, g.dec.b_o);
}

struct ParamSlot {
  double* data;
  Eigen::Index size;
};

inline std::vector<ParamSlot> Slots(ModelGradients& g) {
  std::vector<ParamSlot> out;
  auto add = [&](auto& x) { out.push_back({x.data(), x.size()}); };
  add(g.head_w), add(g.head_b), add(g.dec.w_init), add(g.dec.b_init), add(g.dec.label_emb);
  add(g.dec.tok_emb), add(g.dec.w_x), add(g.dec.w_h), add(g.dec.b_h), add(g.dec.w_o), add(g.dec.b_o);
  return out;
}

inline std::vector<ParamSlot> Slots(PredictExplainModel& m) {
  std::vector<ParamSlot> out;
  ModelGradients dummy;
  ForEachParam(m, dummy, [&](auto& p, auto&) { out.push_back({p.data(), p.size()}); });
  return out;
}

struct LossParts {
  double label_ce = 0.0;
  double token_nll = 0.0;  // mean over target tokens plus the end marker
  double total = 0.0;
};

// alpha * CE(label) + (1 - alpha) * mean token NLL, with gradients
// accumulated into `grad` (scaled by `weight`) when grad is non-null.
inline LossParts ExampleLoss(const PredictExplainModel& m, const TrainingExample& ex, double alpha,
                             ModelGradients* grad, double weight = 1.0) {
  LossParts out;
  // Label part.
  const Vector probs = Softmax(m.head.Logits(ex.features));
  const int y = LabelIndex(ex.label);
  out.label_ce = -std::log(std::max(probs[y], 1e-300));
  if (grad) {
    Vector d = probs;
    d[y] -= 1.0;
    d *= alpha * weight;
    grad->head_w.noalias() += d * ex.features.transpose();
    grad->head_b += d;
  }

  // Explanation part, teacher forced on the gold label.
  const auto& p = m.decoder.params();
  const int steps = static_cast<int>(ex.target.size()) + 1;
  const Vector u = m.decoder.InitInput(ex.features, ex.label);
  std::vector<Vector> h(static_cast<size_t>(steps) + 1);
  std::vector<Vector> q(static_cast<size_t>(steps) + 1);
  std::vector<int> inputs(static_cast<size_t>(steps) + 1), targets(static_cast<size_t>(steps) + 1);
  h[0] = (p.w_init * u + p.b_init).array().tanh().matrix();
  double nll = 0.0;
  for (int t = 1; t <= steps; ++t) {
    const auto ti = static_cast<size_t>(t);
    inputs[ti] = t == 1 ? Vocabulary::kBos : ex.target[ti - 2];
    targets[ti] = t == steps ? Vocabulary::kEos : ex.target[ti - 1];
    h[ti] = (p.w_x * p.tok_emb.row(inputs[ti]).transpose() + p.w_h * h[ti - 1] + p.b_h)
                .array()
                .tanh()
                .matrix();
    q[ti] = Softmax(p.w_o * h[ti] + p.b_o);
    nll -= std::log(std::max(q[ti][targets[ti]], 1e-300));
  }
  out.token_nll = nll / steps;
  out.total = alpha * out.label_ce + (1.0 - alpha) * out.token_nll;

  if (grad) {
    auto& gd = grad->dec;
    const double scale = (1.0 - alpha) * weight / steps;
    Vector dh_next = Vector::Zero(p.w_h.rows());
    for (int t = steps; t >= 1; --t) {
      const auto ti = static_cast<size_t>(t);
      Vector d_o = q[ti];
      d_o[targets[ti]] -= 1.0;
      d_o *= scale;
      gd.w_o.noalias() += d_o * h[ti].transpose();
      gd.b_o += d_o;
      Vector dh = p.w_o.transpose() * d_o + dh_next;
      Vector da = dh.cwiseProduct((1.0 - h[ti].array().square()).matrix());
      const Vector x = p.tok_emb.row(inputs[ti]).transpose();
      gd.w_x.noalias() += da * x.transpose();
      gd.tok_emb.row(inputs[ti]) += (p.w_x.transpose() * da).transpose();
      gd.w_h.noalias() += da * h[ti - 1].transpose();
      gd.b_h += da;
      dh_next = p.w_h.transpose() * da;
    }
    Vector da0 = dh_next.cwiseProduct((1.0 - h[0].array().square()).matrix());
    gd.w_init.noalias() += da0 * u.transpose();
    gd.b_init += da0;
    const Vector du = p.w_init.transpose() * da0;
    gd.label_emb.row(y) += du.tail(p.label_emb.cols()).transpose();
  }
  return out;
}

// --- Training ------------------------------------------------------------------------

struct TrainingConfig {
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  int epochs = 200;
  double learning_rate = 0.01;
  // Weight of the label loss; the explanation loss gets 1 - alpha.
  double alpha = 0.6;
  int batch_size = 16;
  int max_length = 30;
  DecoderShape shape;
};

struct TrainingResult {
  PredictExplainModel model;
  std::vector<double> loss_trace;  // mean total loss per epoch
  uint64_t seed = 0;
};

// Adam over minibatches in a seeded per-epoch order. Deterministic for a
// fixed seed, data and config.
inline TrainingResult TrainModel(const std::vector<TrainingExample>& examples, PredictExplainModel model,
                                 const TrainingConfig& cfg, uint64_t seed) {
  if (examples.empty()) throw Error(ErrorKind::kDomain, "train: empty dataset");
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) throw Error(ErrorKind::kConfig, "train: alpha must be in [0,1]");
  if (cfg.batch_size <= 0) throw Error(ErrorKind::kConfig, "train: batch_size must be positive");
  for (size_t i = 0; i < examples.size(); ++i) {
    if (!examples[i].features.allFinite()) {
      throw Error(ErrorKind::kDomain, "train: non-finite features in example " + std::to_string(i));
    }
  }

  TrainingResult res;
  res.seed = seed;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ModelGradients m1 = ModelGradients::ZerosLike(model);
  ModelGradients m2 = ModelGradients::ZerosLike(model);
  std::vector<size_t> order(examples.size());
  std::iota(order.begin(), order.end(), size_t{0});
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const double w = 1.0 / static_cast<double>(end - start);
      ModelGradients g = ModelGradients::ZerosLike(model);
      for (size_t k = start; k < end; ++k) {
        const auto loss = ExampleLoss(model, examples[order[k]], cfg.alpha, &g, w);
        if (!std::isfinite(loss.total)) {
          throw Error(ErrorKind::kConvergence,
                      "train: non-finite loss at epoch " + std::to_string(epoch) + ", example " +
                          std::to_string(order[k]) + " (label CE " + std::to_string(loss.label_ce) +
                          ", token NLL " + std::to_string(loss.token_nll) + ")");
        }
        epoch_loss += loss.total;
      }
      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      const auto ps = Slots(model), gs = Slots(g), as = Slots(m1), bs = Slots(m2);
      for (size_t s = 0; s < ps.size(); ++s) {
        for (Eigen::Index i = 0; i < ps[s].size; ++i) {
          const double gi = gs[s].data[i];
          double& a = as[s].data[i];
          double& b = bs[s].data[i];
          a = kBeta1 * a + (1 - kBeta1) * gi;
          b = kBeta2 * b + (1 - kBeta2) * gi * gi;
          ps[s].data[i] -= cfg.learning_rate * (a / c1) / (std::sqrt(b / c2) + kEps);
        }
      }
    }
    res.loss_trace.push_back(epoch_loss / static_cast<double>(examples.size()));
  }
  res.model = std::move(model);
  return res;
}

inline double TrainAccuracy(const PredictExplainModel& m, const std::vector<TrainingExample>& xs) {
  if (xs.empty()) return 0.0;
  size_t ok = 0;
  for (const auto& x : xs) ok += PredictLabel(x.features, m.head).argmax == x.label;
  return static_cast<double>(ok) / static_cast<double>(xs.size());
}

template <typename Params>
struct SeedRun {
  uint64_t seed = 0;
  double dev_accuracy = 0.0;
  Params params;
};

// The run at the median dev accuracy; among runs sharing that accuracy the
// lowest seed wins. Requires an odd number of runs.
template <typename Params>
const SeedRun<Params>& SelectMedianModel(const std::vector<SeedRun<Params>>& runs) {
  if (runs.empty() || runs.size() % 2 == 0) {
    throw Error(ErrorKind::kDomain, "median model selection needs an odd number of runs, got " +
                                        std::to_string(runs.size()));
  }
  std::vector<double> accs;
  for (const auto& r : runs) accs.push_back(r.dev_accuracy);
  std::nth_element(accs.begin(), accs.begin() + static_cast<long>(accs.size() / 2), accs.end());
  const double median = accs[accs.size() / 2];
  const SeedRun<Params>* best = nullptr;
  for (const auto& r : runs) {
    if (r.dev_accuracy == median && (!best || r.seed < best->seed)) best = &r;
  }
  return *best;
}

// --- Checkpoints -------------------------------------------------------------------------

namespace detail {

inline nlohmann::json MatrixToJson(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json r = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

inline Matrix MatrixFromJson(const nlohmann::json& j) {
  const auto r = j.at("rows").get<Eigen::Index>();
  const auto c = j.at("cols").get<Eigen::Index>();
  Matrix m(r, c);
  const auto& data = j.at("data");
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = data.at(static_cast<size_t>(i)).at(static_cast<size_t>(k)).get<double>();
  return m;
}

inline nlohmann::json VectorToJson(const Vector& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vector VectorFromJson(const nlohmann::json& j) {
  auto xs = j.get<std::vector<double>>();
  return Eigen::Map<Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

}  // namespace detail

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json ModelToJson(const PredictExplainModel& m) {
  using detail::MatrixToJson;
  using detail::VectorToJson;
  const auto& p = m.decoder.params();
  return {
      {"format", "kenli.checkpoint"},
      {"version", kCheckpointVersion},
      {"vocab", m.vocab.tokens()},
      {"max_length", m.decoder.max_length()},
      {"head", {{"weight", MatrixToJson(m.head.weight)}, {"bias", VectorToJson(m.head.bias)}}},
      {"decoder",
       {{"w_init", MatrixToJson(p.w_init)},
        {"b_init", VectorToJson(p.b_init)},
        {"label_emb", MatrixToJson(p.label_emb)},
        {"tok_emb", MatrixToJson(p.tok_emb)},
        {"w_x", MatrixToJson(p.w_x)},
        {"w_h", MatrixToJson(p.w_h)},
        {"b_h", VectorToJson(p.b_h)},
        {"w_o", MatrixToJson(p.w_o)},
        {"b_o", VectorToJson(p.b_o)}}},
  };
}

inline PredictExplainModel ModelFromJson(const nlohmann::json& j) {
  using detail::MatrixFromJson;
  using detail::VectorFromJson;
  if (j.value("format", "") != "kenli.checkpoint" || j.value("version", 0) != kCheckpointVersion) {
    throw Error(ErrorKind::kFormat, "not a version-1 kenli checkpoint");
  }
  PredictExplainModel m;
  m.vocab = Vocabulary::FromTokens(j.at("vocab").get<std::vector<std::string>>());
  m.head.weight = MatrixFromJson(j.at("head").at("weight"));
  m.head.bias = VectorFromJson(j.at("head").at("bias"));
  const auto& d = j.at("decoder");
  ExplanationDecoder::Params p{MatrixFromJson(d.at("w_init")), VectorFromJson(d.at("b_init")),
                               MatrixFromJson(d.at("label_emb")), MatrixFromJson(d.at("tok_emb")),
                               MatrixFromJson(d.at("w_x")),      MatrixFromJson(d.at("w_h")),
                               VectorFromJson(d.at("b_h")),      MatrixFromJson(d.at("w_o")),
                               VectorFromJson(d.at("b_o"))};
  m.decoder = ExplanationDecoder(std::move(p), j.at("max_length").get<int>());
  return m;
}

inline void WriteLossTrace(const std::vector<double>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kNotFound, "cannot write '" + path + "'");
  out << "epoch,loss\n";
  out.precision(17);
  for (size_t i = 0; i < trace.size(); ++i) out << i + 1 << ',' << trace[i] << '\n';
}

}  // namespace kenli
