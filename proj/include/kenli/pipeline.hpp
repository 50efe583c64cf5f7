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

// Instance -> fused feature vector, and multi-seed training on top of it.

#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "kenli/comet_fusion.hpp"
#include "kenli/common.hpp"
#include "kenli/datamodel.hpp"
#include "kenli/embeddings.hpp"
#include "kenli/knowledge_attention.hpp"
#include "kenli/predict_explain.hpp"

namespace kenli {

// The four predict-explain systems.
enum class ModelVariant { kVanilla, kCont, kComet, kCometCont };

inline std::string_view ModelVariantName(ModelVariant v) {
  switch (v) {
    case ModelVariant::kVanilla: return "vanilla";
    case ModelVariant::kCont: return "cont";
    case ModelVariant::kComet: return "comet";
    case ModelVariant::kCometCont: return "comet+cont";
  }
  return "";
}

inline ModelVariant ParseModelVariant(std::string_view s) {
  const auto f = ToLower(Trim(s));
  if (f == "vanilla") return ModelVariant::kVanilla;
  if (f == "cont") return ModelVariant::kCont;
  if (f == "comet") return ModelVariant::kComet;
  if (f == "comet+cont" || f == "comet_cont") return ModelVariant::kCometCont;
  throw Error(ErrorKind::kConfig, "unknown model variant '" + std::string(s) + "'");
}

inline bool UsesConstraint(ModelVariant v) {
  return v == ModelVariant::kCont || v == ModelVariant::kCometCont;
}
inline bool UsesBackground(ModelVariant v) {
  return v == ModelVariant::kComet || v == ModelVariant::kCometCont;
}

struct FeatureConfig {
  EncoderKind encoder = EncoderKind::kPassthrough;
  int hidden_dim = 0;  // 0: same as the word vectors
  uint64_t encoder_seed = 17;
  AttentionConfig attention;  // rule kNone for the unconstrained variants
};

// Deterministic stand-in for words missing from the table.
inline Vector HashedWordVector(std::string_view word, int dim) {
  std::mt19937_64 rng(Fnv1a64(word));
  std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = g(rng);
  return v;
}

class FeatureAssembler {
 public:
  FeatureAssembler(std::shared_ptr<const WordVectorTable> table, FeatureConfig cfg,
                   std::shared_ptr<BackgroundKnowledge> background = nullptr)
      : table_(std::move(table)),
        cfg_(cfg),
        encoder_(cfg.encoder, table_->dimension(), cfg.hidden_dim > 0 ? cfg.hidden_dim : table_->dimension(),
                 cfg.encoder_seed),
        background_(std::move(background)) {}

  int liv_dim() const { return LocalInferenceVector::DimensionFor(encoder_.output_dim()); }
  int dimension() const { return liv_dim() + (background_ ? 2 * background_->dimension() : 0); }
  const FeatureConfig& config() const { return cfg_; }

  TokenSequence Embed(std::string_view sentence) const {
    std::vector<Token> toks;
    for (auto& w : Tokenize(sentence)) {
      const Vector* v = table_->Find(w);
      toks.push_back({w, v ? *v : HashedWordVector(w, table_->dimension())});
    }
    if (toks.empty()) throw Error(ErrorKind::kDomain, "cannot embed an empty sentence");
    return TokenSequence(std::move(toks));
  }

  LocalInferenceVector Local(const NLIInstance& x) const {
    const auto p = encoder_.Encode(Embed(x.premise));
    const auto h = encoder_.Encode(Embed(x.hypothesis));
    const auto state = Attend(p, h, table_.get(), cfg_.attention);
    return AlignAndCompose(p, h, state);
  }

  Vector Features(const NLIInstance& x) const {
    const auto liv = Local(x);
    if (!background_) return liv.features;
    return Fuse(Background(x.premise), Background(x.hypothesis), liv);
  }

 private:
  BackgroundVector Background(const std::string& sentence) const {
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (auto it = bg_cache_.find(sentence); it != bg_cache_.end()) return it->second;
    }
    auto bg = background_->Compute(sentence);
    std::lock_guard<std::mutex> lock(mu_);
    return bg_cache_.emplace(sentence, std::move(bg)).first->second;
  }

  std::shared_ptr<const WordVectorTable> table_;
  FeatureConfig cfg_;
  SequenceEncoder encoder_;
  std::shared_ptr<BackgroundKnowledge> background_;
  mutable std::mutex mu_;
  mutable std::map<std::string, BackgroundVector> bg_cache_;
};

inline std::vector<TrainingExample> BuildExamples(const Dataset& ds, const FeatureAssembler& fa,
                                                  const Vocabulary& vocab, int max_length) {
  std::vector<TrainingExample> out;
  for (const auto& x : ds.instances()) {
    if (!x.gold) continue;
    TrainingExample ex;
    ex.features = fa.Features(x);
    ex.label = *x.gold;
    if (x.references.empty()) {
      throw Error(ErrorKind::kDomain, "train: instance '" + x.id + "' has no reference explanation");
    }
    // Only the first reference is trained on.
    ex.target = vocab.Encode(x.references.front());
    if (static_cast<int>(ex.target.size()) > max_length) ex.target.resize(static_cast<size_t>(max_length));
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<std::string> ExplanationCorpus(const Dataset& ds) {
  std::vector<std::string> texts;
  for (const auto& x : ds.instances()) texts.insert(texts.end(), x.references.begin(), x.references.end());
  return texts;
}

struct MultiSeedResult {
  std::vector<SeedRun<TrainingResult>> runs;
  size_t selected = 0;  // index into runs
};

// Trains one model per seed and picks the median-dev-accuracy run.
inline MultiSeedResult TrainSeeds(const std::vector<TrainingExample>& train,
                                  const std::vector<TrainingExample>& dev, const Vocabulary& vocab,
                                  const TrainingConfig& cfg) {
  if (train.empty()) throw Error(ErrorKind::kDomain, "train: no labelled training instances");
  const int dim = static_cast<int>(train.front().features.size());
  MultiSeedResult out;
  for (uint64_t seed : cfg.seeds) {
    auto model = PredictExplainModel::Init(dim, vocab, cfg.shape, cfg.max_length, seed);
    auto res = TrainModel(train, std::move(model), cfg, seed);
    const double acc = TrainAccuracy(res.model, dev.empty() ? train : dev);
    out.runs.push_back({seed, acc, std::move(res)});
  }
  const auto& best = SelectMedianModel(out.runs);
  out.selected = static_cast<size_t>(&best - out.runs.data());
  return out;
}

}  // namespace kenli
