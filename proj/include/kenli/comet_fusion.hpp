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

// Background knowledge from a generative knowledge-base client.
//
// Each sentence is chunked into noun and verb sub-phrases. Every
// (chunk, relation) pair is sent to the client, which completes the object
// of the statement. Per relation the candidate whose "<relation>: <phrase>"
// embedding is most similar to the sentence embedding survives, and the
// survivors' embeddings are averaged into one background vector per sentence.

#pragma once

#include <atomic>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <thread>
#include <tuple>
#include <unordered_map>

#include "json.hpp"
#include "kenli/common.hpp"
// Eigen must precede httplib.h: <resolv.h> defines a _res macro.
#include "httplib.h"
#include "kenli/embeddings.hpp"
#include "kenli/knowledge_attention.hpp"

namespace kenli {

class RelationSet {
 public:
  RelationSet() : RelationSet(Default()) {}
  explicit RelationSet(std::vector<std::string> relations) : relations_(std::move(relations)) {
    std::set<std::string> seen;
    for (const auto& r : relations_) {
      if (r.empty()) throw Error(ErrorKind::kConfig, "empty relation name");
      if (!seen.insert(r).second) throw Error(ErrorKind::kConfig, "duplicate relation " + r);
    }
  }

  static std::vector<std::string> Default() {
    return {"AtLocation", "CapableOf",  "DefinedAs", "HasA",        "HasProperty",
            "HasSubevent", "InheritsFrom", "InstanceOf", "IsA",      "LocatedNear",
            "MadeOf",     "PartOf",     "SymbolOf",  "UsedFor",     "LocationOfAction"};
  }

  const std::vector<std::string>& relations() const { return relations_; }
  size_t size() const { return relations_.size(); }

 private:
  std::vector<std::string> relations_;
};

// --- Chunking ------------------------------------------------------------------

enum class ChunkKind { kNoun, kVerb };

struct Chunk {
  std::string text;
  size_t begin = 0;  // token span [begin, end)
  size_t end = 0;
  ChunkKind kind = ChunkKind::kNoun;

  bool operator==(const Chunk&) const = default;
};

struct TaggedToken {
  std::string word;
  std::string pos;  // coarse universal tag (NOUN, VERB, DET, ...)
};

namespace detail {

inline bool IsNounTag(const std::string& t) { return t == "NOUN" || t == "PROPN"; }
inline bool IsVerbTag(const std::string& t) { return t == "VERB" || t == "AUX"; }

// Length of a noun chunk DET? ADJ* (NOUN|PROPN)+ starting at i, 0 if none.
inline size_t MatchNounChunk(const std::vector<TaggedToken>& t, size_t i) {
  size_t j = i;
  if (j < t.size() && t[j].pos == "DET") ++j;
  while (j < t.size() && t[j].pos == "ADJ") ++j;
  size_t nouns = 0;
  while (j < t.size() && IsNounTag(t[j].pos)) {
    ++j;
    ++nouns;
  }
  return nouns > 0 ? j - i : 0;
}

// Verb chunk: (VERB|AUX)+ then trailing PART/ADP/NOUN/PROPN. A noun chunk
// that follows a particle or adposition is the prepositional object and is
// absorbed; a noun chunk right after the verbs (a direct object) starts a
// chunk of its own.
inline size_t MatchVerbChunk(const std::vector<TaggedToken>& t, size_t i) {
  size_t j = i;
  while (j < t.size() && IsVerbTag(t[j].pos)) ++j;
  if (j == i) return 0;
  bool after_adposition = false;
  while (j < t.size()) {
    const auto& pos = t[j].pos;
    if (pos == "PART" || pos == "ADP") {
      after_adposition = true;
      ++j;
    } else if (IsNounTag(pos)) {
      ++j;
    } else if (after_adposition) {
      size_t np = MatchNounChunk(t, j);
      if (np == 0) break;
      j += np;
      after_adposition = false;
    } else {
      break;
    }
  }
  return j - i;
}

inline std::string JoinWords(const std::vector<TaggedToken>& t, size_t b, size_t e) {
  std::string s;
  for (size_t k = b; k < e; ++k) {
    if (k > b) s += ' ';
    s += t[k].word;
  }
  return s;
}

}  // namespace detail

inline std::vector<Chunk> ChunkSentence(const std::vector<TaggedToken>& tokens) {
  if (tokens.empty()) throw Error(ErrorKind::kDomain, "chunker: empty input");
  std::vector<Chunk> out;
  size_t i = 0;
  while (i < tokens.size()) {
    if (size_t n = detail::MatchNounChunk(tokens, i)) {
      out.push_back({detail::JoinWords(tokens, i, i + n), i, i + n, ChunkKind::kNoun});
      i += n;
    } else if (size_t v = detail::MatchVerbChunk(tokens, i)) {
      out.push_back({detail::JoinWords(tokens, i, i + v), i, i + v, ChunkKind::kVerb});
      i += v;
    } else {
      ++i;
    }
  }
  return out;
}

// Small lexicon tagger: closed-class words from a built-in list, open-class
// words from an optional "word TAG" lexicon, then suffix heuristics with NOUN
// as the fallback. Pre-tagged input ("word/TAG") bypasses it.
class PosLexicon {
 public:
  PosLexicon() {
    for (auto w : {"a", "an", "the", "this", "that", "these", "those", "some", "every", "each",
                   "no", "any", "his", "her", "their", "its", "my", "your", "our"})
      tags_[w] = "DET";
    for (auto w : {"is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had",
                   "do", "does", "did", "can", "could", "will", "would", "should", "may", "might",
                   "must"})
      tags_[w] = "AUX";
    for (auto w : {"in", "on", "at", "of", "for", "with", "by", "from", "into", "onto", "over",
                   "under", "near", "behind", "through", "across", "around", "down", "up", "off",
                   "out", "about", "along", "inside", "outside", "between", "beside", "toward",
                   "towards", "during", "while", "past"})
      tags_[w] = "ADP";
    for (auto w : {"not", "n't", "to"}) tags_[w] = "PART";
    for (auto w : {"and", "or", "but", "nor"}) tags_[w] = "CCONJ";
    for (auto w : {"he", "she", "it", "they", "we", "i", "you", "him", "them", "us", "me",
                   "someone", "somebody", "something", "nobody", "everyone"})
      tags_[w] = "PRON";
    for (auto w : {"very", "quickly", "slowly", "outside", "inside", "together", "there", "here",
                   "also", "just", "away", "now", "always", "never"})
      if (!tags_.count(w)) tags_[w] = "ADV";
  }

  void Add(std::string_view word, std::string tag) { tags_[ToLower(word)] = std::move(tag); }

  void LoadFile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::kNotFound, "cannot open '" + path + "'");
    std::string line;
    while (std::getline(in, line)) {
      auto p = SplitWhitespace(line);
      if (p.size() >= 2) Add(p[0], p[1]);
    }
  }

  std::string Tag(std::string_view word) const {
    const std::string w = ToLower(word);
    if (auto it = tags_.find(w); it != tags_.end()) return it->second;
    if (w.empty()) return "X";
    if (std::ispunct(static_cast<unsigned char>(w[0]))) return "PUNCT";
    if (std::isdigit(static_cast<unsigned char>(w[0]))) return "NUM";
    auto ends = [&](std::string_view suf) {
      return w.size() > suf.size() + 2 && w.compare(w.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends("ing") || ends("ed")) return "VERB";
    if (ends("ly")) return "ADV";
    if (ends("ful") || ends("ous") || ends("ive") || ends("ish")) return "ADJ";
    return "NOUN";
  }

  std::vector<TaggedToken> TagSentence(std::string_view sentence) const {
    std::vector<TaggedToken> out;
    for (auto& raw : SplitWhitespace(sentence)) {
      std::string word = raw;
      if (auto slash = raw.rfind('/'); slash != std::string::npos && slash > 0 &&
                                       slash + 1 < raw.size()) {
        out.push_back({raw.substr(0, slash), raw.substr(slash + 1)});
        continue;
      }
      // Split trailing punctuation off the word.
      std::string punct;
      while (!word.empty() && std::ispunct(static_cast<unsigned char>(word.back())) &&
             word.back() != '\'') {
        punct.insert(punct.begin(), word.back());
        word.pop_back();
      }
      if (!word.empty()) out.push_back({word, Tag(word)});
      for (char c : punct) out.push_back({std::string(1, c), "PUNCT"});
    }
    return out;
  }

 private:
  std::unordered_map<std::string, std::string> tags_;
};

// --- Knowledge clients ---------------------------------------------------------------

// (subject, relation) -> object phrase. An empty string is an empty
// generation. Transport failures throw Error(kTransport).
class KnowledgeClient {
 public:
  virtual ~KnowledgeClient() = default;
  virtual std::string Generate(const std::string& subject, const std::string& relation) = 0;
};

// Deterministic table-backed client; unknown keys generate "".
class TableKnowledgeClient final : public KnowledgeClient {
 public:
  void Set(std::string subject, std::string relation, std::string object) {
    std::lock_guard<std::mutex> lock(mu_);
    table_[{std::move(subject), std::move(relation)}] = std::move(object);
  }
  std::string Generate(const std::string& subject, const std::string& relation) override {
    std::lock_guard<std::mutex> lock(mu_);
    ++calls_;
    auto it = table_.find({subject, relation});
    return it == table_.end() ? std::string() : it->second;
  }
  size_t calls() const {
    std::lock_guard<std::mutex> lock(mu_);
    return calls_;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::string>, std::string> table_;
  size_t calls_ = 0;
};

// POST <path> {"subject": ..., "relation": ...} -> {"object": ...}.
class HttpKnowledgeClient final : public KnowledgeClient {
 public:
  explicit HttpKnowledgeClient(std::string base_url, std::string path = "/generate")
      : base_url_(std::move(base_url)), path_(std::move(path)) {}

  std::string Generate(const std::string& subject, const std::string& relation) override {
    httplib::Client client(base_url_);
    client.set_connection_timeout(5);
    client.set_read_timeout(60);
    nlohmann::json req = {{"subject", subject}, {"relation", relation}};
    auto res = client.Post(path_, req.dump(), "application/json");
    if (!res || res->status != 200) {
      throw Error(ErrorKind::kTransport,
                  "knowledge service: " + (res ? "HTTP " + std::to_string(res->status)
                                               : httplib::to_string(res.error())));
    }
    return nlohmann::json::parse(res->body).value("object", std::string());
  }

 private:
  std::string base_url_;
  std::string path_;
};

// Memoizes generations keyed by (subject, relation). Writes are idempotent,
// so concurrent fills of the same key are harmless.
//
// Cache file: first line {"format": "kenli.kb-cache", "version": 1}, then one
// {"subject", "relation", "object"} record per line.
class CachingKnowledgeClient final : public KnowledgeClient {
 public:
  static constexpr int kVersion = 1;

  explicit CachingKnowledgeClient(std::shared_ptr<KnowledgeClient> inner)
      : inner_(std::move(inner)) {}

  std::string Generate(const std::string& subject, const std::string& relation) override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (auto it = cache_.find({subject, relation}); it != cache_.end()) return it->second;
    }
    if (!inner_) throw Error(ErrorKind::kNotFound, "cache miss for (" + subject + ", " + relation + ")");
    std::string obj = inner_->Generate(subject, relation);
    std::lock_guard<std::mutex> lock(mu_);
    cache_[{subject, relation}] = obj;
    return obj;
  }

  size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.size();
  }

  void Load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::kNotFound, "cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) return;
    auto head = nlohmann::json::parse(line);
    if (head.value("format", "") != "kenli.kb-cache" || head.value("version", 0) != kVersion) {
      throw Error(ErrorKind::kFormat, path + ": not a version-1 knowledge cache");
    }
    std::lock_guard<std::mutex> lock(mu_);
    while (std::getline(in, line)) {
      if (Trim(line).empty()) continue;
      auto j = nlohmann::json::parse(line);
      cache_[{j.at("subject").get<std::string>(), j.at("relation").get<std::string>()}] =
          j.at("object").get<std::string>();
    }
  }

  void Save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::kNotFound, "cannot write '" + path + "'");
    out << nlohmann::json{{"format", "kenli.kb-cache"}, {"version", kVersion}}.dump() << '\n';
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& [key, obj] : cache_) {
      out << nlohmann::json{{"subject", key.first}, {"relation", key.second}, {"object", obj}}.dump()
          << '\n';
    }
  }

 private:
  std::shared_ptr<KnowledgeClient> inner_;
  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::string>, std::string> cache_;
};

// --- Candidates, selection, pooling -------------------------------------------------------

struct ObjectPhrase {
  std::string relation;
  Chunk source_chunk;
  std::string text;
  double similarity = 0.0;  // signed cosine, set by selection
};

struct CandidateSet {
  std::vector<ObjectPhrase> candidates;  // chunk-major, relation order
  size_t empty_generations = 0;
  size_t missing = 0;  // transport failures after retries

  size_t dropped() const { return empty_generations + missing; }
};

struct GenerationOptions {
  int max_retries = 2;
  // Concurrent client calls; the client must be thread-safe when > 1.
  int parallelism = 1;
};

inline CandidateSet GenerateCandidates(const std::vector<Chunk>& chunks, const RelationSet& relations,
                                       KnowledgeClient& client, const GenerationOptions& opts = {}) {
  const size_t nrel = relations.size();
  const size_t total = chunks.size() * nrel;
  // nullopt: missing after retries.
  std::vector<std::optional<std::string>> results(total);

  auto run_one = [&](size_t idx) {
    const auto& chunk = chunks[idx / nrel];
    const auto& rel = relations.relations()[idx % nrel];
    for (int attempt = 0;; ++attempt) {
      try {
        results[idx] = std::string(Trim(client.Generate(chunk.text, rel)));
        return;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kTransport || attempt >= opts.max_retries) {
          if (e.kind() != ErrorKind::kTransport) throw;
          results[idx] = std::nullopt;
          return;
        }
      }
    }
  };

  ParallelFor(total, opts.parallelism, run_one);

  CandidateSet out;
  for (size_t i = 0; i < total; ++i) {
    if (!results[i]) {
      ++out.missing;
    } else if (results[i]->empty()) {
      ++out.empty_generations;
    } else {
      out.candidates.push_back(
          {relations.relations()[i % nrel], chunks[i / nrel], std::move(*results[i]), 0.0});
    }
  }
  return out;
}

inline std::string EmbeddingText(const ObjectPhrase& p) { return p.relation + ": " + p.text; }

struct SelectedPhrase {
  ObjectPhrase phrase;
  Vector embedding;
};

using Selection = std::map<std::string, SelectedPhrase>;

// Argmax of signed cosine per relation; ties go to the earlier chunk span,
// then to the lexicographically smaller phrase.
inline Selection SelectPerRelation(const std::vector<ObjectPhrase>& candidates,
                                   std::string_view source_sentence, SentenceEmbedder& embedder) {
  Selection best;
  if (candidates.empty()) return best;
  const Vector src = embedder.Embed(source_sentence);
  for (const auto& cand : candidates) {
    Vector emb = embedder.Embed(EmbeddingText(cand));
    ObjectPhrase scored = cand;
    scored.similarity = Cosine(emb, src);
    auto it = best.find(cand.relation);
    if (it == best.end()) {
      best.emplace(cand.relation, SelectedPhrase{std::move(scored), std::move(emb)});
      continue;
    }
    const ObjectPhrase& cur = it->second.phrase;
    const bool better =
        scored.similarity > cur.similarity ||
        (scored.similarity == cur.similarity &&
         std::tie(scored.source_chunk.begin, scored.text) < std::tie(cur.source_chunk.begin, cur.text));
    if (better) it->second = SelectedPhrase{std::move(scored), std::move(emb)};
  }
  return best;
}

struct BackgroundVector {
  Vector vector;
  size_t n_phrases = 0;
};

inline BackgroundVector PoolBackground(const Selection& selected, int embed_dim) {
  BackgroundVector out{Vector::Zero(embed_dim), 0};
  for (const auto& [rel, sel] : selected) {
    if (sel.embedding.size() != embed_dim) {
      throw Error(ErrorKind::kDimension, "background: embedding dimension mismatch for " + rel);
    }
    out.vector += sel.embedding;
    ++out.n_phrases;
  }
  if (out.n_phrases > 0) out.vector /= static_cast<double>(out.n_phrases);
  return out;
}

// Mean of the kept phrases' embeddings; zero vector when nothing was kept.
inline BackgroundVector PoolBackground(const Selection& selected, SentenceEmbedder& embedder) {
  return PoolBackground(selected, embedder.dimension());
}

// [liv; bg_premise; bg_hypothesis].
inline Vector Fuse(const BackgroundVector& premise_bg, const BackgroundVector& hypothesis_bg,
                   const LocalInferenceVector& liv) {
  if (premise_bg.vector.size() != hypothesis_bg.vector.size()) {
    throw Error(ErrorKind::kDimension, "fuse: background vectors differ in dimension");
  }
  Vector out(liv.features.size() + 2 * premise_bg.vector.size());
  out << liv.features, premise_bg.vector, hypothesis_bg.vector;
  return out;
}

inline Vector Fuse(const BackgroundVector& premise_bg, const BackgroundVector& hypothesis_bg,
                   const LocalInferenceVector& liv, int liv_dim, int embed_dim) {
  if (liv.features.size() != liv_dim || premise_bg.vector.size() != embed_dim ||
      hypothesis_bg.vector.size() != embed_dim) {
    throw Error(ErrorKind::kDimension, "fuse: inputs do not match the configured dimensions");
  }
  return Fuse(premise_bg, hypothesis_bg, liv);
}

// Tagging, chunking, generation, selection and pooling for one sentence.
class BackgroundKnowledge {
 public:
  BackgroundKnowledge(std::shared_ptr<KnowledgeClient> client, std::shared_ptr<SentenceEmbedder> embedder,
                      RelationSet relations = RelationSet(), PosLexicon tagger = PosLexicon(),
                      GenerationOptions options = {}, bool chunking = true)
      : client_(std::move(client)),
        embedder_(MakeThreadSafe(std::move(embedder))),
        relations_(std::move(relations)),
        tagger_(std::move(tagger)),
        options_(options),
        chunking_(chunking) {}

  int dimension() const { return embedder_->dimension(); }

  BackgroundVector Compute(std::string_view sentence) const {
    std::vector<Chunk> chunks;
    auto tagged = tagger_.TagSentence(sentence);
    if (chunking_) {
      if (!tagged.empty()) chunks = ChunkSentence(tagged);
    } else if (!tagged.empty()) {
      chunks.push_back({std::string(Trim(sentence)), 0, tagged.size(), ChunkKind::kNoun});
    }
    auto cands = GenerateCandidates(chunks, relations_, *client_, options_);
    auto sel = SelectPerRelation(cands.candidates, sentence, *embedder_);
    return PoolBackground(sel, embedder_->dimension());
  }

 private:
  std::shared_ptr<KnowledgeClient> client_;
  std::shared_ptr<SentenceEmbedder> embedder_;
  RelationSet relations_;
  PosLexicon tagger_;
  GenerationOptions options_;
  bool chunking_;
};

}  // namespace kenli
