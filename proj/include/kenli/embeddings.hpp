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

// Word-vector tables, sentence embedders and cosine similarity.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <unordered_map>

#include "json.hpp"
#include "kenli/common.hpp"
// Eigen must precede httplib.h: <resolv.h> defines a _res macro.
#include "httplib.h"

namespace kenli {

// Signed cosine. Throws on mismatched dimensions or a zero vector.
inline double Cosine(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) {
    throw Error(ErrorKind::kDimension, "cosine: dimension mismatch " + std::to_string(u.size()) +
                                           " vs " + std::to_string(v.size()));
  }
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) {
    throw Error(ErrorKind::kDomain, "cosine: similarity undefined for a zero vector");
  }
  return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

inline double AbsCosine(const Vector& u, const Vector& v) { return std::abs(Cosine(u, v)); }

enum class Normalization { kRaw, kUnit };

struct WordVectorOptions {
  Normalization normalization = Normalization::kRaw;
  // Fold keys and queries to lowercase. Surface forms otherwise.
  bool case_fold = true;
  // Strip a ConceptNet URI prefix such as "/c/en/" from keys.
  std::string strip_prefix = "/c/en/";
};

// Read-only after loading; concurrent lookups are safe.
class WordVectorTable {
 public:
  static constexpr uint32_t kBinaryVersion = 1;

  explicit WordVectorTable(int dimension, WordVectorOptions options = {})
      : dimension_(dimension), options_(std::move(options)) {
    if (dimension <= 0) throw Error(ErrorKind::kDimension, "word vectors need a positive dimension");
  }

  int dimension() const { return dimension_; }
  Normalization normalization() const { return options_.normalization; }
  const WordVectorOptions& options() const { return options_; }
  size_t size() const { return entries_.size(); }

  // First insertion of a (folded) key wins. Returns false for a duplicate.
  bool Insert(std::string_view word, Vector v) {
    if (v.size() != dimension_) {
      throw Error(ErrorKind::kDimension, "vector for '" + std::string(word) + "' has dimension " +
                                             std::to_string(v.size()));
    }
    if (options_.normalization == Normalization::kUnit) {
      const double n = v.norm();
      if (n > 0) v /= n;
    }
    return entries_.emplace(Key(word), std::move(v)).second;
  }

  // Absent words yield nullopt, never a fabricated zero vector.
  std::optional<Vector> Lookup(std::string_view word) const {
    auto it = entries_.find(Key(word));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  const Vector* Find(std::string_view word) const {
    auto it = entries_.find(Key(word));
    return it == entries_.end() ? nullptr : &it->second;
  }

  const std::unordered_map<std::string, Vector>& entries() const { return entries_; }

  // Text format: "word v1 ... vd" per line, with an optional "count dim" header.
  static WordVectorTable LoadText(std::istream& in, WordVectorOptions options = {}) {
    std::string line;
    std::optional<WordVectorTable> table;
    size_t row = 0;
    while (std::getline(in, line)) {
      ++row;
      auto parts = SplitWhitespace(line);
      if (parts.empty()) continue;
      if (row == 1 && parts.size() == 2) {
        // "count dim" header.
        try {
          size_t pos = 0;
          (void)std::stoull(parts[0], &pos);
          int dim = std::stoi(parts[1]);
          table.emplace(dim, options);
          continue;
        } catch (const std::exception&) {
          // Not a header; a 1-d vector line.
        }
      }
      const int dim = static_cast<int>(parts.size()) - 1;
      if (!table) table.emplace(dim, options);
      if (dim != table->dimension()) {
        throw Error(ErrorKind::kParse, "word vectors line " + std::to_string(row) + ": expected " +
                                           std::to_string(table->dimension()) + " values, got " +
                                           std::to_string(dim));
      }
      Vector v(dim);
      for (int i = 0; i < dim; ++i) {
        try {
          v[i] = std::stod(parts[i + 1]);
        } catch (const std::exception&) {
          throw Error(ErrorKind::kParse, "word vectors line " + std::to_string(row) + ": bad number");
        }
      }
      table->Insert(parts[0], std::move(v));
    }
    if (!table) throw Error(ErrorKind::kParse, "word vectors: empty input");
    return std::move(*table);
  }

  static WordVectorTable LoadText(const std::string& path, WordVectorOptions options = {}) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::kNotFound, "cannot open '" + path + "'");
    return LoadText(in, std::move(options));
  }

  // Binary cache: "KNWV", u32 version, i32 dim, u8 normalization, u8 case_fold,
  // u64 count, then per entry u32 key length, key bytes, dim little-endian doubles.
  void SaveBinary(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::kNotFound, "cannot write '" + path + "'");
    out.write("KNWV", 4);
    Put(out, kBinaryVersion);
    Put(out, static_cast<int32_t>(dimension_));
    Put(out, static_cast<uint8_t>(options_.normalization == Normalization::kUnit));
    Put(out, static_cast<uint8_t>(options_.case_fold));
    Put(out, static_cast<uint64_t>(entries_.size()));
    // Sorted for byte-identical caches across runs.
    std::vector<const std::pair<const std::string, Vector>*> sorted;
    for (const auto& e : entries_) sorted.push_back(&e);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->first < b->first; });
    for (const auto* e : sorted) {
      Put(out, static_cast<uint32_t>(e->first.size()));
      out.write(e->first.data(), static_cast<std::streamsize>(e->first.size()));
      out.write(reinterpret_cast<const char*>(e->second.data()),
                static_cast<std::streamsize>(sizeof(double) * dimension_));
    }
  }

  static WordVectorTable LoadBinary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::kNotFound, "cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "KNWV", 4) != 0) {
      throw Error(ErrorKind::kFormat, path + ": not a word-vector cache");
    }
    const auto version = Get<uint32_t>(in);
    if (version != kBinaryVersion) {
      throw Error(ErrorKind::kFormat, path + ": unsupported cache version " + std::to_string(version));
    }
    const auto dim = Get<int32_t>(in);
    WordVectorOptions options;
    options.normalization = Get<uint8_t>(in) ? Normalization::kUnit : Normalization::kRaw;
    options.case_fold = Get<uint8_t>(in) != 0;
    options.strip_prefix.clear();
    WordVectorTable table(dim, options);
    const auto count = Get<uint64_t>(in);
    for (uint64_t i = 0; i < count; ++i) {
      const auto len = Get<uint32_t>(in);
      std::string key(len, '\0');
      in.read(key.data(), len);
      Vector v(dim);
      in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sizeof(double) * dim));
      if (!in) throw Error(ErrorKind::kFormat, path + ": truncated cache");
      table.entries_.emplace(std::move(key), std::move(v));
    }
    return table;
  }

 private:
  std::string Key(std::string_view word) const {
    if (!options_.strip_prefix.empty() && StartsWith(word, options_.strip_prefix)) {
      word.remove_prefix(options_.strip_prefix.size());
    }
    return options_.case_fold ? ToLower(word) : std::string(word);
  }

  template <typename T>
  static void Put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <typename T>
  static T Get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error(ErrorKind::kFormat, "truncated word-vector cache");
    return v;
  }

  int dimension_;
  WordVectorOptions options_;
  std::unordered_map<std::string, Vector> entries_;
};

// --- Sentence embedders -----------------------------------------------------------

class SentenceEmbedder {
 public:
  virtual ~SentenceEmbedder() = default;
  virtual int dimension() const = 0;
  virtual Vector Embed(std::string_view text) = 0;
  // True when Embed may be called from several threads at once.
  virtual bool reentrant() const { return false; }
};

inline uint64_t Fnv1a64(std::string_view s, uint64_t seed = 0xcbf29ce484222325ULL) {
  uint64_t h = seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic feature-hashing encoder over unigrams and bigrams. A stand-in
// for a pretrained sentence encoder in tests and offline runs.
class HashingEmbedder final : public SentenceEmbedder {
 public:
  explicit HashingEmbedder(int dimension = 64) : dimension_(dimension) {
    if (dimension <= 0) throw Error(ErrorKind::kDimension, "embedder dimension must be positive");
  }
  int dimension() const override { return dimension_; }
  bool reentrant() const override { return true; }

  Vector Embed(std::string_view text) override {
    Vector v = Vector::Zero(dimension_);
    const auto toks = Tokenize(text);
    auto add = [&](const std::string& feat, double w) {
      const uint64_t h = Fnv1a64(feat);
      const double sign = (h >> 63) ? -1.0 : 1.0;
      v[static_cast<Eigen::Index>(h % static_cast<uint64_t>(dimension_))] += sign * w;
    };
    for (size_t i = 0; i < toks.size(); ++i) {
      add(toks[i], 1.0);
      if (i + 1 < toks.size()) add(toks[i] + "\x1f" + toks[i + 1], 0.5);
    }
    const double n = v.norm();
    if (n > 0) v /= n;
    return v;
  }

 private:
  int dimension_;
};

// Mean of the word vectors of in-vocabulary tokens.
class MeanWordVectorEmbedder final : public SentenceEmbedder {
 public:
  explicit MeanWordVectorEmbedder(std::shared_ptr<const WordVectorTable> table)
      : table_(std::move(table)) {}
  int dimension() const override { return table_->dimension(); }
  bool reentrant() const override { return true; }

  Vector Embed(std::string_view text) override {
    Vector v = Vector::Zero(table_->dimension());
    int n = 0;
    for (const auto& tok : Tokenize(text)) {
      if (const Vector* w = table_->Find(tok)) {
        v += *w;
        ++n;
      }
    }
    if (n > 0) v /= n;
    return v;
  }

 private:
  std::shared_ptr<const WordVectorTable> table_;
};

// Wire protocol: POST <path> with {"text": "..."}; the response is
// {"vector": [d numbers]}. The dimension is fixed at construction and every
// response is checked against it.
class HttpSentenceEmbedder final : public SentenceEmbedder {
 public:
  HttpSentenceEmbedder(std::string base_url, int dimension, std::string path = "/embed")
      : client_(base_url), dimension_(dimension), path_(std::move(path)) {
    client_.set_connection_timeout(5);
    client_.set_read_timeout(60);
  }
  int dimension() const override { return dimension_; }

  Vector Embed(std::string_view text) override {
    nlohmann::json req = {{"text", std::string(text)}};
    auto res = client_.Post(path_, req.dump(), "application/json");
    if (!res || res->status != 200) {
      throw Error(ErrorKind::kTransport,
                  "embedding service: " + (res ? "HTTP " + std::to_string(res->status)
                                               : httplib::to_string(res.error())));
    }
    auto body = nlohmann::json::parse(res->body);
    const auto& arr = body.at("vector");
    if (static_cast<int>(arr.size()) != dimension_) {
      throw Error(ErrorKind::kDimension, "embedding service returned dimension " +
                                             std::to_string(arr.size()));
    }
    Vector v(dimension_);
    for (int i = 0; i < dimension_; ++i) v[i] = arr[i].get<double>();
    return v;
  }

 private:
  httplib::Client client_;
  int dimension_;
  std::string path_;
};

// Serializes calls into a provider that is not reentrant.
class SerializedEmbedder final : public SentenceEmbedder {
 public:
  explicit SerializedEmbedder(std::shared_ptr<SentenceEmbedder> inner) : inner_(std::move(inner)) {}
  int dimension() const override { return inner_->dimension(); }
  bool reentrant() const override { return true; }
  Vector Embed(std::string_view text) override {
    std::lock_guard<std::mutex> lock(mu_);
    return inner_->Embed(text);
  }

 private:
  std::shared_ptr<SentenceEmbedder> inner_;
  std::mutex mu_;
};

inline std::shared_ptr<SentenceEmbedder> MakeThreadSafe(std::shared_ptr<SentenceEmbedder> e) {
  if (e->reentrant()) return e;
  return std::make_shared<SerializedEmbedder>(std::move(e));
}

}  // namespace kenli
