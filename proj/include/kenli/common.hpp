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

#include <algorithm>
#include <array>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <cctype>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace kenli {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Machine-readable error category. The CLI prints it in its error record.
enum class ErrorKind {
  kParse,
  kSchema,
  kIntegrity,
  kFormat,
  kLabel,
  kDimension,
  kDomain,
  kTransport,
  kCoverage,
  kDuplicate,
  kUnscheduled,
  kConvergence,
  kSeparation,
  kConfig,
  kNotFound,
  kProbe,
};

inline const char* ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kSchema: return "schema";
    case ErrorKind::kIntegrity: return "integrity";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kLabel: return "label";
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kTransport: return "transport";
    case ErrorKind::kCoverage: return "coverage";
    case ErrorKind::kDuplicate: return "duplicate";
    case ErrorKind::kUnscheduled: return "unscheduled";
    case ErrorKind::kConvergence: return "convergence";
    case ErrorKind::kSeparation: return "separation";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kNotFound: return "not_found";
    case ErrorKind::kProbe: return "probe";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// --- Labels -----------------------------------------------------------------

enum class Label { kEntailment = 0, kNeutral = 1, kContradiction = 2 };

inline constexpr std::array<Label, 3> kAllLabels = {
    Label::kEntailment, Label::kNeutral, Label::kContradiction};

inline constexpr int LabelIndex(Label l) { return static_cast<int>(l); }

inline Label LabelFromIndex(int i) {
  if (i < 0 || i > 2) throw Error(ErrorKind::kLabel, "label index out of range");
  return static_cast<Label>(i);
}

inline std::string_view LabelName(Label l) {
  switch (l) {
    case Label::kEntailment: return "entailment";
    case Label::kNeutral: return "neutral";
    case Label::kContradiction: return "contradiction";
  }
  return "";
}

inline std::string ToLower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string_view Trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Case-folded match against the three label names; nullopt otherwise.
inline std::optional<Label> TryParseLabel(std::string_view s) {
  const std::string folded = ToLower(Trim(s));
  for (Label l : kAllLabels) {
    if (folded == LabelName(l)) return l;
  }
  return std::nullopt;
}

inline Label ParseLabel(std::string_view s) {
  if (auto l = TryParseLabel(s)) return *l;
  throw Error(ErrorKind::kLabel, "unknown label '" + std::string(s) + "'");
}

// --- Text helpers -------------------------------------------------------------

inline std::vector<std::string> SplitWhitespace(std::string_view s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<std::string> SplitOn(std::string_view s, char delim) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == delim) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline bool StartsWith(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

// Lowercases and splits on whitespace after isolating ASCII punctuation.
// Used for BLEU and for the toy vocabularies.
inline std::vector<std::string> Tokenize(std::string_view text) {
  std::string spaced;
  spaced.reserve(text.size() * 2);
  for (unsigned char c : text) {
    if (std::ispunct(c) && c != '\'') {
      spaced.push_back(' ');
      spaced.push_back(static_cast<char>(c));
      spaced.push_back(' ');
    } else {
      spaced.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  return SplitWhitespace(spaced);
}

inline std::string Join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// Runs fn(0..n-1) on up to `workers` threads. The first exception is
// rethrown after all threads finish.
template <typename F>
void ParallelFor(size_t n, int workers, F&& fn) {
  const int w = std::max(1, std::min<int>(workers, static_cast<int>(std::min<size_t>(n, 1 << 20))));
  if (w <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (int k = 0; k < w; ++k) {
    pool.emplace_back([&] {
      for (size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace kenli
