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

// HTTP front for the rating study.
//
//   GET  /api/batch     open batch for the caller (or {"status":"done"})
//   POST /api/rating    one item's answers
//   GET  /api/progress  caller's progress
//
// Callers authenticate with "Authorization: Bearer <worker token>".

#pragma once

#include <cstdlib>
#include <string>
#include <utility>

#include "kenli/common.hpp"
#include "kenli/study_service.hpp"
// Eigen must precede httplib.h: <resolv.h> defines a _res macro.
#include "httplib.h"

namespace kenli {

inline constexpr const char* kStudyAddressEnv = "KENLI_STUDY_ADDR";

// "host:port"; the port defaults to 8080.
inline std::pair<std::string, int> ParseBindAddress(std::string_view addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string_view::npos) return {std::string(addr), 8080};
  const std::string port(addr.substr(colon + 1));
  int p = 0;
  try {
    p = std::stoi(port);
  } catch (const std::exception&) {
    throw Error(ErrorKind::kConfig, "bad port in bind address '" + std::string(addr) + "'");
  }
  if (p < 0 || p > 65535) throw Error(ErrorKind::kConfig, "port out of range: " + port);
  return {std::string(addr.substr(0, colon)), p};
}

inline std::pair<std::string, int> BindAddressFromEnv(std::string_view fallback = "127.0.0.1:8080") {
  const char* v = std::getenv(kStudyAddressEnv);
  return ParseBindAddress(v && *v ? v : fallback);
}

inline nlohmann::json BatchViewToJson(const BatchView& v) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : v.items) {
    items.push_back({{"slot", it.slot},
                     {"pair_id", it.pair_id},
                     {"premise", it.premise},
                     {"hypothesis", it.hypothesis},
                     {"label", it.label},
                     {"explanation", it.explanation},
                     {"answered", it.answered}});
  }
  return {{"status", "open"}, {"batch_id", v.batch_id}, {"cursor", v.cursor}, {"items", std::move(items)}};
}

class StudyServer {
 public:
  explicit StudyServer(StudyService& service, std::string static_dir = "") : service_(service) {
    if (!static_dir.empty() && !server_.set_mount_point("/", static_dir)) {
      throw Error(ErrorKind::kNotFound, "static asset directory '" + static_dir + "' not found");
    }
    server_.Get("/api/batch", [this](const httplib::Request& req, httplib::Response& res) {
      Handle(req, res, [&](const std::string& worker) {
        const auto v = service_.FetchBatch(worker);
        return v ? BatchViewToJson(*v) : nlohmann::json{{"status", "done"}};
      });
    });
    server_.Post("/api/rating", [this](const httplib::Request& req, httplib::Response& res) {
      Handle(req, res, [&](const std::string& worker) {
        const auto j = nlohmann::json::parse(req.body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::kParse, "body is not a JSON object");
        RatingSubmission s;
        try {
          s.slot = j.value("slot", "");
          s.submission_token = j.value("submission_token", "");
          auto opt = [&](const char* k) -> std::optional<std::string> {
            if (!j.contains(k) || j[k].is_null()) return std::nullopt;
            return j[k].get<std::string>();
          };
          s.label_correct = opt("label_correct");
          s.explanation_correct = opt("explanation_correct");
          s.grammatical = opt("grammatical");
          s.commonsense = opt("commonsense");
          s.duration_seconds = j.value("duration_seconds", 0.0);
        } catch (const nlohmann::json::exception& e) {
          throw Error(ErrorKind::kSchema, e.what());
        }
        const auto r = service_.Submit(worker, s);
        return nlohmann::json{{"receipt", r.receipt_id}, {"replayed", r.replayed}};
      });
    });
    server_.Get("/api/progress", [this](const httplib::Request& req, httplib::Response& res) {
      Handle(req, res, [&](const std::string& worker) {
        const auto p = service_.GetProgress(worker);
        return nlohmann::json{{"batch_id", p.batch_id},
                              {"answered", p.answered},
                              {"batch_size", p.batch_size},
                              {"batches_completed", p.batches_completed},
                              {"plan_batches_remaining", p.plan_batches_remaining}};
      });
    });
  }

  int BindToAnyPort(const std::string& host) { return server_.bind_to_any_port(host); }
  bool Bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  bool ListenAfterBind() { return server_.listen_after_bind(); }
  void Stop() { server_.stop(); }
  void WaitUntilReady() { server_.wait_until_ready(); }

 private:
  static int StatusFor(ErrorKind k) {
    switch (k) {
      case ErrorKind::kParse:
      case ErrorKind::kSchema:
      case ErrorKind::kDomain: return 422;
      case ErrorKind::kUnscheduled: return 403;
      case ErrorKind::kDuplicate: return 409;
      default: return 500;
    }
  }

  template <typename F>
  void Handle(const httplib::Request& req, httplib::Response& res, F&& body) {
    std::string token = req.get_header_value("Authorization");
    if (token.rfind("Bearer ", 0) == 0) token = token.substr(7);
    const auto worker = service_.Authenticate(std::string(Trim(token)));
    if (!worker) {
      res.status = 401;
      res.set_content(nlohmann::json{{"error", "auth"}, {"message", "unknown worker token"}}.dump(),
                      "application/json");
      return;
    }
    try {
      res.set_content(body(*worker).dump(), "application/json");
    } catch (const Error& e) {
      res.status = StatusFor(e.kind());
      res.set_content(nlohmann::json{{"error", ErrorKindName(e.kind())}, {"message", e.what()}}.dump(),
                      "application/json");
    }
  }

  StudyService& service_;
  httplib::Server server_;
};

}  // namespace kenli
