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

#include "kenli/embeddings.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>
#include <thread>

#include "test_util.hpp"

namespace kenli {
namespace {

Vector V(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

TEST(CosineTest, BasicCases) {
  EXPECT_DOUBLE_EQ(Cosine(V({1, 2, 3}), V({1, 2, 3})), 1.0);
  EXPECT_DOUBLE_EQ(Cosine(V({1, 0}), V({0, 1})), 0.0);
  EXPECT_DOUBLE_EQ(Cosine(V({1, 0}), V({-1, 0})), -1.0);
  EXPECT_DOUBLE_EQ(AbsCosine(V({1, 0}), V({-1, 0})), 1.0);
  EXPECT_DOUBLE_EQ(AbsCosine(V({1, 0}), V({0, 1})), 0.0);
  // (3,4).(4,3) = 24, |.| = 5 each.
  EXPECT_NEAR(AbsCosine(V({3, 4}), V({4, 3})), 24.0 / 25.0, 1e-15);
}

TEST(CosineTest, Errors) {
  try {
    Cosine(V({0, 0}), V({1, 0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDomain);
  }
  try {
    Cosine(V({1, 0, 0}), V({1, 0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
  }
}

TEST(CosineTest, Properties) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> pos(0.01, 100.0);
  for (int t = 0; t < 1000; ++t) {
    const int d = 1 + t % 9;
    Vector u(d), v(d);
    for (int i = 0; i < d; ++i) {
      u[i] = g(rng);
      v[i] = g(rng);
    }
    const double c = Cosine(u, v);
    EXPECT_EQ(c, Cosine(v, u));
    EXPECT_LE(std::abs(c), 1.0 + 1e-12);
    EXPECT_NEAR(Cosine(pos(rng) * u, pos(rng) * v), c, 1e-9);
    EXPECT_EQ(AbsCosine(u, v), AbsCosine(u, -v));
  }
}

TEST(WordVectorTableTest, LookupCaseFoldsAndNeverFabricates) {
  std::istringstream in("3 2\ndog 1 0\n/c/en/cat 0 1\nDOG 5 5\n");
  auto table = WordVectorTable::LoadText(in);
  EXPECT_EQ(table.dimension(), 2);
  EXPECT_EQ(table.size(), 2u);
  auto dog = table.Lookup("Dog");
  ASSERT_TRUE(dog.has_value());
  EXPECT_EQ(*dog, V({1, 0}));
  EXPECT_TRUE(table.Lookup("cat").has_value());
  EXPECT_FALSE(table.Lookup("zebra").has_value());
}

TEST(WordVectorTableTest, SurfaceFormsWhenFoldingDisabled) {
  WordVectorOptions opts;
  opts.case_fold = false;
  std::istringstream in("Dog 1 0\n");
  auto table = WordVectorTable::LoadText(in, opts);
  EXPECT_TRUE(table.Lookup("Dog").has_value());
  EXPECT_FALSE(table.Lookup("dog").has_value());
}

TEST(WordVectorTableTest, UnitNormalization) {
  WordVectorOptions opts;
  opts.normalization = Normalization::kUnit;
  std::istringstream in("a 3 4\nb 0.1 0\n");
  auto table = WordVectorTable::LoadText(in, opts);
  for (const auto& [w, v] : table.entries()) EXPECT_NEAR(v.norm(), 1.0, 1e-6) << w;
}

TEST(WordVectorTableTest, RejectsRaggedRows) {
  std::istringstream in("a 1 2\nb 1\n");
  EXPECT_THROW(WordVectorTable::LoadText(in), Error);
}

TEST(WordVectorTableTest, BinaryCacheRoundTrip) {
  std::istringstream in("a 1 2 3\nb -1 0.5 2\n");
  auto table = WordVectorTable::LoadText(in);
  testing::TempDir dir;
  const auto path = dir.File("wv.bin");
  table.SaveBinary(path);
  auto back = WordVectorTable::LoadBinary(path);
  EXPECT_EQ(back.dimension(), 3);
  EXPECT_EQ(back.size(), 2u);
  EXPECT_EQ(*back.Lookup("b"), *table.Lookup("b"));
  dir.Write("bad.bin", "XXXX");
  EXPECT_THROW(WordVectorTable::LoadBinary(dir.File("bad.bin")), Error);
}

TEST(HashingEmbedderTest, DeterministicFixedDimension) {
  HashingEmbedder e(32);
  const Vector a = e.Embed("The dog is walking in the snow");
  EXPECT_EQ(a.size(), 32);
  EXPECT_EQ(a, e.Embed("The dog is walking in the snow"));
  EXPECT_NEAR(a.norm(), 1.0, 1e-12);
  EXPECT_EQ(e.Embed("").size(), 32);
}

struct CountingEmbedder : SentenceEmbedder {
  int dimension() const override { return 1; }
  Vector Embed(std::string_view) override {
    const int before = inside++;
    if (before != 0) overlapped = true;
    std::this_thread::sleep_for(std::chrono::microseconds(50));
    --inside;
    return Vector::Ones(1);
  }
  std::atomic<int> inside{0};
  std::atomic<bool> overlapped{false};
};

TEST(SerializedEmbedderTest, NonReentrantProviderIsSerialized) {
  auto inner = std::make_shared<CountingEmbedder>();
  auto safe = MakeThreadSafe(inner);
  EXPECT_NE(safe.get(), inner.get());
  std::vector<std::thread> ts;
  for (int t = 0; t < 4; ++t) {
    ts.emplace_back([&] {
      for (int i = 0; i < 50; ++i) safe->Embed("x");
    });
  }
  for (auto& t : ts) t.join();
  EXPECT_FALSE(inner->overlapped.load());
  auto reentrant = std::make_shared<HashingEmbedder>(4);
  EXPECT_EQ(MakeThreadSafe(reentrant).get(), reentrant.get());
}

TEST(HttpSentenceEmbedderTest, WireProtocol) {
  httplib::Server server;
  server.Post("/embed", [](const httplib::Request& req, httplib::Response& res) {
    auto j = nlohmann::json::parse(req.body);
    const double len = static_cast<double>(j.at("text").get<std::string>().size());
    res.set_content(nlohmann::json{{"vector", {len, 1.0, -1.0}}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  HttpSentenceEmbedder e("http://127.0.0.1:" + std::to_string(port), 3);
  EXPECT_EQ(e.Embed("abcd"), V({4, 1, -1}));
  HttpSentenceEmbedder wrong("http://127.0.0.1:" + std::to_string(port), 5);
  EXPECT_THROW(wrong.Embed("x"), Error);
  server.stop();
  th.join();
}

}  // namespace
}  // namespace kenli
