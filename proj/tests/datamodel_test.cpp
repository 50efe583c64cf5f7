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

#include "kenli/datamodel.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "test_util.hpp"

namespace kenli {
namespace {

using testing::TempDir;

TEST(LabelTest, ParseIsCaseInsensitiveAndRoundTrips) {
  for (Label l : kAllLabels) {
    EXPECT_EQ(ParseLabel(LabelName(l)), l);
    std::string upper(LabelName(l));
    for (auto& c : upper) c = static_cast<char>(std::toupper(c));
    EXPECT_EQ(ParseLabel(upper), l);
  }
  EXPECT_EQ(ParseLabel("  Neutral "), Label::kNeutral);
  for (auto bad : {"maybe", "", "entail", "contradictions", "-"}) {
    EXPECT_FALSE(TryParseLabel(bad).has_value()) << bad;
  }
}

TEST(LoadEsnliTest, SingleRow) {
  TempDir dir;
  auto path = dir.Write("a.csv",
                        "gold_label,Sentence1,Sentence2,Explanation_1\n"
                        "entailment,A dog runs.,An animal moves.,a dog is an animal\n");
  auto ds = LoadEsnli(path, Split::kTest);
  ASSERT_EQ(ds.size(), 1u);
  const auto& inst = ds.instances()[0];
  EXPECT_EQ(inst.gold, Label::kEntailment);
  EXPECT_EQ(inst.premise, "A dog runs.");
  EXPECT_EQ(inst.hypothesis, "An animal moves.");
  ASSERT_EQ(inst.references.size(), 1u);
  EXPECT_EQ(inst.references[0], "a dog is an animal");
  EXPECT_EQ(ds.split(), Split::kTest);
}

TEST(LoadEsnliTest, ThreeReferencesQuotedFieldsAndRowOrder) {
  TempDir dir;
  auto path = dir.Write("a.csv",
                        "pairID,gold_label,Sentence1,Sentence2,Explanation_1,Explanation_2,Explanation_3\n"
                        "p1,contradiction,\"A man, smiling.\",A man frowns.,\"not both, \"\"ever\"\"\",b,c\n"
                        "p2,NEUTRAL,x,y,e1,,\n"
                        "p3,-,x,y,e1,e2,e3\n"
                        "p4,entailment,x,y,e1,e2,\n");
  std::ostringstream log;
  auto ds = LoadEsnli(path, Split::kTest, &log);
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.skipped_unlabeled(), 1u);
  EXPECT_NE(log.str().find("skipped 1"), std::string::npos);
  EXPECT_EQ(ds.instances()[0].id, "p1");
  EXPECT_EQ(ds.instances()[0].premise, "A man, smiling.");
  EXPECT_EQ(ds.instances()[0].references,
            (std::vector<std::string>{"not both, \"ever\"", "b", "c"}));
  EXPECT_EQ(ds.instances()[1].gold, Label::kNeutral);
  EXPECT_EQ(ds.instances()[1].references.size(), 1u);
  EXPECT_EQ(ds.instances()[2].id, "p4");
  EXPECT_EQ(ds.instances()[2].references.size(), 2u);
  EXPECT_NE(ds.Find("p2"), nullptr);
  EXPECT_EQ(ds.Find("p3"), nullptr);
}

TEST(LoadEsnliTest, UnknownLabelNamesRow) {
  TempDir dir;
  auto path = dir.Write("a.csv",
                        "gold_label,Sentence1,Sentence2,Explanation_1\n"
                        "entailment,a,b,c\n"
                        "maybe,a,b,c\n");
  try {
    LoadEsnli(path, Split::kTest);
    FAIL() << "expected parse error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("maybe"), std::string::npos);
  }
}

TEST(LoadEsnliTest, MissingColumnIsSchemaError) {
  TempDir dir;
  auto path = dir.Write("a.csv", "gold_label,Sentence1,Explanation_1\nentailment,a,c\n");
  try {
    LoadEsnli(path, Split::kTest);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kSchema);
  }
}

TEST(LoadEsnliTest, RowCountPreserved) {
  TempDir dir;
  std::string csv = "gold_label,Sentence1,Sentence2,Explanation_1\n";
  for (int i = 0; i < 57; ++i) csv += std::string(LabelName(kAllLabels[i % 3])) + ",p" +
                                      std::to_string(i) + ",h,e\n";
  auto ds = LoadEsnli(dir.Write("a.csv", csv), Split::kTrain);
  EXPECT_EQ(ds.size(), 57u);
}

TEST(LoadStressTest, JsonLines) {
  TempDir dir;
  auto path = dir.Write("neg.jsonl",
                        R"({"pairID":"a","gold_label":"entailment","sentence1":"s1","sentence2":"s2"})"
                        "\n"
                        R"({"gold_label":"neutral","sentence1":"s1","sentence2":"s2 and false is not true"})"
                        "\n"
                        R"({"gold_label":"contradiction","sentence1":"x","sentence2":"y"})"
                        "\n");
  auto ds = LoadStress(path, StressCategory::kNegation, StressSubset::kMatched);
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.split(), Split::kStress);
  EXPECT_EQ(ds.name(), "stress/negation/matched");
  for (const auto& inst : ds.instances()) EXPECT_TRUE(inst.references.empty());
  EXPECT_EQ(ds.instances()[0].id, "a");
}

TEST(LoadStressTest, TabSeparated) {
  TempDir dir;
  auto path = dir.Write("ant.tsv",
                        "gold_label\tsentence1\tsentence2\n"
                        "contradiction\tA \"tall\" man.\tA short man.\n"
                        "entailment\ta\tb\n");
  auto ds = LoadStress(path, StressCategory::kAntonymy, StressSubset::kSingle);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.instances()[0].premise, "A \"tall\" man.");
}

TEST(LoadStressTest, RecordLackingHypothesisIsParseError) {
  TempDir dir;
  auto path = dir.Write("x.jsonl", R"({"gold_label":"entailment","sentence1":"s1"})" "\n");
  try {
    LoadStress(path, StressCategory::kSpelling, StressSubset::kSingle);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
  }
}

TEST(PredictionsTest, RoundTripWithEmptyExplanationAndDelimiters) {
  std::vector<Prediction> preds = {
      {"1", "vanilla", Label::kEntailment, ""},
      {"2", "vanilla", Label::kContradiction, "tabs\tand \"quotes\", commas\nnewlines {json}"},
  };
  TempDir dir;
  auto path = dir.File("p.jsonl");
  WritePredictions(preds, path);
  EXPECT_EQ(ReadPredictions(path), preds);
}

TEST(PredictionsTest, DuplicateKeyIsIntegrityError) {
  std::stringstream ss;
  ss << R"({"instance_id":"1","model_id":"m","label":"neutral","explanation":"a"})" << '\n'
     << R"({"instance_id":"1","model_id":"m","label":"entailment","explanation":"b"})" << '\n';
  try {
    ReadPredictions(ss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIntegrity);
  }
}

// read(write(P)) == P over random predictions with unique keys.
TEST(PredictionsTest, RoundTripProperty) {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> byte(1, 255);
  std::uniform_int_distribution<int> len(0, 30);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Prediction> preds;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
      std::string expl;
      for (int k = len(rng); k > 0; --k) {
        // Keep to valid UTF-8: ASCII only.
        expl.push_back(static_cast<char>(byte(rng) % 127 + 1));
      }
      preds.push_back({"id" + std::to_string(i), "m" + std::to_string(i % 3),
                       kAllLabels[static_cast<size_t>(byte(rng) % 3)], expl});
    }
    std::stringstream ss;
    WritePredictions(preds, ss);
    EXPECT_EQ(ReadPredictions(ss), preds);
  }
}

TEST(DatasetTest, DuplicateIdsRejected) {
  NLIInstance a{"x", "p", "h", Label::kEntailment, {"e"}, std::nullopt};
  EXPECT_THROW(Dataset("d", Split::kTest, {a, a}), Error);
}

}  // namespace
}  // namespace kenli
