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

// kenli: command-line entry points.
//
//   ingest       validate datasets, convert word vectors to the binary cache
//   train        train a predict-and-explain model (median of seeds)
//   predict      label and explain a dataset or a stress suite
//   ensemble     basic or consistency-filtered majority vote over voters
//   eval         label accuracy and explanation BLEU
//   stress       stress-test accuracy table
//   plan-study   agreement filter, stratified sample, batch plan, materials
//   serve-study  rating study HTTP service (KENLI_STUDY_ADDR)
//   analyze      mixed-model analysis of study ratings
//   report       Markdown tables, plot data and SVG plots from `analyze`
//
// Every run writes <out>/run_config.json. Failures print one JSON error
// record on stderr (also written to <out>/error.json) and exit 1; usage
// errors exit 2.

#include <signal.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <thread>

#include "kenli/common.hpp"
#include "kenli/datamodel.hpp"
#include "kenli/embeddings.hpp"
#include "kenli/comet_fusion.hpp"
#include "kenli/knowledge_attention.hpp"
#include "kenli/pipeline.hpp"
#include "kenli/predict_explain.hpp"
#include "kenli/alltext_lm.hpp"
#include "kenli/ensemble.hpp"
#include "kenli/metrics.hpp"
#include "kenli/stress_eval.hpp"
#include "kenli/study_service.hpp"
#include "kenli/study_server.hpp"
#include "kenli/glmm.hpp"
#include "report.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;

namespace kenli::cli {
namespace {

struct Run {
  std::string command;
  uint64_t seed = kDefaultSeed;
  json params;
  fs::path out;
};

bool EndsWith(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<uint64_t> SeedList(const json& arr, uint64_t base) {
  std::vector<uint64_t> out;
  for (const auto& e : arr) {
    if (e.is_number_unsigned()) {
      out.push_back(e.get<uint64_t>());
    } else if (e.is_string()) {
      try {
        out.push_back(std::stoull(e.get<std::string>()));
      } catch (const std::exception&) {
        throw Error(ErrorKind::kConfig, "seed '" + e.get<std::string>() + "' is not a non-negative integer");
      }
    } else {
      throw Error(ErrorKind::kConfig, "seeds must be non-negative integers");
    }
  }
  if (out.empty()) {
    for (uint64_t i = 0; i < 5; ++i) out.push_back(base + i);
  }
  return out;
}

std::vector<std::string> Strings(const json& arr) { return arr.get<std::vector<std::string>>(); }

// --- Feature stack (train and predict) ------------------------------------------

struct FeatureStack {
  std::shared_ptr<const WordVectorTable> table;
  std::shared_ptr<CachingKnowledgeClient> knowledge;
  std::unique_ptr<FeatureAssembler> assembler;
};

json FeatureParams(const json& p) {
  json f;
  for (const char* k : {"variant", "vectors", "dim", "encoder", "hidden_dim", "encoder_seed", "rule", "lambda",
                        "knowledge_url", "knowledge_cache", "pos_lexicon", "embed_url", "embed_dim"}) {
    f[k] = p.at(k);
  }
  return f;
}

FeatureStack BuildFeatures(const json& f) {
  const auto variant = ParseModelVariant(f.at("variant").get<std::string>());
  FeatureStack s;
  const auto vectors = Opt(f, "vectors");
  if (vectors.empty()) {
    s.table = std::make_shared<WordVectorTable>(f.at("dim").get<int>());
  } else if (EndsWith(vectors, ".bin")) {
    s.table = std::make_shared<WordVectorTable>(WordVectorTable::LoadBinary(vectors));
  } else {
    s.table = std::make_shared<WordVectorTable>(WordVectorTable::LoadText(vectors));
  }

  FeatureConfig cfg;
  cfg.encoder = ParseEncoderKind(f.at("encoder").get<std::string>());
  cfg.hidden_dim = f.at("hidden_dim").get<int>();
  cfg.encoder_seed = f.at("encoder_seed").get<uint64_t>();
  const auto rule = f.at("rule").get<std::string>();
  cfg.attention.rule = rule == "auto" ? (UsesConstraint(variant) ? AttentionRule::kR1 : AttentionRule::kNone)
                                      : ParseAttentionRule(rule);
  if (!UsesConstraint(variant) && cfg.attention.rule != AttentionRule::kNone) {
    throw Error(ErrorKind::kConfig, "variant '" + std::string(ModelVariantName(variant)) +
                                        "' is unconstrained; attention rule must be none or auto");
  }
  if (UsesConstraint(variant) && cfg.attention.rule == AttentionRule::kNone) {
    throw Error(ErrorKind::kConfig, "variant '" + std::string(ModelVariantName(variant)) + "' needs rule r1 or r2");
  }
  cfg.attention.lambda = f.at("lambda").get<double>();

  std::shared_ptr<BackgroundKnowledge> bg;
  if (UsesBackground(variant)) {
    std::shared_ptr<KnowledgeClient> inner;
    if (const auto url = Opt(f, "knowledge_url"); !url.empty()) {
      inner = std::make_shared<HttpKnowledgeClient>(url);
    } else {
      inner = std::make_shared<TableKnowledgeClient>();
    }
    s.knowledge = std::make_shared<CachingKnowledgeClient>(inner);
    if (const auto cache = Opt(f, "knowledge_cache"); !cache.empty()) s.knowledge->Load(cache);
    std::shared_ptr<SentenceEmbedder> embedder;
    if (const auto url = Opt(f, "embed_url"); !url.empty()) {
      embedder = std::make_shared<HttpSentenceEmbedder>(url, f.at("embed_dim").get<int>());
    } else {
      embedder = std::make_shared<HashingEmbedder>(f.at("embed_dim").get<int>());
    }
    PosLexicon tagger;
    if (const auto lex = Opt(f, "pos_lexicon"); !lex.empty()) tagger.LoadFile(lex);
    bg = std::make_shared<BackgroundKnowledge>(s.knowledge, embedder, RelationSet(), std::move(tagger));
  }
  s.assembler = std::make_unique<FeatureAssembler>(s.table, cfg, bg);
  return s;
}

void AddFeatureParams(Command& c) {
  c.Param("variant", "vanilla", "model variant: vanilla, cont, comet, comet+cont")
      .Param("vectors", nullptr, "word vectors, text or .bin (default: hashed vectors only)")
      .Param("dim", 50, "word vector dimension when --vectors is absent")
      .Param("encoder", "passthrough", "sequence encoder: passthrough or recurrent")
      .Param("hidden_dim", 0, "encoder width (0: word vector width)")
      .Param("encoder_seed", 17, "encoder initialisation seed")
      .Param("rule", "auto", "attention constraint: auto, none, r1, r2")
      .Param("lambda", 1.0, "constraint strength")
      .Param("knowledge_url", nullptr, "knowledge generator endpoint (comet variants)")
      .Param("knowledge_cache", nullptr, "knowledge cache file to preload")
      .Param("pos_lexicon", nullptr, "extra word<TAB>tag lexicon for chunking")
      .Param("embed_url", nullptr, "sentence embedding endpoint (default: hashing embedder)")
      .Param("embed_dim", 64, "sentence embedding dimension");
}

// --- Commands ------------------------------------------------------------------------

json DatasetSummary(const Dataset& ds) {
  std::array<size_t, 3> counts{};
  size_t with_refs = 0;
  for (const auto& x : ds.instances()) {
    if (x.gold) ++counts[static_cast<size_t>(*x.gold)];
    with_refs += !x.references.empty();
  }
  json labels = json::object();
  for (Label l : kAllLabels) labels[std::string(LabelName(l))] = counts[static_cast<size_t>(l)];
  return {{"name", ds.name()},          {"split", SplitName(ds.split())},
          {"instances", ds.size()},     {"skipped_unlabeled", ds.skipped_unlabeled()},
          {"labels", std::move(labels)}, {"with_explanations", with_refs}};
}

void Ingest(const Run& r) {
  const auto& p = r.params;
  json summary = {{"datasets", json::array()}};
  for (const char* split : {"train", "dev", "test"}) {
    const auto path = Opt(p, split);
    if (path.empty()) continue;
    summary["datasets"].push_back(DatasetSummary(LoadEsnli(path, ParseSplit(split), &std::cerr)));
  }
  if (const auto vectors = Opt(p, "vectors"); !vectors.empty()) {
    WordVectorOptions opt;
    const auto norm = p.at("normalization").get<std::string>();
    if (norm == "unit") {
      opt.normalization = Normalization::kUnit;
    } else if (norm != "raw") {
      throw Error(ErrorKind::kConfig, "normalization must be raw or unit");
    }
    const auto table = WordVectorTable::LoadText(vectors, opt);
    table.SaveBinary((r.out / "vectors.bin").string());
    summary["vectors"] = {{"entries", table.size()}, {"dimension", table.dimension()}, {"binary", "vectors.bin"}};
  }
  if (summary["datasets"].empty() && !summary.contains("vectors")) {
    throw Error(ErrorKind::kConfig, "ingest: nothing to do (give --train/--dev/--test or --vectors)");
  }
  WriteJson(r.out / "ingest.json", summary);
}

void Train(const Run& r) {
  const auto& p = r.params;
  auto f = FeatureParams(p);
  auto stack = BuildFeatures(f);
  const auto train = LoadEsnli(Need(p, "train"), Split::kTrain, &std::cerr);
  const auto dev_path = Opt(p, "dev");
  const auto vocab = Vocabulary::Build(ExplanationCorpus(train), p.at("min_count").get<int>());

  TrainingConfig cfg;
  cfg.seeds = SeedList(p.at("seeds"), r.seed);
  cfg.epochs = p.at("epochs").get<int>();
  cfg.learning_rate = p.at("learning_rate").get<double>();
  cfg.alpha = p.at("alpha").get<double>();
  cfg.batch_size = p.at("batch_size").get<int>();
  cfg.max_length = p.at("max_length").get<int>();
  cfg.shape.hidden = p.at("decoder_hidden").get<int>();
  cfg.shape.token_embedding = p.at("token_embedding").get<int>();

  const auto train_ex = BuildExamples(train, *stack.assembler, vocab, cfg.max_length);
  std::vector<TrainingExample> dev_ex;
  if (!dev_path.empty()) {
    dev_ex = BuildExamples(LoadEsnli(dev_path, Split::kDev, &std::cerr), *stack.assembler, vocab, cfg.max_length);
  }
  const auto result = TrainSeeds(train_ex, dev_ex, vocab, cfg);

  json runs = json::array();
  for (const auto& run : result.runs) {
    const auto trace = "loss_seed" + std::to_string(run.seed) + ".csv";
    WriteLossTrace(run.params.loss_trace, (r.out / trace).string());
    runs.push_back({{"seed", run.seed},
                    {"selection_accuracy", run.dev_accuracy},
                    {"final_loss", run.params.loss_trace.empty() ? 0.0 : run.params.loss_trace.back()},
                    {"loss_trace", trace}});
  }
  if (stack.knowledge) {
    const auto cache = (r.out / "knowledge_cache.jsonl").string();
    stack.knowledge->Save(cache);
    f["knowledge_cache"] = cache;
  }
  const auto& selected = result.runs[result.selected];
  WriteJson(r.out / "model.json", {{"format", "kenli.model"},
                                   {"version", 1},
                                   {"model_id", p.at("model_id").is_string() ? p.at("model_id") : p.at("variant")},
                                   {"features", f},
                                   {"checkpoint", ModelToJson(selected.params.model)}});
  WriteJson(r.out / "seeds.json", {{"selection_split", dev_path.empty() ? "train" : "dev"},
                                   {"selected_seed", selected.seed},
                                   {"runs", std::move(runs)}});
}

void Predict(const Run& r) {
  const auto& p = r.params;
  std::ifstream in(Need(p, "model"));
  if (!in) throw Error(ErrorKind::kNotFound, "cannot open model '" + p.at("model").get<std::string>() + "'");
  json mj;
  try {
    mj = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("model file: ") + e.what());
  }
  if (mj.value("format", "") != "kenli.model") throw Error(ErrorKind::kFormat, "not a kenli model file");
  const auto stack = BuildFeatures(mj.at("features"));
  const auto model = ModelFromJson(mj.at("checkpoint"));
  const std::string model_id = Opt(p, "model_id").empty() ? mj.at("model_id").get<std::string>() : Opt(p, "model_id");
  const int threads = p.at("threads").get<int>();

  // (qualifier, instance) pairs; stress ids carry their dataset name.
  std::vector<std::pair<std::string, const NLIInstance*>> work;
  std::vector<Dataset> owned;
  if (const auto manifest = Opt(p, "stress_manifest"); !manifest.empty()) {
    for (auto& [cat, subsets] : LoadStressManifest(manifest, &std::cerr)) {
      for (auto& ds : subsets) owned.push_back(std::move(ds));
    }
  } else {
    owned.push_back(LoadEsnli(Need(p, "input"), ParseSplit(p.at("split").get<std::string>()), &std::cerr));
  }
  const bool qualify = !Opt(p, "stress_manifest").empty();
  for (const auto& ds : owned) {
    for (const auto& x : ds.instances()) work.emplace_back(qualify ? ds.name() : "", &x);
  }
  std::vector<Prediction> preds(work.size());
  ParallelFor(work.size(), threads, [&](size_t i) {
    const auto& [ds, x] = work[i];
    preds[i] = model.Predict(stack.assembler->Features(*x),
                             ds.empty() ? x->id : StressPredictions::QualifiedId(ds, x->id), model_id);
  });
  WritePredictions(preds, (r.out / "predictions.jsonl").string());
}

std::shared_ptr<LMClient> MakeLm(const json& p, const std::string& prefix) {
  const auto transcript = Opt(p, prefix + "_transcript");
  const auto url = Opt(p, prefix + "_url");
  if (!transcript.empty() && !url.empty()) {
    throw Error(ErrorKind::kConfig, "give only one of " + FlagName(prefix + "_transcript") + " and " +
                                        FlagName(prefix + "_url"));
  }
  if (!transcript.empty()) return std::make_shared<TranscriptLMClient>(TranscriptLMClient::Load(transcript));
  if (!url.empty()) return std::make_shared<HttpLMClient>(url);
  throw Error(ErrorKind::kConfig, "need " + FlagName(prefix + "_transcript") + " or " + FlagName(prefix + "_url"));
}

void Ensemble(const Run& r) {
  const auto& p = r.params;
  const auto mode = p.at("mode").get<std::string>();
  if (mode != "basic" && mode != "filtered") throw Error(ErrorKind::kConfig, "mode must be basic or filtered");
  const auto ds = LoadEsnli(Need(p, "input"), ParseSplit(p.at("split").get<std::string>()), &std::cerr);

  json ecfg = {{"fallback_voter", p.at("fallback_voter")},
               {"parallelism", p.at("parallelism")},
               {"max_new_tokens", p.at("max_new_tokens")}};
  if (!p.at("tie_break_priority").empty()) ecfg["tie_break_priority"] = p.at("tie_break_priority");
  const auto cfg = EnsembleConfig::FromJson(ecfg);

  std::vector<Voter> voters;
  for (const auto& [id, path] : NamedPaths(p, "voters")) voters.push_back(TableVoter(id, ReadPredictions(path)));
  if (voters.empty()) throw Error(ErrorKind::kConfig, "ensemble: no --voters given");
  auto lf = MakeLm(p, "lf");
  std::shared_ptr<LMClient> ef = mode == "filtered" ? MakeLm(p, "ef") : nullptr;

  std::vector<Prediction> preds;
  std::vector<VoteRecord> records;
  for (const auto& x : ds.instances()) {
    auto [pred, rec] = mode == "filtered" ? FilteredEnsemble(x, voters, *lf, *ef, cfg) : BasicEnsemble(x, voters, *lf, cfg);
    preds.push_back(std::move(pred));
    records.push_back(std::move(rec));
  }
  WritePredictions(preds, (r.out / "predictions.jsonl").string());
  WriteVoteRecords(records, (r.out / "votes.jsonl").string());
}

void Eval(const Run& r) {
  const auto& p = r.params;
  const auto gold = LoadEsnli(Need(p, "gold"), ParseSplit(p.at("split").get<std::string>()), &std::cerr);
  const auto preds = ReadPredictions(Need(p, "predictions"));
  const auto mode_s = p.at("reference_mode").get<std::string>();
  if (mode_s != "all" && mode_s != "first") throw Error(ErrorKind::kConfig, "reference_mode must be all or first");
  const auto mode = mode_s == "all" ? ReferenceMode::kAll : ReferenceMode::kFirst;
  BleuOptions bo;
  bo.max_n = p.at("max_n").get<int>();
  const auto smooth = p.at("smoothing").get<std::string>();
  if (smooth == "add-one") {
    bo.smoothing = BleuSmoothing::kAddOne;
  } else if (smooth != "none") {
    throw Error(ErrorKind::kConfig, "smoothing must be none or add-one");
  }
  const auto acc = LabelAccuracy(preds, gold.instances());
  const auto bleu = ExplanationBleu(preds, gold.instances(), mode, bo);
  WriteJson(r.out / "metrics.json",
            {{"gold", p.at("gold")},
             {"predictions", p.at("predictions")},
             {"accuracy", {{"correct", acc.correct}, {"total", acc.total}, {"accuracy", acc.accuracy}}},
             {"bleu",
              {{"score", bleu.score},
               {"reference_mode", ReferenceModeName(mode)},
               {"smoothing", smooth},
               {"precisions", bleu.precisions},
               {"matches", bleu.matches},
               {"totals", bleu.totals},
               {"brevity_penalty", bleu.brevity_penalty},
               {"candidate_length", bleu.candidate_length},
               {"reference_length", bleu.reference_length}}}});
}

void Stress(const Run& r) {
  const auto& p = r.params;
  const auto suite = LoadStressManifest(Need(p, "manifest"), &std::cerr);
  std::vector<StressReport> reports;
  json out = json::array();
  for (const auto& [id, path] : NamedPaths(p, "predictions")) {
    reports.push_back(MakeStressReport(id, StressPredictions::FromQualified(ReadPredictions(path)), suite));
    out.push_back(StressReportToJson(reports.back()));
  }
  if (reports.empty()) throw Error(ErrorKind::kConfig, "stress: no --predictions given");
  WriteJson(r.out / "stress.json", out);
  WriteText(r.out / "stress_table.txt", RenderStressTable(reports, p.at("macro").get<bool>()));
}

json PairsToJson(const std::vector<AgreedPair>& v) {
  json a = json::array();
  for (const auto& x : v) a.push_back({{"pair_id", x.pair_id}, {"level", KnowledgeLevelName(x.level)}});
  return a;
}

void PlanStudy(const Run& r) {
  const auto& p = r.params;
  const auto agreed = AgreementFilter(LoadAnnotationsCsv(Need(p, "annotations_a")),
                                      LoadAnnotationsCsv(Need(p, "annotations_b")));
  const auto sample = StratifiedSample(agreed, p.at("n_low").get<size_t>(), p.at("n_high").get<size_t>(), r.seed);
  std::vector<std::string> ids;
  for (const auto& s : sample) ids.push_back(s.pair_id);
  auto conditions = Strings(p.at("conditions"));
  if (conditions.empty()) conditions = StudyConditions();
  const auto plan = BuildPlan(ids, conditions, p.at("ratings_per_cell").get<int>(), p.at("batch_size").get<int>(), r.seed);

  WriteJson(r.out / "agreed.json", PairsToJson(agreed));
  WriteJson(r.out / "sample.json", PairsToJson(sample));
  WriteJson(r.out / "plan.json", PlanToJson(plan));

  const auto shown = NamedPaths(p, "shown");
  const auto input = Opt(p, "input");
  if (input.empty()) {
    if (!shown.empty()) throw Error(ErrorKind::kConfig, "--shown needs --input for the pair texts");
    return;
  }
  const auto ds = LoadEsnli(input, ParseSplit(p.at("split").get<std::string>()), &std::cerr);
  std::map<std::string, std::map<std::string, Prediction>> by_condition;
  for (const auto& [cond, path] : shown) {
    for (auto& pr : ReadPredictions(path)) by_condition[cond].emplace(pr.instance_id, std::move(pr));
  }
  StudyMaterials m;
  std::vector<std::string> missing;
  for (const auto& id : ids) {
    const auto* x = ds.Find(id);
    if (!x) {
      missing.push_back(id + " (text)");
      continue;
    }
    m.pairs[id] = {x->premise, x->hypothesis};
    for (const auto& c : conditions) {
      if (c == "ground-truth") {
        if (!x->gold || x->references.empty()) {
          missing.push_back(id + "/" + c);
        } else {
          m.shown[{id, c}] = {*x->gold, x->references.front()};
        }
        continue;
      }
      auto cit = by_condition.find(c);
      const Prediction* pr = nullptr;
      if (cit != by_condition.end()) {
        auto it = cit->second.find(id);
        if (it != cit->second.end()) pr = &it->second;
      }
      if (!pr) {
        missing.push_back(id + "/" + c);
      } else {
        m.shown[{id, c}] = {pr->label, pr->explanation};
      }
    }
  }
  if (!missing.empty()) {
    const size_t show = std::min<size_t>(missing.size(), 5);
    throw Error(ErrorKind::kCoverage, "plan-study: no material for " + std::to_string(missing.size()) +
                                          " items, e.g. " +
                                          Join(std::vector<std::string>(missing.begin(), missing.begin() + show), ", "));
  }
  WriteJson(r.out / "materials.json", m.ToJson());
}

json ReadJsonFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kNotFound, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, path + ": " + e.what());
  }
}

void ServeStudy(const Run& r) {
  const auto& p = r.params;
  const auto secret = Need(p, "secret");
  auto journal = Opt(p, "journal");
  if (journal.empty()) journal = (r.out / "journal.jsonl").string();
  StudyService service(PlanFromJson(ReadJsonFile(Need(p, "plan"))),
                       StudyMaterials::FromJson(ReadJsonFile(Need(p, "materials"))), journal, secret);
  const auto workers = ReadJsonFile(Need(p, "workers"));
  if (!workers.is_object()) throw Error(ErrorKind::kSchema, "workers file must map token to worker id");
  for (const auto& [token, id] : workers.items()) service.AddWorker(token, id.get<std::string>());

  const auto addr = Opt(p, "addr");
  const auto [host, port] = addr.empty() ? BindAddressFromEnv() : ParseBindAddress(addr);

  // Block the stop signals before any thread starts; one thread waits for them.
  sigset_t stop_set;
  sigemptyset(&stop_set);
  sigaddset(&stop_set, SIGINT);
  sigaddset(&stop_set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_set, nullptr);

  StudyServer server(service, Opt(p, "static_dir"));
  int bound = port;
  if (port == 0) {
    bound = server.BindToAnyPort(host);
    if (bound < 0) throw Error(ErrorKind::kTransport, "cannot bind " + host);
  } else if (!server.Bind(host, port)) {
    throw Error(ErrorKind::kTransport, "cannot bind " + host + ":" + std::to_string(port));
  }
  std::thread([&server, stop_set] {
    int sig = 0;
    sigwait(&stop_set, &sig);
    server.Stop();
  }).detach();
  std::cout << json{{"status", "listening"}, {"host", host}, {"port", bound}, {"journal", journal}}.dump()
            << std::endl;
  server.ListenAfterBind();

  const auto filtered = FilterResponses(service.Records(), p.at("min_batch_seconds").get<double>());
  ExportRatings((r.out / "ratings.jsonl").string(), filtered);
  std::cout << json{{"status", "stopped"}, {"records", filtered.report.records_total},
                    {"discarded", filtered.report.records_discarded}}.dump()
            << std::endl;
}

std::map<std::string, KnowledgeLevel> LoadLevels(const std::string& path) {
  std::map<std::string, KnowledgeLevel> out;
  auto put = [&](const std::string& id, KnowledgeLevel l) {
    auto [it, fresh] = out.emplace(id, l);
    if (!fresh && it->second != l) throw Error(ErrorKind::kIntegrity, path + ": conflicting levels for '" + id + "'");
  };
  if (EndsWith(path, ".json")) {
    for (const auto& e : ReadJsonFile(path)) {
      put(e.at("pair_id").get<std::string>(), ParseKnowledgeLevel(e.at("level").get<std::string>()));
    }
    return out;
  }
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kNotFound, "cannot open '" + path + "'");
  std::vector<std::string> header, row;
  if (!ReadDelimitedRecord(in, ',', header)) throw Error(ErrorKind::kSchema, path + ": empty file");
  const int id_col = detail::FindColumn(header, {"pair_id"});
  const int lvl_col = detail::FindColumn(header, {"level", "commonsense_level"});
  if (id_col < 0 || lvl_col < 0) throw Error(ErrorKind::kSchema, path + ": needs pair_id and level columns");
  while (ReadDelimitedRecord(in, ',', row)) {
    if (row.size() == 1 && Trim(row[0]).empty()) continue;
    if (static_cast<int>(row.size()) <= std::max(id_col, lvl_col)) throw Error(ErrorKind::kSchema, path + ": short row");
    put(std::string(Trim(row[static_cast<size_t>(id_col)])), ParseKnowledgeLevel(row[static_cast<size_t>(lvl_col)]));
  }
  return out;
}

std::vector<RatingRecord> ReadJournalRatings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kNotFound, "cannot open journal '" + path + "'");
  std::vector<RatingRecord> out;
  std::string line;
  size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (Trim(line).empty()) continue;
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorKind::kParse, path + ": line " + std::to_string(n) + " is not JSON");
    if (j.value("type", "") == "rating") out.push_back(RatingFromJson(j.at("record")));
  }
  return out;
}

void Analyze(const Run& r) {
  const auto& p = r.params;
  const auto ratings = Opt(p, "ratings"), journal = Opt(p, "journal");
  if (ratings.empty() == journal.empty()) throw Error(ErrorKind::kConfig, "give exactly one of --ratings and --journal");
  const double min_seconds = p.at("min_batch_seconds").get<double>();

  std::vector<RatingRecord> records;
  std::map<std::string, KnowledgeLevel> levels;
  std::optional<FilterResult> filtered;
  if (!journal.empty()) {
    filtered = FilterResponses(ReadJournalRatings(journal), min_seconds);
  } else if (EndsWith(ratings, ".csv")) {
    std::vector<RatingRecord> raw;
    for (auto& ir : ImportRatingsCsv(ratings, RatingColumns::FromJson(p.at("columns")))) {
      if (ir.level) {
        auto [it, fresh] = levels.emplace(ir.record.pair_id, *ir.level);
        if (!fresh && it->second != *ir.level) {
          throw Error(ErrorKind::kIntegrity, ratings + ": conflicting levels for pair '" + ir.record.pair_id + "'");
        }
      }
      raw.push_back(std::move(ir.record));
    }
    filtered = FilterResponses(raw, min_seconds);
  } else {
    // An export is already filtered.
    for (auto& e : ImportRatings(ratings)) {
      if (!e.discarded) records.push_back(std::move(e.record));
    }
  }
  if (filtered) {
    records = filtered->kept;
    ExportRatings((r.out / "ratings.jsonl").string(), *filtered);
    const auto& d = filtered->report;
    WriteJson(r.out / "discard_report.json", {{"min_batch_seconds", min_seconds},
                                              {"batches_total", d.batches_total},
                                              {"batches_discarded", d.batches_discarded},
                                              {"records_total", d.records_total},
                                              {"records_discarded", d.records_discarded},
                                              {"fraction_discarded", d.fraction_discarded()}});
  }
  if (const auto lp = Opt(p, "levels"); !lp.empty()) {
    for (const auto& [id, l] : LoadLevels(lp)) {
      auto [it, fresh] = levels.emplace(id, l);
      if (!fresh && it->second != l) throw Error(ErrorKind::kIntegrity, "levels file disagrees on pair '" + id + "'");
    }
  }
  if (levels.empty()) throw Error(ErrorKind::kConfig, "analyze: no commonsense levels (give --levels)");

  std::vector<RatingResponse> responses;
  for (const auto& s : Strings(p.at("responses"))) responses.push_back(ParseResponse(s));
  if (responses.empty()) {
    responses = {RatingResponse::kLabelCorrect, RatingResponse::kExplanationCorrect, RatingResponse::kGrammatical,
                 RatingResponse::kCommonsense};
  }
  TukeyOptions tk;
  tk.seed = r.seed;
  GLMMSpec base;
  base.firth = p.at("firth").get<bool>();
  base.zero_variance = p.at("zero_variance").get<bool>();
  base.max_iterations = p.at("max_iterations").get<int>();

  std::vector<std::optional<ResponseAnalysis>> results(responses.size());
  std::vector<std::optional<Error>> errors(responses.size());
  ParallelFor(responses.size(), p.at("threads").get<int>(), [&](size_t i) {
    GLMMSpec spec = base;
    spec.response = responses[i];
    try {
      results[i] = AnalyzeResponse(records, levels, spec, tk);
    } catch (const Error& e) {
      errors[i] = e;
    }
  });

  json summary = {{"records", records.size()}, {"pairs_with_level", levels.size()}, {"responses", json::array()}};
  std::optional<Error> first;
  for (size_t i = 0; i < responses.size(); ++i) {
    const std::string name(ResponseName(responses[i]));
    if (errors[i]) {
      summary["responses"].push_back(
          {{"response", name}, {"status", "error"}, {"kind", ErrorKindName(errors[i]->kind())}, {"message", errors[i]->what()}});
      if (!first) first = errors[i];
      continue;
    }
    const auto& a = *results[i];
    const auto dir = r.out / name;
    fs::create_directories(dir);
    const auto aj = AnalysisToJson(a);
    WriteJson(dir / "analysis.json", aj);
    WriteJson(dir / "lrt.json", aj.at("lrt"));
    WriteJson(dir / "tukey.json", aj.at("tukey"));
    WriteJson(dir / "effects.json", aj.at("effects"));
    summary["responses"].push_back({{"response", name}, {"status", "ok"}, {"dir", name}});
  }
  WriteJson(r.out / "summary.json", summary);
  if (first) throw *first;
}

void Report(const Run& r) {
  const fs::path dir = Need(r.params, "analysis");
  const auto summary = ReadJsonFile((dir / "summary.json").string());
  std::vector<json> analyses;
  for (const auto& s : summary.at("responses")) {
    if (s.at("status") != "ok") continue;
    analyses.push_back(ReadJsonFile((dir / s.at("dir").get<std::string>() / "analysis.json").string()));
  }
  if (analyses.empty()) throw Error(ErrorKind::kNotFound, "report: no successful analyses under " + dir.string());
  WriteText(r.out / "report.md", RenderMarkdown(analyses));
  for (const auto& a : analyses) {
    const auto resp = a.at("response").get<std::string>();
    for (const auto& e : a.at("effects")) {
      const auto stem = "effects_" + resp + "_" + e.at("factor").get<std::string>();
      WriteText(r.out / (stem + ".csv"), EffectsCsv(e));
      WriteText(r.out / (stem + ".svg"), EffectsSvg(e, resp + " by " + e.at("factor").get<std::string>()));
    }
  }
}

void PrintError(const std::string& command, const std::string& kind, const std::string& message,
                const fs::path& out) {
  const json rec = {{"status", "error"}, {"command", command}, {"kind", kind}, {"message", message}};
  std::cerr << rec.dump() << std::endl;
  if (!out.empty()) {
    std::error_code ec;
    fs::create_directories(out, ec);
    std::ofstream f(out / "error.json");
    if (f) f << rec.dump(2) << '\n';
  }
}

}  // namespace
}  // namespace kenli::cli

int main(int argc, char** argv) {
  using namespace kenli;
  using namespace kenli::cli;

  CLI::App app{"kenli: knowledge-augmented NLI with explanations, and the rating-study toolkit"};
  app.set_version_flag("--version", std::string(KENLI_VERSION));
  app.require_subcommand(1, 1);
  std::string config_path;
  std::optional<uint64_t> seed_flag;
  app.add_option("--config", config_path, "JSON config file; flags override it");
  app.add_option("--seed", seed_flag, "global seed (default: config seed, else " + std::to_string(kDefaultSeed) + ")");

  std::vector<std::unique_ptr<Command>> commands;
  std::map<std::string, void (*)(const Run&)> handlers;
  auto add = [&](const char* name, const char* desc, void (*fn)(const Run&)) -> Command& {
    commands.push_back(std::make_unique<Command>(app, name, desc));
    handlers[name] = fn;
    return *commands.back();
  };
  auto& ingest = add("ingest", "validate datasets and convert word vectors", Ingest);
  ingest.Param("train", nullptr, "training CSV")
      .Param("dev", nullptr, "dev CSV")
      .Param("test", nullptr, "test CSV")
      .Param("vectors", nullptr, "word vectors in text form")
      .Param("normalization", "raw", "vector normalisation: raw or unit");

  auto& train = add("train", "train a predict-and-explain model", Train);
  train.Param("train", nullptr, "training CSV").Param("dev", nullptr, "dev CSV for seed selection");
  AddFeatureParams(train);
  train.Param("model_id", nullptr, "name recorded with predictions (default: variant)")
      .Param("seeds", json::array(), "training seeds (default: five from the global seed)")
      .Param("epochs", 200, "epochs per seed")
      .Param("learning_rate", 0.01, "Adam step size")
      .Param("alpha", 0.6, "label-loss weight")
      .Param("batch_size", 16, "minibatch size")
      .Param("max_length", 30, "explanation length cap")
      .Param("min_count", 1, "vocabulary frequency cut-off")
      .Param("decoder_hidden", 32, "decoder state width")
      .Param("token_embedding", 16, "decoder token embedding width");

  add("predict", "label and explain a dataset or stress suite", Predict)
      .Param("model", nullptr, "model.json from train")
      .Param("input", nullptr, "CSV to predict")
      .Param("split", "test", "split of --input")
      .Param("stress_manifest", nullptr, "predict every subset of a stress manifest instead")
      .Param("model_id", nullptr, "override the recorded model id")
      .Param("threads", 1, "worker threads");

  add("ensemble", "majority vote over voter predictions", Ensemble)
      .Param("input", nullptr, "CSV of instances")
      .Param("split", "test", "split of --input")
      .Param("voters", json::array(), "voter as id=predictions.jsonl")
      .Param("mode", "filtered", "basic or filtered")
      .Param("lf_transcript", nullptr, "label-first LM transcript")
      .Param("lf_url", nullptr, "label-first LM endpoint")
      .Param("ef_transcript", nullptr, "explanation-first LM transcript (filtered mode)")
      .Param("ef_url", nullptr, "explanation-first LM endpoint (filtered mode)")
      .Param("tie_break_priority", json::array(), "voter ids, highest priority first")
      .Param("fallback_voter", "gpt-lf", "used when no voter is consistent")
      .Param("parallelism", 1, "concurrent voter calls")
      .Param("max_new_tokens", 60, "LM generation cap");

  add("eval", "label accuracy and explanation BLEU", Eval)
      .Param("gold", nullptr, "gold CSV")
      .Param("split", "test", "split of --gold")
      .Param("predictions", nullptr, "predictions JSONL")
      .Param("reference_mode", "all", "BLEU references: all or first")
      .Param("smoothing", "none", "BLEU smoothing: none or add-one")
      .Param("max_n", 4, "highest BLEU n-gram order");

  add("stress", "stress-test accuracy table", Stress)
      .Param("manifest", nullptr, "stress manifest JSON")
      .Param("predictions", json::array(), "model=predictions.jsonl with dataset-qualified ids")
      .Param("macro", false, "table shows macro averages over subsets");

  add("plan-study", "sample pairs and build the rating plan", PlanStudy)
      .Param("annotations_a", nullptr, "first annotator's level CSV")
      .Param("annotations_b", nullptr, "second annotator's level CSV")
      .Param("n_low", 50, "low-knowledge pairs to sample")
      .Param("n_high", 50, "high-knowledge pairs to sample")
      .Param("conditions", json::array(), "study conditions (default: the eight standard ones)")
      .Param("ratings_per_cell", 5, "ratings per (pair, condition)")
      .Param("batch_size", 10, "items per batch")
      .Param("input", nullptr, "CSV with the pair texts (writes materials.json)")
      .Param("split", "test", "split of --input")
      .Param("shown", json::array(), "condition=predictions.jsonl shown to raters");

  add("serve-study", "run the rating study service", ServeStudy)
      .Param("plan", nullptr, "plan.json from plan-study")
      .Param("materials", nullptr, "materials.json from plan-study")
      .Param("workers", nullptr, "JSON object mapping worker token to worker id")
      .Param("secret", nullptr, "slot-token secret")
      .Param("journal", nullptr, "journal path (default: <out>/journal.jsonl)")
      .Param("static_dir", nullptr, "directory served at /")
      .Param("addr", nullptr, std::string("host:port (default: $") + kStudyAddressEnv + ", else 127.0.0.1:8080)")
      .Param("min_batch_seconds", 300.0, "batch time floor for the export written at shutdown");

  add("analyze", "mixed-model analysis of study ratings", Analyze)
      .Param("ratings", nullptr, "ratings export (.jsonl) or CSV")
      .Param("journal", nullptr, "study journal instead of --ratings")
      .Param("columns", json::object(), "CSV column mapping as a JSON object")
      .Param("levels", nullptr, "pair levels: sample.json or CSV pair_id,level")
      .Param("responses", json::array(), "responses to fit (default: all four)")
      .Param("min_batch_seconds", 300.0, "batch time floor for CSV and journal input")
      .Param("firth", false, "penalised fit for separated designs")
      .Param("zero_variance", false, "fix both variance components at zero")
      .Param("max_iterations", 200, "optimizer iteration cap")
      .Param("threads", 4, "responses fitted concurrently");

  add("report", "render tables and plots from an analyze directory", Report)
      .Param("analysis", nullptr, "output directory of analyze");

  for (auto& c : commands) c->app()->add_option("--out", "output directory")->expected(1)->type_name("DIR");
  std::map<std::string, std::string> outs;
  for (auto& c : commands) {
    c->app()->get_option("--out")->each([&outs, n = c->name()](const std::string& v) { outs[n] = v; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    // Usage of the subcommand that failed to parse, else of the tool.
    const CLI::App* scope = &app;
    for (const auto* sub : app.get_subcommands()) scope = sub;
    std::cerr << e.what() << "\n\n" << scope->help();
    PrintError(scope == &app ? "" : scope->get_name(), "usage", e.what(), {});
    return 2;
  }

  const Command* cmd = nullptr;
  for (auto& c : commands) {
    if (c->app()->parsed()) cmd = c.get();
  }
  Run run;
  run.command = cmd->name();
  try {
    if (auto it = outs.find(run.command); it != outs.end()) {
      run.out = it->second;
    } else {
      throw Error(ErrorKind::kConfig, "missing required parameter --out");
    }
    std::set<std::string> names;
    for (auto& c : commands) names.insert(c->name());
    const auto cfg = LoadConfigFile(config_path, names);
    if (seed_flag) {
      run.seed = *seed_flag;
    } else if (cfg.contains("seed")) {
      run.seed = cfg["seed"].get<uint64_t>();
    }
    run.params = cmd->Resolve(cfg.contains(run.command) ? cfg[run.command] : json());
    WriteSnapshot(run.out, run.command, run.seed, run.params);
    handlers.at(run.command)(run);
  } catch (const Error& e) {
    PrintError(run.command, std::string(ErrorKindName(e.kind())), e.what(), run.out);
    return 1;
  } catch (const std::exception& e) {
    PrintError(run.command, "internal", e.what(), run.out);
    return 1;
  }
  return 0;
}
