// SPDX-License-Identifier: Apache-2.0
#include "dsner/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

#include "dsner/augmentation.hpp"
#include "dsner/checkpoint.hpp"
#include "dsner/ensemble.hpp"
#include "dsner/error.hpp"
#include "dsner/evaluation.hpp"
#include "dsner/gazetteer.hpp"
#include "dsner/harness.hpp"
#include "dsner/rng.hpp"
#include "dsner/robust.hpp"
#include "dsner/self_training.hpp"
#include "dsner/tagger.hpp"
#include "dsner/util.hpp"

namespace dsner {

namespace fs = std::filesystem;

fs::path Layout::member(std::size_t k) const {
  return root / "robust" / ("member_" + std::to_string(k) + ".ckpt");
}
fs::path Layout::member_weights(std::size_t k) const {
  return root / "robust" / ("member_" + std::to_string(k) + ".weights.tsv");
}
fs::path Layout::ab_table(const std::string& protocol) const {
  return root / "ab" / (protocol + ".txt");
}
fs::path Layout::ab_kv(const std::string& protocol) const { return root / "ab" / (protocol + ".kv"); }
fs::path Layout::stage_manifest(const std::string& stage) const {
  return root / "manifests" / (stage + ".txt");
}

namespace {

// Streams that separate the stages' randomness under one recipe seed.
constexpr std::uint64_t kAugmentStream = 20;

void say(const PipelineContext& ctx, const std::string& line) {
  if (ctx.log) *ctx.log << line << '\n' << std::flush;
}

void require_input(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) throw MissingArtifactError(path.string(), producer);
}

const fs::path& prepare(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  return path;
}

std::ofstream open_out(const fs::path& path) {
  prepare(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path train_input(const PipelineContext& ctx) {
  if (ctx.recipe.data.synthetic) {
    const fs::path p = ctx.layout().synth_train();
    require_input(p, "synth-bench");
    return p;
  }
  if (ctx.recipe.data.train.empty()) throw ConfigError("data.train is not set");
  return ctx.recipe.data.train;
}

fs::path gazetteer_input(const PipelineContext& ctx) {
  if (ctx.recipe.data.synthetic) {
    const fs::path p = ctx.layout().synth_gazetteer();
    require_input(p, "synth-bench");
    return p;
  }
  if (ctx.recipe.data.gazetteer.empty()) throw ConfigError("data.gazetteer is not set");
  return ctx.recipe.data.gazetteer;
}

fs::path gold_input(const PipelineContext& ctx) {
  if (ctx.recipe.data.synthetic) {
    const fs::path p = ctx.layout().synth_test();
    require_input(p, "synth-bench");
    return p;
  }
  if (ctx.recipe.data.test.empty()) throw ConfigError("data.test is not set");
  return ctx.recipe.data.test;
}

TagScheme load_types(const PipelineContext& ctx) {
  const fs::path p = ctx.layout().distant_types();
  require_input(p, "distant-label");
  std::vector<std::string> types;
  std::istringstream in(read_text(p));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) types.push_back(line);
  }
  return TagScheme(std::move(types));
}

std::shared_ptr<const FeatureStore> load_features(const PipelineContext& ctx) {
  if (ctx.recipe.model.kind != EncoderKind::kPretrainedAdapter) return nullptr;
  if (ctx.recipe.data.features.empty()) {
    throw ConfigError("model.encoder=adapter requires data.features");
  }
  return std::make_shared<const FeatureStore>(FeatureStore::load(ctx.recipe.data.features));
}

struct DistantCorpus {
  TagScheme scheme;
  std::vector<Sentence> sentences;
  std::vector<LabelAssignment> labels;
};

DistantCorpus load_distant(const PipelineContext& ctx) {
  DistantCorpus d;
  d.scheme = load_types(ctx);
  const fs::path p = ctx.layout().distant_labels();
  require_input(p, "distant-label");
  auto seqs = read_corpus_as(p, d.scheme, "train", static_cast<std::size_t>(ctx.recipe.model.max_length));
  for (auto& ls : seqs) {
    if (!ls.labels) throw SchemaError(p.string() + ": distant labels missing for '" + ls.sentence.id + "'");
    d.labels.push_back(std::move(*ls.labels));
    d.sentences.push_back(std::move(ls.sentence));
  }
  return d;
}

CheckpointMeta meta_for(const PipelineContext& ctx, std::uint64_t seed, const std::string& stage,
                        std::uint64_t iteration) {
  CheckpointMeta m;
  m.seed = seed;
  m.stage = stage;
  m.iteration = iteration;
  m.recipe = ctx.recipe.to_map();
  return m;
}

std::unique_ptr<MlmAdapter> make_adapter(const PipelineContext& ctx, std::span<const Sentence> corpus,
                                         std::unique_ptr<Benchmark>& bench_holder) {
  const auto& kind = ctx.recipe.augment.adapter;
  if (kind == "external") return ExternalMlm::from_environment();
  if (kind == "oracle") {
    if (!ctx.recipe.data.synthetic) {
      throw ConfigError("augment.adapter=oracle needs data.synthetic=true (it reads the generator)");
    }
    bench_holder = std::make_unique<Benchmark>(make_benchmark(ctx.recipe.bench, ctx.recipe.seed));
    return std::make_unique<OracleMlm>(bench_holder->grammar);
  }
  return std::make_unique<CorpusMlm>(corpus);
}

}  // namespace

std::vector<LabeledSentence> read_corpus_as(const fs::path& path, const TagScheme& scheme,
                                            const std::string& prefix, std::size_t max_length) {
  auto seqs = read_column_corpus(path, scheme, max_length);
  for (std::size_t i = 0; i < seqs.size(); ++i) seqs[i].sentence.id = prefix + ":" + std::to_string(i);
  return seqs;
}

const std::vector<std::string>& stage_order(bool synthetic) {
  static const std::vector<std::string> files = {"distant-label", "train-robust", "distill",
                                                 "augment",       "self-train",   "evaluate"};
  static const std::vector<std::string> synth = {"synth-bench", "distant-label", "train-robust",
                                                 "distill",     "augment",       "self-train",
                                                 "evaluate"};
  return synthetic ? synth : files;
}

StageRecord synth_bench(const PipelineContext& ctx, const std::vector<std::string>& protocols,
                        const std::vector<std::uint64_t>& seeds) {
  const Layout L = ctx.layout();
  const TrainRecipe& r = ctx.recipe;
  say(ctx, "synth-bench: generating " + std::to_string(r.bench.train_size) + " train / " +
               std::to_string(r.bench.test_size) + " test sequences");
  const Benchmark bench = make_benchmark(r.bench, r.seed);
  const TagScheme& scheme = bench.grammar.scheme();

  std::vector<LabeledSentence> train, train_gold, test;
  for (std::size_t s = 0; s < bench.train.sentences.size(); ++s) {
    train.push_back({bench.train.sentences[s], std::nullopt});
    train_gold.push_back({bench.train.sentences[s], LabelAssignment::from_labels(bench.train.gold[s])});
  }
  for (std::size_t s = 0; s < bench.test.sentences.size(); ++s) {
    test.push_back({bench.test.sentences[s], LabelAssignment::from_labels(bench.test.gold[s])});
  }
  fs::create_directories(L.synth_train().parent_path());
  write_column_corpus(train, L.synth_train(), scheme);
  write_column_corpus(train_gold, L.synth_train_gold(), scheme);
  write_column_corpus(test, L.synth_test(), scheme);

  // Lexicon gazetteer with word-level misses and type confusions at the
  // benchmark's deletion and flip rates.
  const Gazetteer gaz = bench.grammar.make_gazetteer(r.bench.deletion_rate, r.bench.flip_rate,
                                                     derive_seed(r.seed, 14));
  {
    auto out = open_out(L.synth_gazetteer());
    for (const auto& e : gaz.entries()) out << join(e.phrase, " ") << '\t' << e.type << '\n';
  }

  StageRecord rec{"synth-bench", {}, {}};
  rec.artifacts = {{"synth.train", L.synth_train()},
                   {"synth.train_gold", L.synth_train_gold()},
                   {"synth.test", L.synth_test()},
                   {"synth.gazetteer", L.synth_gazetteer()}};
  rec.metrics["gazetteer_entries"] = std::to_string(gaz.size());

  if (!protocols.empty()) {
    const std::vector<std::uint64_t> use =
        seeds.empty() ? std::vector<std::uint64_t>{r.seed, r.seed + 1, r.seed + 2} : seeds;
    Lab lab(r);
    for (const auto& p : protocols) {
      say(ctx, "synth-bench: protocol " + p);
      const AbReport report = run_ab(p, lab, use);
      write_text(L.ab_table(p), report.to_table());
      write_text(L.ab_kv(p), report.to_kv());
      rec.artifacts.push_back({"ab." + p, L.ab_kv(p)});
    }
  }
  write_stage_manifest(ctx, rec);
  return rec;
}

StageRecord distant_label(const PipelineContext& ctx) {
  const Layout L = ctx.layout();
  const fs::path train_path = train_input(ctx);
  const fs::path gaz_path = gazetteer_input(ctx);
  Gazetteer gaz = Gazetteer::load(gaz_path);
  std::vector<std::string> types;
  if (ctx.recipe.data.types.empty()) {
    types = gaz.types();
  } else {
    for (const auto& t : split(ctx.recipe.data.types, ',')) types.emplace_back(trim(t));
    // Entries of other types are dropped rather than matched.
    Gazetteer kept;
    for (const auto& e : gaz.entries()) {
      if (std::find(types.begin(), types.end(), e.type) != types.end()) kept.add(e.phrase, e.type);
    }
    gaz = std::move(kept);
  }
  if (types.empty()) throw ConfigError("no entity types: set data.types or use a non-empty gazetteer");
  const TagScheme scheme(types);

  // Labels in the input file, if any, are ignored; only tokens are read.
  auto seqs = read_corpus_as(train_path, TagScheme(scan_entity_types(train_path)), "train",
                             static_cast<std::size_t>(ctx.recipe.model.max_length));
  const auto sentences = sentences_of(seqs);
  auto labels = match_gazetteer(sentences, gaz, scheme, ctx.recipe.data.case_sensitive);
  std::vector<LabeledSentence> out;
  std::size_t entity_tokens = 0, tokens = 0;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    for (int y : labels[s].labels) entity_tokens += TagScheme::is_entity(y);
    tokens += sentences[s].size();
    out.push_back({sentences[s], std::move(labels[s])});
  }
  fs::create_directories(L.distant_labels().parent_path());
  write_column_corpus(out, L.distant_labels(), scheme);
  write_text(L.distant_types(), join(scheme.entity_types(), "\n") + "\n");
  {
    auto amb = open_out(L.distant_ambiguity());
    for (const auto& a : ambiguity_report(gaz)) amb << a.phrase << '\t' << join(a.types, ",") << '\n';
  }
  say(ctx, "distant-label: " + std::to_string(sentences.size()) + " sequences, " +
               std::to_string(entity_tokens) + "/" + std::to_string(tokens) + " entity tokens");

  StageRecord rec{"distant-label", {}, {}};
  rec.artifacts = {{"distant.labels", L.distant_labels()},
                   {"distant.types", L.distant_types()},
                   {"distant.ambiguity", L.distant_ambiguity()}};
  rec.metrics["sequences"] = std::to_string(sentences.size());
  rec.metrics["entity_tokens"] = std::to_string(entity_tokens);
  write_stage_manifest(ctx, rec);
  return rec;
}

StageRecord train_robust_stage(const PipelineContext& ctx) {
  const Layout L = ctx.layout();
  const TrainRecipe& r = ctx.recipe;
  const DistantCorpus d = load_distant(ctx);
  const auto features = load_features(ctx);
  const Vocabulary vocab = Vocabulary::build(d.sentences);
  const TaggerModel shape = initial_model(r.model, d.scheme, vocab, r.seed, r.seed, features);

  EnsembleSpec spec;
  spec.members = r.ensemble.members;
  spec.base_seed = r.seed;
  const RobustConfig cfg = RobustConfig::from_recipe(r, r.seed);
  say(ctx, "train-robust: " + std::to_string(spec.members) + " members, " +
               std::to_string(r.robust.epochs) + " epochs, " + std::to_string(ctx.threads) +
               " thread(s)");
  const auto results = train_members(spec, cfg, shape, d.sentences, d.labels, ctx.threads);

  StageRecord rec{"train-robust", {}, {}};
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto& res = results[k];
    save_model(res.model, meta_for(ctx, spec.member_seed(k), "robust", r.robust.epochs), prepare(L.member(k)));
    auto w = open_out(L.member_weights(k));
    w << "sequence\ttoken\tlabel\tincluded\tweight\n";
    std::size_t zeroed = 0;
    for (std::size_t s = 0; s < res.assignments.size(); ++s) {
      const auto& a = res.assignments[s];
      for (std::size_t i = 0; i < a.size(); ++i) {
        w << d.sentences[s].id << '\t' << i << '\t' << d.scheme.name(a.labels[i]) << '\t'
          << int(a.included[i]) << '\t' << int(a.weight[i]) << '\n';
        zeroed += a.included[i] && !a.weight[i];
      }
    }
    rec.artifacts.push_back({"robust.member_" + std::to_string(k), L.member(k)});
    rec.artifacts.push_back({"robust.weights_" + std::to_string(k), L.member_weights(k)});
    rec.metrics["member_" + std::to_string(k) + ".zeroed"] = std::to_string(zeroed);
    say(ctx, "train-robust: member " + std::to_string(k) + " zeroed " + std::to_string(zeroed) +
                 " tokens");
  }
  write_stage_manifest(ctx, rec);
  return rec;
}

StageRecord distill_stage(const PipelineContext& ctx) {
  const Layout L = ctx.layout();
  const TrainRecipe& r = ctx.recipe;
  const DistantCorpus d = load_distant(ctx);
  const auto features = load_features(ctx);
  std::vector<TaggerModel> members;
  for (std::size_t k = 0; k < r.ensemble.members; ++k) {
    require_input(L.member(k), "train-robust");
    members.push_back(load_model(L.member(k), features).model);
  }
  const TaggerModel& m0 = members.front();
  TaggerModel init = initial_model(m0.spec, m0.scheme, m0.vocab, r.seed, r.seed, features);
  DistillConfig dc;
  dc.epochs = r.ensemble.epochs;
  dc.batch_size = r.robust.batch_size;
  dc.lr = r.ensemble_lr();
  dc.seed = r.seed;
  say(ctx, "distill: " + std::to_string(members.size()) + " members into one model");
  const DistillResult res = distill(members, std::move(init), d.sentences, dc);
  save_model(res.model, meta_for(ctx, r.seed, "ensemble", dc.epochs), prepare(L.ensemble_model()));
  write_text(L.ensemble_stats(), "final_kl=" + format_double(res.final_kl) + "\n");
  say(ctx, "distill: final KL " + format_double(res.final_kl));

  StageRecord rec{"distill", {}, {}};
  rec.artifacts = {{"ensemble.model", L.ensemble_model()}, {"ensemble.stats", L.ensemble_stats()}};
  rec.metrics["final_kl"] = format_double(res.final_kl);
  write_stage_manifest(ctx, rec);
  return rec;
}

StageRecord augment_stage(const PipelineContext& ctx) {
  const Layout L = ctx.layout();
  const TrainRecipe& r = ctx.recipe;
  const DistantCorpus d = load_distant(ctx);
  std::unique_ptr<Benchmark> bench;
  auto adapter = make_adapter(ctx, d.sentences, bench);
  auto audit = open_out(L.augment_audit());
  audit << "sequence\tposition\toriginal\treplacement\toutcome\trank\n";
  const AugmentedCorpus aug = augment_corpus(d.sentences, *adapter, r.augment.mask_rate, r.augment.top_k,
                                             derive_seed(r.seed, kAugmentStream), &audit);
  std::vector<LabeledSentence> seqs;
  std::string index;
  for (std::size_t s = 0; s < aug.pairs.size(); ++s) {
    if (!aug.pairs[s]) continue;
    seqs.push_back({aug.pairs[s]->sentence, std::nullopt});
    index += std::to_string(s) + "\n";
  }
  write_column_corpus(seqs, prepare(L.augmented()), d.scheme);
  write_text(L.augmented_index(), index);
  for (const auto& w : aug.warnings) say(ctx, "augment: warning: " + w);
  say(ctx, "augment: " + std::to_string(seqs.size()) + " pairs, " + std::to_string(aug.skipped) +
               " skipped");

  StageRecord rec{"augment", {}, {}};
  rec.artifacts = {{"augment.pairs", L.augmented()},
                   {"augment.index", L.augmented_index()},
                   {"augment.audit", L.augment_audit()}};
  rec.metrics["pairs"] = std::to_string(seqs.size());
  rec.metrics["skipped"] = std::to_string(aug.skipped);
  write_stage_manifest(ctx, rec);
  return rec;
}

StageRecord self_train_stage(const PipelineContext& ctx) {
  const Layout L = ctx.layout();
  const TrainRecipe& r = ctx.recipe;
  const DistantCorpus d = load_distant(ctx);
  const auto features = load_features(ctx);
  require_input(L.ensemble_model(), "distill");
  TaggerModel init = load_model(L.ensemble_model(), features).model;

  std::vector<std::optional<AugmentedSequence>> pairs;
  if (r.self_train.use_augmentation) {
    require_input(L.augmented(), "augment");
    require_input(L.augmented_index(), "augment");
    auto seqs = read_column_corpus(L.augmented(), d.scheme, 0);
    std::istringstream idx(read_text(L.augmented_index()));
    pairs.resize(d.sentences.size());
    std::size_t j = 0;
    for (std::string line; std::getline(idx, line);) {
      if (line.empty()) continue;
      const auto s = static_cast<std::size_t>(parse_int(line));
      if (j >= seqs.size() || s >= pairs.size() || seqs[j].sentence.size() != d.sentences[s].size()) {
        throw SchemaError(L.augmented_index().string() + ": does not match " + L.augmented().string() +
                          "; rerun 'augment'");
      }
      AugmentedSequence a;
      a.sentence = std::move(seqs[j].sentence);
      a.sentence.id = d.sentences[s].id + "+aug";
      a.provenance.assign(a.sentence.size(), Provenance::kUnmasked);
      a.rank.assign(a.sentence.size(), 0);
      pairs[s] = std::move(a);
      ++j;
    }
    if (j != seqs.size()) throw SchemaError(L.augmented_index().string() + ": too few entries");
  }
  SelfTrainConfig sc;
  sc.iterations = r.self_train.iterations;
  sc.batch_size = r.self_train.batch_size;
  sc.lr = r.self_train_lr();
  sc.confidence_margin = r.self_train.confidence_margin;
  sc.use_augmentation = r.self_train.use_augmentation;
  sc.per_batch_frequencies = r.self_train.per_batch_frequencies;
  sc.seed = r.seed;
  say(ctx, "self-train: " + std::to_string(sc.iterations) + " iterations");
  const SelfTrainResult res = self_train(std::move(init), d.sentences, pairs, sc);
  save_model(res.model, meta_for(ctx, r.seed, "self-train", sc.iterations), prepare(L.final_model()));
  {
    auto log = open_out(L.self_train_log());
    write_self_train_log(log, res.log);
  }
  StageRecord rec{"self-train", {}, {}};
  rec.artifacts = {{"self_train.model", L.final_model()}, {"self_train.log", L.self_train_log()}};
  if (!res.log.empty()) rec.metrics["final_mean_loss"] = format_double(res.log.back().mean_loss);
  write_stage_manifest(ctx, rec);
  return rec;
}

StageRecord evaluate_stage(const PipelineContext& ctx, const fs::path& model_path,
                           const fs::path& gold_path) {
  const Layout L = ctx.layout();
  const fs::path mp = model_path.empty() ? L.final_model() : model_path;
  require_input(mp, "self-train");
  const fs::path gp = gold_path.empty() ? gold_input(ctx) : gold_path;
  const auto features = load_features(ctx);
  const TaggerModel model = load_model(mp, features).model;
  auto gold_seqs = read_corpus_as(gp, model.scheme, "test", 0);
  std::vector<std::vector<int>> pred, gold;
  for (const auto& ls : gold_seqs) {
    if (!ls.labels) throw SchemaError(gp.string() + ": gold labels missing for '" + ls.sentence.id + "'");
    pred.push_back(decode_argmax(predict(model, ls.sentence).probs));
    gold.push_back(ls.labels->labels);
  }
  const EvaluationReport report = evaluate_labels(pred, gold, model.scheme);
  write_text(L.report_table(), render_report_table(report));
  write_text(L.report_kv(), render_report_kv(report));
  say(ctx, "evaluate: entity F1 " + format_double(report.overall.f1));

  StageRecord rec{"evaluate", {}, {}};
  rec.artifacts = {{"eval.report", L.report_table()}, {"eval.report_kv", L.report_kv()}};
  rec.metrics["f1"] = format_double(report.overall.f1);
  rec.metrics["precision"] = format_double(report.overall.precision);
  rec.metrics["recall"] = format_double(report.overall.recall);
  write_stage_manifest(ctx, rec);
  return rec;
}

std::string RunManifest::to_text() const {
  std::ostringstream out;
  out << "config_hash=" << config_hash << '\n';
  out << "seed=" << seed << '\n';
  out << "members=" << members << '\n';
  std::vector<std::string> names;
  for (const auto& s : stages) names.push_back(s.stage);
  out << "stages=" << join(names, ",") << '\n';
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    const std::string pre = "stage." + std::to_string(i) + ".";
    out << pre << "name=" << s.stage << '\n';
    for (const auto& [name, path] : s.artifacts) {
      out << pre << "artifact." << name << '=' << path.generic_string() << '\n';
      out << pre << "digest." << name << '=' << file_digest(path) << '\n';
    }
    for (const auto& [k, v] : s.metrics) out << pre << "metric." << k << '=' << v << '\n';
  }
  return out.str();
}

void write_stage_manifest(const PipelineContext& ctx, const StageRecord& record) {
  const Layout L = ctx.layout();
  write_text(L.config(), ctx.recipe.to_text());
  RunManifest m;
  m.config_hash = recipe_hash(ctx.recipe);
  m.seed = ctx.recipe.seed;
  m.members = ctx.recipe.ensemble.members;
  m.stages.push_back(record);
  write_text(L.stage_manifest(record.stage), m.to_text());
}

RunManifest run_all(const PipelineContext& ctx) {
  RunManifest m;
  m.config_hash = recipe_hash(ctx.recipe);
  m.seed = ctx.recipe.seed;
  m.members = ctx.recipe.ensemble.members;
  for (const auto& stage : stage_order(ctx.recipe.data.synthetic)) {
    if (stage == "synth-bench") m.stages.push_back(synth_bench(ctx));
    else if (stage == "distant-label") m.stages.push_back(distant_label(ctx));
    else if (stage == "train-robust") m.stages.push_back(train_robust_stage(ctx));
    else if (stage == "distill") m.stages.push_back(distill_stage(ctx));
    else if (stage == "augment") m.stages.push_back(augment_stage(ctx));
    else if (stage == "self-train") m.stages.push_back(self_train_stage(ctx));
    else m.stages.push_back(evaluate_stage(ctx));
  }
  write_text(ctx.layout().manifest(), m.to_text());
  return m;
}

}  // namespace dsner
