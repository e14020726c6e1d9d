// SPDX-License-Identifier: Apache-2.0
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dsner/augmentation.hpp"
#include "dsner/error.hpp"
#include "dsner/evaluation.hpp"
#include "dsner/gazetteer.hpp"
#include "dsner/harness.hpp"
#include "dsner/pipeline.hpp"
#include "dsner/prob.hpp"
#include "dsner/recipe.hpp"
#include "dsner/self_training.hpp"
#include "dsner/tagger.hpp"

namespace py = pybind11;
using namespace dsner;

namespace {

LabelAssignment assignment(const std::vector<int>& labels, const std::optional<std::vector<int>>& mask) {
  auto a = LabelAssignment::from_labels(labels);
  if (mask) {
    if (mask->size() != labels.size()) throw ShapeError("mask and labels differ in length");
    for (std::size_t i = 0; i < labels.size(); ++i) a.included[i] = (*mask)[i] != 0;
  }
  return a;
}

py::dict loss_dict(const LossResult& r) {
  py::dict d;
  d["value"] = r.value;
  d["grad"] = r.grad;
  d["contributing"] = r.contributing;
  return d;
}

py::dict prf_dict(const Prf& p) {
  py::dict d;
  d["precision"] = p.precision;
  d["recall"] = p.recall;
  d["f1"] = p.f1;
  d["true_positives"] = p.true_positives;
  d["predicted"] = p.predicted;
  d["gold"] = p.gold;
  return d;
}

std::vector<EntitySpan> to_spans(const std::vector<std::tuple<int, int, int>>& t) {
  std::vector<EntitySpan> out;
  for (const auto& [s, e, y] : t) out.push_back({s, e, y});
  return out;
}

std::vector<std::tuple<int, int, int>> from_spans(const std::vector<EntitySpan>& spans) {
  std::vector<std::tuple<int, int, int>> out;
  for (const auto& s : spans) out.emplace_back(s.start, s.end, s.type);
  return out;
}

std::vector<Sentence> to_sentences(const std::vector<std::vector<std::string>>& tokens) {
  std::vector<Sentence> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) out.push_back(Sentence::from_tokens("py:" + std::to_string(i), tokens[i]));
  return out;
}

TrainRecipe recipe_from(const std::optional<std::filesystem::path>& config,
                        const std::vector<std::string>& overrides) {
  TrainRecipe r = config ? load_recipe(*config) : TrainRecipe{};
  apply_overrides(r, overrides);
  return r;
}

py::dict record_dict(const StageRecord& rec) {
  py::dict d;
  d["stage"] = rec.stage;
  py::dict art;
  for (const auto& [k, v] : rec.artifacts) art[py::str(k)] = v.string();
  d["artifacts"] = art;
  d["metrics"] = rec.metrics;
  return d;
}

class PyTagger {
 public:
  explicit PyTagger(const std::filesystem::path& path) : model_(load_model(path).model) {}

  std::vector<std::string> types() const { return model_.scheme.entity_types(); }

  Mat probabilities(const std::vector<std::string>& tokens) const {
    return predict(model_, Sentence::from_tokens("py", tokens)).probs;
  }

  std::vector<std::string> tag(const std::vector<std::string>& tokens) const {
    std::vector<std::string> out;
    for (int y : decode_argmax(probabilities(tokens))) out.push_back(model_.scheme.name(y));
    return out;
  }

 private:
  TaggerModel model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Distantly supervised NER: losses, soft labels, evaluation and the training pipeline";

  // Translators run newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<MissingArtifactError>(m, "MissingArtifactError", PyExc_FileNotFoundError);

  // Losses over a probability table and integer labels.
  m.def("ce_loss", [](const Mat& probs, const std::vector<int>& labels, std::optional<std::vector<int>> mask) {
    return loss_dict(ce_loss(ProbTable(probs), assignment(labels, mask)));
  }, py::arg("probs"), py::arg("labels"), py::arg("mask") = py::none());
  m.def("mae_loss", [](const Mat& probs, const std::vector<int>& labels, std::optional<std::vector<int>> mask) {
    return loss_dict(mae_loss(ProbTable(probs), assignment(labels, mask)));
  }, py::arg("probs"), py::arg("labels"), py::arg("mask") = py::none());
  m.def("gce_loss", [](const Mat& probs, const std::vector<int>& labels, double q,
                       std::optional<std::vector<int>> mask) {
    return loss_dict(gce_loss(ProbTable(probs), assignment(labels, mask), q));
  }, py::arg("probs"), py::arg("labels"), py::arg("q") = 0.7, py::arg("mask") = py::none());
  m.def("kl_divergence", [](const std::vector<double>& p, const std::vector<double>& q) {
    return kl_divergence(std::span<const double>(p), std::span<const double>(q));
  });

  m.def("soft_labels", [](const Mat& entity_probs) {
    const auto t = compute_soft_labels(entity_probs);
    return py::make_tuple(t.rows, t.frequency, t.warnings);
  }, py::arg("entity_probs"), "Sharpened targets, class frequencies and warnings.");

  // Evaluation.
  m.def("decode_entities", [](const std::vector<int>& labels) { return from_spans(decode_entities(labels)); });
  m.def("encode_entities", [](const std::vector<std::tuple<int, int, int>>& spans, std::size_t length) {
    return encode_entities(to_spans(spans), length);
  });
  m.def("score", [](const std::vector<std::tuple<int, int, int>>& pred,
                    const std::vector<std::tuple<int, int, int>>& gold) {
    return prf_dict(score(to_spans(pred), to_spans(gold)));
  });
  m.def("evaluate", [](const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& gold,
                       const std::vector<std::string>& types) {
    const auto r = evaluate_labels(pred, gold, TagScheme(types));
    py::dict d;
    d["overall"] = prf_dict(r.overall);
    py::dict per;
    for (const auto& [name, p] : r.per_type) per[py::str(name)] = prf_dict(p);
    d["per_type"] = per;
    d["sequences"] = r.sequences;
    d["table"] = render_report_table(r);
    return d;
  }, py::arg("pred"), py::arg("gold"), py::arg("types"));

  // Distant labeling.
  m.def("distant_label", [](const std::vector<std::vector<std::string>>& tokens,
                            const std::vector<std::pair<std::string, std::string>>& entries,
                            std::optional<std::vector<std::string>> types, bool case_sensitive) {
    std::string text;
    for (const auto& [phrase, type] : entries) text += phrase + "\t" + type + "\n";
    const Gazetteer gaz = Gazetteer::parse(text, "<python>");
    const TagScheme scheme(types ? *types : gaz.types());
    const auto labels = match_gazetteer(to_sentences(tokens), gaz, scheme, case_sensitive);
    std::vector<std::vector<std::string>> out;
    for (const auto& a : labels) {
      std::vector<std::string> row;
      for (int y : a.labels) row.push_back(scheme.name(y));
      out.push_back(std::move(row));
    }
    return out;
  }, py::arg("tokens"), py::arg("gazetteer"), py::arg("types") = py::none(), py::arg("case_sensitive") = true);

  // Augmentation with the count-based masked-LM fitted on the input corpus.
  m.def("augment", [](const std::vector<std::vector<std::string>>& tokens, double mask_rate, std::size_t top_k,
                      std::uint64_t seed) {
    const auto sents = to_sentences(tokens);
    CorpusMlm mlm(sents);
    const auto aug = augment_corpus(sents, mlm, mask_rate, top_k, seed);
    std::vector<std::optional<std::vector<std::string>>> out;
    for (const auto& p : aug.pairs) {
      if (p) out.push_back(p->sentence.tokens);
      else out.push_back(std::nullopt);
    }
    return out;
  }, py::arg("tokens"), py::arg("mask_rate") = 0.15, py::arg("top_k") = 5, py::arg("seed") = 0);

  // Recipes.
  m.def("load_recipe", [](std::optional<std::filesystem::path> config, const std::vector<std::string>& overrides) {
    return recipe_from(config, overrides).to_map();
  }, py::arg("config") = py::none(), py::arg("overrides") = std::vector<std::string>{});
  m.def("recipe_hash", [](std::optional<std::filesystem::path> config, const std::vector<std::string>& overrides) {
    return recipe_hash(recipe_from(config, overrides));
  }, py::arg("config") = py::none(), py::arg("overrides") = std::vector<std::string>{});

  // Synthetic benchmark data.
  m.def("synthetic_benchmark", [](std::optional<std::filesystem::path> config,
                                  const std::vector<std::string>& overrides) {
    const TrainRecipe r = recipe_from(config, overrides);
    const Benchmark b = make_benchmark(r.bench, r.seed);
    auto toks = [](const std::vector<Sentence>& s) {
      std::vector<std::vector<std::string>> out;
      for (const auto& x : s) out.push_back(x.tokens);
      return out;
    };
    py::dict d;
    d["types"] = b.grammar.scheme().entity_types();
    d["train_tokens"] = toks(b.train.sentences);
    d["train_gold"] = b.train.gold;
    d["train_noisy"] = b.noise.labels;
    d["test_tokens"] = toks(b.test.sentences);
    d["test_gold"] = b.test.gold;
    d["corruption_rate"] = b.corruption_rate();
    return d;
  }, py::arg("config") = py::none(), py::arg("overrides") = std::vector<std::string>{});

  // Pipeline stages; each returns the stage record.
  m.def("run_stage", [](const std::string& stage, std::optional<std::filesystem::path> config,
                        const std::filesystem::path& out, const std::vector<std::string>& overrides,
                        std::size_t threads) {
    PipelineContext ctx;
    ctx.recipe = recipe_from(config, overrides);
    ctx.out = out;
    ctx.threads = threads;
    StageRecord rec;
    {
      py::gil_scoped_release release;
      if (stage == "synth-bench") rec = synth_bench(ctx);
      else if (stage == "distant-label") rec = distant_label(ctx);
      else if (stage == "train-robust") rec = train_robust_stage(ctx);
      else if (stage == "distill") rec = distill_stage(ctx);
      else if (stage == "augment") rec = augment_stage(ctx);
      else if (stage == "self-train") rec = self_train_stage(ctx);
      else if (stage == "evaluate") rec = evaluate_stage(ctx);
      else throw ParameterError("unknown stage '" + stage + "'");
    }
    return record_dict(rec);
  }, py::arg("stage"), py::arg("config") = py::none(), py::arg("out") = "out",
     py::arg("overrides") = std::vector<std::string>{}, py::arg("threads") = 1);

  m.def("run_all", [](std::optional<std::filesystem::path> config, const std::filesystem::path& out,
                      const std::vector<std::string>& overrides) {
    PipelineContext ctx;
    ctx.recipe = recipe_from(config, overrides);
    ctx.out = out;
    RunManifest man;
    {
      py::gil_scoped_release release;
      man = run_all(ctx);
    }
    py::dict d;
    d["config_hash"] = man.config_hash;
    d["seed"] = man.seed;
    py::list stages;
    for (const auto& s : man.stages) stages.append(record_dict(s));
    d["stages"] = stages;
    d["manifest"] = ctx.layout().manifest().string();
    return d;
  }, py::arg("config") = py::none(), py::arg("out") = "out", py::arg("overrides") = std::vector<std::string>{});

  py::class_<PyTagger>(m, "Tagger")
      .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
      .def_property_readonly("types", &PyTagger::types)
      .def("probabilities", &PyTagger::probabilities, py::arg("tokens"),
           "Per-token distribution over [O] + types.")
      .def("tag", &PyTagger::tag, py::arg("tokens"));
}
