// SPDX-License-Identifier: Apache-2.0
// dsner: command-line front end for the distant-supervision NER pipeline.
#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dsner/error.hpp"
#include "dsner/harness.hpp"
#include "dsner/pipeline.hpp"
#include "dsner/recipe.hpp"
#include "dsner/util.hpp"

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<std::size_t> members;
  std::optional<std::size_t> threads;
  std::vector<std::string> overrides;
  bool quiet = false;
};

dsner::PipelineContext make_context(const GlobalOptions& g) {
  dsner::PipelineContext ctx;
  ctx.recipe = g.config.empty() ? dsner::TrainRecipe{} : dsner::load_recipe(g.config);
  dsner::apply_overrides(ctx.recipe, g.overrides);
  if (g.seed) ctx.recipe.seed = *g.seed;
  if (g.members) ctx.recipe.ensemble.members = *g.members;
  if (g.threads) ctx.recipe.ensemble.threads = *g.threads;
  ctx.recipe.validate();
  ctx.out = g.out;
  ctx.threads = ctx.recipe.ensemble.threads;
  ctx.log = g.quiet ? nullptr : &std::cerr;
  return ctx;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& part : dsner::split(text, ',')) {
    const auto t = dsner::trim(part);
    if (t.empty()) continue;
    const long long v = dsner::parse_int(t);
    if (v < 0) throw dsner::ParameterError("seeds must be non-negative");
    seeds.push_back(static_cast<std::uint64_t>(v));
  }
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distantly supervised NER: noise-robust training, ensembling and self-training"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config, "Recipe file (flat key=value with [section] headers)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the recipe seed");
  app.add_option("--out", g.out, "Artifact directory")->capture_default_str();
  app.add_option("--members", g.members, "Override ensemble.members");
  app.add_option("--threads", g.threads, "Override ensemble.threads (parallel members in train-robust)");
  app.add_option("--stage-override", g.overrides, "KEY=VALUE recipe override (repeatable)");
  app.add_flag("-q,--quiet", g.quiet, "No progress lines on stderr");

  auto* distant = app.add_subcommand("distant-label", "Label the training corpus by gazetteer matching");
  auto* robust = app.add_subcommand("train-robust", "Train the ensemble members with noisy-label removal");
  auto* distill = app.add_subcommand("distill", "Distill the members into one model");
  auto* augment = app.add_subcommand("augment", "Build masked-LM augmented copies of the training corpus");
  auto* self = app.add_subcommand("self-train", "Self-train the distilled model on soft labels");

  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint against a gold corpus");
  std::string model_path, gold_path;
  evaluate->add_option("--model", model_path, "Checkpoint (default: the self-training output)");
  evaluate->add_option("--gold", gold_path, "Gold column corpus (default: data.test)");

  auto* synth = app.add_subcommand("synth-bench", "Generate the synthetic benchmark; optionally run A/B protocols");
  std::vector<std::string> protocols;
  std::string seeds_text;
  synth->add_option("--protocol", protocols, "A/B protocol (repeatable)")
      ->check(CLI::IsMember(dsner::ab_protocols()));
  synth->add_option("--seeds", seeds_text, "Comma-separated training seeds for the protocols");

  auto* all = app.add_subcommand("run-all", "Run every stage in order and write manifest.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const dsner::PipelineContext ctx = make_context(g);
    if (distant->parsed()) {
      dsner::distant_label(ctx);
    } else if (robust->parsed()) {
      dsner::train_robust_stage(ctx);
    } else if (distill->parsed()) {
      dsner::distill_stage(ctx);
    } else if (augment->parsed()) {
      dsner::augment_stage(ctx);
    } else if (self->parsed()) {
      dsner::self_train_stage(ctx);
    } else if (evaluate->parsed()) {
      const auto rec = dsner::evaluate_stage(ctx, model_path, gold_path);
      std::cout << "f1=" << rec.metrics.at("f1") << '\n';
    } else if (synth->parsed()) {
      dsner::synth_bench(ctx, protocols, parse_seeds(seeds_text));
    } else if (all->parsed()) {
      const auto m = dsner::run_all(ctx);
      std::cout << "manifest=" << ctx.layout().manifest().string() << '\n';
      std::cout << "f1=" << m.stages.back().metrics.at("f1") << '\n';
    }
  } catch (const dsner::ConfigError& e) {
    std::cerr << "dsner: config error: " << e.what() << '\n';
    return 2;
  } catch (const dsner::MissingArtifactError& e) {
    std::cerr << "dsner: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "dsner: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
