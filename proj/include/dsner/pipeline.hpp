// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dsner/corpus.hpp"
#include "dsner/recipe.hpp"

namespace dsner {

// Artifact locations under an output directory. Every stage reads and writes
// only these paths (plus the data.* inputs named by the recipe).
struct Layout {
  std::filesystem::path root;

  std::filesystem::path synth_train() const { return root / "synth" / "train.txt"; }
  std::filesystem::path synth_train_gold() const { return root / "synth" / "train.gold.txt"; }
  std::filesystem::path synth_test() const { return root / "synth" / "test.txt"; }
  std::filesystem::path synth_gazetteer() const { return root / "synth" / "gazetteer.tsv"; }
  std::filesystem::path distant_labels() const { return root / "distant" / "labels.txt"; }
  std::filesystem::path distant_types() const { return root / "distant" / "types.txt"; }
  std::filesystem::path distant_ambiguity() const { return root / "distant" / "ambiguity.tsv"; }
  std::filesystem::path member(std::size_t k) const;
  std::filesystem::path member_weights(std::size_t k) const;
  std::filesystem::path ensemble_model() const { return root / "ensemble" / "model.ckpt"; }
  std::filesystem::path ensemble_stats() const { return root / "ensemble" / "distill.kv"; }
  std::filesystem::path augmented() const { return root / "augment" / "pairs.txt"; }
  std::filesystem::path augmented_index() const { return root / "augment" / "pairs.index"; }
  std::filesystem::path augment_audit() const { return root / "augment" / "audit.tsv"; }
  std::filesystem::path final_model() const { return root / "self_train" / "model.ckpt"; }
  std::filesystem::path self_train_log() const { return root / "self_train" / "log.tsv"; }
  std::filesystem::path report_table() const { return root / "eval" / "report.txt"; }
  std::filesystem::path report_kv() const { return root / "eval" / "report.kv"; }
  std::filesystem::path ab_table(const std::string& protocol) const;
  std::filesystem::path ab_kv(const std::string& protocol) const;
  std::filesystem::path stage_manifest(const std::string& stage) const;
  std::filesystem::path manifest() const { return root / "manifest.txt"; }
  std::filesystem::path config() const { return root / "config.conf"; }
};

struct PipelineContext {
  TrainRecipe recipe;
  std::filesystem::path out = "out";
  std::size_t threads = 1;     // ensemble member parallelism
  std::ostream* log = nullptr;  // progress lines; null is silent

  Layout layout() const { return Layout{out}; }
};

struct StageRecord {
  std::string stage;
  std::vector<std::pair<std::string, std::filesystem::path>> artifacts;  // name, path
  std::map<std::string, std::string> metrics;
};

// Stage names in run-all order.
const std::vector<std::string>& stage_order(bool synthetic);

StageRecord synth_bench(const PipelineContext& ctx, const std::vector<std::string>& protocols = {},
                        const std::vector<std::uint64_t>& seeds = {});
StageRecord distant_label(const PipelineContext& ctx);
StageRecord train_robust_stage(const PipelineContext& ctx);
StageRecord distill_stage(const PipelineContext& ctx);
StageRecord augment_stage(const PipelineContext& ctx);
StageRecord self_train_stage(const PipelineContext& ctx);
// Empty paths default to the self-training checkpoint and the recipe's gold file.
StageRecord evaluate_stage(const PipelineContext& ctx, const std::filesystem::path& model = {},
                           const std::filesystem::path& gold = {});

struct RunManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::size_t members = 0;
  std::vector<StageRecord> stages;

  std::string to_text() const;
};

RunManifest run_all(const PipelineContext& ctx);

// Writes a per-stage manifest (and the resolved config) next to the artifacts.
void write_stage_manifest(const PipelineContext& ctx, const StageRecord& record);

// Sentences of a column corpus, re-identified as "<prefix>:<index>".
std::vector<LabeledSentence> read_corpus_as(const std::filesystem::path& path, const TagScheme& scheme,
                                            const std::string& prefix, std::size_t max_length);

}  // namespace dsner
