// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dsner/encoder.hpp"
#include "dsner/prob.hpp"

namespace dsner {

struct DataConfig {
  bool synthetic = false;  // generate train/test/gazetteer from the [bench] grammar
  std::string train;       // unlabeled or distantly labeled column corpus
  std::string test;        // gold column corpus for evaluation
  std::string gazetteer;   // "phrase TAB type" lines
  std::string types;       // comma-separated entity types; empty scans the gazetteer
  std::string features;    // token features for the pretrained-adapter encoder
  bool case_sensitive = true;
};

struct RobustRecipe {
  LossKind loss = LossKind::kGce;
  double q = 0.7;
  double tau = 0.7;
  std::size_t epochs = 3;
  std::size_t weight_update_period = 50;
  double drop_rate = 0.5;
  std::size_t batch_size = 32;
  double lr = 2e-3;
  double protect_fraction = 0.9;
};

struct EnsembleRecipe {
  std::size_t members = 5;
  std::size_t epochs = 2;
  double lr_ratio = 1.0 / 3.0;
  std::size_t threads = 1;
};

struct AugmentRecipe {
  double mask_rate = 0.15;
  std::size_t top_k = 5;
  std::string adapter = "corpus";  // corpus | oracle | external
};

struct SelfTrainRecipe {
  std::size_t iterations = 3;
  double lr_ratio = 1.0 / 60.0;
  double confidence_margin = 0.05;
  bool use_augmentation = true;
  bool per_batch_frequencies = false;
  std::size_t batch_size = 32;
};

struct BenchRecipe {
  std::size_t train_size = 2000;
  std::size_t test_size = 500;
  std::size_t length = 12;
  std::size_t context_vocab = 100;
  std::size_t entity_types = 4;
  double deletion_rate = 0.2;
  double flip_rate = 0.3;
  double held_out_fraction = 0.2;
};

// Every hyperparameter of a pipeline run. The text form is sectioned
// key=value; `[robust]` followed by `q = 0.7` sets key "robust.q".
struct TrainRecipe {
  std::uint64_t seed = 13;
  DataConfig data;
  EncoderSpec model;
  RobustRecipe robust;
  EnsembleRecipe ensemble;
  AugmentRecipe augment;
  SelfTrainRecipe self_train;
  BenchRecipe bench;

  // Throws ConfigError for an unknown key or malformed value.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static const std::vector<std::string>& keys();

  // Flattened "section.key" -> value, in key order.
  std::map<std::string, std::string> to_map() const;
  std::string to_text() const;
  void validate() const;

  double robust_lr() const { return robust.lr; }
  double ensemble_lr() const { return robust.lr * ensemble.lr_ratio; }
  double self_train_lr() const { return robust.lr * self_train.lr_ratio; }
};

TrainRecipe parse_recipe(std::string_view text, const std::string& source = "<config>");
TrainRecipe load_recipe(const std::filesystem::path& path);

// Applies "KEY=VALUE" overrides in order.
void apply_overrides(TrainRecipe& recipe, const std::vector<std::string>& overrides);

// Stable hex digest of the canonical text form.
std::string recipe_hash(const TrainRecipe& recipe);

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(std::string_view name);

}  // namespace dsner
