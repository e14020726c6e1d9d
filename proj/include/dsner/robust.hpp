// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dsner/corpus.hpp"
#include "dsner/recipe.hpp"
#include "dsner/tagger.hpp"

namespace dsner {

struct RobustSchedule {
  std::size_t epochs = 3;
  std::size_t weight_update_period = 50;
  double drop_rate = 0.5;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;  // ParameterError
};

struct RobustConfig {
  RobustSchedule schedule;
  LossKind loss = LossKind::kGce;
  double q = 0.7;
  double tau = 0.7;  // 0 disables removal
  double lr = 2e-3;
  double protect_fraction = 0.9;

  static RobustConfig from_recipe(const TrainRecipe& recipe, std::uint64_t seed);
};

// Marks exactly floor(rate * #O) O-labeled tokens, drawn uniformly over the
// corpus, as excluded. Returns how many were excluded.
std::size_t drop_nonentity(std::span<LabelAssignment> assignments, double drop_rate, Rng& rng);

struct WeightUpdateStats {
  std::size_t included = 0;
  std::size_t zeroed = 0;
  std::vector<int> protected_classes;
};

// w_i = [f_{i,y_i} > tau] on included tokens. Entity classes whose share of
// low-confidence included tokens exceeds `protect_fraction` keep w_i = 1.
WeightUpdateStats update_weights(std::span<const ProbTable> probs,
                                 std::span<LabelAssignment> assignments, double tau,
                                 const TagScheme& scheme, double protect_fraction = 0.9);

struct WeightAuditRow {
  std::size_t refresh = 0;
  std::string sequence_id;
  std::size_t token = 0;
  int weight = 1;
  double confidence = 0.0;  // f_{i,y_i}
};

using WeightAuditSink = std::function<void(const WeightAuditRow&)>;

struct RobustResult {
  TaggerModel model;
  std::vector<LabelAssignment> assignments;
  std::vector<double> batch_losses;
  std::vector<WeightUpdateStats> refreshes;
};

// Trains `init` on distant labels. Weights start at 1 and are refreshed from
// dropout-free predictions every `weight_update_period` batches and after
// every pass.
RobustResult train_robust(TaggerModel init, std::span<const Sentence> corpus,
                          std::span<const LabelAssignment> labels, const RobustConfig& config,
                          const WeightAuditSink& audit = {});

// Writes audit rows as "refresh TAB id TAB token TAB w TAB f" lines.
WeightAuditSink make_audit_writer(std::ostream& out);

}  // namespace dsner
