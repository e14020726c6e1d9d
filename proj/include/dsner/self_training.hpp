// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dsner/augmentation.hpp"
#include "dsner/tagger.hpp"

namespace dsner {

// Sharpened targets over entity classes only.
struct SoftLabelTable {
  Mat rows;       // n x |E|, each row sums to 1
  Vec frequency;  // g_j = sum_i f_{i,j}
  std::vector<std::string> warnings;
};

// y_{i,j} = (f_{i,j}^2 / g_j) / sum_j' (f_{i,j'}^2 / g_j'). Entries of f are
// clamped to kProbFloor; a g_j below kProbFloor is clamped with a warning.
SoftLabelTable compute_soft_labels(const Mat& entity_probs);

// Renormalizes each row over the entity classes.
Mat renormalize_rows(const Mat& entity_probs);

// Mean over tokens of KL(y || f(x)) + KL(y || f(x')), both sides renormalized
// over entity classes. A null `probs_aug` drops the second term.
double st_loss(const SoftLabelTable& soft, const Mat& probs_orig, const Mat* probs_aug);

struct SelfTrainConfig {
  std::size_t iterations = 3;
  std::size_t batch_size = 32;
  double lr = 2e-3 / 60.0;
  double confidence_margin = 0.05;  // exclusion below 1/|E| + margin
  bool use_augmentation = true;
  bool per_batch_frequencies = false;
  std::uint64_t seed = 0;
};

struct SelfTrainIteration {
  std::size_t iteration = 0;
  double mean_loss = 0.0;
  double soft_entropy = 0.0;  // mean row entropy of the targets
  double binary_drift = 0.0;  // mean |p_entity - p_entity at start of run|
  std::size_t excluded_tokens = 0;
  std::size_t augmented_pairs = 0;
};

struct SelfTrainResult {
  TaggerModel model;
  std::vector<SelfTrainIteration> log;
};

// Each iteration predicts on the originals, builds soft labels, then runs one
// pass: the type head fits the soft labels on x and x', the binary head fits
// its own iteration-start outputs on x. `augmented` is aligned with `corpus`
// and may be empty or contain gaps.
SelfTrainResult self_train(TaggerModel init, std::span<const Sentence> corpus,
                           std::span<const std::optional<AugmentedSequence>> augmented,
                           const SelfTrainConfig& config);

void write_self_train_log(std::ostream& out, const std::vector<SelfTrainIteration>& log);

}  // namespace dsner
