// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dsner/robust.hpp"

namespace dsner {

struct EnsembleSpec {
  std::size_t members = 5;
  std::uint64_t base_seed = 0;

  std::uint64_t member_seed(std::size_t k) const { return base_seed + k; }
  void validate() const;
};

// Fresh tagger: encoder weights come from `base_seed` and are shared by all
// members and the distilled model; heads come from `head_seed`.
TaggerModel initial_model(const EncoderSpec& spec, const TagScheme& scheme, const Vocabulary& vocab,
                          std::uint64_t base_seed, std::uint64_t head_seed,
                          std::shared_ptr<const FeatureStore> features = nullptr);

// Elementwise mean of equally shaped tables. Throws ShapeError otherwise.
ProbTable average_predictions(std::span<const ProbTable> tables);

// Per-sequence averaged predictions of several models over a corpus.
std::vector<ProbTable> ensemble_predictions(std::span<const TaggerModel> members,
                                            std::span<const Sentence> corpus);

// Trains spec.members robust models with seeds base_seed + k. Members run on
// up to `threads` threads; results do not depend on the thread count.
std::vector<RobustResult> train_members(const EnsembleSpec& spec, const RobustConfig& config,
                                        const TaggerModel& shape_source,
                                        std::span<const Sentence> corpus,
                                        std::span<const LabelAssignment> labels,
                                        std::size_t threads = 1);

struct DistillConfig {
  std::size_t epochs = 2;
  std::size_t batch_size = 32;
  double lr = 2e-3 / 3.0;
  std::uint64_t seed = 0;
};

struct DistillResult {
  TaggerModel model;
  double final_kl = 0.0;  // mean per-token KL(target || model) in inference mode
  std::vector<double> batch_losses;
};

// Fits `init` to the members' averaged distribution on every token.
DistillResult distill(std::span<const TaggerModel> members, TaggerModel init,
                      std::span<const Sentence> corpus, const DistillConfig& config);

// Mean per-token KL(targets || predictions of `model`).
double mean_kl(const TaggerModel& model, std::span<const Sentence> corpus,
               std::span<const ProbTable> targets);

}  // namespace dsner
