// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dsner/corpus.hpp"
#include "dsner/encoder.hpp"
#include "dsner/prob.hpp"

namespace dsner {

// Encoder followed by two heads: a binary entity/non-entity head and a type
// head over entity classes. The combined distribution is
//   f_O = 1 - p_entity,   f_t = p_entity * type_dist_t.
struct TaggerModel {
  EncoderSpec spec;
  TagScheme scheme;
  Vocabulary vocab;
  Encoder encoder;
  nn::Linear binary_head;  // hidden x 1
  nn::Linear type_head;    // hidden x |E|

  template <class F>
  void visit_params(F&& f) {
    std::visit([&](auto& e) { e.visit(f); }, encoder);
    binary_head.visit("head.binary", f);
    type_head.visit("head.type", f);
  }
  template <class F>
  void visit_params(F&& f) const {
    const_cast<TaggerModel*>(this)->visit_params(
        [&](const std::string& name, nn::Param& p) { f(name, static_cast<const nn::Param&>(p)); });
  }

  std::size_t parameter_count() const;
  void zero_grad();
};

// `encoder_seed` draws the encoder initialization, `head_seed` the heads.
TaggerModel create_tagger(const EncoderSpec& spec, const TagScheme& scheme, Vocabulary vocab,
                          std::uint64_t encoder_seed, std::uint64_t head_seed,
                          std::shared_ptr<const FeatureStore> features = nullptr);

// Feature store behind a pretrained-adapter encoder; null for other kinds.
std::shared_ptr<const FeatureStore> adapter_features(const TaggerModel& model);

// Head outputs for one sentence.
struct Prediction {
  Mat probs;      // n x C combined distribution
  Vec p_entity;   // n
  Mat type_dist;  // n x |E|
};

struct ForwardResult {
  Prediction pred;
  EncodedInput input;
  EncoderCache cache;
  Mat hidden;
  Mat head_mask;
};

// Dropout is active only when `rng` is non-null. Throws LengthError when the
// sentence is longer than the encoder's max length.
ForwardResult forward(const TaggerModel& model, const Sentence& sentence, Rng* rng = nullptr);
Prediction predict(const TaggerModel& model, const Sentence& sentence);

// Gradients of a loss with respect to the two heads' logits.
struct HeadGrad {
  Vec d_binary;  // n
  Mat d_type;    // n x |E|

  static HeadGrad zeros(std::size_t n, std::size_t entity_types);
};

// Accumulates parameter gradients for one sentence.
void backward(TaggerModel& model, const ForwardResult& fwd, const HeadGrad& grad);

// Chains dL/df over the combined distribution (n x C) into head-logit gradients.
HeadGrad combined_to_head_grad(const Prediction& pred, const Mat& d_probs);

struct LossTerm {
  double loss_sum = 0.0;
  double count = 0.0;  // tokens this term normalizes by
  HeadGrad grad;       // gradient of loss_sum (not normalized)
};

using ExampleLoss = std::function<LossTerm(const Prediction&)>;

struct Example {
  const Sentence* sentence = nullptr;
  ExampleLoss loss;
};

// Hard-label objective applied to each head on its own target: the binary
// head sees entity-vs-O, the type head sees the entity type of entity-labeled
// tokens. Only tokens with weight 1 and included 1 contribute.
ExampleLoss two_head_label_loss(const LabelAssignment& labels, LossKind kind, double q);
// Hard-label objective on the combined probability f_{i,y_i}.
ExampleLoss combined_label_loss(const LabelAssignment& labels, LossKind kind, double q);
// Mean KL(target_i || f_i) over every token of the combined distribution.
ExampleLoss combined_kl_loss(Mat targets);

// Adam with linear decay from `peak_lr` to zero over `total_steps`.
class AdamOptimizer {
 public:
  AdamOptimizer(const TaggerModel& model, double peak_lr, std::size_t total_steps,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(TaggerModel& model);
  double current_lr() const;
  std::size_t steps() const { return step_; }

 private:
  std::vector<Mat> m_, v_;
  double peak_lr_;
  std::size_t total_steps_;
  double beta1_, beta2_, eps_;
  std::size_t step_ = 0;
};

// One optimizer step over a batch. The returned loss is the sum of terms
// divided by the total token count; gradients are normalized the same way.
// Throws DivergenceError naming the sequence on a non-finite loss or gradient.
double train_step(TaggerModel& model, std::span<const Example> batch, AdamOptimizer& opt,
                  Rng& rng);

std::vector<ProbTable> predict_corpus(const TaggerModel& model, std::span<const Sentence> corpus);
std::vector<Prediction> predict_heads(const TaggerModel& model, std::span<const Sentence> corpus);

// Argmax class per token.
std::vector<int> decode_argmax(const Mat& probs);

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string stage;
  std::uint64_t iteration = 0;
  std::map<std::string, std::string> recipe;
};

void save_model(const TaggerModel& model, const CheckpointMeta& meta,
                const std::filesystem::path& path);

struct LoadedModel {
  TaggerModel model;
  CheckpointMeta meta;
};

LoadedModel load_model(const std::filesystem::path& path,
                       std::shared_ptr<const FeatureStore> features = nullptr);

}  // namespace dsner
