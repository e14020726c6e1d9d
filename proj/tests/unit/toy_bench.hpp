// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dsner/ensemble.hpp"
#include "dsner/harness.hpp"

namespace dsner::testing {

// Small synthetic setup that trains in well under a second per pass.
inline TrainRecipe toy_recipe() {
  TrainRecipe r;
  r.seed = 3;
  r.model.hidden = 16;
  r.model.layers = 1;
  r.model.heads = 2;
  r.model.ffn = 32;
  r.model.max_length = 32;
  r.robust.lr = 3e-3;
  r.robust.epochs = 3;
  r.robust.weight_update_period = 5;
  r.bench.train_size = 300;
  r.bench.test_size = 100;
  r.ensemble.members = 2;
  r.ensemble.epochs = 2;
  r.self_train.iterations = 2;
  return r;
}

inline TaggerModel toy_model(const TrainRecipe& r, const Benchmark& b, std::uint64_t seed) {
  return initial_model(r.model, b.grammar.scheme(), Vocabulary::build(b.train.sentences), seed, seed);
}

}  // namespace dsner::testing
