// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <string>

#include "dsner/error.hpp"
#include "dsner/recipe.hpp"

using namespace dsner;

namespace {
const std::string kConfigDir = std::string(DSNER_SOURCE_DIR) + "/configs/";
}

TEST_CASE("built-in defaults") {
  const TrainRecipe r;
  CHECK(r.robust.q == 0.7);
  CHECK(r.robust.tau == 0.7);
  CHECK(r.robust.loss == LossKind::kGce);
  CHECK(r.ensemble.members == 5);
  CHECK(r.augment.mask_rate == 0.15);
  CHECK(r.augment.top_k == 5);
  CHECK(r.robust.batch_size == 32);
  CHECK(r.self_train.batch_size == 32);
  CHECK_NOTHROW(r.validate());
}

TEST_CASE("shipped configs load and keep the defaults") {
  const TrainRecipe d = load_recipe(kConfigDir + "default.conf");
  CHECK(d.robust.q == 0.7);
  CHECK(d.robust.tau == 0.7);
  CHECK(d.ensemble.members == 5);
  CHECK(d.augment.mask_rate == 0.15);
  CHECK(d.augment.top_k == 5);
  CHECK(d.robust.batch_size == 32);
  CHECK_FALSE(d.data.synthetic);

  const TrainRecipe s = load_recipe(kConfigDir + "synthetic.conf");
  CHECK(s.data.synthetic);
  CHECK(s.robust.q == 0.7);
  CHECK(s.robust.tau == 0.7);
  CHECK(s.ensemble.members == 5);
  CHECK(s.augment.mask_rate == 0.15);
  CHECK(s.augment.top_k == 5);
  CHECK(s.augment.adapter == "oracle");
}

TEST_CASE("default.conf matches the built-in defaults apart from data paths") {
  const TrainRecipe d = load_recipe(kConfigDir + "default.conf");
  TrainRecipe plain;
  plain.data.train = d.data.train;
  plain.data.test = d.data.test;
  plain.data.gazetteer = d.data.gazetteer;
  CHECK(d.to_map() == plain.to_map());
}

TEST_CASE("unknown keys are rejected with a location") {
  try {
    parse_recipe("seed = 1\n[robust]\nqq = 0.5\n", "x.conf");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("x.conf:3") != std::string::npos);
    CHECK(msg.find("robust.qq") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_recipe("[robus]\nq = 0.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_recipe("[robust]\nq = abc\n"), ConfigError);
  CHECK_THROWS_AS(parse_recipe("[robust]\nq = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_recipe("[augment]\nadapter = bert\n"), ConfigError);
  CHECK_THROWS_AS(parse_recipe("[robust\nq = 0.5\n"), Error);
  CHECK_THROWS_AS(parse_recipe("[robust]\nq 0.5\n"), Error);
}

TEST_CASE("comments and sections") {
  const TrainRecipe r = parse_recipe(
      "# header\nseed = 7  # trailing\n\n[robust]\nq = 0.5\ntau=0.6\n[ensemble]\nmembers = 3\n");
  CHECK(r.seed == 7);
  CHECK(r.robust.q == 0.5);
  CHECK(r.robust.tau == 0.6);
  CHECK(r.ensemble.members == 3);
  CHECK(r.augment.top_k == 5);
}

TEST_CASE("overrides") {
  TrainRecipe r;
  apply_overrides(r, {"robust.q=0.5", "ensemble.members = 2", "augment.adapter=oracle"});
  CHECK(r.robust.q == 0.5);
  CHECK(r.ensemble.members == 2);
  CHECK(r.augment.adapter == "oracle");
  CHECK(r.get("robust.q") == "0.5");
  CHECK_THROWS_AS(apply_overrides(r, {"robust.q"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(r, {"robust.qq=1"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(r, {"ensemble.members=0"}), ConfigError);
}

TEST_CASE("text round trip and hash") {
  TrainRecipe r;
  r.seed = 42;
  r.robust.lr = 1.0 / 3.0;
  r.self_train.lr_ratio = 1.0 / 60.0;
  r.data.train = "corpora/train.txt";
  r.model.hidden = 24;
  const TrainRecipe back = parse_recipe(r.to_text());
  CHECK(back.to_map() == r.to_map());
  CHECK(back.robust.lr == r.robust.lr);
  CHECK(recipe_hash(back) == recipe_hash(r));
  CHECK(recipe_hash(r).size() == 16);

  TrainRecipe other = r;
  other.robust.tau = 0.71;
  CHECK(recipe_hash(other) != recipe_hash(r));
  CHECK(TrainRecipe::keys().size() == r.to_map().size());
}

TEST_CASE("derived learning rates") {
  TrainRecipe r;
  r.robust.lr = 3e-3;
  CHECK(r.robust_lr() == doctest::Approx(3e-3));
  CHECK(r.ensemble_lr() == doctest::Approx(1e-3));
  CHECK(r.self_train_lr() == doctest::Approx(5e-5));
}
