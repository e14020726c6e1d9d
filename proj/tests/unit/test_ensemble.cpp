// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>

#include "dsner/ensemble.hpp"
#include "dsner/error.hpp"
#include "test_support.hpp"
#include "toy_bench.hpp"

using namespace dsner;
using dsner::testing::random_prob_rows;
using dsner::testing::toy_model;
using dsner::testing::toy_recipe;

namespace {

bool same_params(const TaggerModel& a, const TaggerModel& b) {
  std::vector<Mat> va, vb;
  a.visit_params([&](const std::string&, const nn::Param& p) { va.push_back(p.value); });
  b.visit_params([&](const std::string&, const nn::Param& p) { vb.push_back(p.value); });
  return va == vb;
}

}  // namespace

TEST_CASE("averaging is the arithmetic mean") {
  Mat a(1, 2), b(1, 2);
  a << 0.6, 0.4;
  b << 0.8, 0.2;
  std::vector<ProbTable> t{ProbTable(a), ProbTable(b)};
  const auto avg = average_predictions(t);
  CHECK(avg(0, 0) == doctest::Approx(0.7));
  CHECK(avg(0, 1) == doctest::Approx(0.3));

  std::vector<ProbTable> one{ProbTable(a)};
  CHECK(average_predictions(one).rows() == a);
}

TEST_CASE("mean of random tables is a valid, order-free table") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ProbTable> t;
    for (int k = 0; k < 5; ++k) t.emplace_back(random_prob_rows(rng, 7, 5));
    const auto avg = average_predictions(t);
    for (std::size_t i = 0; i < 7; ++i) {
      CHECK(avg.rows().row(static_cast<Eigen::Index>(i)).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
    Mat direct = Mat::Zero(7, 5);
    for (const auto& x : t) direct += x.rows();
    CHECK((avg.rows() - direct / 5.0).cwiseAbs().maxCoeff() < 1e-15);
    std::reverse(t.begin(), t.end());
    CHECK((average_predictions(t).rows() - avg.rows()).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("averaging rejects mismatched shapes") {
  Rng rng(1);
  std::vector<ProbTable> t{ProbTable(random_prob_rows(rng, 3, 4)), ProbTable(random_prob_rows(rng, 2, 4))};
  CHECK_THROWS_AS(average_predictions(t), ShapeError);
  std::vector<ProbTable> u{ProbTable(random_prob_rows(rng, 3, 4)), ProbTable(random_prob_rows(rng, 3, 3))};
  CHECK_THROWS_AS(average_predictions(u), ShapeError);
  CHECK_THROWS_AS(average_predictions({}), ShapeError);
}

TEST_CASE("member seeds are base plus index") {
  EnsembleSpec spec{5, 100};
  CHECK(spec.member_seed(0) == 100);
  CHECK(spec.member_seed(4) == 104);
  spec.members = 0;
  CHECK_THROWS_AS(spec.validate(), ParameterError);
}

TEST_CASE("zero distillation steps return the initial model") {
  auto r = toy_recipe();
  const auto b = make_benchmark(r.bench, r.seed);
  std::vector<TaggerModel> members{toy_model(r, b, 5)};
  DistillConfig dc;
  dc.epochs = 0;
  const auto init = toy_model(r, b, 6);
  const auto d = distill(members, init, b.train.sentences, dc);
  CHECK(same_params(d.model, init));
  CHECK(d.batch_losses.empty());
}

TEST_CASE("a single member is reproduced by distillation") {
  auto r = toy_recipe();
  r.bench.train_size = 1000;
  const auto b = make_benchmark(r.bench, r.seed);
  auto member = train_robust(toy_model(r, b, 1), b.train.sentences, b.noisy_assignments(),
                             RobustConfig::from_recipe(r, 1));
  std::vector<TaggerModel> members{member.model};
  DistillConfig dc;
  dc.epochs = 20;
  dc.lr = 5e-3;
  dc.seed = 1;
  const auto d = distill(members, toy_model(r, b, 1), b.train.sentences, dc);
  for (double l : d.batch_losses) CHECK(l >= 0.0);
  const std::size_t w = d.batch_losses.size() / 4;
  double first = 0.0, last = 0.0;
  for (std::size_t k = 0; k < w; ++k) {
    first += d.batch_losses[k];
    last += d.batch_losses[d.batch_losses.size() - 1 - k];
  }
  CHECK(last < first);
  // Unseen sentences drawn from the training lexicon.
  const auto held_out = b.grammar.generate(100, 99, false).sentences;
  const auto held_out_targets = ensemble_predictions(members, held_out);
  CHECK(mean_kl(d.model, held_out, held_out_targets) < 0.01);
  CHECK(d.final_kl < 0.01);
  for (const auto& t : predict_corpus(d.model, b.test.sentences)) CHECK(t.tokens() > 0);
}

TEST_CASE("member training does not depend on the thread count") {
  auto r = toy_recipe();
  r.robust.epochs = 1;
  const auto b = make_benchmark(r.bench, r.seed);
  const auto shape = toy_model(r, b, 0);
  const EnsembleSpec spec{3, 40};
  const auto cfg = RobustConfig::from_recipe(r, 0);
  const auto serial = train_members(spec, cfg, shape, b.train.sentences, b.noisy_assignments(), 1);
  const auto parallel = train_members(spec, cfg, shape, b.train.sentences, b.noisy_assignments(), 3);
  REQUIRE(serial.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) CHECK(same_params(serial[k].model, parallel[k].model));
  CHECK_FALSE(same_params(serial[0].model, serial[1].model));
  // Members share the encoder initialization of the base seed.
  const auto m0 = initial_model(r.model, b.grammar.scheme(), shape.vocab, 40, 40);
  const auto m1 = initial_model(r.model, b.grammar.scheme(), shape.vocab, 40, 41);
  Mat e0, e1;
  m0.visit_params([&](const std::string& n, const nn::Param& p) { if (n == "enc.tokens") e0 = p.value; });
  m1.visit_params([&](const std::string& n, const nn::Param& p) { if (n == "enc.tokens") e1 = p.value; });
  CHECK(e0 == e1);
}
