// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "dsner/error.hpp"
#include "dsner/robust.hpp"
#include "toy_bench.hpp"

using namespace dsner;
using dsner::testing::toy_model;
using dsner::testing::toy_recipe;

namespace {

ProbTable table(std::initializer_list<std::initializer_list<double>> rows) {
  Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return ProbTable(m);
}

std::size_t excluded(const std::vector<LabelAssignment>& a) {
  std::size_t n = 0;
  for (const auto& x : a) n += static_cast<std::size_t>(std::count(x.included.begin(), x.included.end(), 0));
  return n;
}

}  // namespace

TEST_CASE("non-entity dropping excludes an exact share of O tokens") {
  std::vector<LabelAssignment> a;
  for (int s = 0; s < 100; ++s) a.push_back(LabelAssignment::from_labels({0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 2}));
  Rng rng(1);
  CHECK(drop_nonentity(a, 0.5, rng) == 500);
  CHECK(excluded(a) == 500);
  for (const auto& x : a) {
    CHECK(x.included[10] == 1);
    CHECK(x.included[11] == 1);
  }

  std::vector<LabelAssignment> b(3, LabelAssignment::from_labels({0, 1, 0}));
  CHECK(drop_nonentity(b, 0.0, rng) == 0);
  CHECK(excluded(b) == 0);
  CHECK(drop_nonentity(b, 0.5, rng) == 3);  // floor(0.5 * 6)

  std::vector<LabelAssignment> c(4, LabelAssignment::from_labels({1, 2, 3}));
  CHECK(drop_nonentity(c, 0.5, rng) == 0);
  CHECK_THROWS_AS(drop_nonentity(c, 1.0, rng), ParameterError);
  CHECK_THROWS_AS(drop_nonentity(c, -0.1, rng), ParameterError);
}

TEST_CASE("dropping is uniform over O tokens") {
  std::vector<std::size_t> hits(20, 0);
  for (std::uint64_t seed = 0; seed < 4000; ++seed) {
    std::vector<LabelAssignment> a{LabelAssignment::from_labels(std::vector<int>(20, 0))};
    Rng rng(seed);
    drop_nonentity(a, 0.25, rng);
    for (std::size_t i = 0; i < 20; ++i) hits[i] += a[0].included[i] == 0;
  }
  // 5 of 20 dropped per run: expected 1000 per position, sd about 27.
  for (auto h : hits) CHECK(std::abs(static_cast<double>(h) - 1000.0) < 5 * 27.4);
}

TEST_CASE("weight refresh thresholds f_{i,y_i}") {
  const TagScheme scheme({"PER"});
  std::vector<LabelAssignment> a{LabelAssignment::from_labels({1, 1, 0, 0})};
  std::vector<ProbTable> p{table({{0.25, 0.75}, {0.35, 0.65}, {0.9, 0.1}, {0.5, 0.5}})};
  // Class PER has 1 of 2 tokens below tau, so it is not protected.
  const auto stats = update_weights(p, a, 0.7, scheme);
  CHECK(a[0].weight == std::vector<std::uint8_t>{1, 0, 1, 0});
  CHECK(stats.zeroed == 2);
  CHECK(stats.included == 4);
  CHECK(stats.protected_classes.empty());

  // Idempotent for identical predictions.
  auto again = a;
  update_weights(p, again, 0.7, scheme);
  CHECK(again[0].weight == a[0].weight);

  // Excluded tokens are neither reweighted nor counted.
  std::vector<LabelAssignment> b{LabelAssignment::from_labels({1, 1, 0, 0})};
  b[0].included[3] = 0;
  const auto s2 = update_weights(p, b, 0.7, scheme);
  CHECK(b[0].weight[3] == 1);
  CHECK(s2.included == 3);

  std::vector<ProbTable> short_p{table({{0.5, 0.5}})};
  CHECK_THROWS_AS(update_weights(short_p, a, 0.7, scheme), ShapeError);
  std::vector<ProbTable> none;
  CHECK_THROWS_AS(update_weights(none, a, 0.7, scheme), ShapeError);
}

TEST_CASE("minority classes with mostly low confidence are protected") {
  const TagScheme scheme({"PER", "ORG"});
  std::vector<LabelAssignment> a;
  std::vector<ProbTable> p;
  // 20 ORG tokens, 19 of them below tau (95%): protected.
  for (int k = 0; k < 20; ++k) {
    a.push_back(LabelAssignment::from_labels({2, 1}));
    const double f_org = k == 0 ? 0.9 : 0.3;
    p.push_back(table({{0.1, 0.9 - f_org, f_org}, {0.1, k < 10 ? 0.8 : 0.5, k < 10 ? 0.1 : 0.4}}));
  }
  const auto stats = update_weights(p, a, 0.7, scheme);
  REQUIRE(stats.protected_classes == std::vector<int>{2});
  for (const auto& x : a) CHECK(x.weight[0] == 1);
  std::size_t per_zero = 0;
  for (const auto& x : a) per_zero += x.weight[1] == 0;
  CHECK(per_zero == 10);
}

TEST_CASE("schedule validation") {
  RobustSchedule s;
  CHECK_NOTHROW(s.validate());
  s.epochs = 0;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s = {};
  s.weight_update_period = 0;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s = {};
  s.drop_rate = 1.0;
  CHECK_THROWS_AS(s.validate(), ParameterError);
}

TEST_CASE("tau zero keeps every weight at one") {
  auto r = toy_recipe();
  r.robust.epochs = 1;
  const auto b = make_benchmark(r.bench, r.seed);
  auto cfg = RobustConfig::from_recipe(r, 1);
  cfg.tau = 0.0;
  const auto res = train_robust(toy_model(r, b, 1), b.train.sentences, b.noisy_assignments(), cfg);
  for (const auto& a : res.assignments) {
    for (auto w : a.weight) CHECK(w == 1);
  }
  CHECK(res.refreshes.empty());
}

TEST_CASE("small q tracks ce training") {
  auto r = toy_recipe();
  r.robust.epochs = 1;
  r.robust.drop_rate = 0.0;
  r.bench.deletion_rate = 0.0;
  r.bench.flip_rate = 0.0;
  const auto b = make_benchmark(r.bench, r.seed);
  auto ce = RobustConfig::from_recipe(r, 4);
  ce.loss = LossKind::kCe;
  ce.tau = 0.0;
  auto gce = ce;
  gce.loss = LossKind::kGce;
  gce.q = 1e-5;
  const auto a = train_robust(toy_model(r, b, 4), b.train.sentences, b.noisy_assignments(), ce);
  const auto g = train_robust(toy_model(r, b, 4), b.train.sentences, b.noisy_assignments(), gce);
  REQUIRE(a.batch_losses.size() >= 10);
  for (std::size_t k = 0; k < 10; ++k) {
    CHECK(g.batch_losses[k] == doctest::Approx(a.batch_losses[k]).epsilon(1e-3));
  }
}

TEST_CASE("q near zero ends within five percent of ce on clean data") {
  auto r = toy_recipe();
  r.bench.deletion_rate = 0.0;
  r.bench.flip_rate = 0.0;
  const auto b = make_benchmark(r.bench, r.seed);
  auto ce = RobustConfig::from_recipe(r, 8);
  ce.loss = LossKind::kCe;
  ce.tau = 0.0;
  auto gce = ce;
  gce.loss = LossKind::kGce;
  gce.q = 1e-4;
  const auto a = train_robust(toy_model(r, b, 8), b.train.sentences, b.noisy_assignments(), ce);
  const auto g = train_robust(toy_model(r, b, 8), b.train.sentences, b.noisy_assignments(), gce);
  auto tail = [](const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t k = v.size() - 5; k < v.size(); ++k) s += v[k];
    return s / 5.0;
  };
  CHECK(std::abs(tail(g.batch_losses) - tail(a.batch_losses)) < 0.05 * tail(a.batch_losses));
}

TEST_CASE("removed tokens are enriched for planted noise") {
  auto r = toy_recipe();
  r.robust.epochs = 6;
  const auto b = make_benchmark(r.bench, r.seed);
  const auto res = train_robust(toy_model(r, b, 2), b.train.sentences, b.noisy_assignments(),
                                RobustConfig::from_recipe(r, 2));
  std::size_t noisy = 0, noisy_zero = 0, clean = 0, clean_zero = 0;
  for (std::size_t s = 0; s < res.assignments.size(); ++s) {
    const auto& a = res.assignments[s];
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!a.included[i]) continue;
      if (b.noise.mask[s][i]) {
        ++noisy;
        noisy_zero += a.weight[i] == 0;
      } else {
        ++clean;
        clean_zero += a.weight[i] == 0;
      }
    }
  }
  REQUIRE(noisy > 0);
  CHECK(static_cast<double>(noisy_zero) / noisy > static_cast<double>(clean_zero) / clean);
}

TEST_CASE("robust training is deterministic and audited") {
  auto r = toy_recipe();
  r.robust.epochs = 1;
  const auto b = make_benchmark(r.bench, r.seed);
  std::ostringstream audit1, audit2;
  const auto cfg = RobustConfig::from_recipe(r, 9);
  const auto x = train_robust(toy_model(r, b, 9), b.train.sentences, b.noisy_assignments(), cfg,
                              make_audit_writer(audit1));
  const auto y = train_robust(toy_model(r, b, 9), b.train.sentences, b.noisy_assignments(), cfg,
                              make_audit_writer(audit2));
  CHECK(x.batch_losses == y.batch_losses);
  CHECK(audit1.str() == audit2.str());
  CHECK_FALSE(audit1.str().empty());
  bool same = true;
  x.model.visit_params([&](const std::string& name, const nn::Param& p) {
    y.model.visit_params([&](const std::string& other, const nn::Param& q) {
      if (name == other) same = same && p.value == q.value;
    });
  });
  CHECK(same);
  // ceil(300 / 32) = 10 batches, period 5: one mid-pass refresh plus the end of pass.
  CHECK(x.refreshes.size() == 2);
}

TEST_CASE("misaligned labels are rejected") {
  auto r = toy_recipe();
  const auto b = make_benchmark(r.bench, r.seed);
  auto labels = b.noisy_assignments();
  labels.pop_back();
  CHECK_THROWS_AS(train_robust(toy_model(r, b, 1), b.train.sentences, labels, RobustConfig::from_recipe(r, 1)),
                  ShapeError);
}
