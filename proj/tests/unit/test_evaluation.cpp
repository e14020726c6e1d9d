// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "dsner/error.hpp"
#include "dsner/evaluation.hpp"
#include "dsner/rng.hpp"

using namespace dsner;

namespace {

constexpr int O = 0, PER = 1, ORG = 2, LOC = 3;

// Non-overlapping typed spans with no two same-type spans touching.
std::vector<EntitySpan> random_spans(Rng& rng, std::size_t n) {
  std::vector<EntitySpan> spans;
  std::size_t i = 0;
  int prev_type = 0;
  std::size_t prev_end = 0;
  while (i < n) {
    if (uniform01(rng) < 0.5) {
      ++i;
      continue;
    }
    const auto len = 1 + uniform_index(rng, std::min<std::size_t>(4, n - i));
    int type = static_cast<int>(1 + uniform_index(rng, 3));
    if (!spans.empty() && prev_end == i && type == prev_type) type = type % 3 + 1;
    spans.push_back({static_cast<int>(i), static_cast<int>(i + len), type});
    prev_type = type;
    prev_end = i + len;
    i += len;
  }
  return spans;
}

}  // namespace

TEST_CASE("run decoding") {
  CHECK(decode_entities(std::vector<int>{PER, PER, O, ORG}) ==
        std::vector<EntitySpan>{{0, 2, PER}, {3, 4, ORG}});
  CHECK(decode_entities(std::vector<int>{O, O, O}).empty());
  CHECK(decode_entities(std::vector<int>{PER, ORG, ORG}) ==
        std::vector<EntitySpan>{{0, 1, PER}, {1, 3, ORG}});
  CHECK(decode_entities(std::vector<int>{}).empty());
}

TEST_CASE("hand-worked span scoring example") {
  const std::vector<EntitySpan> gold{{0, 2, PER}, {3, 4, ORG}};
  const std::vector<EntitySpan> pred{{0, 2, PER}, {3, 4, PER}};
  const Prf r = score(pred, gold);
  CHECK(r.precision == 0.5);
  CHECK(r.recall == 0.5);
  CHECK(r.f1 == 0.5);
  CHECK(r.true_positives == 1);
}

TEST_CASE("scoring edge cases") {
  const std::vector<EntitySpan> gold{{0, 2, PER}, {3, 4, ORG}};
  const Prf same = score(gold, gold);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.f1 == 1.0);
  const Prf empty = score({}, gold);
  CHECK(empty.precision == 0.0);
  CHECK(empty.recall == 0.0);
  CHECK(empty.f1 == 0.0);
  CHECK(score({}, {}).f1 == 0.0);
}

TEST_CASE("decode of encode is the identity on random span sets") {
  Rng rng(2024);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto n = 1 + uniform_index(rng, 30);
    const auto spans = random_spans(rng, n);
    const auto labels = encode_entities(spans, n);
    REQUIRE(decode_entities(labels) == spans);
  }
}

TEST_CASE("f1 bounds and swap symmetry") {
  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto n = 1 + uniform_index(rng, 20);
    const auto a = random_spans(rng, n);
    const auto b = random_spans(rng, n);
    const Prf ab = score(a, b), ba = score(b, a);
    CHECK(ab.f1 >= 0.0);
    CHECK(ab.f1 <= 1.0);
    CHECK(ab.f1 == doctest::Approx(ba.f1));
    CHECK(ab.precision == doctest::Approx(ba.recall));
  }
}

TEST_CASE("corpus micro scoring and token scores") {
  const std::vector<std::vector<int>> gold{{PER, PER, O, ORG}, {LOC, O}};
  const std::vector<std::vector<int>> pred{{PER, PER, O, PER}, {LOC, LOC}};
  const Prf r = score_corpus(pred, gold);
  CHECK(r.true_positives == 1);
  CHECK(r.predicted == 3);
  CHECK(r.gold == 3);
  const Prf t = token_scores(pred, gold);
  CHECK(t.true_positives == 3);
  CHECK(t.predicted == 5);
  CHECK(t.gold == 4);
  CHECK_THROWS_AS(score_corpus(pred, std::vector<std::vector<int>>{{O}}), ShapeError);
}

TEST_CASE("report rendering") {
  const TagScheme scheme({"PER", "ORG", "LOC"});
  const std::vector<std::vector<int>> gold{{PER, PER, O, ORG}};
  const std::vector<std::vector<int>> pred{{PER, PER, O, PER}};
  const auto report = evaluate_labels(pred, gold, scheme);
  CHECK(report.per_type.size() == 3);
  CHECK(report.per_type[0].second.true_positives == 1);
  const auto kv = render_report_kv(report);
  CHECK(kv.find("overall.f1=0.5\n") != std::string::npos);
  CHECK(kv.find("type.ORG.recall=0\n") != std::string::npos);
  CHECK(render_report_table(report).find("overall") != std::string::npos);
}
