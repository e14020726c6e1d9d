// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "dsner/augmentation.hpp"
#include "dsner/error.hpp"
#include "dsner/harness.hpp"

using namespace dsner;

namespace {

Sentence sent(std::vector<std::string> toks) { return Sentence::from_tokens("s", std::move(toks)); }

MaskedSequence mask_at(const Sentence& s, std::vector<std::size_t> pos) {
  MaskedSequence m{s, pos, s.tokens};
  for (auto p : pos) m.view[p] = std::string(kMaskToken);
  return m;
}

class FailingMlm : public MlmAdapter {
 public:
  std::string name() const override { return "failing"; }
  MlmDistribution query(const MaskedSequence& m) override {
    if (m.original.tokens.front() == "bad") throw IoError("adapter unavailable");
    MlmDistribution d;
    for (std::size_t k = 0; k < m.positions.size(); ++k) d.candidates.push_back({{"x", 1.0}});
    return d;
  }
};

}  // namespace

TEST_CASE("mask counts follow the rounding rule") {
  Rng rng(1);
  std::vector<std::string> toks(20, "w");
  CHECK(mask_sequence(sent(toks), 0.15, rng).positions.size() == 3);
  CHECK(mask_sequence(sent({"w"}), 0.15, rng).positions.size() == 1);
  CHECK(mask_sequence(sent({"a", "b"}), 0.15, rng).positions.size() == 1);
  const auto m = mask_sequence(sent(toks), 0.5, rng);
  CHECK(m.positions.size() == 10);
  for (std::size_t k = 1; k < m.positions.size(); ++k) CHECK(m.positions[k - 1] < m.positions[k]);
  for (auto p : m.positions) CHECK(m.view[p] == kMaskToken);
  CHECK_THROWS_AS(mask_sequence(sent({}), 0.15, rng), ParameterError);
  CHECK_THROWS_AS(mask_sequence(sent({"a"}), 0.0, rng), ParameterError);
  CHECK_THROWS_AS(mask_sequence(sent({"a"}), 1.0, rng), ParameterError);
}

TEST_CASE("masking is deterministic under a seed") {
  std::vector<std::string> toks(30, "w");
  Rng a(77), b(77);
  CHECK(mask_sequence(sent(toks), 0.15, a).positions == mask_sequence(sent(toks), 0.15, b).positions);
}

TEST_CASE("capitalization filter") {
  const auto s = sent({"Martin", "won"});
  const auto m = mask_at(s, {0});
  MlmDistribution d{{{{"martin", 0.6}, {"Todd", 0.4}}}};
  Rng rng(3);
  const auto out = sample_replacements(m, d, 5, rng);
  CHECK(out.sentence.tokens[0] == "Todd");
  CHECK(out.provenance[0] == Provenance::kReplaced);
  CHECK(out.rank[0] == 2);
  CHECK(out.provenance[1] == Provenance::kUnmasked);
  CHECK(out.sentence.tokens[1] == "won");
}

TEST_CASE("fully filtered lists keep the original") {
  const auto s = sent({"Martin"});
  MlmDistribution d{{{{"martin", 0.6}, {"todd", 0.4}}}};
  Rng rng(3);
  const auto out = sample_replacements(mask_at(s, {0}), d, 5, rng);
  CHECK(out.sentence.tokens[0] == "Martin");
  CHECK(out.provenance[0] == Provenance::kKept);
  CHECK(out.rank[0] == 0);
  CHECK_THROWS_AS(sample_replacements(mask_at(s, {0}), d, 0, rng), ParameterError);
}

TEST_CASE("subword agreement") {
  auto s = sent({"play", "##ing"});
  s.is_subword[1] = 1;
  MlmDistribution d{{{{"ed", 0.5}, {"##ed", 0.3}, {"##s", 0.2}}}};
  Rng rng(9);
  for (int k = 0; k < 50; ++k) {
    const auto out = sample_replacements(mask_at(s, {1}), d, 5, rng);
    CHECK(is_subword_piece(out.sentence.tokens[1]));
  }
  CHECK_FALSE(is_subword_piece("##"));
  CHECK(is_subword_piece("##a"));
}

TEST_CASE("top-k truncation and renormalized sampling frequencies") {
  const auto s = sent({"a"});
  MlmDistribution d{{{{"b", 0.3}, {"c", 0.2}, {"d", 0.15}, {"e", 0.12}, {"f", 0.1}, {"g", 0.08}, {"h", 0.05}}}};
  const double top5 = 0.3 + 0.2 + 0.15 + 0.12 + 0.1;
  std::map<std::string, int> counts;
  Rng rng(12345);
  const int draws = 10000;
  for (int k = 0; k < draws; ++k) ++counts[sample_replacements(mask_at(s, {0}), d, 5, rng).sentence.tokens[0]];
  CHECK(counts.count("g") == 0);
  CHECK(counts.count("h") == 0);
  for (std::size_t r = 0; r < 5; ++r) {
    const double p = d.candidates[0][r].prob / top5;
    const double se = std::sqrt(p * (1 - p) / draws);
    const double freq = counts[d.candidates[0][r].token] / static_cast<double>(draws);
    CHECK(std::abs(freq - p) < 3 * se);
  }
}

TEST_CASE("malformed distributions are rejected") {
  const auto m = mask_at(sent({"a", "b"}), {0, 1});
  Rng rng(1);
  MlmDistribution short_d{{{{"x", 1.0}}}};
  CHECK_THROWS_AS(sample_replacements(m, short_d, 5, rng), SchemaError);
  MlmDistribution empty_list{{{{"x", 1.0}}, {}}};
  CHECK_THROWS_AS(sample_replacements(m, empty_list, 5, rng), SchemaError);
  MlmDistribution unsorted{{{{"x", 0.2}, {"y", 0.8}}, {{"z", 1.0}}}};
  CHECK_THROWS_AS(sample_replacements(m, unsorted, 5, rng), SchemaError);
}

TEST_CASE("corpus masked-LM ranks context-compatible words") {
  std::vector<Sentence> corpus;
  for (int k = 0; k < 20; ++k) {
    corpus.push_back(sent({"mr", "Smith", "said"}));
    corpus.push_back(sent({"in", "Paris", "today"}));
  }
  CorpusMlm mlm(corpus);
  const auto d = mlm.query(mask_at(sent({"mr", "Jones", "said"}), {1}));
  d.validate(1);
  CHECK(d.candidates[0].front().token == "Smith");
  double sum = 0.0;
  for (const auto& c : d.candidates[0]) sum += c.prob;
  CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("oracle replacements preserve generator labels") {
  SyntheticGrammar g(GrammarSpec{}, 5);
  const auto corpus = g.generate(300, 6, true);
  OracleMlm oracle(g);
  const auto aug = augment_corpus(corpus.sentences, oracle, 0.15, 5, 17);
  REQUIRE(aug.skipped == 0);
  std::size_t replaced = 0;
  for (std::size_t s = 0; s < corpus.sentences.size(); ++s) {
    const auto& a = *aug.pairs[s];
    for (std::size_t i = 0; i < a.sentence.size(); ++i) {
      if (a.provenance[i] != Provenance::kReplaced) {
        CHECK(a.sentence.tokens[i] == corpus.sentences[s].tokens[i]);
        continue;
      }
      ++replaced;
      const auto info = g.lookup(a.sentence.tokens[i]);
      REQUIRE(info);
      const int label = info->kind == WordInfo::Kind::kEntity ? info->group : TagScheme::kOutside;
      CHECK(label == corpus.gold[s][i]);
    }
  }
  CHECK(replaced > 300);
}

TEST_CASE("augment_corpus pairs, skips failures and is deterministic") {
  std::vector<Sentence> corpus;
  for (int k = 0; k < 100; ++k) corpus.push_back(sent({k == 7 ? "bad" : "ok", "b", "c"}));
  FailingMlm adapter;
  std::ostringstream log1, log2;
  const auto a = augment_corpus(corpus, adapter, 0.15, 5, 4, &log1);
  const auto b = augment_corpus(corpus, adapter, 0.15, 5, 4, &log2);
  CHECK(a.pairs.size() == 100);
  CHECK(a.skipped == 1);
  CHECK_FALSE(a.pairs[7]);
  CHECK(a.warnings.size() == 1);
  CHECK(log1.str() == log2.str());
  for (std::size_t s = 0; s < 100; ++s) {
    if (s == 7) continue;
    CHECK(a.pairs[s]->sentence.tokens == b.pairs[s]->sentence.tokens);
  }
  CHECK_THROWS_AS(augment_corpus(corpus, adapter, 0.15, 0, 4), ParameterError);
}

TEST_CASE("external adapter over a subprocess pipe") {
  ExternalMlm mlm("python3 " DSNER_SOURCE_DIR "/tools/mlm_adapter_example.py");
  const auto d = mlm.query(mask_at(sent({"the", "dog", "ran"}), {1, 2}));
  REQUIRE(d.candidates.size() == 2);
  CHECK(d.candidates[0].front().token == "the");
  const auto again = mlm.query(mask_at(sent({"the", "dog"}), {0}));
  CHECK(again.candidates.size() == 1);

  ExternalMlm broken("exit 0");
  CHECK_THROWS_AS(broken.query(mask_at(sent({"a"}), {0})), IoError);
}
