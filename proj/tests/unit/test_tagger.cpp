// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "dsner/error.hpp"
#include "dsner/tagger.hpp"
#include "grad_check.hpp"
#include "test_support.hpp"

using namespace dsner;

namespace {

TagScheme two_types() { return TagScheme({"PER", "ORG"}); }

EncoderSpec micro_spec(EncoderKind kind = EncoderKind::kTinyTransformer) {
  EncoderSpec s;
  s.kind = kind;
  s.hidden = 4;
  s.layers = 1;
  s.heads = 2;
  s.ffn = 6;
  s.max_length = 3;
  s.dropout = 0.0;
  return s;
}

std::vector<Sentence> toy_sentences() {
  return {Sentence::from_tokens("t:0", {"Todd", "Martin", "won"}),
          Sentence::from_tokens("t:1", {"Acme", "lost"})};
}

// 50 sequences where the token decides the label.
struct CleanToy {
  std::vector<Sentence> sentences;
  std::vector<LabelAssignment> labels;
};

CleanToy clean_toy() {
  CleanToy toy;
  Rng rng(42);
  const std::vector<std::pair<std::string, int>> words = {
      {"Alice", 1}, {"Bob", 1}, {"Acme", 2}, {"Initech", 2}, {"the", 0},
      {"met", 0},   {"at", 0},  {"with", 0}, {"and", 0}};
  for (int k = 0; k < 50; ++k) {
    std::vector<std::string> toks;
    std::vector<int> ys;
    for (int i = 0; i < 6; ++i) {
      const auto& w = words[uniform_index(rng, words.size())];
      toks.push_back(w.first);
      ys.push_back(w.second);
    }
    toy.sentences.push_back(Sentence::from_tokens("toy:" + std::to_string(k), toks));
    toy.labels.push_back(LabelAssignment::from_labels(ys));
  }
  return toy;
}

}  // namespace

TEST_CASE("combined head product rule") {
  auto sents = toy_sentences();
  auto model = create_tagger(micro_spec(), two_types(), Vocabulary::build(sents), 1, 2);
  model.binary_head.weight.value.setZero();
  model.type_head.weight.value.setZero();
  model.type_head.bias.value.setZero();

  model.binary_head.bias.value(0, 0) = -1000.0;
  auto p = predict(model, sents[0]);
  for (Eigen::Index i = 0; i < 3; ++i) {
    CHECK(p.probs(i, 0) == 1.0);
    CHECK(p.probs(i, 1) == 0.0);
  }

  model.binary_head.bias.value(0, 0) = std::log(4.0);  // p = 0.8
  p = predict(model, sents[0]);
  CHECK(p.probs(0, 0) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(p.probs(0, 1) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(p.probs(0, 2) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("rows of a random model form distributions") {
  Rng rng(9);
  std::vector<Sentence> sents;
  for (int k = 0; k < 20; ++k) {
    std::vector<std::string> toks;
    const auto n = 1 + uniform_index(rng, 12);
    for (std::size_t i = 0; i < n; ++i) toks.push_back("w" + std::to_string(uniform_index(rng, 30)));
    sents.push_back(Sentence::from_tokens("r:" + std::to_string(k), toks));
  }
  EncoderSpec spec;
  spec.hidden = 16;
  spec.heads = 2;
  spec.ffn = 32;
  spec.max_length = 16;
  auto model = create_tagger(spec, TagScheme({"A", "B", "C"}), Vocabulary::build(sents), 3, 4);
  for (const auto& s : sents) {
    auto p = predict(model, s);
    for (Eigen::Index i = 0; i < p.probs.rows(); ++i) {
      CHECK(std::abs(p.probs.row(i).sum() - 1.0) < 1e-6);
      CHECK(p.probs.row(i).minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("out-of-vocabulary tokens map to unk and long inputs are rejected") {
  auto sents = toy_sentences();
  auto model = create_tagger(micro_spec(), two_types(), Vocabulary::build(sents), 1, 2);
  CHECK_NOTHROW(predict(model, Sentence::from_tokens("x", {"Zorro", "Martin"})));
  CHECK(model.vocab.id("Zorro") == Vocabulary::kUnk);
  CHECK_THROWS_AS(predict(model, Sentence::from_tokens("x", {"a", "b", "c", "d"})), LengthError);
}

TEST_CASE("micro-model gradients match finite differences") {
  auto sents = toy_sentences();
  auto labels0 = LabelAssignment::from_labels({1, 1, 0});
  auto labels1 = LabelAssignment::from_labels({2, 0});
  for (auto kind : {EncoderKind::kTinyTransformer, EncoderKind::kRecurrentBidirectional}) {
    auto model = create_tagger(micro_spec(kind), two_types(), Vocabulary::build(sents), 5, 6);
    CHECK(model.parameter_count() <= 500);

    std::vector<Example> gce{{&sents[0], two_head_label_loss(labels0, LossKind::kGce, 0.7)},
                             {&sents[1], two_head_label_loss(labels1, LossKind::kGce, 0.7)}};
    auto r = testing::gradient_check(model, gce);
    CHECK(r.max_rel_error < 1e-3);

    Rng rng(3);
    std::vector<Example> kl{{&sents[0], combined_kl_loss(testing::random_prob_rows(rng, 3, 3))},
                            {&sents[1], combined_label_loss(labels1, LossKind::kCe, 0.0)}};
    r = testing::gradient_check(model, kl);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("two-head ce equals combined ce") {
  auto sents = toy_sentences();
  auto model = create_tagger(micro_spec(), two_types(), Vocabulary::build(sents), 5, 6);
  auto labels = LabelAssignment::from_labels({1, 2, 0});
  const auto pred = predict(model, sents[0]);
  auto a = two_head_label_loss(labels, LossKind::kCe, 0.0)(pred);
  auto b = combined_label_loss(labels, LossKind::kCe, 0.0)(pred);
  CHECK(a.loss_sum == doctest::Approx(b.loss_sum).epsilon(1e-12));
  CHECK((a.grad.d_binary - b.grad.d_binary).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.grad.d_type - b.grad.d_type).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  auto toy = clean_toy();
  EncoderSpec spec;
  spec.hidden = 16;
  spec.heads = 2;
  spec.ffn = 32;
  spec.max_length = 8;
  auto model = create_tagger(spec, two_types(), Vocabulary::build(toy.sentences), 1, 2);
  const auto before = model;
  AdamOptimizer opt(model, 0.0, 10);
  Rng rng(1);
  std::vector<Example> batch;
  for (std::size_t k = 0; k < 8; ++k) {
    batch.push_back({&toy.sentences[k], two_head_label_loss(toy.labels[k], LossKind::kCe, 0.0)});
  }
  train_step(model, batch, opt, rng);
  std::vector<const Mat*> a, b;
  model.visit_params([&](const std::string&, const nn::Param& p) { a.push_back(&p.value); });
  before.visit_params([&](const std::string&, const nn::Param& p) { b.push_back(&p.value); });
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(*a[k] == *b[k]);
}

TEST_CASE("ce training on clean toy data decreases the loss") {
  auto toy = clean_toy();
  EncoderSpec spec;
  spec.hidden = 16;
  spec.heads = 2;
  spec.ffn = 32;
  spec.max_length = 8;
  auto model = create_tagger(spec, two_types(), Vocabulary::build(toy.sentences), 1, 2);
  AdamOptimizer opt(model, 3e-3, 200);
  Rng rng(5);
  std::vector<double> losses;
  for (int step = 0; step < 200; ++step) {
    std::vector<Example> batch;
    for (int b = 0; b < 8; ++b) {
      const auto k = uniform_index(rng, toy.sentences.size());
      batch.push_back({&toy.sentences[k], two_head_label_loss(toy.labels[k], LossKind::kCe, 0.0)});
    }
    losses.push_back(train_step(model, batch, opt, rng));
  }
  double prev = 1e9;
  for (int w = 0; w < 4; ++w) {
    double avg = 0.0;
    for (int k = 0; k < 50; ++k) avg += losses[static_cast<std::size_t>(w * 50 + k)];
    avg /= 50;
    CHECK(avg < prev);
    prev = avg;
  }
}

TEST_CASE("inference is deterministic and order preserving") {
  auto toy = clean_toy();
  EncoderSpec spec;
  spec.hidden = 8;
  spec.heads = 2;
  spec.ffn = 8;
  spec.max_length = 8;
  auto model = create_tagger(spec, two_types(), Vocabulary::build(toy.sentences), 1, 2);
  auto a = predict_corpus(model, toy.sentences);
  auto b = predict_corpus(model, toy.sentences);
  REQUIRE(a.size() == toy.sentences.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].rows() == b[k].rows());
  CHECK(predict_corpus(model, std::vector<Sentence>{}).empty());
}

TEST_CASE("non-finite loss aborts the step with the sequence id") {
  auto sents = toy_sentences();
  auto model = create_tagger(micro_spec(), two_types(), Vocabulary::build(sents), 1, 2);
  AdamOptimizer opt(model, 1e-3, 10);
  Rng rng(1);
  std::vector<Example> batch{{&sents[1], [](const Prediction& p) {
                                LossTerm t;
                                t.loss_sum = std::nan("");
                                t.count = 1;
                                t.grad = HeadGrad::zeros(static_cast<std::size_t>(p.probs.rows()), 2);
                                return t;
                              }}};
  try {
    train_step(model, batch, opt, rng);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.sequence_id() == "t:1");
  }
}

TEST_CASE("model checkpoints restore parameters bit-exactly") {
  auto dir = testing::temp_dir("tagger_ckpt");
  auto toy = clean_toy();
  EncoderSpec spec;
  spec.hidden = 8;
  spec.heads = 2;
  spec.ffn = 8;
  spec.max_length = 8;
  auto model = create_tagger(spec, two_types(), Vocabulary::build(toy.sentences), 1, 2);
  AdamOptimizer opt(model, 1e-2, 5);
  Rng rng(2);
  std::vector<Example> batch{{&toy.sentences[0], two_head_label_loss(toy.labels[0], LossKind::kGce, 0.7)}};
  for (int k = 0; k < 5; ++k) train_step(model, batch, opt, rng);

  CheckpointMeta meta;
  meta.seed = 123;
  meta.stage = "robust";
  meta.iteration = 3;
  meta.recipe = {{"robust.q", "0.7"}, {"robust.tau", "0.7"}};
  save_model(model, meta, dir / "m.ckpt");
  auto loaded = load_model(dir / "m.ckpt");
  CHECK(loaded.meta.seed == 123);
  CHECK(loaded.meta.stage == "robust");
  CHECK(loaded.meta.iteration == 3);
  CHECK(loaded.meta.recipe.at("robust.q") == "0.7");
  CHECK(loaded.meta.recipe.at("robust.tau") == "0.7");

  std::vector<const Mat*> a, b;
  model.visit_params([&](const std::string&, const nn::Param& p) { a.push_back(&p.value); });
  loaded.model.visit_params([&](const std::string&, const nn::Param& p) { b.push_back(&p.value); });
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(*a[k] == *b[k]);
  for (const auto& s : toy.sentences) {
    CHECK(predict(model, s).probs == predict(loaded.model, s).probs);
  }
}

TEST_CASE("adapter encoder reads external features by sequence id") {
  auto store = std::make_shared<FeatureStore>();
  store->put("s0", Mat::Random(3, 5));
  EncoderSpec spec;
  spec.kind = EncoderKind::kPretrainedAdapter;
  spec.hidden = 4;
  spec.feature_dim = 5;
  spec.max_length = 10;
  spec.dropout = 0.0;
  auto s = Sentence::from_tokens("s0", {"a", "b", "c"});
  std::vector<Sentence> sents{s};
  auto model = create_tagger(spec, two_types(), Vocabulary::build(sents), 1, 2, store);
  auto labels = LabelAssignment::from_labels({1, 0, 2});
  std::vector<Example> batch{{&sents[0], two_head_label_loss(labels, LossKind::kGce, 0.7)}};
  CHECK(testing::gradient_check(model, batch).max_rel_error < 1e-3);
  CHECK_THROWS_AS(predict(model, Sentence::from_tokens("missing", {"a"})), SchemaError);
}
