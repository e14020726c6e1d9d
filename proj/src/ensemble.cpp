// SPDX-License-Identifier: Apache-2.0
#include "dsner/ensemble.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <numeric>
#include <optional>
#include <thread>

#include "dsner/error.hpp"

namespace dsner {

namespace {

constexpr std::uint64_t kEncoderStream = 100;
constexpr std::uint64_t kHeadStream = 101;
constexpr std::uint64_t kShuffleStream = 4;
constexpr std::uint64_t kDropoutStream = 5;

}  // namespace

void EnsembleSpec::validate() const {
  if (members < 1) throw ParameterError("an ensemble needs at least one member");
}

TaggerModel initial_model(const EncoderSpec& spec, const TagScheme& scheme, const Vocabulary& vocab,
                          std::uint64_t base_seed, std::uint64_t head_seed,
                          std::shared_ptr<const FeatureStore> features) {
  return create_tagger(spec, scheme, vocab, derive_seed(base_seed, kEncoderStream),
                       derive_seed(head_seed, kHeadStream), std::move(features));
}

ProbTable average_predictions(std::span<const ProbTable> tables) {
  if (tables.empty()) throw ShapeError("cannot average zero prediction tables");
  Mat acc = tables.front().rows();
  for (std::size_t k = 1; k < tables.size(); ++k) {
    if (tables[k].tokens() != tables[0].tokens() || tables[k].classes() != tables[0].classes()) {
      throw ShapeError("prediction table " + std::to_string(k) + " has shape " +
                       std::to_string(tables[k].tokens()) + "x" + std::to_string(tables[k].classes()) +
                       ", expected " + std::to_string(tables[0].tokens()) + "x" +
                       std::to_string(tables[0].classes()));
    }
    acc += tables[k].rows();
  }
  acc /= static_cast<double>(tables.size());
  return ProbTable(std::move(acc));
}

std::vector<ProbTable> ensemble_predictions(std::span<const TaggerModel> members,
                                            std::span<const Sentence> corpus) {
  if (members.empty()) throw ShapeError("ensemble has no members");
  std::vector<ProbTable> out;
  out.reserve(corpus.size());
  std::vector<ProbTable> per_member;
  for (const auto& s : corpus) {
    per_member.clear();
    for (const auto& m : members) per_member.emplace_back(predict(m, s).probs);
    out.push_back(average_predictions(per_member));
  }
  return out;
}

std::vector<RobustResult> train_members(const EnsembleSpec& spec, const RobustConfig& config,
                                        const TaggerModel& shape_source,
                                        std::span<const Sentence> corpus,
                                        std::span<const LabelAssignment> labels,
                                        std::size_t threads) {
  spec.validate();
  std::vector<std::optional<RobustResult>> slots(spec.members);
  auto run = [&](std::size_t k) {
    const std::uint64_t seed = spec.member_seed(k);
    TaggerModel init = initial_model(shape_source.spec, shape_source.scheme, shape_source.vocab,
                                     spec.base_seed, seed, adapter_features(shape_source));
    RobustConfig c = config;
    c.schedule.seed = seed;
    slots[k] = train_robust(std::move(init), corpus, labels, c);
  };
  threads = std::max<std::size_t>(1, std::min(threads, spec.members));
  if (threads == 1) {
    for (std::size_t k = 0; k < spec.members; ++k) run(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < spec.members; k = next++) {
          try {
            run(k);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }
  std::vector<RobustResult> out;
  out.reserve(spec.members);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

double mean_kl(const TaggerModel& model, std::span<const Sentence> corpus,
               std::span<const ProbTable> targets) {
  if (corpus.size() != targets.size()) throw ShapeError("KL: corpus and target counts differ");
  double acc = 0.0;
  std::size_t tokens = 0;
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    const Prediction p = predict(model, corpus[s]);
    if (targets[s].tokens() != corpus[s].size()) throw ShapeError("KL: target rows differ from tokens");
    for (std::size_t i = 0; i < corpus[s].size(); ++i) {
      acc += kl_divergence(targets[s].rows().row(static_cast<Eigen::Index>(i)),
                           p.probs.row(static_cast<Eigen::Index>(i)));
    }
    tokens += corpus[s].size();
  }
  return tokens ? acc / static_cast<double>(tokens) : 0.0;
}

DistillResult distill(std::span<const TaggerModel> members, TaggerModel init,
                      std::span<const Sentence> corpus, const DistillConfig& config) {
  if (members.empty()) throw ParameterError("distillation needs at least one member");
  if (config.batch_size < 1) throw ParameterError("batch size must be at least 1");
  // Members are frozen, so one pass of inference serves every epoch.
  const std::vector<ProbTable> targets = ensemble_predictions(members, corpus);

  DistillResult result{std::move(init), 0.0, {}};
  const std::size_t n = corpus.size();
  const std::size_t per_pass = (n + config.batch_size - 1) / config.batch_size;
  if (config.epochs > 0 && n > 0) {
    AdamOptimizer opt(result.model, config.lr, config.epochs * per_pass);
    Rng shuffle_rng = make_rng(config.seed, kShuffleStream);
    Rng dropout_rng = make_rng(config.seed, kDropoutStream);
    std::vector<std::size_t> order(n);
    std::vector<Example> batch;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      shuffle_in_place(order, shuffle_rng);
      for (std::size_t b = 0; b < per_pass; ++b) {
        batch.clear();
        const std::size_t end = std::min(n, (b + 1) * config.batch_size);
        for (std::size_t k = b * config.batch_size; k < end; ++k) {
          const std::size_t s = order[k];
          batch.push_back({&corpus[s], combined_kl_loss(targets[s].rows())});
        }
        result.batch_losses.push_back(train_step(result.model, batch, opt, dropout_rng));
      }
    }
  }
  result.final_kl = mean_kl(result.model, corpus, targets);
  return result;
}

}  // namespace dsner
