// SPDX-License-Identifier: Apache-2.0
#include "dsner/robust.hpp"

#include <numeric>
#include <ostream>

#include "dsner/error.hpp"
#include "dsner/util.hpp"

namespace dsner {

namespace {

constexpr std::uint64_t kDropStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kDropoutStream = 3;

}  // namespace

void RobustSchedule::validate() const {
  if (epochs < 1) throw ParameterError("robust schedule needs at least one pass");
  if (weight_update_period < 1) throw ParameterError("weight update period must be at least 1");
  if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw ParameterError("drop rate must lie in [0, 1)");
  if (batch_size < 1) throw ParameterError("batch size must be at least 1");
}

RobustConfig RobustConfig::from_recipe(const TrainRecipe& recipe, std::uint64_t seed) {
  RobustConfig c;
  c.schedule.epochs = recipe.robust.epochs;
  c.schedule.weight_update_period = recipe.robust.weight_update_period;
  c.schedule.drop_rate = recipe.robust.drop_rate;
  c.schedule.batch_size = recipe.robust.batch_size;
  c.schedule.seed = seed;
  c.loss = recipe.robust.loss;
  c.q = recipe.robust.q;
  c.tau = recipe.robust.tau;
  c.lr = recipe.robust.lr;
  c.protect_fraction = recipe.robust.protect_fraction;
  return c;
}

std::size_t drop_nonentity(std::span<LabelAssignment> assignments, double drop_rate, Rng& rng) {
  if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw ParameterError("drop rate must lie in [0, 1)");
  std::vector<std::pair<std::size_t, std::size_t>> outside;
  for (std::size_t s = 0; s < assignments.size(); ++s) {
    for (std::size_t i = 0; i < assignments[s].size(); ++i) {
      if (!TagScheme::is_entity(assignments[s].labels[i])) outside.emplace_back(s, i);
    }
  }
  const auto k = static_cast<std::size_t>(drop_rate * static_cast<double>(outside.size()));
  // Partial Fisher-Yates: the first k entries become a uniform k-subset.
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t r = j + uniform_index(rng, outside.size() - j);
    std::swap(outside[j], outside[r]);
    assignments[outside[j].first].included[outside[j].second] = 0;
  }
  return k;
}

WeightUpdateStats update_weights(std::span<const ProbTable> probs,
                                 std::span<LabelAssignment> assignments, double tau,
                                 const TagScheme& scheme, double protect_fraction) {
  if (probs.size() != assignments.size()) {
    throw ShapeError("weight refresh: " + std::to_string(probs.size()) + " prediction tables for " +
                     std::to_string(assignments.size()) + " sequences");
  }
  const std::size_t classes = scheme.class_count();
  std::vector<std::size_t> total(classes, 0), low(classes, 0);
  for (std::size_t s = 0; s < probs.size(); ++s) {
    const auto& a = assignments[s];
    if (probs[s].tokens() != a.size() || probs[s].classes() != classes) {
      throw ShapeError("weight refresh: prediction table " + std::to_string(s) +
                       " does not match its label row");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!a.included[i]) continue;
      const auto y = static_cast<std::size_t>(a.labels[i]);
      ++total[y];
      low[y] += probs[s](i, y) <= tau;
    }
  }
  WeightUpdateStats stats;
  std::vector<std::uint8_t> shielded(classes, 0);
  for (std::size_t c = 1; c < classes; ++c) {
    if (total[c] > 0 &&
        static_cast<double>(low[c]) > protect_fraction * static_cast<double>(total[c])) {
      shielded[c] = 1;
      stats.protected_classes.push_back(static_cast<int>(c));
    }
  }
  for (std::size_t s = 0; s < probs.size(); ++s) {
    auto& a = assignments[s];
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!a.included[i]) continue;
      const auto y = static_cast<std::size_t>(a.labels[i]);
      const bool keep = shielded[y] || probs[s](i, y) > tau;
      a.weight[i] = keep ? 1 : 0;
      ++stats.included;
      stats.zeroed += !keep;
    }
  }
  return stats;
}

RobustResult train_robust(TaggerModel init, std::span<const Sentence> corpus,
                          std::span<const LabelAssignment> labels, const RobustConfig& config,
                          const WeightAuditSink& audit) {
  config.schedule.validate();
  if (corpus.size() != labels.size()) {
    throw ShapeError("robust training: corpus and label counts differ");
  }
  if (config.loss == LossKind::kGce && !(config.q > 0.0 && config.q <= 1.0)) {
    throw ParameterError("GCE exponent q must lie in (0, 1]");
  }
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    if (corpus[s].size() != labels[s].size()) {
      throw ShapeError("sequence " + corpus[s].id + " length differs from its label row");
    }
  }

  RobustResult result{std::move(init), {labels.begin(), labels.end()}, {}, {}};
  for (auto& a : result.assignments) {
    std::fill(a.weight.begin(), a.weight.end(), 1);
    std::fill(a.included.begin(), a.included.end(), 1);
  }
  const auto& sched = config.schedule;
  Rng drop_rng = make_rng(sched.seed, kDropStream);
  drop_nonentity(result.assignments, sched.drop_rate, drop_rng);

  const std::size_t n = corpus.size();
  const std::size_t batches_per_pass = (n + sched.batch_size - 1) / sched.batch_size;
  AdamOptimizer opt(result.model, config.lr, sched.epochs * batches_per_pass);
  Rng shuffle_rng = make_rng(sched.seed, kShuffleStream);
  Rng dropout_rng = make_rng(sched.seed, kDropoutStream);

  auto refresh = [&] {
    if (config.tau <= 0.0) return;
    const auto probs = predict_corpus(result.model, corpus);
    result.refreshes.push_back(update_weights(probs, result.assignments, config.tau,
                                              result.model.scheme, config.protect_fraction));
    if (!audit) return;
    for (std::size_t s = 0; s < n; ++s) {
      const auto& a = result.assignments[s];
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a.included[i]) continue;
        audit({result.refreshes.size(), corpus[s].id, i, a.weight[i],
               probs[s](i, static_cast<std::size_t>(a.labels[i]))});
      }
    }
  };

  std::vector<std::size_t> order(n);
  std::vector<Example> batch;
  std::size_t batch_counter = 0;
  for (std::size_t epoch = 0; epoch < sched.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_in_place(order, shuffle_rng);
    for (std::size_t b = 0; b < batches_per_pass; ++b) {
      batch.clear();
      const std::size_t end = std::min(n, (b + 1) * sched.batch_size);
      for (std::size_t k = b * sched.batch_size; k < end; ++k) {
        const std::size_t s = order[k];
        batch.push_back({&corpus[s], two_head_label_loss(result.assignments[s], config.loss, config.q)});
      }
      result.batch_losses.push_back(train_step(result.model, batch, opt, dropout_rng));
      ++batch_counter;
      if (batch_counter % sched.weight_update_period == 0 && b + 1 < batches_per_pass) refresh();
    }
    refresh();
  }
  return result;
}

WeightAuditSink make_audit_writer(std::ostream& out) {
  return [&out](const WeightAuditRow& row) {
    out << row.refresh << '\t' << row.sequence_id << '\t' << row.token << '\t' << row.weight
        << '\t' << format_double(row.confidence) << '\n';
  };
}

}  // namespace dsner
