// SPDX-License-Identifier: Apache-2.0
#include "dsner/self_training.hpp"

#include <cmath>
#include <numeric>

#include "dsner/error.hpp"
#include "dsner/util.hpp"

namespace dsner {

namespace {

constexpr std::uint64_t kShuffleStream = 6;
constexpr std::uint64_t kDropoutStream = 7;

double binary_kl(double target, double p) {
  const double pc = clamp_prob(p), qc = clamp_prob(1.0 - p);
  double v = 0.0;
  if (target > 0.0) v += target * std::log(target / pc);
  if (target < 1.0) v += (1.0 - target) * std::log((1.0 - target) / qc);
  return std::max(v, 0.0);
}

}  // namespace

SoftLabelTable compute_soft_labels(const Mat& entity_probs) {
  if (entity_probs.cols() < 1) throw ShapeError("soft labels need at least one entity class");
  SoftLabelTable t;
  const Mat f = entity_probs.cwiseMax(kProbFloor);
  t.frequency = entity_probs.colwise().sum().transpose();
  for (Eigen::Index j = 0; j < t.frequency.size(); ++j) {
    if (t.frequency(j) < kProbFloor) {
      t.warnings.push_back("entity class " + std::to_string(j + 1) +
                           " has near-zero predicted frequency; clamped");
      t.frequency(j) = kProbFloor;
    }
  }
  t.rows.resize(f.rows(), f.cols());
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (Eigen::Index j = 0; j < f.cols(); ++j) t.rows(i, j) = f(i, j) * f(i, j) / t.frequency(j);
    t.rows.row(i) /= t.rows.row(i).sum();
  }
  return t;
}

Mat renormalize_rows(const Mat& entity_probs) {
  Mat out = entity_probs.cwiseMax(kProbFloor);
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) /= out.row(i).sum();
  return out;
}

double st_loss(const SoftLabelTable& soft, const Mat& probs_orig, const Mat* probs_aug) {
  auto check = [&](const Mat& m) {
    if (m.rows() != soft.rows.rows() || m.cols() != soft.rows.cols()) {
      throw ShapeError("self-training loss: prediction shape " + std::to_string(m.rows()) + "x" +
                       std::to_string(m.cols()) + " does not match soft labels " +
                       std::to_string(soft.rows.rows()) + "x" + std::to_string(soft.rows.cols()));
    }
  };
  check(probs_orig);
  if (probs_aug) check(*probs_aug);
  if (soft.rows.rows() == 0) return 0.0;
  const Mat po = renormalize_rows(probs_orig);
  const Mat pa = probs_aug ? renormalize_rows(*probs_aug) : Mat();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < soft.rows.rows(); ++i) {
    acc += kl_divergence(soft.rows.row(i), po.row(i));
    if (probs_aug) acc += kl_divergence(soft.rows.row(i), pa.row(i));
  }
  return acc / static_cast<double>(soft.rows.rows());
}

namespace {

// Type head: KL(y || softmax(u)) on kept tokens; binary head:
// KL(b0 || sigmoid(z)) on every token.
ExampleLoss consistency_loss(const Mat& soft, const std::vector<std::uint8_t>& keep,
                             const Vec& binary_target) {
  return [&soft, &keep, &binary_target](const Prediction& pred) {
    const auto n = pred.type_dist.rows();
    if (soft.rows() != n || binary_target.size() != n) {
      throw ShapeError("self-training target rows do not match sequence length");
    }
    LossTerm t;
    t.grad = HeadGrad::zeros(static_cast<std::size_t>(n), static_cast<std::size_t>(soft.cols()));
    for (Eigen::Index i = 0; i < n; ++i) {
      if (keep[static_cast<std::size_t>(i)]) {
        t.loss_sum += kl_divergence(soft.row(i), pred.type_dist.row(i));
        t.grad.d_type.row(i) = pred.type_dist.row(i) - soft.row(i);
      }
      t.loss_sum += binary_kl(binary_target(i), pred.p_entity(i));
      t.grad.d_binary(i) = pred.p_entity(i) - binary_target(i);
    }
    t.count = static_cast<double>(n);
    return t;
  };
}

double row_entropy(const Mat& rows) {
  if (rows.rows() == 0) return 0.0;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
      const double p = rows(i, j);
      if (p > 0.0) acc -= p * std::log(p);
    }
  }
  return acc / static_cast<double>(rows.rows());
}

struct SequenceTargets {
  Mat soft;
  std::vector<std::uint8_t> keep;
  Vec binary;
};

}  // namespace

SelfTrainResult self_train(TaggerModel init, std::span<const Sentence> corpus,
                           std::span<const std::optional<AugmentedSequence>> augmented,
                           const SelfTrainConfig& config) {
  if (config.batch_size < 1) throw ParameterError("batch size must be at least 1");
  if (!augmented.empty() && augmented.size() != corpus.size()) {
    throw ShapeError("augmented corpus is not aligned with the original corpus");
  }
  SelfTrainResult result{std::move(init), {}};
  const std::size_t n = corpus.size();
  if (config.iterations == 0 || n == 0) return result;

  const auto E = static_cast<Eigen::Index>(result.model.scheme.entity_count());
  const double floor = 1.0 / static_cast<double>(E) + config.confidence_margin;
  const std::size_t per_pass = (n + config.batch_size - 1) / config.batch_size;
  AdamOptimizer opt(result.model, config.lr, config.iterations * per_pass);
  Rng shuffle_rng = make_rng(config.seed, kShuffleStream);
  Rng dropout_rng = make_rng(config.seed, kDropoutStream);

  std::vector<Vec> start_binary;
  std::vector<std::size_t> order(n);
  std::vector<SequenceTargets> targets(n);
  std::vector<Example> batch;

  for (std::size_t it = 0; it < config.iterations; ++it) {
    SelfTrainIteration log;
    log.iteration = it + 1;
    const auto preds = predict_heads(result.model, corpus);
    if (it == 0) {
      for (const auto& p : preds) start_binary.push_back(p.p_entity);
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_in_place(order, shuffle_rng);

    // Soft labels from raw entity slices f_{i,t} = p_entity * type_dist.
    auto entity_slice = [&](std::size_t s) { return Mat(preds[s].probs.rightCols(E)); };
    auto assign = [&](std::span<const std::size_t> seqs) {
      Eigen::Index rows = 0;
      for (auto s : seqs) rows += static_cast<Eigen::Index>(corpus[s].size());
      Mat stacked(rows, E);
      Eigen::Index r = 0;
      for (auto s : seqs) {
        const auto len = static_cast<Eigen::Index>(corpus[s].size());
        stacked.middleRows(r, len) = entity_slice(s);
        r += len;
      }
      SoftLabelTable table = compute_soft_labels(stacked);
      r = 0;
      for (auto s : seqs) {
        const auto len = static_cast<Eigen::Index>(corpus[s].size());
        auto& tg = targets[s];
        tg.soft = table.rows.middleRows(r, len);
        tg.binary = preds[s].p_entity;
        tg.keep.assign(corpus[s].size(), 1);
        for (Eigen::Index i = 0; i < len; ++i) {
          if (preds[s].type_dist.row(i).maxCoeff() < floor) {
            tg.keep[static_cast<std::size_t>(i)] = 0;
            ++log.excluded_tokens;
          }
        }
        r += len;
      }
      return table;
    };
    if (!config.per_batch_frequencies) {
      log.soft_entropy = row_entropy(assign(order).rows);
    }

    double loss_acc = 0.0;
    double entropy_acc = 0.0;
    for (std::size_t b = 0; b < per_pass; ++b) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(n, begin + config.batch_size);
      const std::span<const std::size_t> ids(order.data() + begin, end - begin);
      if (config.per_batch_frequencies) entropy_acc += row_entropy(assign(ids).rows);
      batch.clear();
      for (auto s : ids) {
        const auto& tg = targets[s];
        batch.push_back({&corpus[s], consistency_loss(tg.soft, tg.keep, tg.binary)});
        if (config.use_augmentation && !augmented.empty() && augmented[s] &&
            augmented[s]->sentence.size() == corpus[s].size()) {
          batch.push_back({&augmented[s]->sentence, consistency_loss(tg.soft, tg.keep, tg.binary)});
          ++log.augmented_pairs;
        }
      }
      loss_acc += train_step(result.model, batch, opt, dropout_rng);
    }
    if (config.per_batch_frequencies) log.soft_entropy = entropy_acc / static_cast<double>(per_pass);
    log.mean_loss = loss_acc / static_cast<double>(per_pass);

    double drift = 0.0;
    std::size_t tokens = 0;
    for (std::size_t s = 0; s < n; ++s) {
      const Prediction p = predict(result.model, corpus[s]);
      drift += (p.p_entity - start_binary[s]).cwiseAbs().sum();
      tokens += corpus[s].size();
    }
    log.binary_drift = tokens ? drift / static_cast<double>(tokens) : 0.0;
    result.log.push_back(log);
  }
  return result;
}

void write_self_train_log(std::ostream& out, const std::vector<SelfTrainIteration>& log) {
  out << "iteration\tmean_loss\tsoft_entropy\tbinary_drift\texcluded_tokens\taugmented_pairs\n";
  for (const auto& r : log) {
    out << r.iteration << '\t' << format_double(r.mean_loss) << '\t' << format_double(r.soft_entropy)
        << '\t' << format_double(r.binary_drift) << '\t' << r.excluded_tokens << '\t'
        << r.augmented_pairs << '\n';
  }
}

}  // namespace dsner
