// SPDX-License-Identifier: Apache-2.0
#include "dsner/prob.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dsner/error.hpp"

namespace dsner {

ProbTable::ProbTable(Mat rows, double tol) : rows_(std::move(rows)) {
  for (Eigen::Index i = 0; i < rows_.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < rows_.cols(); ++j) {
      const double v = rows_(i, j);
      if (!(v >= 0.0) || v > 1.0 + tol) {
        throw ShapeError("probability table entry (" + std::to_string(i) + "," +
                         std::to_string(j) + ") is not a probability");
      }
      sum += v;
      rows_(i, j) = std::clamp(v, kProbFloor, 1.0);
    }
    if (std::abs(sum - 1.0) > tol) {
      throw ShapeError("probability table row " + std::to_string(i) + " sums to " +
                       std::to_string(sum));
    }
  }
  row_major_.resize(static_cast<std::size_t>(rows_.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      row_major_.data(), rows_.rows(), rows_.cols()) = rows_;
}

std::span<const double> ProbTable::row(std::size_t i) const {
  return {row_major_.data() + i * classes(), classes()};
}

void GceConfig::validate() const {
  if (!(q > 0.0 && q < 1.0)) throw ParameterError("q must lie in (0, 1)");
  if (!(tau > 0.0 && tau < 1.0)) throw ParameterError("tau must lie in (0, 1)");
}

double clamp_prob(double f) { return std::clamp(f, kProbFloor, 1.0); }

double ce_term(double f) { return -std::log(clamp_prob(f)); }
double ce_term_grad(double f) { return -1.0 / clamp_prob(f); }

double mae_term(double f) { return 1.0 - clamp_prob(f); }
double mae_term_grad(double) { return -1.0; }

double gce_term(double f, double q) { return -std::expm1(q * std::log(clamp_prob(f))) / q; }
double gce_term_grad(double f, double q) { return -std::pow(clamp_prob(f), q - 1.0); }

namespace {

template <class Term, class Grad>
LossResult masked_loss(const ProbTable& probs, const LabelAssignment& labels, Term term,
                       Grad grad) {
  if (labels.size() != probs.tokens()) {
    throw ShapeError("label count " + std::to_string(labels.size()) + " != token count " +
                     std::to_string(probs.tokens()));
  }
  LossResult r;
  r.grad.assign(labels.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels.contributes(i)) continue;
    const int y = labels.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= probs.classes()) {
      throw ShapeError("label " + std::to_string(y) + " out of range");
    }
    const double f = probs(i, static_cast<std::size_t>(y));
    total += term(f);
    r.grad[i] = grad(f);
    ++r.contributing;
  }
  if (r.contributing == 0) {
    r.empty = true;
    return r;
  }
  r.value = total / static_cast<double>(r.contributing);
  return r;
}

}  // namespace

LossResult ce_loss(const ProbTable& probs, const LabelAssignment& labels) {
  return masked_loss(probs, labels, ce_term, ce_term_grad);
}

LossResult mae_loss(const ProbTable& probs, const LabelAssignment& labels) {
  return masked_loss(probs, labels, mae_term, mae_term_grad);
}

LossResult gce_loss(const ProbTable& probs, const LabelAssignment& labels, double q) {
  if (!(q > 0.0 && q <= 1.0)) throw ParameterError("gce q must lie in (0, 1]");
  return masked_loss(
      probs, labels, [q](double f) { return gce_term(f, q); },
      [q](double f) { return gce_term_grad(f, q); });
}

LossResult classification_loss(LossKind kind, const ProbTable& probs,
                               const LabelAssignment& labels, double q) {
  switch (kind) {
    case LossKind::kCe:
      return ce_loss(probs, labels);
    case LossKind::kMae:
      return mae_loss(probs, labels);
    case LossKind::kGce:
      return gce_loss(probs, labels, q);
  }
  throw ParameterError("unknown loss kind");
}

double kl_divergence(std::span<const double> target, std::span<const double> pred) {
  if (target.size() != pred.size()) {
    throw ShapeError("kl_divergence: " + std::to_string(target.size()) + " vs " +
                     std::to_string(pred.size()) + " classes");
  }
  double kl = 0.0;
  for (std::size_t j = 0; j < target.size(); ++j) {
    const double t = target[j];
    if (t <= 0.0) continue;
    kl += t * (std::log(t) - std::log(clamp_prob(pred[j])));
  }
  // Clamping can push tiny negative rounding below zero.
  return std::max(kl, 0.0);
}

double kl_divergence(const Eigen::Ref<const Eigen::RowVectorXd>& target,
                     const Eigen::Ref<const Eigen::RowVectorXd>& pred) {
  return kl_divergence(std::span<const double>(target.data(), static_cast<std::size_t>(target.size())),
                       std::span<const double>(pred.data(), static_cast<std::size_t>(pred.size())));
}

}  // namespace dsner
