// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <vector>

#include "dsner/corpus.hpp"

namespace dsner {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr double kProbFloor = 1e-8;

// n x C per-token class probabilities. Entries are clamped to [kProbFloor, 1].
class ProbTable {
 public:
  ProbTable() = default;
  // Throws ShapeError if a row is negative or does not sum to 1 within `tol`.
  explicit ProbTable(Mat rows, double tol = 1e-6);

  std::size_t tokens() const { return static_cast<std::size_t>(rows_.rows()); }
  std::size_t classes() const { return static_cast<std::size_t>(rows_.cols()); }
  double operator()(std::size_t i, std::size_t j) const {
    return rows_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  const Mat& rows() const { return rows_; }
  std::span<const double> row(std::size_t i) const;  // contiguous (row-major copy)

 private:
  Mat rows_;
  std::vector<double> row_major_;
};

struct GceConfig {
  double q = 0.7;
  double tau = 0.7;
  void validate() const;  // 0 < q < 1, 0 < tau < 1
};

// Per-token loss terms and their derivatives with respect to the probability
// of the given label. Inputs are clamped to [kProbFloor, 1].
double clamp_prob(double f);
double ce_term(double f);
double ce_term_grad(double f);
double mae_term(double f);
double mae_term_grad(double f);
// (1 - f^q) / q, evaluated through expm1 so it stays accurate as q -> 0.
double gce_term(double f, double q);
double gce_term_grad(double f, double q);

enum class LossKind { kCe, kMae, kGce };

struct LossResult {
  double value = 0.0;             // mean over contributing tokens
  std::vector<double> grad;       // d(term_i)/d f_{i,y_i}; 0 for non-contributing tokens
  std::size_t contributing = 0;
  bool empty = false;             // no contributing tokens; value and grad are 0
};

LossResult ce_loss(const ProbTable& probs, const LabelAssignment& labels);
LossResult mae_loss(const ProbTable& probs, const LabelAssignment& labels);
// q in (0, 1]; q == 1 is admitted and coincides with MAE.
LossResult gce_loss(const ProbTable& probs, const LabelAssignment& labels, double q);
LossResult classification_loss(LossKind kind, const ProbTable& probs,
                               const LabelAssignment& labels, double q);

// KL(target || pred) with 0 log 0 = 0 and pred clamped at kProbFloor.
double kl_divergence(std::span<const double> target, std::span<const double> pred);
double kl_divergence(const Eigen::Ref<const Eigen::RowVectorXd>& target,
                     const Eigen::Ref<const Eigen::RowVectorXd>& pred);

}  // namespace dsner
