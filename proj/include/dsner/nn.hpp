// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "dsner/rng.hpp"

namespace dsner::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// A trainable tensor and its accumulated gradient.
struct Param {
  Mat value;
  Mat grad;

  void resize(Eigen::Index rows, Eigen::Index cols) {
    value = Mat::Zero(rows, cols);
    grad = Mat::Zero(rows, cols);
  }
  void zero_grad() { grad.setZero(); }
};

// Parameters are kept on the float32 grid so checkpoints restore them exactly.
inline void snap_to_float(Mat& m) {
  m = m.cast<float>().cast<double>();
}

inline void init_normal(Param& p, double stddev, Rng& rng) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = stddev * normal01(rng);
  snap_to_float(p.value);
}

// y = x W + b with W of shape in x out.
struct Linear {
  Param weight;
  Param bias;

  void init(Eigen::Index in, Eigen::Index out, Rng& rng) {
    weight.resize(in, out);
    bias.resize(1, out);
    init_normal(weight, std::sqrt(2.0 / static_cast<double>(in + out)), rng);
  }
  Mat forward(const Mat& x) const {
    Mat y = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }
  // Accumulates parameter gradients and returns dL/dx.
  Mat backward(const Mat& x, const Mat& dy) {
    weight.grad.noalias() += x.transpose() * dy;
    bias.grad += dy.colwise().sum();
    return dy * weight.value.transpose();
  }
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
  template <class F>
  void visit(const std::string& prefix, F&& f) const {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

// Row-wise layer normalization.
struct LayerNorm {
  static constexpr double kEps = 1e-5;
  Param gamma;
  Param beta;

  struct Cache {
    Mat xhat;
    Vec inv_std;
  };

  void init(Eigen::Index dim) {
    gamma.resize(1, dim);
    beta.resize(1, dim);
    gamma.value.setOnes();
  }
  Mat forward(const Mat& x, Cache& cache) const {
    const auto d = static_cast<double>(x.cols());
    cache.xhat.resize(x.rows(), x.cols());
    cache.inv_std.resize(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double mean = x.row(i).sum() / d;
      const double var = (x.row(i).array() - mean).square().sum() / d;
      cache.inv_std(i) = 1.0 / std::sqrt(var + kEps);
      cache.xhat.row(i) = (x.row(i).array() - mean) * cache.inv_std(i);
    }
    Mat y = cache.xhat.array().rowwise() * gamma.value.row(0).array();
    y.rowwise() += beta.value.row(0);
    return y;
  }
  Mat backward(const Cache& cache, const Mat& dy) {
    gamma.grad += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    beta.grad += dy.colwise().sum();
    const Mat dxhat = dy.array().rowwise() * gamma.value.row(0).array();
    const auto d = static_cast<double>(dy.cols());
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
      const double s1 = dxhat.row(i).sum();
      const double s2 = dxhat.row(i).dot(cache.xhat.row(i));
      dx.row(i) = (cache.inv_std(i) / d) *
                  (d * dxhat.row(i).array() - s1 - cache.xhat.row(i).array() * s2).matrix();
    }
    return dx;
  }
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
  template <class F>
  void visit(const std::string& prefix, F&& f) const {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

// Lookup table; rows are gathered by id.
struct Embedding {
  Param table;

  void init(Eigen::Index count, Eigen::Index dim, double stddev, Rng& rng) {
    table.resize(count, dim);
    init_normal(table, stddev, rng);
  }
  template <class Ids>
  Mat forward(const Ids& ids) const {
    Mat out(static_cast<Eigen::Index>(ids.size()), table.value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out.row(static_cast<Eigen::Index>(i)) = table.value.row(static_cast<Eigen::Index>(ids[i]));
    }
    return out;
  }
  template <class Ids>
  void backward(const Ids& ids, const Mat& dy) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      table.grad.row(static_cast<Eigen::Index>(ids[i])) += dy.row(static_cast<Eigen::Index>(i));
    }
  }
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix, table);
  }
  template <class F>
  void visit(const std::string& prefix, F&& f) const {
    f(prefix, table);
  }
};

// tanh-approximated GELU and its derivative.
inline double gelu(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}
inline double gelu_grad(double x) {
  constexpr double k = 0.7978845608028654;
  const double t = std::tanh(k * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * 0.044715 * x * x);
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline void softmax_rows(Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp().matrix();
    m.row(i) /= m.row(i).sum();
  }
}

// Inverted dropout. An empty mask means identity (inference or rate 0).
inline Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return Mat();
  Mat mask(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = uniform01(*rng) < rate ? 0.0 : keep;
  }
  return mask;
}
inline void apply_mask(Mat& x, const Mat& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

}  // namespace dsner::nn
