#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <vector>

#include "rsat/errors.hpp"

namespace rsat {

/// Linear decision function: class 1 iff w.x + b >= 0.
struct LinearModel {
  Eigen::VectorXd weights;
  double bias = 0.0;

  double decision(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return weights.dot(x) + bias;
  }
  int predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return decision(x) >= 0.0 ? 1 : 0;
  }
};

/// Soft-margin linear SVM: min 1/2 |w|^2 + cost * sum hinge(y_i (w.x_i + b)).
/// Solved in the dual by SMO with maximal-violating-pair selection and a
/// deterministic scan order; stops when the KKT violation gap is below tol.
inline LinearModel train_linear_svm(const Eigen::MatrixXd& X, const std::vector<int>& labels,
                                    double cost, double tol = 1e-6) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (labels.size() != n)
    throw LengthMismatch("train_linear_svm: label count does not match sample count");
  if (n < 2) throw SingleClass("train_linear_svm: need at least 2 samples");
  if (!X.allFinite()) throw NonFinite("train_linear_svm: non-finite features");

  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  bool has_pos = false, has_neg = false;
  for (std::size_t i = 0; i < n; ++i) {
    y(static_cast<Eigen::Index>(i)) = labels[i] != 0 ? 1.0 : -1.0;
    (labels[i] != 0 ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg) throw SingleClass("train_linear_svm: single class in labels");

  const Eigen::MatrixXd K = X * X.transpose();
  const auto ni = static_cast<Eigen::Index>(n);
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(ni);
  Eigen::VectorXd grad = Eigen::VectorXd::Constant(ni, -1.0);  // grad of 1/2 a'Qa - e'a

  const std::size_t max_iter = 100000 + 1000 * n;
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    // i maximizes -y_i grad_i over the "up" set, j minimizes it over "down".
    int best_i = -1, best_j = -1;
    double up = -std::numeric_limits<double>::infinity();
    double down = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < ni; ++t) {
      const double v = -y(t) * grad(t);
      const bool in_up = (y(t) > 0 && alpha(t) < cost) || (y(t) < 0 && alpha(t) > 0);
      const bool in_down = (y(t) > 0 && alpha(t) > 0) || (y(t) < 0 && alpha(t) < cost);
      if (in_up && v > up) {
        up = v;
        best_i = static_cast<int>(t);
      }
      if (in_down && v < down) {
        down = v;
        best_j = static_cast<int>(t);
      }
    }
    if (best_i < 0 || best_j < 0 || up - down < tol) break;

    const Eigen::Index i = best_i, j = best_j;
    // Step along alpha_i += y_i t, alpha_j -= y_j t (preserves y'alpha).
    const double quad = std::max(K(i, i) + K(j, j) - 2.0 * K(i, j), 1e-12);
    double step = (up - down) / quad;
    if (y(i) > 0)
      step = std::min(step, cost - alpha(i));
    else
      step = std::min(step, alpha(i));
    if (y(j) > 0)
      step = std::min(step, alpha(j));
    else
      step = std::min(step, cost - alpha(j));
    const double dalpha_i = y(i) * step;
    const double dalpha_j = -y(j) * step;
    alpha(i) += dalpha_i;
    alpha(j) += dalpha_j;
    grad += y.cwiseProduct(K.col(i)) * (y(i) * dalpha_i);
    grad += y.cwiseProduct(K.col(j)) * (y(j) * dalpha_j);
  }

  LinearModel model;
  model.weights = X.transpose() * alpha.cwiseProduct(y);

  // Bias from free support vectors; fall back to the midpoint of the KKT
  // feasible interval when every alpha sits on a bound.
  const double bound_eps = 1e-8 * cost;
  double sum = 0.0;
  int free_count = 0;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < ni; ++t) {
    const double margin = model.weights.dot(X.row(t).transpose());
    if (alpha(t) > bound_eps && alpha(t) < cost - bound_eps) {
      sum += y(t) - margin;
      ++free_count;
    } else if (alpha(t) <= bound_eps) {
      // y_t (margin + b) >= 1
      if (y(t) > 0)
        lo = std::max(lo, 1.0 - margin);
      else
        hi = std::min(hi, -1.0 - margin);
    } else {
      // y_t (margin + b) <= 1
      if (y(t) > 0)
        hi = std::min(hi, 1.0 - margin);
      else
        lo = std::max(lo, -1.0 - margin);
    }
  }
  if (free_count > 0)
    model.bias = sum / free_count;
  else if (std::isfinite(lo) && std::isfinite(hi))
    model.bias = 0.5 * (lo + hi);
  else if (std::isfinite(lo))
    model.bias = lo;
  else if (std::isfinite(hi))
    model.bias = hi;
  else
    model.bias = 0.0;
  return model;
}

}  // namespace rsat
