#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "rsat/errors.hpp"
#include "rsat/parallel.hpp"
#include "rsat/rdm.hpp"

namespace rsat {

/// Ordered per-layer pattern matrices over one shared ConditionSet.
struct LayerStack {
  std::vector<PatternMatrix> layers;

  void validate() const {
    if (layers.empty()) throw ShapeMismatch("LayerStack: no layers");
    for (const auto& l : layers) l.validate();
    for (const auto& l : layers)
      if (!(l.conditions == layers.front().conditions))
        throw ConditionMismatch("LayerStack: layers disagree on condition set");
  }
};

/// Condition scores on the top principal components of the mean-centered
/// pattern matrix, components ordered by descending eigenvalue. Computed
/// through the conditions x conditions Gram matrix (conditions << features in
/// this domain). Sign convention: the largest-magnitude loading of each
/// component is positive, so results are reproducible.
inline PatternMatrix pca_reduce(const PatternMatrix& p, std::size_t dims) {
  p.validate();
  const Eigen::Index n = p.values.rows();
  const Eigen::Index f = p.values.cols();
  const std::size_t max_dims = static_cast<std::size_t>(std::min<Eigen::Index>(n - 1, f));
  if (dims == 0 || dims > max_dims)
    throw DimsTooLarge("pca_reduce: dims=" + std::to_string(dims) + " exceeds min(count-1, features)=" +
                       std::to_string(max_dims));

  const Eigen::MatrixXd centered = p.values.rowwise() - p.values.colwise().mean();
  const Eigen::MatrixXd gram = centered * centered.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
  if (solver.info() != Eigen::Success)
    throw DegenerateInput("pca_reduce: eigendecomposition failed");

  PatternMatrix out;
  out.conditions = p.conditions;
  out.values.resize(n, static_cast<Eigen::Index>(dims));
  const double scale_tol = 1e-12 * std::max(1.0, solver.eigenvalues().cwiseAbs().maxCoeff());
  for (std::size_t d = 0; d < dims; ++d) {
    const Eigen::Index src = n - 1 - static_cast<Eigen::Index>(d);  // solver sorts ascending
    const double eigval = std::max(solver.eigenvalues()(src), 0.0);
    const double sigma = std::sqrt(eigval);
    Eigen::VectorXd scores = solver.eigenvectors().col(src) * sigma;
    if (sigma > scale_tol) {
      // Loading vector in feature space; flip so its largest-|.| entry is positive.
      const Eigen::VectorXd loading = centered.transpose() * solver.eigenvectors().col(src) / sigma;
      Eigen::Index peak = 0;
      double peak_abs = -1.0;
      for (Eigen::Index i = 0; i < loading.size(); ++i)
        if (std::abs(loading(i)) > peak_abs) {
          peak_abs = std::abs(loading(i));
          peak = i;
        }
      if (loading(peak) < 0.0) scores = -scores;
    } else {
      scores.setZero();
    }
    out.values.col(static_cast<Eigen::Index>(d)) = scores;
  }
  return out;
}

/// Per-layer PCA to a common dimensionality, concatenated per condition in
/// layer order, then a correlation-distance RDM of the concatenation. Equal
/// dims per layer balances layer contributions irrespective of neuron counts;
/// normalize_layer_variance additionally rescales each layer block to unit
/// total variance (off by default).
inline RDM summary_rdm(const LayerStack& stack, std::size_t dims,
                       bool normalize_layer_variance = false, int threads = 1) {
  stack.validate();
  const std::size_t n_layers = stack.layers.size();
  std::vector<PatternMatrix> reduced(n_layers);
  parallel_for(n_layers, threads, [&](std::size_t i) { reduced[i] = pca_reduce(stack.layers[i], dims); });

  const Eigen::Index n = reduced.front().values.rows();
  Eigen::MatrixXd concat(n, static_cast<Eigen::Index>(dims * n_layers));
  for (std::size_t i = 0; i < n_layers; ++i) {
    Eigen::MatrixXd block = reduced[i].values;
    if (normalize_layer_variance) {
      const double total = block.squaredNorm() / static_cast<double>(n - 1);
      if (total > 0.0) block /= std::sqrt(total);
    }
    concat.middleCols(static_cast<Eigen::Index>(i * dims), static_cast<Eigen::Index>(dims)) = block;
  }

  PatternMatrix joined;
  joined.conditions = stack.layers.front().conditions;
  joined.values = std::move(concat);
  return rdm_from_patterns(joined, threads);
}

}  // namespace rsat
