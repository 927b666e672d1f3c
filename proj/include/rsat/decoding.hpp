#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "rsat/errors.hpp"
#include "rsat/parallel.hpp"
#include "rsat/rdm.hpp"
#include "rsat/rng.hpp"
#include "rsat/svm.hpp"

namespace rsat {

/// conditions x trials x channels x time sensor recordings, rectangular
/// (equal trial count per condition), row-major in that dimension order.
struct TrialTensor {
  ConditionSet conditions;
  std::size_t trials = 0;
  std::size_t channels = 0;
  std::vector<double> time_ms;
  std::vector<double> data;

  std::size_t time_points() const { return time_ms.size(); }

  double& at(std::size_t c, std::size_t m, std::size_t ch, std::size_t t) {
    return data[((c * trials + m) * channels + ch) * time_ms.size() + t];
  }
  double at(std::size_t c, std::size_t m, std::size_t ch, std::size_t t) const {
    return data[((c * trials + m) * channels + ch) * time_ms.size() + t];
  }

  void validate() const {
    conditions.validate();
    if (trials == 0 || channels == 0 || time_ms.empty())
      throw ShapeMismatch("TrialTensor: empty dimension");
    if (data.size() != conditions.count() * trials * channels * time_ms.size())
      throw ShapeMismatch("TrialTensor: data size does not match dimensions");
    for (std::size_t i = 1; i < time_ms.size(); ++i)
      if (time_ms[i] <= time_ms[i - 1])
        throw ShapeMismatch("TrialTensor: time coordinates not strictly increasing");
    for (double v : data)
      if (!std::isfinite(v)) throw NonFinite("TrialTensor: non-finite sample");
  }

  /// trials x channels pattern matrix of one condition at one time point.
  Eigen::MatrixXd patterns_at(std::size_t condition, std::size_t t) const {
    Eigen::MatrixXd out(trials, channels);
    for (std::size_t m = 0; m < trials; ++m)
      for (std::size_t ch = 0; ch < channels; ++ch)
        out(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(ch)) = at(condition, m, ch, t);
    return out;
  }
};

struct DecodingConfig {
  std::size_t k = 5;             // sub-average group size
  std::size_t repetitions = 100; // random re-partitions per pair
  std::uint64_t seed = 0;
  double cost = 1.0;             // SVM cost parameter (unstated in the source method; common default)
  bool single_fold = false;      // strict mode: only the last fold per repetition

  void validate(std::size_t m_trials) const {
    if (k == 0 || m_trials % k != 0)
      throw IndivisibleGroups("DecodingConfig: k=" + std::to_string(k) +
                              " does not divide M=" + std::to_string(m_trials));
    if (m_trials / k < 2)
      throw IndivisibleGroups("DecodingConfig: need at least 2 sub-averaged vectors");
    if (repetitions < 1) throw ConfigInvalid("DecodingConfig: repetitions must be >= 1");
  }
};

/// Random partition of the M rows into L = M/k groups of size k; each output
/// row is the mean of its group. Every input row is used exactly once.
inline Eigen::MatrixXd subaverage(const Eigen::MatrixXd& trials, std::size_t k, Rng& rng) {
  const auto m = static_cast<std::size_t>(trials.rows());
  if (k == 0 || m % k != 0)
    throw IndivisibleGroups("subaverage: k=" + std::to_string(k) +
                            " does not divide M=" + std::to_string(m));
  const std::size_t groups = m / k;
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(groups), trials.cols());
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t i = 0; i < k; ++i)
      out.row(static_cast<Eigen::Index>(g)) +=
          trials.row(static_cast<Eigen::Index>(order[g * k + i]));
    out.row(static_cast<Eigen::Index>(g)) /= static_cast<double>(k);
  }
  return out;
}

namespace detail {

/// Cross-validated pairwise decoding with RNG streams keyed by
/// (seed, time index, pair index, repetition, side): one partition per
/// condition per repetition, then leave-one-averaged-vector-out folds.
inline double pairwise_accuracy_keyed(const Eigen::MatrixXd& cond_a, const Eigen::MatrixXd& cond_b,
                                      const DecodingConfig& cfg, std::uint64_t time_index,
                                      std::uint64_t pair_index) {
  if (cond_a.rows() != cond_b.rows() || cond_a.cols() != cond_b.cols())
    throw ShapeMismatch("pairwise_accuracy: condition matrices differ in shape");
  const auto m = static_cast<std::size_t>(cond_a.rows());
  cfg.validate(m);
  const std::size_t folds_total = m / cfg.k;
  const auto l = static_cast<Eigen::Index>(folds_total);
  const auto channels = cond_a.cols();

  std::size_t correct = 0, total = 0;
  Eigen::MatrixXd train(2 * (l - 1), channels);
  std::vector<int> labels(static_cast<std::size_t>(2 * (l - 1)));
  for (std::size_t rep = 0; rep < cfg.repetitions; ++rep) {
    Rng rng_a(cfg.seed, StreamTag::subaverage, time_index, pair_index, rep, 0);
    Rng rng_b(cfg.seed, StreamTag::subaverage, time_index, pair_index, rep, 1);
    const Eigen::MatrixXd avg_a = subaverage(cond_a, cfg.k, rng_a);
    const Eigen::MatrixXd avg_b = subaverage(cond_b, cfg.k, rng_b);
    const std::size_t first_fold = cfg.single_fold ? folds_total - 1 : 0;
    for (std::size_t fold = first_fold; fold < folds_total; ++fold) {
      Eigen::Index row = 0;
      for (Eigen::Index g = 0; g < l; ++g) {
        if (g == static_cast<Eigen::Index>(fold)) continue;
        train.row(row) = avg_a.row(g);
        labels[static_cast<std::size_t>(row)] = 0;
        ++row;
        train.row(row) = avg_b.row(g);
        labels[static_cast<std::size_t>(row)] = 1;
        ++row;
      }
      const LinearModel model = train_linear_svm(train, labels, cfg.cost);
      correct += model.predict(avg_a.row(static_cast<Eigen::Index>(fold)).transpose()) == 0;
      correct += model.predict(avg_b.row(static_cast<Eigen::Index>(fold)).transpose()) == 1;
      total += 2;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

/// Lexicographic row-major order on matrix entries.
inline bool lex_less(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (a(i, j) < b(i, j)) return true;
      if (a(i, j) > b(i, j)) return false;
    }
  return false;
}

}  // namespace detail

/// Mean cross-validated decoding accuracy (percent) between two conditions'
/// trial sets. Arguments are canonicalized by content first, so the result is
/// invariant under swapping the two conditions.
inline double pairwise_accuracy(const Eigen::MatrixXd& trials_i, const Eigen::MatrixXd& trials_j,
                                const DecodingConfig& cfg) {
  if (trials_i.rows() != trials_j.rows() || trials_i.cols() != trials_j.cols())
    throw ShapeMismatch("pairwise_accuracy: condition matrices differ in shape");
  if (!trials_i.allFinite() || !trials_j.allFinite())
    throw NonFinite("pairwise_accuracy: non-finite trials");
  const bool swap = detail::lex_less(trials_j, trials_i);
  const Eigen::MatrixXd& lo = swap ? trials_j : trials_i;
  const Eigen::MatrixXd& hi = swap ? trials_i : trials_j;
  return detail::pairwise_accuracy_keyed(lo, hi, cfg, 0, 0);
}

/// Decoding-accuracy RDM for every time point. Diagonals are NaN (undefined)
/// and excluded from all downstream triangles. Deterministic for a fixed seed
/// under any thread count: every (time, pair, repetition) work item owns its
/// RNG stream.
inline RDMSeries trials_to_rdm_series(const TrialTensor& t, const DecodingConfig& cfg,
                                      int threads = 1) {
  t.validate();
  cfg.validate(t.trials);
  const std::size_t n = t.conditions.count();
  const std::size_t n_time = t.time_points();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  RDMSeries series;
  series.axis = SeriesAxis::time_ms;
  series.coordinates = t.time_ms;
  series.rdms.resize(n_time);
  for (auto& r : series.rdms) {
    r.conditions = t.conditions;
    r.kind = RdmKind::decoding_accuracy;
    r.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n),
                                         static_cast<Eigen::Index>(n), nan);
  }

  parallel_for(n_time, threads, [&](std::size_t ti) {
    std::vector<Eigen::MatrixXd> per_condition(n);
    for (std::size_t c = 0; c < n; ++c) per_condition[c] = t.patterns_at(c, ti);
    std::size_t pair_index = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j, ++pair_index) {
        const double acc =
            detail::pairwise_accuracy_keyed(per_condition[i], per_condition[j], cfg, ti, pair_index);
        series.rdms[ti].values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = acc;
        series.rdms[ti].values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = acc;
      }
    }
  });
  return series;
}

}  // namespace rsat
