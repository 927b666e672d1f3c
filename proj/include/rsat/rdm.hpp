#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>
#include <vector>

#include "rsat/errors.hpp"
#include "rsat/parallel.hpp"
#include "rsat/ranks.hpp"

namespace rsat {

/// Ordered set of unique condition identifiers. All RDMs over the same
/// experiment share one ConditionSet, and row order everywhere follows it.
struct ConditionSet {
  std::vector<std::string> labels;

  std::size_t count() const { return labels.size(); }

  void validate() const {
    if (labels.size() < 2)
      throw DegenerateInput("ConditionSet: need at least 2 conditions");
    std::unordered_set<std::string> seen;
    for (const auto& l : labels)
      if (!seen.insert(l).second)
        throw DegenerateInput("ConditionSet: duplicate label '" + l + "'");
  }

  bool operator==(const ConditionSet& other) const { return labels == other.labels; }
};

inline ConditionSet make_indexed_conditions(std::size_t n, const std::string& prefix = "cond") {
  ConditionSet cs;
  cs.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) cs.labels.push_back(prefix + "_" + std::to_string(i));
  return cs;
}

/// conditions x features matrix of activation/response patterns.
struct PatternMatrix {
  ConditionSet conditions;
  Eigen::MatrixXd values;  // rows follow ConditionSet order

  std::size_t features() const { return static_cast<std::size_t>(values.cols()); }

  void validate() const {
    conditions.validate();
    if (static_cast<std::size_t>(values.rows()) != conditions.count())
      throw ShapeMismatch("PatternMatrix: row count does not match condition count");
    if (!values.allFinite()) throw NonFinite("PatternMatrix: non-finite values");
  }
};

enum class RdmKind { correlation_distance, decoding_accuracy };

/// Symmetric conditions x conditions dissimilarity matrix. Diagonal is 0 for
/// correlation distance and NaN (undefined) for decoding accuracy.
struct RDM {
  ConditionSet conditions;
  Eigen::MatrixXd values;
  RdmKind kind = RdmKind::correlation_distance;

  std::size_t count() const { return conditions.count(); }

  void validate() const {
    conditions.validate();
    const auto n = static_cast<Eigen::Index>(conditions.count());
    if (values.rows() != n || values.cols() != n)
      throw ShapeMismatch("RDM: matrix shape does not match condition count");
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < i; ++j) {
        const double v = values(i, j);
        if (v != values(j, i)) throw ShapeMismatch("RDM: asymmetric entries");
        if (!std::isfinite(v)) throw NonFinite("RDM: non-finite off-diagonal entry");
        if (kind == RdmKind::correlation_distance && (v < 0.0 || v > 2.0))
          throw DegenerateInput("RDM: correlation distance outside [0, 2]");
        if (kind == RdmKind::decoding_accuracy && (v < 0.0 || v > 100.0))
          throw DegenerateInput("RDM: decoding accuracy outside [0, 100]");
      }
      if (kind == RdmKind::correlation_distance && values(i, i) != 0.0)
        throw DegenerateInput("RDM: correlation distance diagonal must be 0");
    }
  }
};

enum class SeriesAxis { time_ms, layer, vertex };

/// Ordered sequence of RDMs along one axis (time, layer or mesh vertex).
struct RDMSeries {
  SeriesAxis axis = SeriesAxis::time_ms;
  std::vector<double> coordinates;
  std::vector<RDM> rdms;

  std::size_t size() const { return rdms.size(); }

  void validate() const {
    if (coordinates.size() != rdms.size())
      throw ShapeMismatch("RDMSeries: coordinate/RDM count mismatch");
    if (rdms.empty()) return;
    const ConditionSet& cs = rdms.front().conditions;
    for (const auto& r : rdms)
      if (!(r.conditions == cs)) throw ConditionMismatch("RDMSeries: mixed condition sets");
    if (axis == SeriesAxis::time_ms)
      for (std::size_t i = 1; i < coordinates.size(); ++i)
        if (coordinates[i] <= coordinates[i - 1])
          throw ShapeMismatch("RDMSeries: time coordinates not strictly increasing");
  }
};

/// The n(n-1)/2 entries below the diagonal in row-major (i > j) order.
inline std::vector<double> lower_triangle(const Eigen::MatrixXd& m) {
  const Eigen::Index n = m.rows();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 1; i < n; ++i)
    for (Eigen::Index j = 0; j < i; ++j) out.push_back(m(i, j));
  return out;
}

inline std::vector<double> lower_triangle(const RDM& r) { return lower_triangle(r.values); }

namespace detail {

/// Per-row centered rank vectors plus their norms; the shared precomputation
/// behind all pairwise 1 - Spearman entries.
struct CenteredRanks {
  Eigen::MatrixXd rows;       // centered average ranks
  std::vector<double> norms;  // L2 norms of the centered rows
};

inline CenteredRanks centered_ranks(const Eigen::MatrixXd& values) {
  const Eigen::Index n = values.rows();
  const Eigen::Index f = values.cols();
  CenteredRanks out;
  out.rows.resize(n, f);
  out.norms.resize(static_cast<std::size_t>(n));
  std::vector<double> row(static_cast<std::size_t>(f));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < f; ++j) row[static_cast<std::size_t>(j)] = values(i, j);
    std::vector<double> ranks = average_ranks(row);
    double mean = 0.0;
    for (double r : ranks) mean += r;
    mean /= static_cast<double>(f);
    double norm2 = 0.0;
    for (Eigen::Index j = 0; j < f; ++j) {
      const double c = ranks[static_cast<std::size_t>(j)] - mean;
      out.rows(i, j) = c;
      norm2 += c * c;
    }
    out.norms[static_cast<std::size_t>(i)] = std::sqrt(norm2);
  }
  return out;
}

}  // namespace detail

/// Correlation-distance RDM: values[i][j] = 1 - spearman_rho(row_i, row_j).
/// Exactly symmetric (each pair computed once) with zero diagonal; entries
/// clamped into [0, 2] against rounding spill.
inline RDM rdm_from_patterns(const PatternMatrix& p, int threads = 1) {
  p.validate();
  const Eigen::Index n = p.values.rows();
  if (p.values.cols() < 3)
    throw DegenerateInput("rdm_from_patterns: need at least 3 features");

  const detail::CenteredRanks cr = detail::centered_ranks(p.values);
  for (Eigen::Index i = 0; i < n; ++i)
    if (cr.norms[static_cast<std::size_t>(i)] == 0.0)
      throw DegenerateInput("rdm_from_patterns: constant pattern at condition index " +
                            std::to_string(i));

  RDM out;
  out.conditions = p.conditions;
  out.kind = RdmKind::correlation_distance;
  out.values = Eigen::MatrixXd::Zero(n, n);
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t row) {
    const auto i = static_cast<Eigen::Index>(row);
    for (Eigen::Index j = 0; j < i; ++j) {
      const double rho = cr.rows.row(i).dot(cr.rows.row(j)) /
                         (cr.norms[static_cast<std::size_t>(i)] *
                          cr.norms[static_cast<std::size_t>(j)]);
      const double d = std::clamp(1.0 - rho, 0.0, 2.0);
      out.values(i, j) = d;
      out.values(j, i) = d;
    }
  });
  return out;
}

/// Spearman correlation of two RDMs over their lower triangles.
inline double compare_rdms(const RDM& a, const RDM& b) {
  if (!(a.conditions == b.conditions))
    throw ConditionMismatch("compare_rdms: condition sets differ");
  if (a.count() < 3)
    throw ConditionMismatch("compare_rdms: need at least 3 conditions");
  return spearman_rho(lower_triangle(a), lower_triangle(b));
}

}  // namespace rsat
