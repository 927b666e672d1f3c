#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rsat/errors.hpp"
#include "rsat/parallel.hpp"
#include "rsat/ranks.hpp"
#include "rsat/rng.hpp"

namespace rsat {

/// Per-subject statistic arrays over a shared domain (time points, vertices
/// or layer indices). Rows are subjects.
struct SubjectData {
  Eigen::MatrixXd values;

  std::size_t subjects() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t points() const { return static_cast<std::size_t>(values.cols()); }

  void validate() const {
    if (values.rows() < 1 || values.cols() < 1)
      throw ShapeMismatch("SubjectData: empty data");
    if (!values.allFinite()) throw NonFinite("SubjectData: non-finite values");
  }
};

enum class Tail { right, two_sided };
enum class AdjacencyKind { time_adjacent, mesh_edges };

struct ClusterSpec {
  double definition_p = 0.05;
  double cluster_p = 0.05;
  AdjacencyKind adjacency = AdjacencyKind::time_adjacent;
  Tail tail = Tail::right;
  bool mass_statistic = false;  // cluster mass (sum of means) instead of size

  void validate() const {
    if (!(definition_p > 0.0 && definition_p < 1.0))
      throw ConfigInvalid("ClusterSpec: definition_p outside (0, 1)");
    if (!(cluster_p > 0.0 && cluster_p < 1.0))
      throw ConfigInvalid("ClusterSpec: cluster_p outside (0, 1)");
  }
};

struct ClusterInfo {
  int id = 0;
  std::size_t size = 0;
  double mass = 0.0;
  double p = 1.0;
  bool significant = false;
  std::vector<int> members;
};

struct StatReport {
  std::vector<double> point_estimates;  // group mean per point
  std::vector<double> pointwise_p;
  std::vector<int> cluster_labels;  // -1 where no cluster
  std::vector<ClusterInfo> clusters;
  std::vector<std::uint8_t> significant_mask;
  std::vector<double> bootstrap_se;  // empty unless bootstrap was run
  std::uint64_t seed = 0;
  int n_permutations = 0;
  double definition_p = 0.0;
  double cluster_p = 0.0;
  std::string tail;
  std::string adjacency;
};

struct HierarchyResult {
  double rho = 0.0;  // pooled over all (layer, latency) points
  double p = 1.0;
  std::vector<double> per_subject_rho;
};

namespace detail {

/// Rows: identity flips first, then n_perm random +-1 patterns, one RNG
/// stream per permutation so scheduling cannot reorder draws.
inline Eigen::MatrixXd sign_flip_matrix(int n_perm, std::size_t n_subjects, std::uint64_t seed) {
  Eigen::MatrixXd flips(n_perm + 1, static_cast<Eigen::Index>(n_subjects));
  flips.row(0).setOnes();
  for (int r = 1; r <= n_perm; ++r) {
    Rng rng(seed, StreamTag::permutation, static_cast<std::uint64_t>(r));
    for (std::size_t s = 0; s < n_subjects; ++s)
      flips(r, static_cast<Eigen::Index>(s)) = (rng.next() & 1u) ? 1.0 : -1.0;
  }
  return flips;
}

/// p-value of row r's mean among all rows at one point, counting the value
/// itself: (# of means >= m_r) / (1 + n_perm). Identical to the
/// (1 + #{perm >= observed}) / (1 + n_perm) convention for the observed row.
inline double rank_p(const std::vector<double>& sorted_asc, double value, Tail tail) {
  const double n = static_cast<double>(sorted_asc.size());
  const auto ge = sorted_asc.end() -
                  std::lower_bound(sorted_asc.begin(), sorted_asc.end(), value);
  const double p_right = static_cast<double>(ge) / n;
  if (tail == Tail::right) return p_right;
  const auto le = std::upper_bound(sorted_asc.begin(), sorted_asc.end(), value) -
                  sorted_asc.begin();
  const double p_left = static_cast<double>(le) / n;
  return std::min(1.0, 2.0 * std::min(p_right, p_left));
}

}  // namespace detail

/// Pointwise sign-permutation p-values for the group mean. The identity
/// permutation is included in the null set, so p is never 0.
inline std::vector<double> sign_permutation_test(const SubjectData& d, int n_perm,
                                                 std::uint64_t seed, Tail tail = Tail::right,
                                                 int threads = 1) {
  d.validate();
  if (d.subjects() < 2) throw TooFewSubjects("sign_permutation_test: need >= 2 subjects");
  if (n_perm < 100) throw ConfigInvalid("sign_permutation_test: n_perm must be >= 100");

  const Eigen::MatrixXd flips = detail::sign_flip_matrix(n_perm, d.subjects(), seed);
  const Eigen::MatrixXd means = flips * d.values / static_cast<double>(d.subjects());

  std::vector<double> p(d.points());
  parallel_for(d.points(), threads, [&](std::size_t pt) {
    std::vector<double> column(static_cast<std::size_t>(n_perm) + 1);
    for (int r = 0; r <= n_perm; ++r)
      column[static_cast<std::size_t>(r)] = means(r, static_cast<Eigen::Index>(pt));
    const double observed = column[0];
    std::sort(column.begin(), column.end());
    p[pt] = detail::rank_p(column, observed, tail);
  });
  return p;
}

/// Cluster-size inference: pointwise permutation p-values thresholded at
/// definition_p define supra-threshold points; connected components form
/// clusters; the null distribution is the maximum cluster statistic per
/// permutation (the same sign flips drive both levels). A cluster is
/// significant when its permutation p-value is below cluster_p.
///
/// adjacency: nullptr for a 1-D chain (time_adjacent); per-point neighbor
/// lists for mesh_edges.
inline StatReport cluster_inference(const SubjectData& d, const ClusterSpec& spec, int n_perm,
                                    std::uint64_t seed,
                                    const std::vector<std::vector<int>>* adjacency = nullptr,
                                    int threads = 1) {
  d.validate();
  spec.validate();
  if (d.subjects() < 2) throw TooFewSubjects("cluster_inference: need >= 2 subjects");
  if (n_perm < 100) throw ConfigInvalid("cluster_inference: n_perm must be >= 100");
  const std::size_t n_points = d.points();
  if (spec.adjacency == AdjacencyKind::mesh_edges) {
    if (adjacency == nullptr || adjacency->size() != n_points)
      throw ConfigInvalid("cluster_inference: mesh_edges adjacency missing or wrong size");
  }

  const Eigen::MatrixXd flips = detail::sign_flip_matrix(n_perm, d.subjects(), seed);
  const Eigen::MatrixXd means = flips * d.values / static_cast<double>(d.subjects());
  const std::size_t n_rows = static_cast<std::size_t>(n_perm) + 1;

  // Per point: sorted means over all rows, used both for the observed
  // pointwise p and for every permutation's supra-threshold decision.
  std::vector<std::vector<double>> sorted_columns(n_points);
  std::vector<double> pointwise_p(n_points);
  parallel_for(n_points, threads, [&](std::size_t pt) {
    auto& column = sorted_columns[pt];
    column.resize(n_rows);
    for (std::size_t r = 0; r < n_rows; ++r)
      column[r] = means(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(pt));
    const double observed = column[0];
    std::sort(column.begin(), column.end());
    pointwise_p[pt] = detail::rank_p(column, observed, spec.tail);
  });

  auto supra = [&](std::size_t row, std::size_t pt) {
    return detail::rank_p(sorted_columns[pt], means(static_cast<Eigen::Index>(row),
                                                    static_cast<Eigen::Index>(pt)),
                          spec.tail) < spec.definition_p;
  };

  // Connected components of the supra mask; returns (size, mass) per cluster
  // plus optional labels. Mass is the sum of |mean| over members.
  auto find_clusters = [&](std::size_t row, std::vector<int>* labels,
                           std::vector<ClusterInfo>* infos) {
    std::vector<std::uint8_t> mask(n_points);
    for (std::size_t pt = 0; pt < n_points; ++pt) mask[pt] = supra(row, pt) ? 1 : 0;
    std::vector<int> local_labels(n_points, -1);
    double best_stat = 0.0;
    int next_id = 0;
    std::vector<int> stack;
    for (std::size_t start = 0; start < n_points; ++start) {
      if (!mask[start] || local_labels[start] >= 0) continue;
      const int id = next_id++;
      std::size_t size = 0;
      double mass = 0.0;
      std::vector<int> members;
      stack.push_back(static_cast<int>(start));
      local_labels[start] = id;
      while (!stack.empty()) {
        const int v = stack.back();
        stack.pop_back();
        ++size;
        mass += std::abs(means(static_cast<Eigen::Index>(row), v));
        members.push_back(v);
        auto visit = [&](int nb) {
          if (nb >= 0 && static_cast<std::size_t>(nb) < n_points && mask[nb] &&
              local_labels[nb] < 0) {
            local_labels[nb] = id;
            stack.push_back(nb);
          }
        };
        if (spec.adjacency == AdjacencyKind::time_adjacent) {
          visit(v - 1);
          visit(v + 1);
        } else {
          for (int nb : (*adjacency)[static_cast<std::size_t>(v)]) visit(nb);
        }
      }
      const double stat = spec.mass_statistic ? mass : static_cast<double>(size);
      best_stat = std::max(best_stat, stat);
      if (infos) {
        std::sort(members.begin(), members.end());
        infos->push_back({id, size, mass, 1.0, false, std::move(members)});
      }
    }
    if (labels) *labels = std::move(local_labels);
    return best_stat;
  };

  StatReport report;
  report.point_estimates.resize(n_points);
  for (std::size_t pt = 0; pt < n_points; ++pt)
    report.point_estimates[pt] = means(0, static_cast<Eigen::Index>(pt));
  report.pointwise_p = pointwise_p;
  find_clusters(0, &report.cluster_labels, &report.clusters);

  std::vector<double> null_max(static_cast<std::size_t>(n_perm));
  parallel_for(static_cast<std::size_t>(n_perm), threads,
               [&](std::size_t r) { null_max[r] = find_clusters(r + 1, nullptr, nullptr); });

  report.significant_mask.assign(n_points, 0);
  for (auto& cluster : report.clusters) {
    const double stat = spec.mass_statistic ? cluster.mass : static_cast<double>(cluster.size);
    std::size_t ge = 0;
    for (double nm : null_max)
      if (nm >= stat) ++ge;
    cluster.p = static_cast<double>(1 + ge) / static_cast<double>(1 + n_perm);
    cluster.significant = cluster.p < spec.cluster_p;
    if (cluster.significant)
      for (int v : cluster.members) report.significant_mask[static_cast<std::size_t>(v)] = 1;
  }

  report.seed = seed;
  report.n_permutations = n_perm;
  report.definition_p = spec.definition_p;
  report.cluster_p = spec.cluster_p;
  report.tail = spec.tail == Tail::right ? "right" : "two_sided";
  report.adjacency = spec.adjacency == AdjacencyKind::time_adjacent ? "time_adjacent" : "mesh_edges";
  return report;
}

/// Benjamini-Hochberg step-up; returns the rejection mask.
inline std::vector<std::uint8_t> fdr_correct(const std::vector<double>& p, double q) {
  if (!(q > 0.0 && q < 1.0)) throw ConfigInvalid("fdr_correct: q outside (0, 1)");
  for (double v : p)
    if (!(v > 0.0 && v <= 1.0)) throw ConfigInvalid("fdr_correct: p-values must lie in (0, 1]");
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::size_t cut = 0;  // number of rejections
  for (std::size_t k = m; k >= 1; --k) {
    if (p[order[k - 1]] <= static_cast<double>(k) * q / static_cast<double>(m)) {
      cut = k;
      break;
    }
  }
  std::vector<std::uint8_t> mask(m, 0);
  for (std::size_t k = 0; k < cut; ++k) mask[order[k]] = 1;
  return mask;
}

using Statistic = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

inline Eigen::VectorXd mean_statistic(const Eigen::MatrixXd& subjects) {
  return subjects.colwise().mean().transpose();
}

/// Resample subjects with replacement n_boot times; per-point standard
/// deviation (n-1 denominator) of the statistic's bootstrap distribution.
inline std::vector<double> bootstrap_se(const SubjectData& d, const Statistic& statistic,
                                        int n_boot, std::uint64_t seed, int threads = 1) {
  d.validate();
  if (n_boot < 100) throw ConfigInvalid("bootstrap_se: n_boot must be >= 100");
  const std::size_t n = d.subjects();
  Eigen::MatrixXd replicates(n_boot, d.values.cols());
  parallel_for(static_cast<std::size_t>(n_boot), threads, [&](std::size_t b) {
    Rng rng(seed, StreamTag::bootstrap, b);
    Eigen::MatrixXd sample(d.values.rows(), d.values.cols());
    for (std::size_t s = 0; s < n; ++s)
      sample.row(static_cast<Eigen::Index>(s)) =
          d.values.row(static_cast<Eigen::Index>(rng.uniform_int(n)));
    const Eigen::VectorXd stat = statistic(sample);
    if (stat.size() != d.values.cols())
      throw ShapeMismatch("bootstrap_se: statistic changed the domain size");
    replicates.row(static_cast<Eigen::Index>(b)) = stat.transpose();
  });
  std::vector<double> se(d.points());
  for (std::size_t pt = 0; pt < d.points(); ++pt) {
    const auto col = replicates.col(static_cast<Eigen::Index>(pt));
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / static_cast<double>(n_boot - 1);
    se[pt] = std::sqrt(var);
  }
  return se;
}

/// Time coordinate of the maximum within [t0, t1]; ties resolve to the
/// earliest time. Non-finite samples (NaN sentinels from undefined
/// comparisons) are treated as missing.
inline double peak_latency(const std::vector<double>& coords, const std::vector<double>& values,
                           double t0, double t1) {
  if (coords.size() != values.size())
    throw LengthMismatch("peak_latency: coordinate/value count mismatch");
  double best_time = 0.0, best_value = 0.0;
  bool found = false;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (coords[i] < t0 || coords[i] > t1 || !std::isfinite(values[i])) continue;
    if (!found || values[i] > best_value) {
      found = true;
      best_value = values[i];
      best_time = coords[i];
    }
  }
  if (!found) throw EmptyWindow("peak_latency: no finite samples inside window");
  return best_time;
}

/// Pooled and per-subject Spearman correlation between layer index and peak
/// latency; significance from a sign-permutation test of the per-subject
/// correlations (mean rho > 0, right tail).
inline HierarchyResult hierarchy_correlation(const Eigen::MatrixXd& latencies, int n_perm = 10000,
                                             std::uint64_t seed = 0) {
  const auto n_subjects = latencies.rows();
  const auto n_layers = latencies.cols();
  if (n_layers < 3) throw DegenerateInput("hierarchy_correlation: need >= 3 layers");
  if (n_subjects < 2) throw TooFewSubjects("hierarchy_correlation: need >= 2 subjects");

  std::vector<double> pooled_x, pooled_y;
  pooled_x.reserve(static_cast<std::size_t>(n_subjects * n_layers));
  pooled_y.reserve(static_cast<std::size_t>(n_subjects * n_layers));
  HierarchyResult result;
  std::vector<double> layer_index(static_cast<std::size_t>(n_layers));
  for (Eigen::Index l = 0; l < n_layers; ++l) layer_index[static_cast<std::size_t>(l)] = l + 1.0;
  for (Eigen::Index s = 0; s < n_subjects; ++s) {
    std::vector<double> lat(static_cast<std::size_t>(n_layers));
    for (Eigen::Index l = 0; l < n_layers; ++l) {
      lat[static_cast<std::size_t>(l)] = latencies(s, l);
      pooled_x.push_back(layer_index[static_cast<std::size_t>(l)]);
      pooled_y.push_back(latencies(s, l));
    }
    result.per_subject_rho.push_back(spearman_rho(layer_index, lat));
  }
  result.rho = spearman_rho(pooled_x, pooled_y);

  SubjectData rho_data;
  rho_data.values.resize(n_subjects, 1);
  for (Eigen::Index s = 0; s < n_subjects; ++s)
    rho_data.values(s, 0) = result.per_subject_rho[static_cast<std::size_t>(s)];
  result.p = sign_permutation_test(rho_data, n_perm, seed, Tail::right)[0];
  return result;
}

struct DeltaRhoResult {
  double delta = 0.0;
  double p = 1.0;
};

/// Difference of mean per-subject correlations between two models, with a
/// sign-permutation test on the per-subject differences (two-sided).
inline DeltaRhoResult delta_rho_test(const std::vector<double>& a, const std::vector<double>& b,
                                     int n_perm, std::uint64_t seed, Tail tail = Tail::two_sided) {
  if (a.size() != b.size()) throw LengthMismatch("delta_rho_test: vectors differ in length");
  SubjectData diffs;
  diffs.values.resize(static_cast<Eigen::Index>(a.size()), 1);
  double mean_a = 0.0, mean_b = 0.0;
  for (std::size_t s = 0; s < a.size(); ++s) {
    diffs.values(static_cast<Eigen::Index>(s), 0) = a[s] - b[s];
    mean_a += a[s];
    mean_b += b[s];
  }
  DeltaRhoResult result;
  result.delta = (mean_a - mean_b) / static_cast<double>(a.size());
  result.p = sign_permutation_test(diffs, n_perm, seed, tail)[0];
  return result;
}

/// Per-subject pointwise a - b, ready for sign_permutation_test or
/// cluster_inference.
inline SubjectData difference_time_course(const SubjectData& a, const SubjectData& b) {
  if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols())
    throw ShapeMismatch("difference_time_course: domains not aligned");
  SubjectData out;
  out.values = a.values - b.values;
  return out;
}

}  // namespace rsat
