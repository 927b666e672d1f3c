#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rsat/decoding.hpp"
#include "rsat/errors.hpp"
#include "rsat/geometry.hpp"
#include "rsat/parallel.hpp"
#include "rsat/rdm.hpp"
#include "rsat/rfmap.hpp"
#include "rsat/rng.hpp"
#include "rsat/summarize.hpp"

namespace rsat {

/// Planted-ground-truth generator settings. Defaults are the desk-scale
/// recovery configuration used by the acceptance suite.
struct PlantSpec {
  std::size_t n_conditions = 20;
  std::size_t n_subjects = 12;
  std::size_t n_channels = 24;
  std::size_t n_timepoints = 60;
  std::size_t n_layers = 8;
  std::size_t m_trials = 20;
  std::size_t n_layer_features = 1024;
  double time_start_ms = -50.0;
  double time_step_ms = 5.0;
  double onset_ms = 40.0;
  double latency_step_ms = 10.0;
  double snr = 0.7;
  std::uint64_t seed = 0;

  double time_end_ms() const {
    return time_start_ms + time_step_ms * static_cast<double>(n_timepoints - 1);
  }

  void validate() const {
    if (n_conditions < 3 || n_subjects == 0 || n_channels == 0 || n_timepoints < 2 ||
        n_layers == 0 || m_trials == 0 || n_layer_features < 3)
      throw InfeasibleSpec("PlantSpec: counts must be positive (conditions >= 3, features >= 3)");
    if (time_step_ms <= 0.0) throw InfeasibleSpec("PlantSpec: time step must be positive");
    if (onset_ms < time_start_ms || onset_ms > time_end_ms())
      throw InfeasibleSpec("PlantSpec: onset outside time range");
    const double last_peak = onset_ms + latency_step_ms * static_cast<double>(n_layers);
    if (last_peak > time_end_ms())
      throw InfeasibleSpec("PlantSpec: planted latencies exceed the time range");
    if (n_channels < std::max<std::size_t>(4, n_conditions / 2))
      throw InfeasibleSpec("PlantSpec: too few channels to express the condition geometry");
  }
};

struct PlantHierarchyResult {
  std::vector<TrialTensor> subject_trials;
  LayerStack layers;
  std::vector<RDM> target_rdms;
  std::vector<double> planted_latencies_ms;  // one per layer, layer g peaks at onset + (g+1)*step
};

namespace detail {

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

/// Random unit rows in R^d: the implied correlation matrix F F^T is PSD with
/// unit diagonal by construction, so targets are exactly realizable. A low d
/// keeps pairwise correlations well spread.
inline Eigen::MatrixXd random_unit_factor(Eigen::Index n, Eigen::Index d, Rng& rng) {
  Eigen::MatrixXd f = gaussian_matrix(n, d, rng);
  for (Eigen::Index r = 0; r < n; ++r) f.row(r) /= f.row(r).norm();
  return f;
}

/// Row-normalized factor of a PSD correlation matrix.
inline Eigen::MatrixXd correlation_factor(const Eigen::MatrixXd& corr) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(corr);
  const double floor = 1e-12 * std::max(1.0, solver.eigenvalues().cwiseAbs().maxCoeff());
  const Eigen::VectorXd clipped = solver.eigenvalues().cwiseMax(floor);
  Eigen::MatrixXd factor = solver.eigenvectors() * clipped.cwiseSqrt().asDiagonal();
  for (Eigen::Index r = 0; r < factor.rows(); ++r) {
    const double norm = factor.row(r).norm();
    if (norm > 0.0) factor.row(r) /= norm;
  }
  return factor;
}

}  // namespace detail

/// Generate a drifting family of target RDMs, per-layer pattern matrices that
/// realize them, and per-subject trial tensors whose condition geometry at
/// time onset + (g+1)*latency_step follows layer g, plus unit-variance sensor
/// noise scaled against `snr`. Bit-reproducible for a fixed seed.
inline PlantHierarchyResult plant_hierarchy(const PlantSpec& spec, int threads = 1) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(spec.n_conditions);
  const ConditionSet conditions = make_indexed_conditions(spec.n_conditions);

  // Drifting target family: a linear blend between two random low-rank
  // correlation matrices. Convex combinations of PSD matrices with unit
  // diagonal stay valid correlation matrices, so every target is exactly
  // realizable by a pattern matrix.
  const auto embed_dim = static_cast<Eigen::Index>(
      std::min<std::size_t>(6, spec.n_conditions - 1));
  Rng rng_start(spec.seed, StreamTag::synth_rdm, 0);
  Rng rng_end(spec.seed, StreamTag::synth_rdm, 1);
  const Eigen::MatrixXd f_start = detail::random_unit_factor(n, embed_dim, rng_start);
  const Eigen::MatrixXd f_end = detail::random_unit_factor(n, embed_dim, rng_end);
  const Eigen::MatrixXd corr_start = f_start * f_start.transpose();
  const Eigen::MatrixXd corr_end = f_end * f_end.transpose();

  PlantHierarchyResult result;
  std::vector<Eigen::MatrixXd> channel_geometry(spec.n_layers);  // conditions x channels
  for (std::size_t g = 0; g < spec.n_layers; ++g) {
    const double t = spec.n_layers == 1
                         ? 0.0
                         : static_cast<double>(g) / static_cast<double>(spec.n_layers - 1);
    const Eigen::MatrixXd corr = (1.0 - t) * corr_start + t * corr_end;
    RDM rdm;
    rdm.conditions = conditions;
    rdm.kind = RdmKind::correlation_distance;
    rdm.values = Eigen::MatrixXd::Ones(n, n) - corr;
    rdm.values.diagonal().setZero();
    result.target_rdms.push_back(rdm);

    const Eigen::MatrixXd factor = detail::correlation_factor(corr);
    Rng rng_features(spec.seed, StreamTag::synth_rdm, 2, g);
    Rng rng_channels(spec.seed, StreamTag::synth_rdm, 3, g);
    PatternMatrix layer;
    layer.conditions = conditions;
    layer.values = factor * detail::gaussian_matrix(
                                n, static_cast<Eigen::Index>(spec.n_layer_features), rng_features);
    result.layers.layers.push_back(std::move(layer));
    channel_geometry[g] =
        factor * detail::gaussian_matrix(n, static_cast<Eigen::Index>(spec.n_channels),
                                         rng_channels);
    result.planted_latencies_ms.push_back(spec.onset_ms +
                                          spec.latency_step_ms * static_cast<double>(g + 1));
  }

  std::vector<double> time_ms(spec.n_timepoints);
  for (std::size_t t = 0; t < spec.n_timepoints; ++t)
    time_ms[t] = spec.time_start_ms + spec.time_step_ms * static_cast<double>(t);

  // Condition means: a Gaussian temporal window per layer carries that
  // layer's channel geometry.
  const double sigma_w = 0.5 * spec.latency_step_ms;
  std::vector<Eigen::MatrixXd> mean_at_time(spec.n_timepoints);  // conditions x channels
  for (std::size_t t = 0; t < spec.n_timepoints; ++t) {
    Eigen::MatrixXd mu =
        Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(spec.n_channels));
    for (std::size_t g = 0; g < spec.n_layers; ++g) {
      const double dt = time_ms[t] - result.planted_latencies_ms[g];
      const double w = std::exp(-dt * dt / (2.0 * sigma_w * sigma_w));
      if (w > 1e-12) mu += (spec.snr * w) * channel_geometry[g];
    }
    mean_at_time[t] = std::move(mu);
  }

  result.subject_trials.resize(spec.n_subjects);
  parallel_for(spec.n_subjects, threads, [&](std::size_t s) {
    TrialTensor& trials = result.subject_trials[s];
    trials.conditions = conditions;
    trials.trials = spec.m_trials;
    trials.channels = spec.n_channels;
    trials.time_ms = time_ms;
    trials.data.resize(spec.n_conditions * spec.m_trials * spec.n_channels * spec.n_timepoints);
    for (std::size_t c = 0; c < spec.n_conditions; ++c) {
      for (std::size_t m = 0; m < spec.m_trials; ++m) {
        Rng rng(spec.seed, StreamTag::synth_trials, s, c, m);
        for (std::size_t ch = 0; ch < spec.n_channels; ++ch)
          for (std::size_t t = 0; t < spec.n_timepoints; ++t)
            trials.at(c, m, ch, t) =
                mean_at_time[t](static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(ch)) +
                rng.normal();
      }
    }
  });
  return result;
}

/// Smoothed uniform-noise images: i.i.d. uniform [0,1] pixels per channel,
/// convolved with a normalized truncated Gaussian (separable passes, reflect
/// padding). Outputs stay within [0, 1].
inline std::vector<Image> generate_noise_images(std::size_t n, std::size_t size,
                                                std::size_t channels, std::size_t filter_size,
                                                double sigma, std::uint64_t seed,
                                                int threads = 1) {
  if (size == 0 || channels == 0 || filter_size == 0)
    throw ConfigInvalid("generate_noise_images: zero dimension");
  if (filter_size > size)
    throw ConfigInvalid("generate_noise_images: filter larger than image");
  if (!(sigma > 0.0)) throw ConfigInvalid("generate_noise_images: sigma must be positive");

  std::vector<double> kernel(filter_size);
  double total = 0.0;
  for (std::size_t i = 0; i < filter_size; ++i) {
    const double offset =
        static_cast<double>(i) - static_cast<double>(filter_size / 2);
    kernel[i] = std::exp(-offset * offset / (2.0 * sigma * sigma));
    total += kernel[i];
  }
  for (double& k : kernel) k /= total;

  auto reflect = [](std::ptrdiff_t i, std::ptrdiff_t n_) {
    while (i < 0 || i >= n_) {
      if (i < 0) i = -i - 1;
      if (i >= n_) i = 2 * n_ - 1 - i;
    }
    return static_cast<std::size_t>(i);
  };

  std::vector<Image> images(n);
  parallel_for(n, threads, [&](std::size_t idx) {
    Rng rng(seed, StreamTag::synth_noise, idx);
    Image img;
    img.height = img.width = size;
    img.channels = channels;
    img.data.resize(size * size * channels);
    for (double& v : img.data) v = rng.uniform();

    const auto half = static_cast<std::ptrdiff_t>(filter_size / 2);
    std::vector<double> pass(size * size);
    std::vector<double> out(size * size);
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          double acc = 0.0;
          for (std::size_t k = 0; k < filter_size; ++k) {
            const auto sx = reflect(static_cast<std::ptrdiff_t>(x) +
                                        static_cast<std::ptrdiff_t>(k) - half,
                                    static_cast<std::ptrdiff_t>(size));
            acc += kernel[k] * img.at(y, sx, c);
          }
          pass[y * size + x] = acc;
        }
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          double acc = 0.0;
          for (std::size_t k = 0; k < filter_size; ++k) {
            const auto sy = reflect(static_cast<std::ptrdiff_t>(y) +
                                        static_cast<std::ptrdiff_t>(k) - half,
                                    static_cast<std::ptrdiff_t>(size));
            acc += kernel[k] * pass[sy * size + x];
          }
          out[y * size + x] = acc;
        }
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) img.at(y, x, c) = out[y * size + x];
    }
    images[idx] = std::move(img);
  });
  return images;
}

/// Per-subject pattern matrices where the designated condition pair shares
/// structure only in features mapped from the given mesh region. effect = 0
/// plants nothing; large effect drives the pair's region-restricted patterns
/// toward identity.
inline std::vector<PatternMatrix> plant_searchlight_signal(
    const CorticalMesh& mesh, const FeatureMap& fmap, const std::vector<int>& region,
    std::pair<int, int> pair, double effect, std::size_t n_subjects, std::size_t n_conditions,
    std::uint64_t seed) {
  fmap.validate(mesh.vertex_count());
  if (region.empty()) throw EmptyRegion("plant_searchlight_signal: empty region");
  if (effect < 0.0) throw ConfigInvalid("plant_searchlight_signal: effect must be >= 0");
  if (pair.first == pair.second || pair.first < 0 || pair.second < 0 ||
      static_cast<std::size_t>(pair.first) >= n_conditions ||
      static_cast<std::size_t>(pair.second) >= n_conditions)
    throw ConfigInvalid("plant_searchlight_signal: invalid condition pair");

  int max_feature = 0;
  for (int f : fmap.feature_of_vertex) max_feature = std::max(max_feature, f);
  const auto n_features = static_cast<std::size_t>(max_feature) + 1;
  std::vector<bool> in_region(n_features, false);
  for (int v : region) {
    if (v < 0 || static_cast<std::size_t>(v) >= mesh.vertex_count())
      throw VertexOutOfRange("plant_searchlight_signal: region vertex out of range");
    in_region[static_cast<std::size_t>(fmap.feature_of_vertex[v])] = true;
  }

  const double alpha = effect / (1.0 + effect);
  const ConditionSet conditions = make_indexed_conditions(n_conditions);
  std::vector<PatternMatrix> subjects(n_subjects);
  for (std::size_t s = 0; s < n_subjects; ++s) {
    Rng rng(seed, StreamTag::synth_searchlight, s);
    PatternMatrix p;
    p.conditions = conditions;
    p.values = detail::gaussian_matrix(static_cast<Eigen::Index>(n_conditions),
                                       static_cast<Eigen::Index>(n_features), rng);
    const auto i = static_cast<Eigen::Index>(pair.first);
    const auto j = static_cast<Eigen::Index>(pair.second);
    for (std::size_t f = 0; f < n_features; ++f) {
      if (!in_region[f]) continue;
      const auto fi = static_cast<Eigen::Index>(f);
      p.values(j, fi) = alpha * p.values(i, fi) + std::sqrt(1.0 - alpha * alpha) * p.values(j, fi);
    }
    subjects[s] = std::move(p);
  }
  return subjects;
}

}  // namespace rsat
