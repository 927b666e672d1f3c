#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "rsat/rdm.hpp"
#include "rsat/summarize.hpp"
#include "test_helpers.hpp"

using namespace rsat;

TEST_CASE("pca_reduce caps dims at min(count-1, features)") {
  const auto p = testutil::random_patterns(118, 150, 800);
  CHECK_THROWS_AS(pca_reduce(p, 118), DimsTooLarge);
  const PatternMatrix scores = pca_reduce(p, 117);
  CHECK(scores.values.cols() == 117);
  CHECK(scores.values.rows() == 118);

  const auto narrow = testutil::random_patterns(10, 4, 801);
  CHECK_THROWS_AS(pca_reduce(narrow, 5), DimsTooLarge);
  CHECK(pca_reduce(narrow, 4).values.cols() == 4);
}

TEST_CASE("pca_reduce on collinear data reproduces pairwise distances with one dim") {
  Rng rng(802);
  const Eigen::Index n = 9, f = 6;
  Eigen::VectorXd direction(f), offset(f);
  for (Eigen::Index j = 0; j < f; ++j) {
    direction(j) = rng.normal();
    offset(j) = rng.normal();
  }
  Eigen::VectorXd t(n);
  PatternMatrix p;
  p.conditions = make_indexed_conditions(static_cast<std::size_t>(n));
  p.values.resize(n, f);
  for (Eigen::Index i = 0; i < n; ++i) {
    t(i) = rng.normal();
    p.values.row(i) = (offset + t(i) * direction).transpose();
  }
  const PatternMatrix scores = pca_reduce(p, 1);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < i; ++j) {
      const double original = (p.values.row(i) - p.values.row(j)).norm();
      const double reduced = std::abs(scores.values(i, 0) - scores.values(j, 0));
      CHECK(reduced == doctest::Approx(original).epsilon(1e-9));
    }
}

TEST_CASE("pca_reduce score variance equals the Jacobi eigenvalue oracle") {
  const auto p = testutil::random_patterns(6, 10, 803);
  const std::size_t dims = 5;
  const PatternMatrix scores = pca_reduce(p, dims);

  const Eigen::MatrixXd centered = p.values.rowwise() - p.values.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / 5.0;
  const auto eigenvalues = oracle::jacobi_eigenvalues(cov);
  const double oracle_sum = std::accumulate(eigenvalues.begin(), eigenvalues.begin() + dims, 0.0);

  double score_variance = 0.0;
  for (std::size_t d = 0; d < dims; ++d)
    score_variance += scores.values.col(static_cast<Eigen::Index>(d)).squaredNorm() / 5.0;
  CHECK(score_variance == doctest::Approx(oracle_sum).epsilon(1e-8));
}

TEST_CASE("pca_reduce scores have zero column means") {
  const auto p = testutil::random_patterns(12, 20, 804);
  const PatternMatrix scores = pca_reduce(p, 8);
  for (Eigen::Index d = 0; d < scores.values.cols(); ++d)
    CHECK(std::abs(scores.values.col(d).mean()) < 1e-10);
}

TEST_CASE("full-rank pca is an isometry of pairwise distances") {
  const auto p = testutil::random_patterns(10, 25, 805);
  const PatternMatrix scores = pca_reduce(p, 9);
  for (Eigen::Index i = 0; i < 10; ++i)
    for (Eigen::Index j = 0; j < i; ++j) {
      const double original = (p.values.row(i) - p.values.row(j)).norm();
      const double reduced = (scores.values.row(i) - scores.values.row(j)).norm();
      CHECK(reduced == doctest::Approx(original).epsilon(1e-8));
    }
}

TEST_CASE("pca_reduce is deterministic including component signs") {
  const auto p = testutil::random_patterns(9, 14, 806);
  const PatternMatrix a = pca_reduce(p, 6);
  const PatternMatrix b = pca_reduce(p, 6);
  CHECK(a.values == b.values);
}

TEST_CASE("single-layer summary matches the layer's own reduced RDM") {
  LayerStack stack;
  stack.layers.push_back(testutil::random_patterns(8, 30, 807));
  const RDM summary = summary_rdm(stack, 5);
  const RDM direct = rdm_from_patterns(pca_reduce(stack.layers[0], 5));
  CHECK(compare_rdms(summary, direct) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("duplicating a layer rank-preserves the single-layer RDM") {
  LayerStack stack;
  stack.layers.push_back(testutil::random_patterns(8, 30, 808));
  stack.layers.push_back(stack.layers[0]);
  const RDM summary = summary_rdm(stack, 5);
  const RDM single = rdm_from_patterns(pca_reduce(stack.layers[0], 5));
  CHECK(compare_rdms(summary, single) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("summary_rdm is invariant under per-layer feature permutation") {
  LayerStack stack;
  stack.layers.push_back(testutil::random_patterns(7, 12, 809));
  stack.layers.push_back(testutil::random_patterns(7, 18, 810));
  const RDM base = summary_rdm(stack, 4);

  Rng rng(6);
  LayerStack shuffled = stack;
  for (auto& layer : shuffled.layers) {
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(layer.values.cols()));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Eigen::MatrixXd permuted(layer.values.rows(), layer.values.cols());
    for (std::size_t c = 0; c < perm.size(); ++c)
      permuted.col(static_cast<Eigen::Index>(c)) = layer.values.col(perm[c]);
    layer.values = std::move(permuted);
  }
  const RDM after = summary_rdm(shuffled, 4);
  for (Eigen::Index i = 0; i < base.values.rows(); ++i)
    for (Eigen::Index j = 0; j < i; ++j)
      CHECK(after.values(i, j) == doctest::Approx(base.values(i, j)).epsilon(1e-9));
}

TEST_CASE("summary_rdm parallel equals serial") {
  LayerStack stack;
  for (std::uint64_t s = 0; s < 4; ++s)
    stack.layers.push_back(testutil::random_patterns(9, 11 + 3 * s, 811 + s));
  const RDM serial = summary_rdm(stack, 5, false, 1);
  const RDM threaded = summary_rdm(stack, 5, false, 3);
  CHECK(serial.values == threaded.values);
}

TEST_CASE("layer variance normalization changes scale, not validity") {
  LayerStack stack;
  stack.layers.push_back(testutil::random_patterns(8, 10, 812));
  PatternMatrix loud = testutil::random_patterns(8, 10, 813);
  loud.values *= 40.0;
  stack.layers.push_back(loud);
  const RDM normalized = summary_rdm(stack, 4, true);
  normalized.validate();
}
