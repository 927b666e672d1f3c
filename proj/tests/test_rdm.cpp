#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "rsat/rdm.hpp"
#include "rsat/rng.hpp"
#include "test_helpers.hpp"

using namespace rsat;

TEST_CASE("spearman_rho on monotone sequences") {
  CHECK(spearman_rho({1, 2, 3, 4}, {1, 2, 3, 4}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(spearman_rho({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("spearman_rho with ties matches the rank oracle") {
  const std::vector<double> x{1, 2, 2, 3};
  const std::vector<double> y{1, 3, 2, 4};
  // 3/sqrt(10), frozen from the sort-based rank oracle
  CHECK(spearman_rho(x, y) == doctest::Approx(0.9486832980505138).epsilon(1e-14));
  CHECK(spearman_rho(x, y) == doctest::Approx(oracle::spearman(x, y)).epsilon(1e-14));
}

TEST_CASE("spearman_rho error paths") {
  CHECK_THROWS_AS(spearman_rho({1, 2, 3}, {1, 2}), LengthMismatch);
  CHECK_THROWS_AS(spearman_rho({1, 2}, {1, 2}), LengthMismatch);
  CHECK_THROWS_AS(spearman_rho({5, 5, 5}, {1, 2, 3}), DegenerateInput);
  CHECK_THROWS_AS(spearman_rho({1, 2, NAN}, {1, 2, 3}), NonFinite);
}

TEST_CASE("spearman_rho is invariant under strictly increasing transforms") {
  Rng rng(71);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(11), y(11), fx(11), fy(11);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = rng.normal();
      y[i] = rng.normal();
      fx[i] = std::exp(x[i]) + 3.0 * x[i];
      fy[i] = std::exp(y[i]) + 3.0 * y[i];
    }
    CHECK(spearman_rho(fx, fy) == doctest::Approx(spearman_rho(x, y)).epsilon(1e-12));
  }
}

TEST_CASE("rdm_from_patterns trivial entries") {
  PatternMatrix p;
  p.conditions = make_indexed_conditions(3);
  p.values.resize(3, 5);
  p.values.row(0) << 1, 2, 3, 4, 5;
  p.values.row(1) << 10, 20, 30, 40, 50;  // same ranks as row 0
  p.values.row(2) << 9, 7, 5, 3, 1;       // exact rank reversal of row 0
  const RDM r = rdm_from_patterns(p);
  CHECK(r.values(1, 0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(r.values(2, 0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(r.values(2, 1) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("rdm_from_patterns matches pairwise rank oracle") {
  const auto p = testutil::random_patterns(3, 5, 1234);
  const RDM r = rdm_from_patterns(p);
  for (int i = 0; i < 3; ++i) {
    CHECK(r.values(i, i) == 0.0);
    for (int j = 0; j < i; ++j) {
      std::vector<double> a(5), b(5);
      for (int f = 0; f < 5; ++f) {
        a[static_cast<std::size_t>(f)] = p.values(i, f);
        b[static_cast<std::size_t>(f)] = p.values(j, f);
      }
      CHECK(r.values(i, j) == doctest::Approx(1.0 - oracle::spearman(a, b)).epsilon(1e-13));
    }
  }
}

TEST_CASE("rdm_from_patterns is bitwise symmetric with zero diagonal and bounded entries") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    const auto p = testutil::random_patterns(12, 9, seed);
    const RDM r = rdm_from_patterns(p);
    for (int i = 0; i < 12; ++i) {
      CHECK(r.values(i, i) == 0.0);
      for (int j = 0; j < i; ++j) {
        CHECK(r.values(i, j) == r.values(j, i));  // bitwise
        CHECK(r.values(i, j) >= 0.0);
        CHECK(r.values(i, j) <= 2.0);
      }
    }
  }
}

TEST_CASE("rdm_from_patterns reports the degenerate condition index") {
  PatternMatrix p;
  p.conditions = make_indexed_conditions(3);
  p.values.resize(3, 4);
  p.values.row(0) << 1, 2, 3, 4;
  p.values.row(1) << 7, 7, 7, 7;  // constant
  p.values.row(2) << 4, 3, 2, 1;
  try {
    rdm_from_patterns(p);
    FAIL("expected DegenerateInput");
  } catch (const DegenerateInput& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
}

TEST_CASE("rdm_from_patterns threaded equals serial") {
  const auto p = testutil::random_patterns(15, 8, 99);
  const RDM serial = rdm_from_patterns(p, 1);
  const RDM threaded = rdm_from_patterns(p, 4);
  CHECK(serial.values == threaded.values);
}

TEST_CASE("lower_triangle fixed row-major order") {
  Eigen::MatrixXd m(3, 3);
  m << 0, 5, 6, 5, 0, 7, 6, 7, 0;
  const auto tri = lower_triangle(m);
  REQUIRE(tri.size() == 3);
  CHECK(tri[0] == 5);  // (1,0)
  CHECK(tri[1] == 6);  // (2,0)
  CHECK(tri[2] == 7);  // (2,1)

  Eigen::MatrixXd two(2, 2);
  two << 0, 9, 9, 0;
  CHECK(lower_triangle(two) == std::vector<double>{9});

  // Perturbing above the diagonal must not change the output.
  Eigen::MatrixXd skew = m;
  skew(0, 1) += 100.0;
  skew(0, 2) -= 3.0;
  skew(1, 2) *= -2.0;
  CHECK(lower_triangle(skew) == tri);
}

TEST_CASE("compare_rdms self comparison and symmetry") {
  const auto p = testutil::random_patterns(6, 7, 42);
  const RDM a = rdm_from_patterns(p);
  CHECK(compare_rdms(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  const auto q = testutil::random_patterns(6, 7, 43);
  const RDM b = rdm_from_patterns(q);
  CHECK(compare_rdms(a, b) == doctest::Approx(compare_rdms(b, a)).epsilon(1e-15));
}

TEST_CASE("compare_rdms matches the rank oracle on hand-built 4x4 RDMs") {
  RDM a, b;
  a.conditions = b.conditions = make_indexed_conditions(4);
  a.kind = b.kind = RdmKind::correlation_distance;
  a.values.resize(4, 4);
  b.values.resize(4, 4);
  a.values << 0, .1, .7, .4, .1, 0, .9, .2, .7, .9, 0, 1.3, .4, .2, 1.3, 0;
  b.values << 0, .3, .5, .8, .3, 0, 1.1, .6, .5, 1.1, 0, .9, .8, .6, .9, 0;
  const double expected = oracle::spearman(lower_triangle(a), lower_triangle(b));
  CHECK(compare_rdms(a, b) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("comparison vector length is n(n-1)/2, e.g. 6903 for 118 conditions") {
  RDM r;
  r.conditions = make_indexed_conditions(118);
  r.values = Eigen::MatrixXd::Zero(118, 118);
  CHECK(lower_triangle(r).size() == 6903);
}

TEST_CASE("compare_rdms error paths") {
  const RDM a = rdm_from_patterns(testutil::random_patterns(4, 6, 7));
  RDM other = a;
  other.conditions = make_indexed_conditions(4, "different");
  CHECK_THROWS_AS(compare_rdms(a, other), ConditionMismatch);

  RDM flat = a;
  flat.values.setZero();
  CHECK_THROWS_AS(compare_rdms(a, flat), DegenerateInput);
}

TEST_CASE("compare_rdms is invariant under a shared condition permutation") {
  const std::size_t n = 7;
  const RDM a = rdm_from_patterns(testutil::random_patterns(n, 9, 11));
  const RDM b = rdm_from_patterns(testutil::random_patterns(n, 9, 12));
  const double base = compare_rdms(a, b);

  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(5);
  rng.shuffle(perm);
  auto apply = [&](const RDM& r) {
    RDM out = r;
    for (std::size_t i = 0; i < n; ++i) {
      out.conditions.labels[i] = r.conditions.labels[perm[i]];
      for (std::size_t j = 0; j < n; ++j)
        out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            r.values(static_cast<Eigen::Index>(perm[i]), static_cast<Eigen::Index>(perm[j]));
    }
    return out;
  };
  CHECK(compare_rdms(apply(a), apply(b)) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("condition set rejects duplicates") {
  ConditionSet cs;
  cs.labels = {"a", "b", "a"};
  CHECK_THROWS_AS(cs.validate(), DegenerateInput);
}
