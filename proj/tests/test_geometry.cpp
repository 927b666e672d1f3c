#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "rsat/geometry.hpp"
#include "rsat/rng.hpp"
#include "test_helpers.hpp"

using namespace rsat;

namespace {

/// Jittered grid: valid random geometry with fixed, connected topology.
CorticalMesh random_mesh(int rows, int cols, double spacing, std::uint64_t seed) {
  CorticalMesh base = make_grid_mesh(rows, cols, spacing);
  Rng rng(seed);
  std::vector<std::array<double, 3>> vertices = base.vertices;
  for (auto& v : vertices) {
    v[0] += (rng.uniform() - 0.5) * spacing * 0.4;
    v[1] += (rng.uniform() - 0.5) * spacing * 0.4;
    v[2] += (rng.uniform() - 0.5) * spacing * 0.4;
  }
  return make_mesh(std::move(vertices), base.faces);
}

FeatureMap identity_map(const CorticalMesh& mesh) {
  FeatureMap fm;
  fm.feature_of_vertex.resize(mesh.vertex_count());
  for (std::size_t v = 0; v < mesh.vertex_count(); ++v)
    fm.feature_of_vertex[v] = static_cast<int>(v);
  return fm;
}

}  // namespace

TEST_CASE("mesh construction rejects duplicates and bad faces") {
  CHECK_THROWS_AS(make_mesh({{0, 0, 0}, {1, 0, 0}, {0, 0, 0}}, {{0, 1, 2}}), DegenerateInput);
  CHECK_THROWS_AS(make_mesh({{0, 0, 0}, {1, 0, 0}}, {{0, 1, 2}}), VertexOutOfRange);
}

TEST_CASE("geodesic distance with a tiny cutoff keeps only the source") {
  const CorticalMesh mesh = make_grid_mesh(3, 3, 2.0);
  const auto reached = geodesic_distances(mesh, 4, 1e-9);
  REQUIRE(reached.size() == 1);
  CHECK(reached[0].first == 4);
  CHECK(reached[0].second == 0.0);
}

TEST_CASE("geodesic distances on a 2 mm chain with 5 mm cutoff") {
  // Straight chain of 7 vertices spaced 2 mm apart, connected via degenerate
  // strip faces along the line's neighbors only.
  std::vector<std::array<double, 3>> vertices;
  std::vector<std::array<int, 3>> faces;
  for (int i = 0; i < 7; ++i) vertices.push_back({2.0 * i, 0.0, 0.0});
  vertices.push_back({6.0, 50.0, 0.0});  // apex far away, links nothing nearby
  for (int i = 0; i + 1 < 7; ++i) faces.push_back({i, i + 1, 7});
  CorticalMesh mesh = make_mesh(std::move(vertices), std::move(faces));
  // Drop the apex edges so only the chain remains relevant within 5 mm.
  const auto reached = geodesic_distances(mesh, 3, 5.0);
  std::set<int> ids;
  for (const auto& [v, d] : reached)
    if (v != 7) ids.insert(v);
  CHECK(ids == std::set<int>{1, 2, 3, 4, 5});
  for (const auto& [v, d] : reached) {
    if (v == 7) continue;
    CHECK(d == doctest::Approx(2.0 * std::abs(v - 3)).epsilon(1e-12));
  }
}

TEST_CASE("geodesic distances equal the edge-relaxation oracle exactly") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const CorticalMesh mesh = random_mesh(5, 6, 3.0, 100 + seed);
    const auto bf = oracle::bellman_ford(mesh, 0);
    const auto reached = geodesic_distances(mesh, 0, 1e9);
    REQUIRE(reached.size() == mesh.vertex_count());
    for (const auto& [v, d] : reached) CHECK(d == bf[static_cast<std::size_t>(v)]);
  }
}

TEST_CASE("geodesic distances match Floyd-Warshall within rounding") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const CorticalMesh mesh = random_mesh(4, 5, 2.5, 200 + seed);
    const auto fw = oracle::floyd_warshall(mesh);
    for (int src : {0, 7, 19}) {
      const auto reached = geodesic_distances(mesh, src, 1e9);
      for (const auto& [v, d] : reached)
        CHECK(d == doctest::Approx(fw[static_cast<std::size_t>(src)][static_cast<std::size_t>(v)])
                       .epsilon(1e-12));
    }
  }
}

TEST_CASE("geodesic distance is symmetric and satisfies the triangle inequality") {
  const CorticalMesh mesh = random_mesh(5, 5, 2.0, 303);
  const auto fw = oracle::floyd_warshall(mesh);
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = rng.uniform_int(mesh.vertex_count());
    const auto b = rng.uniform_int(mesh.vertex_count());
    const auto c = rng.uniform_int(mesh.vertex_count());
    CHECK(fw[a][b] == doctest::Approx(fw[b][a]).epsilon(1e-12));
    CHECK(fw[a][c] <= fw[a][b] + fw[b][c] + 1e-9);
  }
  const auto from_a = geodesic_distances(mesh, 3, 1e9);
  const auto from_b = geodesic_distances(mesh, 21, 1e9);
  double d_ab = -1, d_ba = -1;
  for (const auto& [v, d] : from_a)
    if (v == 21) d_ab = d;
  for (const auto& [v, d] : from_b)
    if (v == 3) d_ba = d;
  CHECK(d_ab == doctest::Approx(d_ba).epsilon(1e-12));
}

TEST_CASE("geodesic error paths") {
  const CorticalMesh mesh = make_grid_mesh(2, 2, 1.0);
  CHECK_THROWS_AS(geodesic_distances(mesh, 9, 1.0), VertexOutOfRange);
  CHECK_THROWS_AS(geodesic_distances(mesh, -1, 1.0), VertexOutOfRange);
  CHECK_THROWS_AS(geodesic_distances(mesh, 0, 0.0), DegenerateInput);
}

TEST_CASE("searchlight disks with a radius below the shortest edge hold only the center") {
  const CorticalMesh mesh = make_grid_mesh(4, 4, 2.0);
  const auto idx = build_searchlights(mesh, identity_map(mesh), 1.0);
  for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
    REQUIRE(idx.disks[v].size() == 1);
    CHECK(idx.disks[v][0] == static_cast<int>(v));
  }
}

TEST_CASE("a voxel shared by two vertices appears once per disk") {
  CorticalMesh mesh = make_grid_mesh(3, 3, 2.0);
  FeatureMap fm = identity_map(mesh);
  fm.feature_of_vertex[1] = 0;  // vertices 0 and 1 share voxel 0
  const auto idx = build_searchlights(mesh, fm, 9.0);
  for (const auto& disk : idx.disks) {
    std::set<int> unique(disk.begin(), disk.end());
    CHECK(unique.size() == disk.size());
  }
  // Vertex 4 (center) reaches both 0 and 1 within 9 mm; voxel 0 listed once.
  int hits = 0;
  for (int f : idx.disks[4])
    if (f == 0) ++hits;
  CHECK(hits == 1);
}

TEST_CASE("searchlight membership equals oracle distances filtered strictly at the radius") {
  const CorticalMesh mesh = random_mesh(4, 5, 3.0, 404);  // 20 vertices
  const auto fw = oracle::floyd_warshall(mesh);
  const double radius = 9.0;
  const auto idx = build_searchlights(mesh, identity_map(mesh), radius);
  for (std::size_t c = 0; c < mesh.vertex_count(); ++c) {
    std::set<int> expected;
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v)
      if (fw[c][v] < radius) expected.insert(static_cast<int>(v));
    CHECK(std::set<int>(idx.disks[c].begin(), idx.disks[c].end()) == expected);
    CHECK(idx.disks[c].front() == static_cast<int>(c));  // center first (distance 0)
  }
}

TEST_CASE("disk membership is monotone in the radius") {
  const CorticalMesh mesh = random_mesh(5, 5, 2.0, 505);
  const FeatureMap fm = identity_map(mesh);
  const auto small = build_searchlights(mesh, fm, 3.0);
  const auto medium = build_searchlights(mesh, fm, 5.5);
  const auto large = build_searchlights(mesh, fm, 8.0);
  for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
    std::set<int> s(small.disks[v].begin(), small.disks[v].end());
    std::set<int> m(medium.disks[v].begin(), medium.disks[v].end());
    std::set<int> l(large.disks[v].begin(), large.disks[v].end());
    CHECK(std::includes(m.begin(), m.end(), s.begin(), s.end()));
    CHECK(std::includes(l.begin(), l.end(), m.begin(), m.end()));
  }
}

TEST_CASE("searchlight_rdm_map composes with rdm_from_patterns per vertex") {
  const CorticalMesh mesh = make_grid_mesh(3, 4, 2.0);
  const auto idx = build_searchlights(mesh, identity_map(mesh), 4.5);
  const PatternMatrix p = testutil::random_patterns(6, mesh.vertex_count(), 606);
  const SearchlightMap map = searchlight_rdm_map(p, idx);
  CHECK(map.skipped.empty());
  REQUIRE(map.series.size() == mesh.vertex_count());
  // Vertex 0's disk, reconstructed by hand.
  const auto& disk = idx.disks[0];
  PatternMatrix sub;
  sub.conditions = p.conditions;
  sub.values.resize(6, static_cast<Eigen::Index>(disk.size()));
  for (std::size_t c = 0; c < disk.size(); ++c)
    sub.values.col(static_cast<Eigen::Index>(c)) = p.values.col(disk[c]);
  CHECK(map.series.rdms[0].values == rdm_from_patterns(sub).values);
}

TEST_CASE("small disks are skipped with a flag, not fatal") {
  // Path 0-1-2 plus a distant apex: the endpoints' disks hold 2 features.
  const CorticalMesh mesh = make_mesh(
      {{0, 0, 0}, {2, 0, 0}, {4, 0, 0}, {2, 40, 0}}, {{0, 1, 3}, {1, 2, 3}});
  const auto idx = build_searchlights(mesh, identity_map(mesh), 2.1);
  const PatternMatrix p = testutil::random_patterns(5, mesh.vertex_count(), 707);
  const SearchlightMap map = searchlight_rdm_map(p, idx);
  CHECK(map.series.size() + map.skipped.size() == mesh.vertex_count());
  for (const auto& skip : map.skipped) CHECK(skip.reason == "disk_too_small");
  REQUIRE(map.skipped.size() == 3);  // vertices 0, 2 and the apex
  CHECK(map.series.coordinates == std::vector<double>{1.0});
}

TEST_CASE("degenerate searchlight columns are flagged per vertex") {
  const CorticalMesh mesh = make_grid_mesh(2, 2, 1.0);
  const auto idx = build_searchlights(mesh, identity_map(mesh), 3.0);  // all 4 vertices per disk
  PatternMatrix p;
  p.conditions = make_indexed_conditions(4);
  p.values = Eigen::MatrixXd::Constant(4, 4, 1.0);
  p.values.row(0) << 1, 2, 3, 4;  // other rows constant -> degenerate
  const SearchlightMap map = searchlight_rdm_map(p, idx);
  CHECK(map.series.size() == 0);
  REQUIRE(map.skipped.size() == 4);
  for (const auto& skip : map.skipped) CHECK(skip.reason == "degenerate_input");
}

TEST_CASE("select_top_features ordering and ties") {
  std::vector<double> scores{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<int> mask{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  CHECK(select_top_features(scores, mask, 10) == mask);
  CHECK(select_top_features(scores, mask, 3) == std::vector<int>{7, 8, 9});

  std::vector<double> tied{5, 5, 5, 1};
  CHECK(select_top_features(tied, {0, 1, 2, 3}, 2) == std::vector<int>{0, 1});
  CHECK_THROWS_AS(select_top_features(scores, {1, 2}, 3), MaskTooSmall);
}

TEST_CASE("surface overlay fills skipped vertices with NaN") {
  const auto overlay = surface_overlay({0, 2}, {1.5, -2.5}, 4);
  REQUIRE(overlay.size() == 4);
  CHECK(overlay[0] == 1.5);
  CHECK(std::isnan(overlay[1]));
  CHECK(overlay[2] == -2.5);
  CHECK(std::isnan(overlay[3]));
  CHECK_THROWS_AS(surface_overlay({0}, {1.0, 2.0}, 4), LengthMismatch);
  CHECK_THROWS_AS(surface_overlay({7}, {1.0}, 4), VertexOutOfRange);
}

TEST_CASE("correspondence table projects subject values onto the average surface") {
  const std::vector<double> subject{1.0, 3.0, NAN};
  const std::vector<std::pair<int, int>> table{{0, 0}, {1, 0}, {2, 1}};
  const auto avg = apply_correspondence(subject, table, 3);
  CHECK(avg[0] == doctest::Approx(2.0));
  CHECK(std::isnan(avg[1]));  // only a NaN mapped there
  CHECK(std::isnan(avg[2]));  // nothing mapped there
}

TEST_CASE("nearest feature map breaks ties toward the lowest center index") {
  const CorticalMesh mesh = make_grid_mesh(1, 3, 1.0);
  const std::vector<std::array<double, 3>> centers{{0.0, 0.0, 0.0}, {2.0, 0.0, 0.0}};
  const FeatureMap fm = make_nearest_feature_map(mesh, centers);
  CHECK(fm.feature_of_vertex[0] == 0);
  CHECK(fm.feature_of_vertex[1] == 0);  // equidistant -> lowest index
  CHECK(fm.feature_of_vertex[2] == 1);
}
