#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <queue>
#include <string>
#include <vector>

#include "rsat/errors.hpp"
#include "rsat/parallel.hpp"
#include "rsat/rdm.hpp"

namespace rsat {

/// Triangle mesh with a derived undirected edge graph; edge weights are
/// Euclidean lengths in mm. Duplicate vertices at identical coordinates are
/// rejected at construction.
struct CorticalMesh {
  std::vector<std::array<double, 3>> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<std::vector<std::pair<int, double>>> adjacency;  // vertex -> (neighbor, length)

  std::size_t vertex_count() const { return vertices.size(); }
};

inline double euclidean(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline CorticalMesh make_mesh(std::vector<std::array<double, 3>> vertices,
                              std::vector<std::array<int, 3>> faces) {
  CorticalMesh mesh;
  mesh.vertices = std::move(vertices);
  mesh.faces = std::move(faces);
  const int n = static_cast<int>(mesh.vertices.size());

  std::vector<int> order(mesh.vertices.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return mesh.vertices[a] < mesh.vertices[b]; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (mesh.vertices[order[i]] == mesh.vertices[order[i - 1]])
      throw DegenerateInput("make_mesh: duplicate vertices at identical coordinates (ids " +
                            std::to_string(order[i - 1]) + ", " + std::to_string(order[i]) + ")");

  mesh.adjacency.assign(mesh.vertices.size(), {});
  auto add_edge = [&](int a, int b) {
    for (const auto& [nb, len] : mesh.adjacency[a])
      if (nb == b) return;
    const double len = euclidean(mesh.vertices[a], mesh.vertices[b]);
    mesh.adjacency[a].emplace_back(b, len);
    mesh.adjacency[b].emplace_back(a, len);
  };
  for (const auto& f : mesh.faces) {
    for (int v : f)
      if (v < 0 || v >= n) throw VertexOutOfRange("make_mesh: face index out of range");
    add_edge(f[0], f[1]);
    add_edge(f[1], f[2]);
    add_edge(f[2], f[0]);
  }
  for (auto& nbrs : mesh.adjacency) std::sort(nbrs.begin(), nbrs.end());
  return mesh;
}

/// Flat triangulated rows x cols grid with the given spacing;
/// handy for synthetic searchlight experiments.
inline CorticalMesh make_grid_mesh(int rows, int cols, double spacing_mm) {
  std::vector<std::array<double, 3>> vertices;
  std::vector<std::array<int, 3>> faces;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      vertices.push_back({c * spacing_mm, r * spacing_mm, 0.0});
  auto id = [cols](int r, int c) { return r * cols + c; };
  for (int r = 0; r + 1 < rows; ++r)
    for (int c = 0; c + 1 < cols; ++c) {
      faces.push_back({id(r, c), id(r, c + 1), id(r + 1, c)});
      faces.push_back({id(r, c + 1), id(r + 1, c + 1), id(r + 1, c)});
    }
  return make_mesh(std::move(vertices), std::move(faces));
}

/// Vertex -> nearest data feature (voxel) id. Several vertices may share one
/// feature; the searchlight build deduplicates.
struct FeatureMap {
  std::vector<int> feature_of_vertex;

  void validate(std::size_t n_vertices) const {
    if (feature_of_vertex.size() != n_vertices)
      throw LengthMismatch("FeatureMap: entry count does not match vertex count");
    for (int f : feature_of_vertex)
      if (f < 0) throw DegenerateInput("FeatureMap: negative feature id");
  }
};

/// Nearest-center fallback mapping for synthetic meshes; ties go to the
/// lowest center index.
inline FeatureMap make_nearest_feature_map(const CorticalMesh& mesh,
                                           const std::vector<std::array<double, 3>>& centers) {
  if (centers.empty()) throw DegenerateInput("make_nearest_feature_map: no centers");
  FeatureMap fm;
  fm.feature_of_vertex.resize(mesh.vertex_count());
  for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
    int best = 0;
    double best_d = euclidean(mesh.vertices[v], centers[0]);
    for (std::size_t c = 1; c < centers.size(); ++c) {
      const double d = euclidean(mesh.vertices[v], centers[c]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    fm.feature_of_vertex[v] = best;
  }
  return fm;
}

/// Shortest-path distances along mesh edges (Dijkstra), truncated at cutoff:
/// vertices farther than cutoff are omitted. Returned pairs are sorted by
/// vertex id; distance(source) = 0.
inline std::vector<std::pair<int, double>> geodesic_distances(const CorticalMesh& mesh, int source,
                                                              double cutoff_mm) {
  if (source < 0 || static_cast<std::size_t>(source) >= mesh.vertex_count())
    throw VertexOutOfRange("geodesic_distances: source " + std::to_string(source) +
                           " out of range");
  if (!(cutoff_mm > 0.0)) throw DegenerateInput("geodesic_distances: cutoff must be positive");

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(mesh.vertex_count(), inf);
  using Entry = std::pair<double, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> heap;
  dist[source] = 0.0;
  heap.emplace(0.0, source);
  while (!heap.empty()) {
    const auto [d, u] = heap.top();
    heap.pop();
    if (d > dist[u]) continue;  // stale
    for (const auto& [v, len] : mesh.adjacency[u]) {
      const double nd = d + len;
      if (nd <= cutoff_mm && nd < dist[v]) {
        dist[v] = nd;
        heap.emplace(nd, v);
      }
    }
  }
  std::vector<std::pair<int, double>> out;
  for (std::size_t v = 0; v < dist.size(); ++v)
    if (dist[v] <= cutoff_mm) out.emplace_back(static_cast<int>(v), dist[v]);
  return out;
}

/// Per center vertex: the deduplicated feature ids of all vertices strictly
/// closer than radius, ordered by (geodesic distance, feature id).
struct SearchlightIndex {
  double radius_mm = 0.0;
  std::vector<std::vector<int>> disks;
};

inline SearchlightIndex build_searchlights(const CorticalMesh& mesh, const FeatureMap& fmap,
                                           double radius_mm, int threads = 1) {
  fmap.validate(mesh.vertex_count());
  if (!(radius_mm > 0.0)) throw DegenerateInput("build_searchlights: radius must be positive");
  SearchlightIndex idx;
  idx.radius_mm = radius_mm;
  idx.disks.resize(mesh.vertex_count());
  parallel_for(mesh.vertex_count(), threads, [&](std::size_t center) {
    auto reached = geodesic_distances(mesh, static_cast<int>(center), radius_mm);
    std::vector<std::pair<double, int>> by_distance;  // (distance, feature)
    for (const auto& [v, d] : reached)
      if (d < radius_mm) by_distance.emplace_back(d, fmap.feature_of_vertex[v]);
    std::sort(by_distance.begin(), by_distance.end());
    std::vector<int>& disk = idx.disks[center];
    for (const auto& [d, f] : by_distance)
      if (std::find(disk.begin(), disk.end(), f) == disk.end()) disk.push_back(f);
  });
  return idx;
}

struct SkippedVertex {
  int vertex;
  std::string reason;
};

struct SearchlightMap {
  RDMSeries series;  // axis=vertex, coordinates = non-skipped center vertex ids
  std::vector<SkippedVertex> skipped;
};

/// Correlation-distance RDM per center vertex from the disk-restricted
/// pattern columns. Disks with fewer than 3 features, or with a degenerate
/// (constant) restricted pattern, are skipped and flagged instead of aborting.
inline SearchlightMap searchlight_rdm_map(const PatternMatrix& p, const SearchlightIndex& idx,
                                          int threads = 1) {
  p.validate();
  const auto n_features = static_cast<int>(p.features());
  for (const auto& disk : idx.disks)
    for (int f : disk)
      if (f >= n_features)
        throw VertexOutOfRange("searchlight_rdm_map: disk feature id exceeds pattern features");

  const std::size_t n_vertices = idx.disks.size();
  std::vector<RDM> per_vertex(n_vertices);
  std::vector<std::string> fail(n_vertices);
  parallel_for(n_vertices, threads, [&](std::size_t v) {
    const auto& disk = idx.disks[v];
    if (disk.size() < 3) {
      fail[v] = "disk_too_small";
      return;
    }
    PatternMatrix sub;
    sub.conditions = p.conditions;
    sub.values.resize(p.values.rows(), static_cast<Eigen::Index>(disk.size()));
    for (std::size_t c = 0; c < disk.size(); ++c)
      sub.values.col(static_cast<Eigen::Index>(c)) = p.values.col(disk[c]);
    try {
      per_vertex[v] = rdm_from_patterns(sub);
    } catch (const DegenerateInput&) {
      fail[v] = "degenerate_input";
    }
  });

  SearchlightMap out;
  out.series.axis = SeriesAxis::vertex;
  for (std::size_t v = 0; v < n_vertices; ++v) {
    if (fail[v].empty()) {
      out.series.coordinates.push_back(static_cast<double>(v));
      out.series.rdms.push_back(std::move(per_vertex[v]));
    } else {
      out.skipped.push_back({static_cast<int>(v), fail[v]});
    }
  }
  return out;
}

/// The n features in mask with the largest scores; ties broken by ascending
/// feature id. Output is sorted ascending.
inline std::vector<int> select_top_features(const std::vector<double>& scores,
                                            const std::vector<int>& mask, std::size_t n) {
  if (mask.size() < n)
    throw MaskTooSmall("select_top_features: mask has " + std::to_string(mask.size()) +
                       " features, need " + std::to_string(n));
  std::vector<int> sorted = mask;
  for (int f : sorted)
    if (f < 0 || static_cast<std::size_t>(f) >= scores.size())
      throw VertexOutOfRange("select_top_features: feature id outside score table");
  std::sort(sorted.begin(), sorted.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  sorted.resize(n);
  std::sort(sorted.begin(), sorted.end());
  return sorted;
}

/// Full-length per-vertex overlay: assigned values at the given vertices,
/// NaN at every skipped/unlisted vertex.
inline std::vector<double> surface_overlay(const std::vector<int>& vertices,
                                           const std::vector<double>& values,
                                           std::size_t n_vertices) {
  if (vertices.size() != values.size())
    throw LengthMismatch("surface_overlay: vertex/value count mismatch");
  std::vector<double> overlay(n_vertices, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const int v = vertices[i];
    if (v < 0 || static_cast<std::size_t>(v) >= n_vertices)
      throw VertexOutOfRange("surface_overlay: vertex id out of range");
    overlay[static_cast<std::size_t>(v)] = values[i];
  }
  return overlay;
}

/// Project per-subject-vertex values onto an average surface through a
/// user-supplied correspondence table (subject vertex -> average vertex).
/// Average-surface vertices collect the mean of their mapped finite values;
/// unmapped vertices stay NaN.
inline std::vector<double> apply_correspondence(const std::vector<double>& subject_values,
                                                const std::vector<std::pair<int, int>>& table,
                                                std::size_t n_average_vertices) {
  std::vector<double> sum(n_average_vertices, 0.0);
  std::vector<std::size_t> count(n_average_vertices, 0);
  for (const auto& [sv, av] : table) {
    if (sv < 0 || static_cast<std::size_t>(sv) >= subject_values.size() || av < 0 ||
        static_cast<std::size_t>(av) >= n_average_vertices)
      throw VertexOutOfRange("apply_correspondence: vertex id out of range");
    const double val = subject_values[static_cast<std::size_t>(sv)];
    if (std::isfinite(val)) {
      sum[static_cast<std::size_t>(av)] += val;
      ++count[static_cast<std::size_t>(av)];
    }
  }
  std::vector<double> out(n_average_vertices, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t v = 0; v < n_average_vertices; ++v)
    if (count[v] > 0) out[v] = sum[v] / static_cast<double>(count[v]);
  return out;
}

}  // namespace rsat
