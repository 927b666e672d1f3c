#include <doctest.h>

#include <cmath>
#include <vector>

#include "rsat/decoding.hpp"
#include "rsat/synth.hpp"

using namespace rsat;

namespace {

PlantSpec small_spec() {
  PlantSpec spec;
  spec.n_conditions = 6;
  spec.n_subjects = 1;
  spec.n_channels = 8;
  spec.n_timepoints = 20;
  spec.n_layers = 4;
  spec.m_trials = 10;
  spec.n_layer_features = 64;
  spec.time_start_ms = -20.0;
  spec.time_step_ms = 5.0;
  spec.onset_ms = 10.0;
  spec.latency_step_ms = 5.0;
  spec.seed = 77;
  return spec;
}

}  // namespace

TEST_CASE("plant_hierarchy is bit-reproducible and thread-invariant") {
  PlantSpec spec = small_spec();
  spec.n_subjects = 3;
  const auto a = plant_hierarchy(spec, 1);
  const auto b = plant_hierarchy(spec, 3);
  for (std::size_t s = 0; s < 3; ++s) CHECK(a.subject_trials[s].data == b.subject_trials[s].data);
  for (std::size_t g = 0; g < spec.n_layers; ++g)
    CHECK(a.layers.layers[g].values == b.layers.layers[g].values);
}

TEST_CASE("planted latencies follow onset + layer * step") {
  const auto result = plant_hierarchy(small_spec());
  REQUIRE(result.planted_latencies_ms.size() == 4);
  for (std::size_t g = 0; g < 4; ++g)
    CHECK(result.planted_latencies_ms[g] == doctest::Approx(10.0 + 5.0 * (g + 1.0)));
}

TEST_CASE("layer patterns realize the target RDM family in rank terms") {
  PlantSpec spec;
  spec.seed = 5;
  spec.n_timepoints = 80;  // latencies must fit; trials are irrelevant here
  spec.n_subjects = 1;
  const auto result = plant_hierarchy(spec);
  REQUIRE(result.layers.layers.size() == spec.n_layers);
  for (std::size_t g = 0; g < spec.n_layers; ++g) {
    CHECK(result.layers.layers[g].features() == spec.n_layer_features);
    const RDM realized = rdm_from_patterns(result.layers.layers[g]);
    CHECK(compare_rdms(realized, result.target_rdms[g]) >= 0.95);
  }
  // The family drifts: endpoints are far less similar than neighbors.
  const double adjacent = compare_rdms(result.target_rdms[0], result.target_rdms[1]);
  const double extremes = compare_rdms(result.target_rdms[0], result.target_rdms[7]);
  CHECK(adjacent > extremes);
}

TEST_CASE("noiseless limit decodes planted windows perfectly, pre-stimulus stays at chance") {
  PlantSpec spec = small_spec();
  spec.snr = 50.0;
  const auto result = plant_hierarchy(spec);
  DecodingConfig cfg;
  cfg.k = 5;
  cfg.repetitions = 2;
  cfg.seed = 9;
  const RDMSeries series = trials_to_rdm_series(result.subject_trials[0], cfg);

  auto time_index = [&](double t) {
    for (std::size_t i = 0; i < series.coordinates.size(); ++i)
      if (series.coordinates[i] == t) return i;
    FAIL("time not on grid");
    return std::size_t{0};
  };
  for (double latency : result.planted_latencies_ms) {
    const auto& rdm = series.rdms[time_index(latency)];
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < i; ++j) CHECK(rdm.values(i, j) == 100.0);
  }
  // Pre-stimulus accuracy averages near chance.
  double pre = 0.0;
  int count = 0;
  for (std::size_t t = 0; t < series.size(); ++t) {
    if (series.coordinates[t] > 0) continue;
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < i; ++j) {
        pre += series.rdms[t].values(i, j);
        ++count;
      }
  }
  pre /= count;
  CHECK(pre > 30.0);
  CHECK(pre < 70.0);
}

TEST_CASE("zero snr leaves decoding near chance everywhere") {
  PlantSpec spec = small_spec();
  spec.snr = 0.0;
  const auto result = plant_hierarchy(spec);
  DecodingConfig cfg;
  cfg.k = 5;
  cfg.repetitions = 2;
  cfg.seed = 10;
  const RDMSeries series = trials_to_rdm_series(result.subject_trials[0], cfg);
  double total = 0.0;
  int count = 0;
  for (const auto& rdm : series.rdms)
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < i; ++j) {
        total += rdm.values(i, j);
        ++count;
      }
  total /= count;
  CHECK(total > 42.0);
  CHECK(total < 58.0);
}

TEST_CASE("infeasible specs are rejected") {
  PlantSpec late = small_spec();
  late.latency_step_ms = 100.0;  // peaks run past the range
  CHECK_THROWS_AS(plant_hierarchy(late), InfeasibleSpec);

  PlantSpec thin = small_spec();
  thin.n_channels = 2;
  CHECK_THROWS_AS(plant_hierarchy(thin), InfeasibleSpec);

  PlantSpec off = small_spec();
  off.onset_ms = -100.0;
  CHECK_THROWS_AS(plant_hierarchy(off), InfeasibleSpec);
}

TEST_CASE("noise images stay in [0,1] with mean near one half") {
  const auto images = generate_noise_images(2, 256, 3, 10, 80.0, 31);
  REQUIRE(images.size() == 2);
  for (const auto& img : images) {
    CHECK(img.height == 256);
    CHECK(img.channels == 3);
    double mean = 0.0;
    for (double v : img.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      mean += v;
    }
    mean /= static_cast<double>(img.data.size());
    CHECK(mean == doctest::Approx(0.5).epsilon(0.02));
  }
}

TEST_CASE("noise image smoothing reduces neighbor differences") {
  const auto smooth = generate_noise_images(1, 64, 1, 10, 80.0, 32)[0];
  const auto raw = generate_noise_images(1, 64, 1, 1, 80.0, 32)[0];
  auto neighbor_rms = [](const Image& img) {
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x + 1 < img.width; ++x) {
        const double d = img.at(y, x + 1, 0) - img.at(y, x, 0);
        acc += d * d;
        ++count;
      }
    return std::sqrt(acc / static_cast<double>(count));
  };
  CHECK(neighbor_rms(smooth) < 0.25 * neighbor_rms(raw));
}

TEST_CASE("vanishing sigma reduces the filter to an impulse") {
  const auto filtered = generate_noise_images(1, 32, 1, 9, 1e-6, 33)[0];
  const auto identity = generate_noise_images(1, 32, 1, 1, 1.0, 33)[0];
  CHECK(filtered.data == identity.data);
}

TEST_CASE("noise image generation rejects oversized filters") {
  CHECK_THROWS_AS(generate_noise_images(1, 8, 1, 9, 80.0, 0), ConfigInvalid);
}

TEST_CASE("plant_searchlight_signal couples only the designated pair inside the region") {
  const CorticalMesh mesh = make_grid_mesh(6, 6, 2.0);
  FeatureMap fmap;
  fmap.feature_of_vertex.resize(36);
  for (int v = 0; v < 36; ++v) fmap.feature_of_vertex[static_cast<std::size_t>(v)] = v;
  std::vector<int> region{14, 15, 20, 21};

  const auto strong =
      plant_searchlight_signal(mesh, fmap, region, {1, 3}, 1e6, 2, 8, 21);
  REQUIRE(strong.size() == 2);
  for (const auto& p : strong) {
    for (int f : region) CHECK(std::abs(p.values(1, f) - p.values(3, f)) < 0.01);
    // Outside the region the pair stays independent (different draws).
    CHECK(p.values(1, 0) != p.values(3, 0));
  }

  const auto none = plant_searchlight_signal(mesh, fmap, region, {1, 3}, 0.0, 1, 8, 22);
  const auto& p0 = none[0];
  for (int f : region) CHECK(p0.values(1, f) != p0.values(3, f));

  CHECK_THROWS_AS(plant_searchlight_signal(mesh, fmap, {}, {1, 3}, 1.0, 1, 8, 0), EmptyRegion);
  CHECK_THROWS_AS(plant_searchlight_signal(mesh, fmap, region, {1, 1}, 1.0, 1, 8, 0),
                  ConfigInvalid);
}

TEST_CASE("uniform region elevates similarity everywhere without local structure") {
  const CorticalMesh mesh = make_grid_mesh(4, 4, 2.0);
  FeatureMap fmap;
  fmap.feature_of_vertex.resize(16);
  for (int v = 0; v < 16; ++v) fmap.feature_of_vertex[static_cast<std::size_t>(v)] = v;
  std::vector<int> all_vertices(16);
  for (int v = 0; v < 16; ++v) all_vertices[static_cast<std::size_t>(v)] = v;
  const auto subjects =
      plant_searchlight_signal(mesh, fmap, all_vertices, {0, 2}, 1e6, 1, 6, 23);
  for (int f = 0; f < 16; ++f)
    CHECK(std::abs(subjects[0].values(0, f) - subjects[0].values(2, f)) < 0.01);
}
