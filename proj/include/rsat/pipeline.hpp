#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "rsat/decoding.hpp"
#include "rsat/errors.hpp"
#include "rsat/geometry.hpp"
#include "rsat/io.hpp"
#include "rsat/provider.hpp"
#include "rsat/rdm.hpp"
#include "rsat/rfmap.hpp"
#include "rsat/stats.hpp"
#include "rsat/summarize.hpp"
#include "rsat/synth.hpp"

namespace rsat::pipeline {

struct Context {
  std::filesystem::path out_dir = ".";
  std::uint64_t seed = 0;  // default when a step carries no seed of its own
  int threads = 1;
  std::string config_hash = "0000000000000000";
};

namespace detail {

inline std::filesystem::path resolve(const Context& ctx, const std::string& path) {
  const std::filesystem::path p(path);
  return p.is_absolute() ? p : ctx.out_dir / p;
}

inline std::string need_string(const json& step, const std::string& key) {
  if (!step.contains(key) || !step[key].is_string())
    throw ConfigInvalid("step '" + step.value("run", "?") + "': missing string field '" + key + "'");
  return step[key].get<std::string>();
}

inline std::vector<std::string> need_string_list(const json& step, const std::string& key) {
  if (!step.contains(key) || !step[key].is_array() || step[key].empty())
    throw ConfigInvalid("step '" + step.value("run", "?") + "': missing list field '" + key + "'");
  std::vector<std::string> out;
  for (const auto& v : step[key]) {
    if (!v.is_string())
      throw ConfigInvalid("step '" + step.value("run", "?") + "': '" + key + "' must hold strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

template <typename T>
T value_or(const json& step, const std::string& key, T fallback) {
  if (!step.contains(key)) return fallback;
  try {
    return step[key].get<T>();
  } catch (const json::exception&) {
    throw ConfigInvalid("step '" + step.value("run", "?") + "': bad value for '" + key + "'");
  }
}

inline std::uint64_t step_seed(const json& step, const Context& ctx) {
  return value_or<std::uint64_t>(step, "seed", ctx.seed);
}

inline json base_metadata(const Context& ctx, std::uint64_t seed) {
  json meta;
  meta["engine_version"] = kEngineVersion;
  meta["config_hash"] = ctx.config_hash;
  meta["seed"] = seed;
  return meta;
}

inline void merge_metadata(TensorData& t, const json& meta) {
  for (auto it = meta.begin(); it != meta.end(); ++it) t.metadata[it.key()] = it.value();
}

inline Tail tail_from(const json& step, const std::string& fallback) {
  const std::string name = value_or<std::string>(step, "tail", fallback);
  if (name == "right") return Tail::right;
  if (name == "two_sided") return Tail::two_sided;
  throw ConfigInvalid("unknown tail '" + name + "'");
}

inline std::string zero_pad(std::size_t value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*zu", width, value);
  return buf;
}

inline SubjectData load_subject_data(const json& step, const Context& ctx) {
  if (step.contains("data")) return subject_data_from_tensor(read_tensor(resolve(ctx, need_string(step, "data"))));
  const auto inputs = need_string_list(step, "inputs");
  std::vector<TensorData> tensors;
  for (const auto& path : inputs) tensors.push_back(read_tensor(resolve(ctx, path)));
  SubjectData d;
  for (std::size_t s = 0; s < tensors.size(); ++s) {
    const auto& t = tensors[s];
    if (t.shape.size() != 1)
      throw ConfigInvalid("stacked inputs must be 1-D tensors: '" + inputs[s] + "'");
    if (t.shape[0] != tensors.front().shape[0])
      throw ShapeMismatch("stacked inputs disagree on length: '" + inputs[s] + "'");
    if (s == 0)
      d.values.resize(static_cast<Eigen::Index>(tensors.size()),
                      static_cast<Eigen::Index>(t.shape[0]));
    for (std::size_t i = 0; i < t.shape[0]; ++i)
      d.values(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) = t.data[i];
  }
  d.validate();
  return d;
}

/// Point coordinates for stats outputs: taken from the 2-D input's second dim
/// when present.
inline std::pair<std::string, std::vector<double>> point_axis(const json& step, const Context& ctx) {
  if (step.contains("data")) {
    const TensorData t = read_tensor(resolve(ctx, need_string(step, "data")));
    if (t.shape.size() == 2) {
      const std::string dim = t.dim_names[1];
      if (auto it = t.coords.find(dim); it != t.coords.end()) return {dim, it->second};
      return {dim, {}};
    }
  }
  return {"point", {}};
}

inline std::unique_ptr<ProcessProvider> make_process_provider(const json& step,
                                                              const Context& ctx) {
  const std::string command = need_string(step, "provider_cmd");
  return std::make_unique<ProcessProvider>(command, ctx.out_dir / ".provider_scratch");
}

inline RfConfig rf_config(const json& step) {
  RfConfig cfg;
  cfg.top_k = value_or<int>(step, "k", cfg.top_k);
  cfg.occluder_size_px = value_or<int>(step, "occluder_size_px", cfg.occluder_size_px);
  cfg.stride_px = value_or<int>(step, "stride_px", cfg.stride_px);
  cfg.occluder_fill = value_or<double>(step, "occluder_fill", cfg.occluder_fill);
  cfg.sum_accumulation = value_or<bool>(step, "sum_accumulation", cfg.sum_accumulation);
  return cfg;
}

inline json cluster_report_json(const StatReport& report) {
  json doc;
  doc["n_permutations"] = report.n_permutations;
  doc["seed"] = report.seed;
  doc["definition_p"] = report.definition_p;
  doc["cluster_p"] = report.cluster_p;
  doc["tail"] = report.tail;
  doc["adjacency"] = report.adjacency;
  doc["clusters"] = json::array();
  for (const auto& c : report.clusters) {
    json jc;
    jc["id"] = c.id;
    jc["size"] = c.size;
    jc["mass"] = c.mass;
    jc["p"] = c.p;
    jc["significant"] = c.significant;
    jc["members"] = c.members;
    doc["clusters"].push_back(jc);
  }
  return doc;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Step handlers. Each CLI subcommand builds the same JSON step object, so the
// pipeline runner and the CLI share one execution path.
// ---------------------------------------------------------------------------

inline void run_synth_hierarchy(const json& step, const Context& ctx) {
  using namespace detail;
  PlantSpec spec;
  spec.n_conditions = value_or<std::size_t>(step, "conditions", spec.n_conditions);
  spec.n_subjects = value_or<std::size_t>(step, "subjects", spec.n_subjects);
  spec.n_channels = value_or<std::size_t>(step, "channels", spec.n_channels);
  spec.n_timepoints = value_or<std::size_t>(step, "timepoints", spec.n_timepoints);
  spec.n_layers = value_or<std::size_t>(step, "layers", spec.n_layers);
  spec.m_trials = value_or<std::size_t>(step, "trials", spec.m_trials);
  spec.n_layer_features = value_or<std::size_t>(step, "layer_features", spec.n_layer_features);
  spec.time_start_ms = value_or<double>(step, "time_start_ms", spec.time_start_ms);
  spec.time_step_ms = value_or<double>(step, "time_step_ms", spec.time_step_ms);
  spec.onset_ms = value_or<double>(step, "onset_ms", spec.onset_ms);
  spec.latency_step_ms = value_or<double>(step, "latency_step_ms", spec.latency_step_ms);
  spec.snr = value_or<double>(step, "snr", spec.snr);
  spec.seed = step_seed(step, ctx);
  const std::string prefix = value_or<std::string>(step, "out_prefix", "synth");

  const PlantHierarchyResult result = plant_hierarchy(spec, ctx.threads);
  const json meta = base_metadata(ctx, spec.seed);
  json manifest;
  manifest["metadata"] = meta;
  manifest["planted_latencies_ms"] = result.planted_latencies_ms;
  manifest["subject_files"] = json::array();
  manifest["layer_files"] = json::array();
  manifest["target_files"] = json::array();

  for (std::size_t s = 0; s < result.subject_trials.size(); ++s) {
    const std::string rel = prefix + "/subject_" + zero_pad(s, 2) + ".trials.rsat";
    TensorData t = tensor_from_trials(result.subject_trials[s]);
    merge_metadata(t, meta);
    write_tensor(resolve(ctx, rel), t);
    manifest["subject_files"].push_back(rel);
  }
  for (std::size_t g = 0; g < result.layers.layers.size(); ++g) {
    const std::string rel = prefix + "/layer_" + std::to_string(g + 1) + ".patterns.rsat";
    TensorData t = tensor_from_pattern(result.layers.layers[g]);
    merge_metadata(t, meta);
    write_tensor(resolve(ctx, rel), t);
    manifest["layer_files"].push_back(rel);

    const std::string trel = prefix + "/target_" + std::to_string(g + 1) + ".rdm.rsat";
    TensorData tt = tensor_from_rdm(result.target_rdms[g]);
    merge_metadata(tt, meta);
    write_tensor(resolve(ctx, trel), tt);
    manifest["target_files"].push_back(trel);
  }
  json spec_echo;
  spec_echo["conditions"] = spec.n_conditions;
  spec_echo["subjects"] = spec.n_subjects;
  spec_echo["channels"] = spec.n_channels;
  spec_echo["timepoints"] = spec.n_timepoints;
  spec_echo["layers"] = spec.n_layers;
  spec_echo["trials"] = spec.m_trials;
  spec_echo["layer_features"] = spec.n_layer_features;
  spec_echo["time_start_ms"] = spec.time_start_ms;
  spec_echo["time_step_ms"] = spec.time_step_ms;
  spec_echo["onset_ms"] = spec.onset_ms;
  spec_echo["latency_step_ms"] = spec.latency_step_ms;
  spec_echo["snr"] = spec.snr;
  manifest["spec"] = spec_echo;
  write_json(resolve(ctx, prefix + "/manifest.json"), manifest);
}

inline void run_synth_noise(const json& step, const Context& ctx) {
  using namespace detail;
  const auto n = value_or<std::size_t>(step, "n", 4);
  const auto size = value_or<std::size_t>(step, "size", 256);
  const auto channels = value_or<std::size_t>(step, "channels", 3);
  const auto filter_size = value_or<std::size_t>(step, "filter_size", 10);
  const auto sigma = value_or<double>(step, "sigma", 80.0);
  const auto seed = step_seed(step, ctx);
  const std::string prefix = value_or<std::string>(step, "out_prefix", "noise");

  const auto images = generate_noise_images(n, size, channels, filter_size, sigma, seed,
                                            ctx.threads);
  const json meta = base_metadata(ctx, seed);
  json manifest;
  manifest["metadata"] = meta;
  manifest["files"] = json::array();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string rel = prefix + "/noise_" + zero_pad(i, 3) + ".rsat";
    TensorData t = tensor_from_image(images[i]);
    merge_metadata(t, meta);
    write_tensor(resolve(ctx, rel), t);
    manifest["files"].push_back(rel);
  }
  manifest["params"] = {{"n", n},           {"size", size},   {"channels", channels},
                        {"filter_size", filter_size}, {"sigma", sigma}};
  write_json(resolve(ctx, prefix + "/manifest.json"), manifest);
}

inline void run_synth_searchlight(const json& step, const Context& ctx) {
  using namespace detail;
  const int rows = value_or<int>(step, "grid_rows", 16);
  const int cols = value_or<int>(step, "grid_cols", 16);
  const double spacing = value_or<double>(step, "spacing_mm", 3.0);
  const int region_center = value_or<int>(step, "region_center", rows / 2 * cols + cols / 2);
  const double region_radius = value_or<double>(step, "region_radius_mm", 3.0 * spacing);
  const auto conditions = value_or<std::size_t>(step, "conditions", 12);
  const auto subjects = value_or<std::size_t>(step, "subjects", 10);
  const double effect = value_or<double>(step, "effect", 10.0);
  const auto seed = step_seed(step, ctx);
  const std::string prefix = value_or<std::string>(step, "out_prefix", "slsynth");
  std::pair<int, int> pair{0, 1};
  if (step.contains("pair")) {
    const auto arr = step["pair"];
    if (!arr.is_array() || arr.size() != 2) throw ConfigInvalid("'pair' must be [i, j]");
    pair = {arr[0].get<int>(), arr[1].get<int>()};
  }

  const CorticalMesh mesh = make_grid_mesh(rows, cols, spacing);
  FeatureMap fmap;
  fmap.feature_of_vertex.resize(mesh.vertex_count());
  for (std::size_t v = 0; v < mesh.vertex_count(); ++v)
    fmap.feature_of_vertex[v] = static_cast<int>(v);
  std::vector<int> region;
  for (const auto& [v, d] : geodesic_distances(mesh, region_center, region_radius))
    if (d < region_radius) region.push_back(v);

  const auto patterns =
      plant_searchlight_signal(mesh, fmap, region, pair, effect, subjects, conditions, seed);

  const json meta = base_metadata(ctx, seed);
  write_off(resolve(ctx, prefix + "/mesh.off"), mesh);
  std::vector<std::pair<int, int>> rows_csv;
  for (std::size_t v = 0; v < mesh.vertex_count(); ++v)
    rows_csv.emplace_back(static_cast<int>(v), fmap.feature_of_vertex[v]);
  write_mapping_csv(resolve(ctx, prefix + "/fmap.csv"), rows_csv);

  json manifest;
  manifest["metadata"] = meta;
  manifest["mesh"] = prefix + "/mesh.off";
  manifest["fmap"] = prefix + "/fmap.csv";
  manifest["region_vertices"] = region;
  manifest["pair"] = {pair.first, pair.second};
  manifest["effect"] = effect;
  manifest["subject_files"] = json::array();
  for (std::size_t s = 0; s < patterns.size(); ++s) {
    const std::string rel = prefix + "/subject_" + zero_pad(s, 2) + ".patterns.rsat";
    TensorData t = tensor_from_pattern(patterns[s]);
    merge_metadata(t, meta);
    write_tensor(resolve(ctx, rel), t);
    manifest["subject_files"].push_back(rel);
  }

  // Model RDM for the comparison stage: the planted pair fully similar,
  // everything else fully dissimilar.
  RDM model;
  model.conditions = make_indexed_conditions(conditions);
  model.kind = RdmKind::correlation_distance;
  model.values = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(conditions),
                                       static_cast<Eigen::Index>(conditions));
  model.values.diagonal().setZero();
  model.values(pair.first, pair.second) = 0.0;
  model.values(pair.second, pair.first) = 0.0;
  TensorData mt = tensor_from_rdm(model);
  merge_metadata(mt, meta);
  write_tensor(resolve(ctx, prefix + "/model.rdm.rsat"), mt);
  manifest["model"] = prefix + "/model.rdm.rsat";
  write_json(resolve(ctx, prefix + "/manifest.json"), manifest);
}

inline void run_rdm(const json& step, const Context& ctx) {
  using namespace detail;
  std::vector<std::string> inputs;
  if (step.contains("patterns") && step["patterns"].is_array())
    inputs = need_string_list(step, "patterns");
  else
    inputs.push_back(need_string(step, "patterns"));
  const std::string out = need_string(step, "out");

  std::vector<PatternMatrix> patterns;
  for (const auto& path : inputs)
    patterns.push_back(pattern_from_tensor(read_tensor(resolve(ctx, path))));

  if (step.contains("select_top")) {
    const auto& sel = step["select_top"];
    const auto n = sel.at("n").get<std::size_t>();
    const TensorData scores_t = read_tensor(resolve(ctx, sel.at("scores").get<std::string>()));
    for (auto& p : patterns) {
      if (scores_t.data.size() != p.features())
        throw ShapeMismatch("select_top scores length does not match features");
      std::vector<int> mask(p.features());
      for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = static_cast<int>(i);
      const auto chosen = select_top_features(scores_t.data, mask, n);
      Eigen::MatrixXd sub(p.values.rows(), static_cast<Eigen::Index>(chosen.size()));
      for (std::size_t c = 0; c < chosen.size(); ++c)
        sub.col(static_cast<Eigen::Index>(c)) = p.values.col(chosen[c]);
      p.values = std::move(sub);
    }
  }

  const json meta = base_metadata(ctx, ctx.seed);
  if (patterns.size() == 1) {
    TensorData t = tensor_from_rdm(rdm_from_patterns(patterns[0], ctx.threads));
    merge_metadata(t, meta);
    write_tensor(resolve(ctx, out), t);
  } else {
    RDMSeries series;
    series.axis = SeriesAxis::layer;
    for (std::size_t i = 0; i < patterns.size(); ++i) {
      series.coordinates.push_back(static_cast<double>(i + 1));
      series.rdms.push_back(rdm_from_patterns(patterns[i], ctx.threads));
    }
    TensorData t = tensor_from_series(series);
    merge_metadata(t, meta);
    write_tensor(resolve(ctx, out), t);
  }
}

inline void run_decode(const json& step, const Context& ctx) {
  using namespace detail;
  const TrialTensor trials = trials_from_tensor(read_tensor(resolve(ctx, need_string(step, "trials"))));
  DecodingConfig cfg;
  cfg.k = value_or<std::size_t>(step, "k", cfg.k);
  cfg.repetitions = value_or<std::size_t>(step, "repetitions", cfg.repetitions);
  cfg.cost = value_or<double>(step, "cost", cfg.cost);
  cfg.single_fold = value_or<bool>(step, "single_fold", cfg.single_fold);
  cfg.seed = step_seed(step, ctx);
  const RDMSeries series = trials_to_rdm_series(trials, cfg, ctx.threads);
  TensorData t = tensor_from_series(series);
  json meta = base_metadata(ctx, cfg.seed);
  meta["k"] = cfg.k;
  meta["repetitions"] = cfg.repetitions;
  meta["cost"] = cfg.cost;
  meta["single_fold"] = cfg.single_fold;
  merge_metadata(t, meta);
  write_tensor(resolve(ctx, need_string(step, "out")), t);
}

inline void run_searchlight(const json& step, const Context& ctx) {
  using namespace detail;
  const CorticalMesh mesh = read_off(resolve(ctx, need_string(step, "mesh")));
  const FeatureMap fmap = feature_map_from_rows(
      read_mapping_csv(resolve(ctx, need_string(step, "fmap"))), mesh.vertex_count());
  const PatternMatrix patterns =
      pattern_from_tensor(read_tensor(resolve(ctx, need_string(step, "patterns"))));
  const double radius = value_or<double>(step, "radius_mm", 9.0);
  const std::string out = need_string(step, "out");

  const SearchlightIndex idx = build_searchlights(mesh, fmap, radius, ctx.threads);
  const SearchlightMap map = searchlight_rdm_map(patterns, idx, ctx.threads);

  json meta = base_metadata(ctx, ctx.seed);
  meta["radius_mm"] = radius;
  json skipped = json::array();
  for (const auto& s : map.skipped) skipped.push_back({{"vertex", s.vertex}, {"reason", s.reason}});
  meta["skipped_vertices"] = skipped;

  if (step.contains("model")) {
    const RDM model = rdm_from_tensor(read_tensor(resolve(ctx, need_string(step, "model"))));
    std::vector<int> vertices;
    std::vector<double> rho;
    std::size_t undefined = 0;
    for (std::size_t i = 0; i < map.series.size(); ++i) {
      vertices.push_back(static_cast<int>(map.series.coordinates[i]));
      try {
        rho.push_back(compare_rdms(map.series.rdms[i], model));
      } catch (const DegenerateInput&) {
        ++undefined;
        rho.push_back(std::numeric_limits<double>::quiet_NaN());
      }
    }
    meta["undefined_comparisons"] = undefined;
    const auto overlay = surface_overlay(vertices, rho, mesh.vertex_count());
    TensorData t = tensor_from_vector(overlay, "vertex");
    meta["comparison"] = "spearman_lower_triangle";
    meta["rho_transform"] = "raw";
    merge_metadata(t, meta);
    write_tensor(resolve(ctx, out), t);
  } else {
    TensorData t = tensor_from_series(map.series);
    merge_metadata(t, meta);
    write_tensor(resolve(ctx, out), t);
  }
}

inline void run_compare(const json& step, const Context& ctx) {
  using namespace detail;
  const TensorData ta = read_tensor(resolve(ctx, need_string(step, "a")));
  const TensorData tb = read_tensor(resolve(ctx, need_string(step, "b")));
  const std::string out = need_string(step, "out");

  auto as_series = [](const TensorData& t) {
    RDMSeries s;
    if (t.shape.size() == 3) {
      s = series_from_tensor(t);
    } else {
      s.axis = SeriesAxis::layer;
      s.coordinates = {1.0};
      s.rdms = {rdm_from_tensor(t)};
    }
    return std::make_pair(s, t.shape.size() == 3);
  };
  const auto [sa, a_is_series] = as_series(ta);
  const auto [sb, b_is_series] = as_series(tb);

  // Saturated RDMs (e.g. every pair at 100% accuracy) make Spearman
  // undefined for that element; such cells become NaN sentinels and are
  // counted in the metadata instead of aborting the whole comparison.
  std::atomic<std::size_t> undefined{0};
  auto safe_compare = [&](const RDM& x, const RDM& y) {
    try {
      return compare_rdms(x, y);
    } catch (const DegenerateInput&) {
      ++undefined;
      return std::numeric_limits<double>::quiet_NaN();
    }
  };

  TensorData t;
  json meta = base_metadata(ctx, ctx.seed);
  meta["comparison"] = "spearman_lower_triangle";
  meta["rho_transform"] = "raw";
  if (a_is_series && b_is_series) {
    t.shape = {sa.size(), sb.size()};
    t.dim_names = {ta.dim_names[0], tb.dim_names[0] == ta.dim_names[0]
                                        ? tb.dim_names[0] + "_b"
                                        : tb.dim_names[0]};
    t.coords[t.dim_names[0]] = sa.coordinates;
    t.coords[t.dim_names[1]] = sb.coordinates;
    t.data.resize(sa.size() * sb.size());
    parallel_for(sa.size(), ctx.threads, [&](std::size_t i) {
      for (std::size_t j = 0; j < sb.size(); ++j)
        t.data[i * sb.size() + j] = safe_compare(sa.rdms[i], sb.rdms[j]);
    });
  } else if (a_is_series != b_is_series) {
    const RDMSeries& series = a_is_series ? sa : sb;
    const RDM& single = a_is_series ? sb.rdms[0] : sa.rdms[0];
    const TensorData& series_tensor = a_is_series ? ta : tb;
    t.shape = {series.size()};
    t.dim_names = {series_tensor.dim_names[0]};
    t.coords[t.dim_names[0]] = series.coordinates;
    t.data.resize(series.size());
    parallel_for(series.size(), ctx.threads,
                 [&](std::size_t i) { t.data[i] = safe_compare(series.rdms[i], single); });
  } else {
    t.shape = {1};
    t.dim_names = {"value"};
    t.data = {compare_rdms(sa.rdms[0], sb.rdms[0])};
    std::printf("rho = %.17g\n", t.data[0]);
  }
  meta["undefined_comparisons"] = undefined.load();
  merge_metadata(t, meta);
  write_tensor(resolve(ctx, out), t);
}

inline void run_summary(const json& step, const Context& ctx) {
  using namespace detail;
  std::vector<std::string> layer_files;
  if (step.contains("manifest")) {
    const json manifest = read_json(resolve(ctx, need_string(step, "manifest")));
    if (!manifest.contains("layers") || !manifest["layers"].is_array())
      throw ConfigInvalid("summary manifest needs a 'layers' list");
    for (const auto& f : manifest["layers"]) layer_files.push_back(f.get<std::string>());
  } else {
    layer_files = need_string_list(step, "layers");
  }
  LayerStack stack;
  for (const auto& f : layer_files)
    stack.layers.push_back(pattern_from_tensor(read_tensor(resolve(ctx, f))));
  stack.validate();

  std::size_t max_dims = stack.layers.front().conditions.count() - 1;
  for (const auto& l : stack.layers) max_dims = std::min(max_dims, l.features());
  const auto dims = value_or<std::size_t>(step, "dims", max_dims);
  const bool normalize = value_or<bool>(step, "normalize_layer_variance", false);

  const RDM rdm = summary_rdm(stack, dims, normalize, ctx.threads);
  TensorData t = tensor_from_rdm(rdm);
  json meta = base_metadata(ctx, ctx.seed);
  meta["dims_per_layer"] = dims;
  meta["layers"] = layer_files.size();
  meta["normalize_layer_variance"] = normalize;
  meta["pca_preprocessing"] = "centering_only";
  merge_metadata(t, meta);
  write_tensor(resolve(ctx, need_string(step, "out")), t);
}

inline void run_stack(const json& step, const Context& ctx) {
  using namespace detail;
  const auto inputs = need_string_list(step, "inputs");
  std::vector<TensorData> tensors;
  for (const auto& path : inputs) tensors.push_back(read_tensor(resolve(ctx, path)));
  for (const auto& t : tensors) {
    if (t.shape.size() != 1) throw ConfigInvalid("stack: inputs must be 1-D tensors");
    if (t.shape[0] != tensors.front().shape[0])
      throw ShapeMismatch("stack: inputs disagree on length");
  }
  TensorData out;
  out.shape = {tensors.size(), tensors.front().shape[0]};
  const std::string dim = tensors.front().dim_names[0];
  out.dim_names = {"subject", dim};
  if (auto it = tensors.front().coords.find(dim); it != tensors.front().coords.end())
    out.coords[dim] = it->second;
  out.data.reserve(out.element_count());
  for (const auto& t : tensors) out.data.insert(out.data.end(), t.data.begin(), t.data.end());
  merge_metadata(out, base_metadata(ctx, ctx.seed));
  write_tensor(resolve(ctx, need_string(step, "out")), out);
}

inline void run_stats_sign(const json& step, const Context& ctx) {
  using namespace detail;
  const SubjectData d = load_subject_data(step, ctx);
  const int n_perm = value_or<int>(step, "n_perm", 10000);
  const auto seed = step_seed(step, ctx);
  const Tail tail = tail_from(step, "right");
  const auto p = sign_permutation_test(d, n_perm, seed, tail, ctx.threads);
  const auto [dim, coords] = point_axis(step, ctx);

  const std::string prefix = need_string(step, "out_prefix");
  const json meta = base_metadata(ctx, seed);
  TensorData pt = tensor_from_vector(p, dim, coords);
  merge_metadata(pt, meta);
  write_tensor(resolve(ctx, prefix + ".p.rsat"), pt);

  std::vector<double> means(d.points());
  for (std::size_t i = 0; i < means.size(); ++i)
    means[i] = d.values.col(static_cast<Eigen::Index>(i)).mean();
  TensorData mt = tensor_from_vector(means, dim, coords);
  merge_metadata(mt, meta);
  write_tensor(resolve(ctx, prefix + ".mean.rsat"), mt);

  json report;
  report["metadata"] = meta;
  report["n_permutations"] = n_perm;
  report["tail"] = tail == Tail::right ? "right" : "two_sided";
  report["subjects"] = d.subjects();
  report["points"] = d.points();
  report["min_p"] = *std::min_element(p.begin(), p.end());
  write_json(resolve(ctx, prefix + ".report.json"), report);
}

inline void run_stats_cluster(const json& step, const Context& ctx) {
  using namespace detail;
  const SubjectData d = load_subject_data(step, ctx);
  ClusterSpec spec;
  spec.definition_p = value_or<double>(step, "definition_p", spec.definition_p);
  spec.cluster_p = value_or<double>(step, "cluster_p", spec.cluster_p);
  spec.tail = tail_from(step, "right");
  spec.mass_statistic = value_or<bool>(step, "mass", false);
  const int n_perm = value_or<int>(step, "n_perm", 10000);
  const auto seed = step_seed(step, ctx);

  std::vector<std::vector<int>> adjacency;
  const std::vector<std::vector<int>>* adjacency_ptr = nullptr;
  if (step.contains("mesh")) {
    spec.adjacency = AdjacencyKind::mesh_edges;
    const CorticalMesh mesh = read_off(resolve(ctx, need_string(step, "mesh")));
    adjacency.resize(mesh.vertex_count());
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v)
      for (const auto& [nb, len] : mesh.adjacency[v]) adjacency[v].push_back(nb);
    adjacency_ptr = &adjacency;
  }

  const StatReport report = cluster_inference(d, spec, n_perm, seed, adjacency_ptr, ctx.threads);
  const auto [dim, coords] = point_axis(step, ctx);
  const std::string prefix = need_string(step, "out_prefix");
  const json meta = base_metadata(ctx, seed);

  TensorData pt = tensor_from_vector(report.pointwise_p, dim, coords);
  merge_metadata(pt, meta);
  write_tensor(resolve(ctx, prefix + ".p.rsat"), pt);
  TensorData et = tensor_from_vector(report.point_estimates, dim, coords);
  merge_metadata(et, meta);
  write_tensor(resolve(ctx, prefix + ".mean.rsat"), et);
  std::vector<double> labels(report.cluster_labels.begin(), report.cluster_labels.end());
  TensorData lt = tensor_from_vector(labels, dim, coords);
  merge_metadata(lt, meta);
  write_tensor(resolve(ctx, prefix + ".clusters.rsat"), lt);
  std::vector<double> sig(report.significant_mask.begin(), report.significant_mask.end());
  TensorData st = tensor_from_vector(sig, dim, coords);
  merge_metadata(st, meta);
  write_tensor(resolve(ctx, prefix + ".sig.rsat"), st);

  json doc = cluster_report_json(report);
  doc["metadata"] = meta;
  write_json(resolve(ctx, prefix + ".report.json"), doc);
}

inline void run_stats_fdr(const json& step, const Context& ctx) {
  using namespace detail;
  const TensorData pt = read_tensor(resolve(ctx, need_string(step, "p")));
  if (pt.shape.size() != 1) throw ConfigInvalid("stats-fdr: 'p' must be a 1-D tensor");
  const double q = value_or<double>(step, "q", 0.05);
  const auto mask = fdr_correct(pt.data, q);
  std::vector<double> mask_values(mask.begin(), mask.end());
  TensorData out = tensor_from_vector(mask_values, pt.dim_names[0]);
  if (auto it = pt.coords.find(pt.dim_names[0]); it != pt.coords.end())
    out.coords[pt.dim_names[0]] = it->second;
  json meta = base_metadata(ctx, ctx.seed);
  meta["q"] = q;
  meta["rejections"] = static_cast<int>(std::count(mask.begin(), mask.end(), 1));
  merge_metadata(out, meta);
  write_tensor(resolve(ctx, need_string(step, "out")), out);
}

inline void run_stats_bootstrap(const json& step, const Context& ctx) {
  using namespace detail;
  const SubjectData d = load_subject_data(step, ctx);
  const int n_boot = value_or<int>(step, "n_boot", 1000);
  const auto seed = step_seed(step, ctx);
  const auto se = bootstrap_se(d, mean_statistic, n_boot, seed, ctx.threads);
  const auto [dim, coords] = point_axis(step, ctx);
  TensorData out = tensor_from_vector(se, dim, coords);
  json meta = base_metadata(ctx, seed);
  meta["n_boot"] = n_boot;
  meta["statistic"] = "mean";
  merge_metadata(out, meta);
  write_tensor(resolve(ctx, need_string(step, "out")), out);
}

inline void run_stats_hierarchy(const json& step, const Context& ctx) {
  using namespace detail;
  const auto inputs = need_string_list(step, "inputs");
  const int n_perm = value_or<int>(step, "n_perm", 10000);
  const auto seed = step_seed(step, ctx);

  std::vector<TensorData> tensors;
  for (const auto& path : inputs) tensors.push_back(read_tensor(resolve(ctx, path)));
  const auto& first = tensors.front();
  if (first.shape.size() != 2)
    throw ConfigInvalid("stats-hierarchy: inputs must be [time x layer] tensors");
  const std::size_t n_time = first.shape[0];
  const std::size_t n_layers = first.shape[1];
  std::vector<double> time_coords;
  if (auto it = first.coords.find(first.dim_names[0]); it != first.coords.end())
    time_coords = it->second;
  else {
    time_coords.resize(n_time);
    for (std::size_t i = 0; i < n_time; ++i) time_coords[i] = static_cast<double>(i);
  }
  double window_lo = time_coords.front(), window_hi = time_coords.back();
  if (step.contains("window")) {
    const auto& w = step["window"];
    if (!w.is_array() || w.size() != 2) throw ConfigInvalid("'window' must be [t0, t1]");
    window_lo = w[0].get<double>();
    window_hi = w[1].get<double>();
  }

  Eigen::MatrixXd latencies(static_cast<Eigen::Index>(tensors.size()),
                            static_cast<Eigen::Index>(n_layers));
  Eigen::MatrixXd mean_courses = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_time),
                                                       static_cast<Eigen::Index>(n_layers));
  for (std::size_t s = 0; s < tensors.size(); ++s) {
    const auto& t = tensors[s];
    if (t.shape != first.shape)
      throw ShapeMismatch("stats-hierarchy: input shapes differ: '" + inputs[s] + "'");
    for (std::size_t l = 0; l < n_layers; ++l) {
      std::vector<double> course(n_time);
      for (std::size_t i = 0; i < n_time; ++i) course[i] = t.data[i * n_layers + l];
      latencies(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(l)) =
          peak_latency(time_coords, course, window_lo, window_hi);
      for (std::size_t i = 0; i < n_time; ++i)
        mean_courses(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) +=
            course[i] / static_cast<double>(tensors.size());
    }
  }

  const HierarchyResult result = hierarchy_correlation(latencies, n_perm, seed);
  std::vector<double> mean_course_peaks(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    std::vector<double> course(n_time);
    for (std::size_t i = 0; i < n_time; ++i)
      course[i] = mean_courses(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l));
    mean_course_peaks[l] = peak_latency(time_coords, course, window_lo, window_hi);
  }

  const std::string prefix = need_string(step, "out_prefix");
  const json meta = base_metadata(ctx, seed);
  TensorData lt = tensor_from_subject_data(SubjectData{latencies}, "layer", {});
  merge_metadata(lt, meta);
  write_tensor(resolve(ctx, prefix + ".latencies.rsat"), lt);

  json report;
  report["metadata"] = meta;
  report["pooled_rho"] = result.rho;
  report["p"] = result.p;
  report["per_subject_rho"] = result.per_subject_rho;
  report["mean_course_peaks_ms"] = mean_course_peaks;
  report["window_ms"] = {window_lo, window_hi};
  report["n_permutations"] = n_perm;
  json lat = json::array();
  for (Eigen::Index s = 0; s < latencies.rows(); ++s) {
    json row = json::array();
    for (Eigen::Index l = 0; l < latencies.cols(); ++l) row.push_back(latencies(s, l));
    lat.push_back(row);
  }
  report["per_subject_latencies_ms"] = lat;
  write_json(resolve(ctx, prefix + ".report.json"), report);
}

inline void run_stats_deltarho(const json& step, const Context& ctx) {
  using namespace detail;
  const TensorData ta = read_tensor(resolve(ctx, need_string(step, "a")));
  const TensorData tb = read_tensor(resolve(ctx, need_string(step, "b")));
  if (ta.shape.size() != 1 || tb.shape.size() != 1)
    throw ConfigInvalid("stats-deltarho: inputs must be 1-D per-subject tensors");
  const int n_perm = value_or<int>(step, "n_perm", 10000);
  const auto seed = step_seed(step, ctx);
  const Tail tail = tail_from(step, "two_sided");
  const DeltaRhoResult result = delta_rho_test(ta.data, tb.data, n_perm, seed, tail);
  json report;
  report["metadata"] = base_metadata(ctx, seed);
  report["delta_rho"] = result.delta;
  report["p"] = result.p;
  report["tail"] = tail == Tail::right ? "right" : "two_sided";
  report["n_permutations"] = n_perm;
  write_json(resolve(ctx, need_string(step, "out")), report);
}

inline void run_stats_diff(const json& step, const Context& ctx) {
  using namespace detail;
  const SubjectData a = subject_data_from_tensor(read_tensor(resolve(ctx, need_string(step, "a"))));
  const SubjectData b = subject_data_from_tensor(read_tensor(resolve(ctx, need_string(step, "b"))));
  const SubjectData diff = difference_time_course(a, b);
  const TensorData ta = read_tensor(resolve(ctx, need_string(step, "a")));
  std::vector<double> coords;
  if (auto it = ta.coords.find(ta.dim_names[1]); it != ta.coords.end()) coords = it->second;
  TensorData out = tensor_from_subject_data(diff, ta.dim_names[1], coords);
  merge_metadata(out, base_metadata(ctx, ctx.seed));
  write_tensor(resolve(ctx, need_string(step, "out")), out);
}

inline void run_rfmap_rf(const json& step, const Context& ctx) {
  using namespace detail;
  const RfConfig cfg = rf_config(step);
  const std::string out = need_string(step, "out");
  Map2D rf;
  json meta = base_metadata(ctx, ctx.seed);
  meta["occluder_size_px"] = cfg.occluder_size_px;
  meta["stride_px"] = cfg.stride_px;
  meta["occluder_fill"] = cfg.occluder_fill;
  meta["accumulation"] = cfg.sum_accumulation ? "sum" : "mean";
  meta["k"] = cfg.top_k;
  if (step.contains("table")) {
    const ActivationTable table =
        ActivationTable::from_tensor(read_tensor(resolve(ctx, need_string(step, "table"))));
    rf = average_rf_from_table(table, static_cast<std::size_t>(cfg.top_k), cfg.sum_accumulation);
    meta["provider"] = "table";
  } else {
    const auto files = need_string_list(step, "images");
    std::vector<Image> images;
    for (const auto& f : files) images.push_back(image_from_tensor(read_tensor(resolve(ctx, f))));
    auto provider = make_process_provider(step, ctx);
    const auto top = top_activating_images(*provider, images, static_cast<std::size_t>(cfg.top_k));
    std::vector<Image> chosen;
    for (std::size_t idx : top) chosen.push_back(images[idx]);
    rf = average_rf(*provider, chosen, cfg, ctx.threads);
    meta["provider"] = "process";
  }
  TensorData t = tensor_from_map2d(rf);
  merge_metadata(t, meta);
  write_tensor(resolve(ctx, out), t);
}

inline void run_rfmap_discrepancy(const json& step, const Context& ctx) {
  using namespace detail;
  const RfConfig cfg = rf_config(step);
  Map2D map;
  json meta = base_metadata(ctx, ctx.seed);
  if (step.contains("table")) {
    const ActivationTable table =
        ActivationTable::from_tensor(read_tensor(resolve(ctx, need_string(step, "table"))));
    const auto image_index = value_or<std::size_t>(step, "image_index", 0);
    if (image_index >= table.n_images)
      throw ConfigInvalid("rfmap-discrepancy: image_index out of range");
    map = accumulate_discrepancy(table.grid(image_index), table.height, table.width,
                                 cfg.sum_accumulation);
    meta["provider"] = "table";
  } else {
    const Image image = image_from_tensor(read_tensor(resolve(ctx, need_string(step, "image"))));
    auto provider = make_process_provider(step, ctx);
    map = discrepancy_map(*provider, image, cfg, ctx.threads);
    meta["provider"] = "process";
  }
  TensorData t = tensor_from_map2d(map);
  merge_metadata(t, meta);
  write_tensor(resolve(ctx, need_string(step, "out")), t);
}

inline void run_rfmap_fmap(const json& step, const Context& ctx) {
  using namespace detail;
  const Image image = image_from_tensor(read_tensor(resolve(ctx, need_string(step, "image"))));
  auto provider = make_process_provider(step, ctx);
  const Map2D fm = provider->feature_map(image);
  TensorData t = tensor_from_map2d(fm);
  merge_metadata(t, base_metadata(ctx, ctx.seed));
  write_tensor(resolve(ctx, need_string(step, "out")), t);
}

inline void run_rfmap_selectivity(const json& step, const Context& ctx) {
  using namespace detail;
  const Map2D rf = map2d_from_tensor(read_tensor(resolve(ctx, need_string(step, "rf"))));
  const Map2D fm = map2d_from_tensor(read_tensor(resolve(ctx, need_string(step, "feature_map"))));
  const double frac = value_or<double>(step, "threshold_frac", 0.5);
  const auto mask = selectivity_mask(rf, fm, frac);
  Map2D mask_map;
  mask_map.height = rf.height;
  mask_map.width = rf.width;
  mask_map.data.assign(mask.begin(), mask.end());
  TensorData t = tensor_from_map2d(mask_map);
  json meta = base_metadata(ctx, ctx.seed);
  meta["threshold_frac"] = frac;
  merge_metadata(t, meta);
  write_tensor(resolve(ctx, need_string(step, "out")), t);
}

inline void run_rfmap_connections(const json& step, const Context& ctx) {
  using namespace detail;
  const WeightGraph g = read_weight_graph(resolve(ctx, need_string(step, "graph")));
  const int layer = value_or<int>(step, "layer", 0);
  const int unit = value_or<int>(step, "unit", 0);
  const double frac = value_or<double>(step, "frac", 0.75);
  const ConnectionSelection sel = strongest_connections(g, layer, unit, frac);
  json doc;
  doc["metadata"] = base_metadata(ctx, ctx.seed);
  doc["layer"] = layer;
  doc["unit"] = unit;
  doc["threshold_frac"] = frac;
  auto edges_json = [](const std::vector<WeightGraph::Edge>& edges) {
    json arr = json::array();
    for (const auto& e : edges)
      arr.push_back({e.src_layer, e.src_unit, e.dst_layer, e.dst_unit, e.weight});
    return arr;
  };
  doc["incoming"] = edges_json(sel.incoming);
  doc["outgoing"] = edges_json(sel.outgoing);
  write_json(resolve(ctx, need_string(step, "out")), doc);
}

inline void run_validate(const json& step, const Context& ctx) {
  using namespace detail;
  const auto path = resolve(ctx, need_string(step, "in"));
  const TensorReport report = validate_tensor(path);
  std::string shape = "[";
  for (std::size_t i = 0; i < report.shape.size(); ++i)
    shape += (i ? ", " : "") + std::to_string(report.shape[i]);
  shape += "]";
  std::string dims = "[";
  for (std::size_t i = 0; i < report.dim_names.size(); ++i)
    dims += (i ? ", " : "") + report.dim_names[i];
  dims += "]";
  std::printf("ok: %s dtype=%s shape=%s dims=%s values=%zu nonfinite=%zu\n", path.c_str(),
              report.dtype.c_str(), shape.c_str(), dims.c_str(), report.n_values,
              report.n_nonfinite);
  if (step.contains("out")) {
    json doc;
    doc["dtype"] = report.dtype;
    doc["shape"] = report.shape;
    doc["dim_names"] = report.dim_names;
    doc["n_values"] = report.n_values;
    doc["n_nonfinite"] = report.n_nonfinite;
    write_json(resolve(ctx, need_string(step, "out")), doc);
  }
}

// ---------------------------------------------------------------------------
// Registry, validation and the runner
// ---------------------------------------------------------------------------

struct StepDef {
  std::function<void(const json&, const Context&)> run;
  // Config keys whose values are input files (string or list of strings).
  std::vector<std::string> input_keys;
  // Nested input: key -> subkey for object-valued fields.
  std::vector<std::pair<std::string, std::string>> nested_input_keys;
};

inline const std::map<std::string, StepDef>& step_registry() {
  static const std::map<std::string, StepDef> registry = {
      {"synth-hierarchy", {run_synth_hierarchy, {}, {}}},
      {"synth-noise", {run_synth_noise, {}, {}}},
      {"synth-searchlight", {run_synth_searchlight, {}, {}}},
      {"rdm", {run_rdm, {"patterns"}, {{"select_top", "scores"}}}},
      {"decode", {run_decode, {"trials"}, {}}},
      {"searchlight", {run_searchlight, {"mesh", "fmap", "patterns", "model"}, {}}},
      {"compare", {run_compare, {"a", "b"}, {}}},
      {"summary", {run_summary, {"layers", "manifest"}, {}}},
      {"stack", {run_stack, {"inputs"}, {}}},
      {"stats-sign", {run_stats_sign, {"data", "inputs"}, {}}},
      {"stats-cluster", {run_stats_cluster, {"data", "inputs", "mesh"}, {}}},
      {"stats-fdr", {run_stats_fdr, {"p"}, {}}},
      {"stats-bootstrap", {run_stats_bootstrap, {"data", "inputs"}, {}}},
      {"stats-hierarchy", {run_stats_hierarchy, {"inputs"}, {}}},
      {"stats-deltarho", {run_stats_deltarho, {"a", "b"}, {}}},
      {"stats-diff", {run_stats_diff, {"a", "b"}, {}}},
      {"rfmap-rf", {run_rfmap_rf, {"images", "table"}, {}}},
      {"rfmap-discrepancy", {run_rfmap_discrepancy, {"image", "table"}, {}}},
      {"rfmap-fmap", {run_rfmap_fmap, {"image"}, {}}},
      {"rfmap-selectivity", {run_rfmap_selectivity, {"rf", "feature_map"}, {}}},
      {"rfmap-connections", {run_rfmap_connections, {"graph"}, {}}},
      {"validate", {run_validate, {"in"}, {}}},
  };
  return registry;
}

inline std::vector<std::string> step_input_paths(const json& step) {
  const auto& def = step_registry().at(step.at("run").get<std::string>());
  std::vector<std::string> paths;
  auto collect = [&](const json& value) {
    if (value.is_string())
      paths.push_back(value.get<std::string>());
    else if (value.is_array())
      for (const auto& v : value)
        if (v.is_string()) paths.push_back(v.get<std::string>());
  };
  for (const auto& key : def.input_keys)
    if (step.contains(key)) collect(step[key]);
  for (const auto& [key, sub] : def.nested_input_keys)
    if (step.contains(key) && step[key].contains(sub)) collect(step[key][sub]);
  return paths;
}

inline void execute_step(const json& step, const Context& ctx) {
  if (!step.contains("run") || !step["run"].is_string())
    throw ConfigInvalid("pipeline step needs a 'run' field");
  const std::string name = step["run"].get<std::string>();
  const auto it = step_registry().find(name);
  if (it == step_registry().end()) throw ConfigInvalid("unknown step '" + name + "'");
  it->second.run(step, ctx);
}

/// Validate then execute a declarative pipeline. Inputs of every step must
/// exist on disk or be produced by an earlier step; all relative paths are
/// anchored at the context's out_dir. Deterministic given (config, inputs,
/// seeds): re-running an identical config rewrites identical bytes.
inline void run_pipeline(const json& config, Context ctx) {
  if (!config.contains("steps") || !config["steps"].is_array() || config["steps"].empty())
    throw ConfigInvalid("pipeline config needs a non-empty 'steps' list");
  ctx.seed = config.value("seed", ctx.seed);

  // Validation pass: names known, required fields present, every input either
  // already on disk or produced by an earlier step (exactly by name, or under
  // a fan-out step's out_prefix).
  std::set<std::string> produced_files;
  std::set<std::string> produced_prefixes;
  for (const auto& step : config["steps"]) {
    if (!step.contains("run") || !step["run"].is_string())
      throw ConfigInvalid("pipeline step needs a 'run' field");
    const std::string name = step["run"].get<std::string>();
    if (step_registry().find(name) == step_registry().end())
      throw ConfigInvalid("unknown step '" + name + "'");
    for (const auto& rel : step_input_paths(step)) {
      if (produced_files.count(rel) > 0) continue;
      bool covered = false;
      for (const auto& prefix : produced_prefixes)
        if (rel.rfind(prefix + "/", 0) == 0) {
          covered = true;
          break;
        }
      if (covered) continue;
      const auto path = detail::resolve(ctx, rel);
      if (!std::filesystem::exists(path))
        throw ConfigInvalid("step '" + name + "': input file missing: '" + path.string() + "'");
    }
    if (step.contains("out") && step["out"].is_string())
      produced_files.insert(step["out"].get<std::string>());
    if (step.contains("out_prefix") && step["out_prefix"].is_string()) {
      produced_prefixes.insert(step["out_prefix"].get<std::string>());
      produced_files.insert(step["out_prefix"].get<std::string>() + ".report.json");
      produced_files.insert(step["out_prefix"].get<std::string>() + ".p.rsat");
      produced_files.insert(step["out_prefix"].get<std::string>() + ".mean.rsat");
      produced_files.insert(step["out_prefix"].get<std::string>() + ".clusters.rsat");
      produced_files.insert(step["out_prefix"].get<std::string>() + ".sig.rsat");
      produced_files.insert(step["out_prefix"].get<std::string>() + ".latencies.rsat");
    }
  }

  for (const auto& step : config["steps"]) {
    std::fprintf(stderr, "[rsat] %s\n", step["run"].get<std::string>().c_str());
    execute_step(step, ctx);
  }
}

}  // namespace rsat::pipeline
