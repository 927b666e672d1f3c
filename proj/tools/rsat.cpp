// rsat: representational similarity analysis toolkit CLI.
//
// Subcommands map 1:1 onto pipeline steps; a declarative JSON config can run
// the same steps end to end (`rsat pipeline --config file`). All outputs are
// deterministic for a fixed seed, regardless of --threads.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rsat/io.hpp"
#include "rsat/pipeline.hpp"

namespace {

using rsat::json;

int exit_code_for(const rsat::Error& e) {
  switch (e.code()) {
    case rsat::ErrorCode::config_invalid:
    case rsat::ErrorCode::input_missing:
    case rsat::ErrorCode::format_error:
      return 2;
    default:
      return 1;
  }
}

struct GlobalOptions {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out_dir = ".";
  std::string config_path;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rsat: representational similarity analysis toolkit"};
  app.require_subcommand(0, 1);
  app.fallthrough();

  GlobalOptions global;
  app.add_option("--seed", global.seed, "Default RNG seed for all stages")->default_val(0);
  app.add_option("--threads", global.threads, "Worker threads (0 = all cores)")->default_val(1);
  auto* out_opt = app.add_option("--out", global.out_dir, "Output directory")->default_val(".");
  app.add_option("--config", global.config_path, "Pipeline config file (JSON)");

  json step;  // built by whichever subcommand parses

  // --- synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate planted-ground-truth data");
  synth->require_subcommand(1);

  auto* synth_h = synth->add_subcommand("hierarchy", "Trials + layer stack with planted latencies");
  struct {
    std::size_t conditions = 20, subjects = 12, channels = 24, timepoints = 60, layers = 8,
                trials = 20, layer_features = 1024;
    double time_start = -50, time_step = 5, onset = 40, latency_step = 10, snr = 0.7;
    std::string prefix = "synth";
  } sh;
  synth_h->add_option("--conditions", sh.conditions);
  synth_h->add_option("--subjects", sh.subjects);
  synth_h->add_option("--channels", sh.channels);
  synth_h->add_option("--timepoints", sh.timepoints);
  synth_h->add_option("--layers", sh.layers);
  synth_h->add_option("--trials", sh.trials);
  synth_h->add_option("--layer-features", sh.layer_features);
  synth_h->add_option("--time-start", sh.time_start, "First time coordinate (ms)");
  synth_h->add_option("--time-step", sh.time_step, "Time step (ms)");
  synth_h->add_option("--onset", sh.onset, "Signal onset (ms)");
  synth_h->add_option("--latency-step", sh.latency_step, "Per-layer peak spacing (ms)");
  synth_h->add_option("--snr", sh.snr);
  synth_h->add_option("--out-prefix", sh.prefix);
  synth_h->callback([&] {
    step = {{"run", "synth-hierarchy"},
            {"conditions", sh.conditions},
            {"subjects", sh.subjects},
            {"channels", sh.channels},
            {"timepoints", sh.timepoints},
            {"layers", sh.layers},
            {"trials", sh.trials},
            {"layer_features", sh.layer_features},
            {"time_start_ms", sh.time_start},
            {"time_step_ms", sh.time_step},
            {"onset_ms", sh.onset},
            {"latency_step_ms", sh.latency_step},
            {"snr", sh.snr},
            {"out_prefix", sh.prefix}};
  });

  auto* synth_n = synth->add_subcommand("noise", "Smoothed uniform-noise images");
  struct {
    std::size_t n = 4, size = 256, channels = 3, filter = 10;
    double sigma = 80.0;
    std::string prefix = "noise";
  } sn;
  synth_n->add_option("--n", sn.n);
  synth_n->add_option("--size", sn.size);
  synth_n->add_option("--channels", sn.channels);
  synth_n->add_option("--filter-size", sn.filter);
  synth_n->add_option("--sigma", sn.sigma);
  synth_n->add_option("--out-prefix", sn.prefix);
  synth_n->callback([&] {
    step = {{"run", "synth-noise"},    {"n", sn.n},
            {"size", sn.size},         {"channels", sn.channels},
            {"filter_size", sn.filter}, {"sigma", sn.sigma},
            {"out_prefix", sn.prefix}};
  });

  auto* synth_s = synth->add_subcommand("searchlight", "Grid mesh + patterns with a planted region");
  struct {
    int rows = 16, cols = 16, center = -1;
    double spacing = 3.0, radius = 9.0, effect = 10.0;
    std::size_t conditions = 12, subjects = 10;
    std::vector<int> pair{0, 1};
    std::string prefix = "slsynth";
  } ss;
  synth_s->add_option("--grid-rows", ss.rows);
  synth_s->add_option("--grid-cols", ss.cols);
  synth_s->add_option("--spacing", ss.spacing, "Grid spacing (mm)");
  synth_s->add_option("--region-center", ss.center, "Region center vertex (-1 = grid middle)");
  synth_s->add_option("--region-radius", ss.radius, "Region geodesic radius (mm)");
  synth_s->add_option("--conditions", ss.conditions);
  synth_s->add_option("--subjects", ss.subjects);
  synth_s->add_option("--pair", ss.pair, "Condition pair sharing structure")->expected(2);
  synth_s->add_option("--effect", ss.effect);
  synth_s->add_option("--out-prefix", ss.prefix);
  synth_s->callback([&] {
    step = {{"run", "synth-searchlight"},
            {"grid_rows", ss.rows},
            {"grid_cols", ss.cols},
            {"spacing_mm", ss.spacing},
            {"region_radius_mm", ss.radius},
            {"conditions", ss.conditions},
            {"subjects", ss.subjects},
            {"pair", ss.pair},
            {"effect", ss.effect},
            {"out_prefix", ss.prefix}};
    if (ss.center >= 0) step["region_center"] = ss.center;
  });

  // --- rdm -------------------------------------------------------------------
  auto* rdm_cmd = app.add_subcommand("rdm", "Correlation-distance RDM(s) from pattern tensors");
  struct {
    std::vector<std::string> patterns;
    std::string out, scores;
    std::size_t top_n = 0;
  } rd;
  rdm_cmd->add_option("--patterns", rd.patterns, "Pattern tensor(s); several make a layer series")
      ->required();
  rdm_cmd->add_option("--out", rd.out)->required();
  rdm_cmd->add_option("--select-top", rd.top_n, "Keep only the N top-scoring features");
  rdm_cmd->add_option("--scores", rd.scores, "1-D score tensor for --select-top");
  rdm_cmd->callback([&] {
    step = {{"run", "rdm"}, {"out", rd.out}};
    step["patterns"] = rd.patterns.size() == 1 ? json(rd.patterns[0]) : json(rd.patterns);
    if (rd.top_n > 0) step["select_top"] = {{"n", rd.top_n}, {"scores", rd.scores}};
  });

  // --- decode ----------------------------------------------------------------
  auto* decode_cmd = app.add_subcommand("decode", "Pairwise SVM decoding RDM series from trials");
  struct {
    std::string trials, out;
    std::size_t k = 5, repetitions = 100;
    double cost = 1.0;
    bool single_fold = false;
  } dc;
  decode_cmd->add_option("--trials", dc.trials)->required();
  decode_cmd->add_option("--out", dc.out)->required();
  decode_cmd->add_option("--k", dc.k, "Sub-average group size");
  decode_cmd->add_option("--repetitions", dc.repetitions);
  decode_cmd->add_option("--cost", dc.cost, "SVM cost parameter");
  decode_cmd->add_flag("--single-fold", dc.single_fold, "Strict one-fold-per-repetition mode");
  decode_cmd->callback([&] {
    step = {{"run", "decode"}, {"trials", dc.trials},          {"out", dc.out},
            {"k", dc.k},       {"repetitions", dc.repetitions}, {"cost", dc.cost},
            {"single_fold", dc.single_fold}};
  });

  // --- searchlight -------------------------------------------------------------
  auto* sl_cmd = app.add_subcommand("searchlight", "Geodesic-disk searchlight RDMs or similarity map");
  struct {
    std::string mesh, fmap, patterns, out, model;
    double radius = 9.0;
  } sl;
  sl_cmd->add_option("--mesh", sl.mesh, "ASCII OFF mesh")->required();
  sl_cmd->add_option("--fmap", sl.fmap, "vertex_id,feature_id CSV")->required();
  sl_cmd->add_option("--patterns", sl.patterns)->required();
  sl_cmd->add_option("--out", sl.out)->required();
  sl_cmd->add_option("--radius", sl.radius, "Geodesic disk radius (mm)");
  sl_cmd->add_option("--model", sl.model, "Model RDM; emits a similarity map instead of RDMs");
  sl_cmd->callback([&] {
    step = {{"run", "searchlight"},    {"mesh", sl.mesh}, {"fmap", sl.fmap},
            {"patterns", sl.patterns}, {"out", sl.out},   {"radius_mm", sl.radius}};
    if (!sl.model.empty()) step["model"] = sl.model;
  });

  // --- compare ----------------------------------------------------------------
  auto* cmp_cmd = app.add_subcommand("compare", "Spearman comparison of RDMs / RDM series");
  struct {
    std::string a, b, out;
  } cp;
  cmp_cmd->add_option("--a", cp.a)->required();
  cmp_cmd->add_option("--b", cp.b)->required();
  cmp_cmd->add_option("--out", cp.out)->required();
  cmp_cmd->callback([&] { step = {{"run", "compare"}, {"a", cp.a}, {"b", cp.b}, {"out", cp.out}}; });

  // --- summary ----------------------------------------------------------------
  auto* sum_cmd = app.add_subcommand("summary", "PCA-balanced whole-model summary RDM");
  struct {
    std::vector<std::string> layers;
    std::string manifest, out;
    std::size_t dims = 0;
    bool normalize = false;
  } sm;
  sum_cmd->add_option("--layers", sm.layers, "Layer pattern tensors in order");
  sum_cmd->add_option("--manifest", sm.manifest, "JSON manifest with a 'layers' list");
  sum_cmd->add_option("--out", sm.out)->required();
  sum_cmd->add_option("--dims", sm.dims, "Components per layer (default: conditions - 1)");
  sum_cmd->add_flag("--normalize-layer-variance", sm.normalize);
  sum_cmd->callback([&] {
    step = {{"run", "summary"}, {"out", sm.out}, {"normalize_layer_variance", sm.normalize}};
    if (!sm.manifest.empty())
      step["manifest"] = sm.manifest;
    else
      step["layers"] = sm.layers;
    if (sm.dims > 0) step["dims"] = sm.dims;
  });

  // --- stack ------------------------------------------------------------------
  auto* stack_cmd = app.add_subcommand("stack", "Stack per-subject 1-D tensors into subjects x points");
  struct {
    std::vector<std::string> inputs;
    std::string out;
  } sk;
  stack_cmd->add_option("--inputs", sk.inputs)->required();
  stack_cmd->add_option("--out", sk.out)->required();
  stack_cmd->callback([&] { step = {{"run", "stack"}, {"inputs", sk.inputs}, {"out", sk.out}}; });

  // --- stats ------------------------------------------------------------------
  auto* stats = app.add_subcommand("stats", "Second-level inference");
  stats->require_subcommand(1);
  struct {
    std::string data, out, out_prefix, tail = "right", mesh, a, b, p;
    std::vector<std::string> inputs;
    std::vector<double> window;
    int n_perm = 10000, n_boot = 1000;
    double q = 0.05, definition_p = 0.05, cluster_p = 0.05;
    bool mass = false;
  } st;

  auto add_subject_inputs = [&](CLI::App* cmd) {
    cmd->add_option("--data", st.data, "2-D subjects x points tensor");
    cmd->add_option("--inputs", st.inputs, "Per-subject 1-D tensors");
  };
  auto put_subject_inputs = [&] {
    if (!st.data.empty())
      step["data"] = st.data;
    else
      step["inputs"] = st.inputs;
  };

  auto* st_sign = stats->add_subcommand("sign", "Sign-permutation test of the group mean");
  add_subject_inputs(st_sign);
  st_sign->add_option("--n-perm", st.n_perm);
  st_sign->add_option("--tail", st.tail)->check(CLI::IsMember({"right", "two_sided"}));
  st_sign->add_option("--out-prefix", st.out_prefix)->required();
  st_sign->callback([&] {
    step = {{"run", "stats-sign"},
            {"n_perm", st.n_perm},
            {"tail", st.tail},
            {"out_prefix", st.out_prefix}};
    put_subject_inputs();
  });

  auto* st_cluster = stats->add_subcommand("cluster", "Cluster-size permutation inference");
  add_subject_inputs(st_cluster);
  st_cluster->add_option("--n-perm", st.n_perm);
  st_cluster->add_option("--tail", st.tail)->check(CLI::IsMember({"right", "two_sided"}));
  st_cluster->add_option("--definition-p", st.definition_p);
  st_cluster->add_option("--cluster-p", st.cluster_p);
  st_cluster->add_option("--mesh", st.mesh, "OFF mesh (points = vertices) for mesh adjacency");
  st_cluster->add_flag("--mass", st.mass, "Cluster mass statistic instead of size");
  st_cluster->add_option("--out-prefix", st.out_prefix)->required();
  st_cluster->callback([&] {
    step = {{"run", "stats-cluster"},    {"n_perm", st.n_perm},
            {"tail", st.tail},           {"definition_p", st.definition_p},
            {"cluster_p", st.cluster_p}, {"mass", st.mass},
            {"out_prefix", st.out_prefix}};
    if (!st.mesh.empty()) step["mesh"] = st.mesh;
    put_subject_inputs();
  });

  auto* st_fdr = stats->add_subcommand("fdr", "Benjamini-Hochberg correction of a p-value tensor");
  st_fdr->add_option("--p", st.p)->required();
  st_fdr->add_option("--q", st.q);
  st_fdr->add_option("--out", st.out)->required();
  st_fdr->callback([&] { step = {{"run", "stats-fdr"}, {"p", st.p}, {"q", st.q}, {"out", st.out}}; });

  auto* st_boot = stats->add_subcommand("bootstrap", "Bootstrap SE of the group mean");
  add_subject_inputs(st_boot);
  st_boot->add_option("--n-boot", st.n_boot);
  st_boot->add_option("--out", st.out)->required();
  st_boot->callback([&] {
    step = {{"run", "stats-bootstrap"}, {"n_boot", st.n_boot}, {"out", st.out}};
    put_subject_inputs();
  });

  auto* st_hier = stats->add_subcommand("hierarchy", "Layer-vs-peak-latency analysis");
  st_hier->add_option("--inputs", st.inputs, "Per-subject [time x layer] comparison tensors")
      ->required();
  st_hier->add_option("--window", st.window, "Peak search window [t0 t1] (ms)")->expected(2);
  st_hier->add_option("--n-perm", st.n_perm);
  st_hier->add_option("--out-prefix", st.out_prefix)->required();
  st_hier->callback([&] {
    step = {{"run", "stats-hierarchy"},
            {"inputs", st.inputs},
            {"n_perm", st.n_perm},
            {"out_prefix", st.out_prefix}};
    if (!st.window.empty()) step["window"] = st.window;
  });

  auto* st_delta = stats->add_subcommand("deltarho", "Difference of per-subject correlations");
  st_delta->add_option("--a", st.a)->required();
  st_delta->add_option("--b", st.b)->required();
  st_delta->add_option("--n-perm", st.n_perm);
  st_delta->add_option("--tail", st.tail)->check(CLI::IsMember({"right", "two_sided"}));
  st_delta->add_option("--out", st.out)->required();
  st_delta->callback([&] {
    step = {{"run", "stats-deltarho"},
            {"a", st.a},
            {"b", st.b},
            {"n_perm", st.n_perm},
            {"out", st.out}};
    if (st_delta->count("--tail") > 0) step["tail"] = st.tail;
  });

  auto* st_diff = stats->add_subcommand("diff", "Per-subject difference of two subject tensors");
  st_diff->add_option("--a", st.a)->required();
  st_diff->add_option("--b", st.b)->required();
  st_diff->add_option("--out", st.out)->required();
  st_diff->callback(
      [&] { step = {{"run", "stats-diff"}, {"a", st.a}, {"b", st.b}, {"out", st.out}}; });

  // --- rfmap ------------------------------------------------------------------
  auto* rfmap = app.add_subcommand("rfmap", "Occlusion receptive-field mapping");
  rfmap->require_subcommand(1);
  struct {
    std::vector<std::string> images;
    std::string image, table, provider_cmd, out, rf, feature_map, graph;
    int k = 25, occluder = 11, stride = 3, layer = 0, unit = 0;
    std::size_t image_index = 0;
    double fill = 0.0, threshold_frac = 0.5, frac = 0.75;
    bool sum = false;
  } rf;

  auto add_provider = [&](CLI::App* cmd) {
    cmd->add_option("--provider-cmd", rf.provider_cmd, "Adapter process command (line protocol)");
    cmd->add_option("--table", rf.table, "Precomputed activation table tensor");
  };
  auto add_occluder = [&](CLI::App* cmd) {
    cmd->add_option("--occluder", rf.occluder, "Occluder size (px)");
    cmd->add_option("--stride", rf.stride, "Occluder stride (px)");
    cmd->add_option("--fill", rf.fill, "Occluder fill value");
    cmd->add_flag("--sum", rf.sum, "Sum accumulation instead of per-pixel mean");
  };
  auto put_occluder = [&] {
    step["occluder_size_px"] = rf.occluder;
    step["stride_px"] = rf.stride;
    step["occluder_fill"] = rf.fill;
    step["sum_accumulation"] = rf.sum;
  };

  auto* rf_rf = rfmap->add_subcommand("rf", "Average re-centered discrepancy map (the RF)");
  rf_rf->add_option("--images", rf.images, "Candidate image tensors");
  add_provider(rf_rf);
  rf_rf->add_option("--k", rf.k, "Top activating images to average");
  add_occluder(rf_rf);
  rf_rf->add_option("--out", rf.out)->required();
  rf_rf->callback([&] {
    step = {{"run", "rfmap-rf"}, {"out", rf.out}, {"k", rf.k}};
    put_occluder();
    if (!rf.table.empty())
      step["table"] = rf.table;
    else {
      step["images"] = rf.images;
      step["provider_cmd"] = rf.provider_cmd;
    }
  });

  auto* rf_d = rfmap->add_subcommand("discrepancy", "Occlusion discrepancy map of one image");
  rf_d->add_option("--image", rf.image);
  rf_d->add_option("--image-index", rf.image_index, "Row in --table mode");
  add_provider(rf_d);
  add_occluder(rf_d);
  rf_d->add_option("--out", rf.out)->required();
  rf_d->callback([&] {
    step = {{"run", "rfmap-discrepancy"}, {"out", rf.out}};
    put_occluder();
    if (!rf.table.empty()) {
      step["table"] = rf.table;
      step["image_index"] = rf.image_index;
    } else {
      step["image"] = rf.image;
      step["provider_cmd"] = rf.provider_cmd;
    }
  });

  auto* rf_f = rfmap->add_subcommand("fmap", "Fetch a feature map through the provider protocol");
  rf_f->add_option("--image", rf.image)->required();
  rf_f->add_option("--provider-cmd", rf.provider_cmd)->required();
  rf_f->add_option("--out", rf.out)->required();
  rf_f->callback([&] {
    step = {{"run", "rfmap-fmap"},
            {"image", rf.image},
            {"provider_cmd", rf.provider_cmd},
            {"out", rf.out}};
  });

  auto* rf_s = rfmap->add_subcommand("selectivity", "50%-of-max selectivity mask");
  rf_s->add_option("--rf", rf.rf)->required();
  rf_s->add_option("--feature-map", rf.feature_map)->required();
  rf_s->add_option("--threshold-frac", rf.threshold_frac);
  rf_s->add_option("--out", rf.out)->required();
  rf_s->callback([&] {
    step = {{"run", "rfmap-selectivity"},
            {"rf", rf.rf},
            {"feature_map", rf.feature_map},
            {"threshold_frac", rf.threshold_frac},
            {"out", rf.out}};
  });

  auto* rf_c = rfmap->add_subcommand("connections", "Strongest in/out connections of a unit");
  rf_c->add_option("--graph", rf.graph)->required();
  rf_c->add_option("--layer", rf.layer)->required();
  rf_c->add_option("--unit", rf.unit)->required();
  rf_c->add_option("--frac", rf.frac, "Fraction of the max |weight|");
  rf_c->add_option("--out", rf.out)->required();
  rf_c->callback([&] {
    step = {{"run", "rfmap-connections"}, {"graph", rf.graph}, {"layer", rf.layer},
            {"unit", rf.unit},            {"frac", rf.frac},   {"out", rf.out}};
  });

  // --- pipeline / validate -----------------------------------------------------
  auto* pipe_cmd = app.add_subcommand("pipeline", "Run a declarative JSON pipeline (--config)");
  auto* val_cmd = app.add_subcommand("validate", "Check a tensor file and print its shape");
  struct {
    std::string in;
  } vd;
  val_cmd->add_option("--in", vd.in)->required();
  val_cmd->callback([&] { step = {{"run", "validate"}, {"in", vd.in}}; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  rsat::pipeline::Context ctx;
  ctx.out_dir = global.out_dir;
  ctx.seed = global.seed;
  ctx.threads = global.threads;

  try {
    if (pipe_cmd->parsed()) {
      if (global.config_path.empty())
        throw rsat::ConfigInvalid("pipeline requires --config");
      std::ifstream in(global.config_path, std::ios::binary);
      if (!in) throw rsat::ConfigInvalid("cannot open config '" + global.config_path + "'");
      const std::string bytes((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
      json config;
      try {
        config = json::parse(bytes);
      } catch (const json::exception& e) {
        throw rsat::ConfigInvalid("config is not valid JSON: " + std::string(e.what()));
      }
      ctx.config_hash = rsat::fnv1a_hex(bytes);
      if (out_opt->count() == 0 && config.contains("out_dir"))
        ctx.out_dir = config["out_dir"].get<std::string>();
      if (config.contains("threads") && global.threads == 1)
        ctx.threads = config["threads"].get<int>();
      rsat::pipeline::run_pipeline(config, ctx);
      return 0;
    }
    if (step.is_null()) {
      std::fputs(app.help().c_str(), stdout);
      return 0;
    }
    step["seed"] = global.seed;
    ctx.config_hash = rsat::fnv1a_hex(step.dump());
    rsat::pipeline::execute_step(step, ctx);
    return 0;
  } catch (const rsat::Error& e) {
    std::fprintf(stderr, "rsat: error: %s\n", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "rsat: error: %s\n", e.what());
    return 1;
  }
}
