// End-to-end exercises of the rsat CLI binary and the pipeline runner:
// subprocess invocations, exit codes, file outputs and the provider protocol.
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rsat/io.hpp"
#include "rsat/pipeline.hpp"
#include "test_helpers.hpp"

using namespace rsat;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RSAT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Python child for the provider line protocol: reads tensor paths, answers
/// with the mean over a fixed patch of channel 0, flushing per line.
void write_patch_provider(const fs::path& script) {
  std::ofstream out(script);
  out << R"PY(
import json, struct, sys

def load(path):
    with open(path, 'rb') as f:
        blob = f.read()
    assert blob[:6] == b'RSAT1\n'
    (hlen,) = struct.unpack('<Q', blob[6:14])
    header = json.loads(blob[14:14 + hlen].decode('utf-8'))
    data = struct.unpack('<%dd' % (len(blob[14 + hlen:]) // 8), blob[14 + hlen:])
    return header, data

for line in sys.stdin:
    path = line.strip()
    if not path:
        continue
    header, data = load(path)
    h, w = header['shape'][0], header['shape'][1]
    c = header['shape'][2] if len(header['shape']) > 2 else 1
    total = 0.0
    for y in range(2, 7):
        for x in range(2, 7):
            total += data[(y * w + x) * c]
    print(total / 25.0)
    sys.stdout.flush()
)PY";
}

}  // namespace

TEST_CASE("cli exit codes: help 0, bad flag 2, missing input 2") {
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("--definitely-not-a-flag") == 2);
  testutil::TempDir dir("cli_missing");
  CHECK(run_cli("--out " + dir.path().string() + " rdm --patterns nowhere.rsat --out out.rsat") ==
        2);
  CHECK(run_cli("validate --in " + (dir.path() / "ghost.rsat").string()) == 2);
}

TEST_CASE("validate detects corrupt tensors through the cli") {
  testutil::TempDir dir("cli_validate");
  const auto good = dir.path() / "good.rsat";
  TensorData t;
  t.shape = {3};
  t.dim_names = {"x"};
  t.data = {1, 2, 3};
  write_tensor(good, t);
  CHECK(run_cli("validate --in " + good.string()) == 0);

  const auto bad = dir.path() / "bad.rsat";
  std::ofstream(bad, std::ios::binary) << "JUNKJUNKJUNK";
  CHECK(run_cli("validate --in " + bad.string()) == 2);
}

TEST_CASE("small pipeline runs end to end and is byte-identical across reruns and threads") {
  testutil::TempDir dir("cli_pipe");
  const fs::path config_path = dir.path() / "pipeline.json";
  json config;
  config["seed"] = 21;
  config["steps"] = json::array();
  config["steps"].push_back({{"run", "synth-hierarchy"}, {"out_prefix", "synth"},
                             {"conditions", 5},          {"subjects", 2},
                             {"channels", 8},            {"timepoints", 16},
                             {"layers", 3},              {"trials", 10},
                             {"layer_features", 32},     {"time_start_ms", -20.0},
                             {"time_step_ms", 5.0},      {"onset_ms", 10.0},
                             {"latency_step_ms", 5.0},   {"snr", 1.0}});
  config["steps"].push_back({{"run", "decode"},
                             {"trials", "synth/subject_00.trials.rsat"},
                             {"out", "dec_s00.rsat"},
                             {"k", 5},
                             {"repetitions", 2}});
  config["steps"].push_back({{"run", "rdm"},
                             {"patterns", json::array({"synth/layer_1.patterns.rsat",
                                                       "synth/layer_2.patterns.rsat",
                                                       "synth/layer_3.patterns.rsat"})},
                             {"out", "layers.rdms.rsat"}});
  config["steps"].push_back(
      {{"run", "compare"}, {"a", "dec_s00.rsat"}, {"b", "layers.rdms.rsat"}, {"out", "cmp.rsat"}});
  {
    std::ofstream out(config_path);
    out << config.dump(2);
  }

  const std::string base = "pipeline --config " + config_path.string();
  const fs::path out1 = dir.path() / "run1";
  const fs::path out2 = dir.path() / "run2";
  REQUIRE(run_cli(base + " --out " + out1.string() + " --threads 1") == 0);
  REQUIRE(run_cli(base + " --out " + out2.string() + " --threads 3") == 0);

  for (const std::string rel :
       {"synth/subject_00.trials.rsat", "synth/manifest.json", "dec_s00.rsat", "layers.rdms.rsat",
        "cmp.rsat"}) {
    CAPTURE(rel);
    REQUIRE(fs::exists(out1 / rel));
    CHECK(slurp(out1 / rel) == slurp(out2 / rel));
  }

  // Re-running into the same directory rewrites identical bytes.
  const auto before = slurp(out1 / "cmp.rsat");
  REQUIRE(run_cli(base + " --out " + out1.string() + " --threads 2") == 0);
  CHECK(slurp(out1 / "cmp.rsat") == before);

  const TensorData cmp = read_tensor(out1 / "cmp.rsat");
  CHECK(cmp.shape == std::vector<std::size_t>{16, 3});
  CHECK(cmp.metadata["rho_transform"] == "raw");
}

TEST_CASE("pipeline validation rejects unknown steps and missing inputs up front") {
  testutil::TempDir dir("cli_badpipe");
  json config;
  config["steps"] = {{{"run", "no-such-step"}}};
  const fs::path bad1 = dir.path() / "bad1.json";
  std::ofstream(bad1) << config.dump();
  CHECK(run_cli("pipeline --config " + bad1.string() + " --out " + dir.path().string()) == 2);

  json config2;
  config2["steps"] = {{{"run", "decode"}, {"trials", "missing.rsat"}, {"out", "x.rsat"}}};
  const fs::path bad2 = dir.path() / "bad2.json";
  std::ofstream(bad2) << config2.dump();
  CHECK(run_cli("pipeline --config " + bad2.string() + " --out " + dir.path().string()) == 2);

  CHECK(run_cli("pipeline --config " + (dir.path() / "absent.json").string()) == 2);
}

TEST_CASE("process provider answers the line protocol for rf mapping") {
  testutil::TempDir dir("cli_provider");
  write_patch_provider(dir.path() / "provider.py");

  // Bright 12x12 image: the provider watches patch [2,7)x[2,7).
  Image img;
  img.height = img.width = 12;
  img.channels = 1;
  img.data.assign(144, 1.0);
  write_tensor(dir.path() / "img.rsat", tensor_from_image(img));

  const std::string cmd = "python3 " + (dir.path() / "provider.py").string();
  const int rc = run_cli("--out " + dir.path().string() +
                         " rfmap discrepancy --image img.rsat --provider-cmd '" + cmd +
                         "' --occluder 4 --stride 2 --fill 0 --out map.rsat");
  REQUIRE(rc == 0);
  const Map2D map = map2d_from_tensor(read_tensor(dir.path() / "map.rsat"));
  // Occluding inside the watched patch drops the mean; far corners never do.
  CHECK(map.at(4, 4) > 0.0);
  CHECK(map.at(11, 11) == 0.0);
}

TEST_CASE("process provider feature-map responses name tensor files") {
  testutil::TempDir dir("cli_fmap");
  const fs::path script = dir.path() / "fmap_provider.py";
  {
    std::ofstream out(script);
    out << "import json, struct, sys, os\n"
           "n = 0\n"
           "for line in sys.stdin:\n"
           "    path = line.strip()\n"
           "    if not path: continue\n"
           "    header = None\n"
           "    out_path = os.path.join(os.path.dirname(path), 'fm_%d.rsat' % n)\n"
           "    n += 1\n"
           "    payload = struct.pack('<4d', 0.0, 1.0, 2.0, 3.0)\n"
           "    hdr = json.dumps({'dtype': 'f64', 'shape': [2, 2], 'dim_names': ['y', 'x'],\n"
           "                      'coords': {}, 'labels': {}, 'metadata': {}}).encode()\n"
           "    with open(out_path, 'wb') as f:\n"
           "        f.write(b'RSAT1\\n' + struct.pack('<Q', len(hdr)) + hdr + payload)\n"
           "    print(out_path)\n"
           "    sys.stdout.flush()\n";
  }
  Image img;
  img.height = img.width = 4;
  img.channels = 1;
  img.data.assign(16, 0.5);
  write_tensor(dir.path() / "img.rsat", tensor_from_image(img));
  const int rc = run_cli("--out " + dir.path().string() +
                         " rfmap fmap --image img.rsat --provider-cmd 'python3 " +
                         script.string() + "' --out fm.rsat");
  REQUIRE(rc == 0);
  const Map2D fm = map2d_from_tensor(read_tensor(dir.path() / "fm.rsat"));
  CHECK(fm.at(1, 1) == 3.0);
}

TEST_CASE("activation-table mode reproduces the provider-path rf") {
  testutil::TempDir dir("cli_table");
  // Build a table for 3 synthetic "images" whose occlusion responses follow a
  // known dip pattern, then check average_rf_from_table against a manual
  // computation through the shared accumulate/recenter path.
  const std::size_t h = 10, w = 10;
  const int occ = 4, stride = 2;
  const std::size_t ny = (h - occ) / stride + 1, nx = (w - occ) / stride + 1;
  TensorData table;
  table.shape = {3, 1 + ny * nx};
  table.dim_names = {"image", "activation"};
  table.metadata = {{"grid_ny", ny},           {"grid_nx", nx},
                    {"occluder_size_px", occ}, {"stride_px", stride},
                    {"image_height", h},       {"image_width", w}};
  table.data.assign(table.element_count(), 0.0);
  for (std::size_t img = 0; img < 3; ++img) {
    const double base = 10.0 + static_cast<double>(img);
    table.data[img * (1 + ny * nx)] = base;
    for (std::size_t g = 0; g < ny * nx; ++g) {
      const std::size_t gy = g / nx, gx = g % nx;
      // Dip when the occluder covers the image-specific hot cell.
      const std::size_t hot_y = 2 + img, hot_x = 4;
      const bool covers = gy * stride <= hot_y && hot_y < gy * stride + occ &&
                          gx * stride <= hot_x && hot_x < gx * stride + occ;
      table.data[img * (1 + ny * nx) + 1 + g] = covers ? base - 2.0 : base;
    }
  }
  write_tensor(dir.path() / "table.rsat", table);
  const int rc = run_cli("--out " + dir.path().string() +
                         " rfmap rf --table table.rsat --k 3 --out rf.rsat");
  REQUIRE(rc == 0);
  const Map2D rf = map2d_from_tensor(read_tensor(dir.path() / "rf.rsat"));
  // All three hot cells re-center to the same spot; the average keeps a
  // positive bump there.
  const auto [py, px] = map_argmax(rf);
  CHECK(rf.at(py, px) > 0.0);
  CHECK(py == h / 2);
  CHECK(px == w / 2);
}

TEST_CASE("rfmap connections subcommand writes the selected edges") {
  testutil::TempDir dir("cli_conn");
  WeightGraph g;
  g.units_per_layer = {1, 3};
  g.edges = {{0, 0, 1, 0, 1.0}, {0, 0, 1, 1, 0.8}, {0, 0, 1, 2, 0.7}};
  write_weight_graph(dir.path() / "g.json", g);
  const int rc = run_cli("--out " + dir.path().string() +
                         " rfmap connections --graph g.json --layer 0 --unit 0 --out sel.json");
  REQUIRE(rc == 0);
  const json sel = read_json(dir.path() / "sel.json");
  CHECK(sel["outgoing"].size() == 2);
  CHECK(sel["threshold_frac"] == 0.75);
}

TEST_CASE("stats subcommands run from stacked per-subject files") {
  testutil::TempDir dir("cli_stats");
  Rng rng(555);
  std::vector<std::string> rels;
  for (int s = 0; s < 6; ++s) {
    std::vector<double> values(40);
    for (auto& v : values) v = rng.normal() + 0.8;
    const std::string rel = "subj_" + std::to_string(s) + ".rsat";
    write_tensor(dir.path() / rel, tensor_from_vector(values, "time_ms"));
    rels.push_back(rel);
  }
  std::string inputs;
  for (const auto& r : rels) inputs += " " + r;
  const std::string base = "--out " + dir.path().string() + " ";
  REQUIRE(run_cli(base + "stack --inputs" + inputs + " --out stacked.rsat") == 0);
  REQUIRE(run_cli(base + "stats sign --data stacked.rsat --n-perm 500 --out-prefix sign") == 0);
  REQUIRE(run_cli(base + "stats cluster --data stacked.rsat --n-perm 300 --out-prefix cl") == 0);
  REQUIRE(run_cli(base + "stats fdr --p sign.p.rsat --q 0.05 --out fdr.rsat") == 0);
  REQUIRE(run_cli(base + "stats bootstrap --data stacked.rsat --n-boot 200 --out se.rsat") == 0);

  const TensorData p = read_tensor(dir.path() / "sign.p.rsat");
  CHECK(p.shape == std::vector<std::size_t>{40});
  const json report = read_json(dir.path() / "cl.report.json");
  CHECK(report["clusters"].is_array());
}
