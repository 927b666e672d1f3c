#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "rsat/errors.hpp"
#include "rsat/io.hpp"
#include "rsat/rfmap.hpp"

namespace rsat {

/// Adapter-process provider. Speaks the line protocol over standard streams:
/// each request is the path of one tensor-format image file; each response is
/// one decimal activation (or, for feature-map requests, the path of a tensor
/// file holding the 2-D grid). The child must flush after every line.
class ProcessProvider final : public ActivationProvider {
public:
  ProcessProvider(const std::string& command, std::filesystem::path scratch_dir)
      : scratch_(std::move(scratch_dir)) {
    std::filesystem::create_directories(scratch_);
    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
      throw ProviderFailure("ProcessProvider: pipe failed");
    pid_ = ::fork();
    if (pid_ < 0) throw ProviderFailure("ProcessProvider: fork failed");
    if (pid_ == 0) {
      ::dup2(to_child[0], 0);
      ::dup2(from_child[1], 1);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      std::_Exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    to_child_ = ::fdopen(to_child[1], "w");
    from_child_ = ::fdopen(from_child[0], "r");
    if (to_child_ == nullptr || from_child_ == nullptr)
      throw ProviderFailure("ProcessProvider: fdopen failed");
  }

  ProcessProvider(const ProcessProvider&) = delete;
  ProcessProvider& operator=(const ProcessProvider&) = delete;

  ~ProcessProvider() override {
    if (to_child_ != nullptr) std::fclose(to_child_);
    if (from_child_ != nullptr) std::fclose(from_child_);
    if (pid_ > 0) {
      int status = 0;
      ::waitpid(pid_, &status, 0);
    }
  }

  double activate(const Image& image) override {
    const std::string line = exchange(image);
    char* end = nullptr;
    const double value = std::strtod(line.c_str(), &end);
    if (end == line.c_str() || !std::isfinite(value))
      throw ProviderFailure("ProcessProvider: expected a decimal activation, got '" + line + "'");
    return value;
  }

  /// Feature-map request: the response line names a tensor file.
  Map2D feature_map(const Image& image) {
    const std::string line = exchange(image);
    return map2d_from_tensor(read_tensor(line));
  }

  bool reentrant() const override { return false; }

private:
  std::string exchange(const Image& image) {
    const std::filesystem::path request = scratch_ / "provider_request.rsat";
    write_tensor(request, tensor_from_image(image));
    if (std::fprintf(to_child_, "%s\n", request.c_str()) < 0 || std::fflush(to_child_) != 0)
      throw ProviderFailure("ProcessProvider: write to provider failed");
    char buffer[4096];
    if (std::fgets(buffer, sizeof(buffer), from_child_) == nullptr)
      throw ProviderFailure("ProcessProvider: provider closed the stream");
    std::string line(buffer);
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
    return line;
  }

  std::filesystem::path scratch_;
  pid_t pid_ = -1;
  FILE* to_child_ = nullptr;
  FILE* from_child_ = nullptr;
};

/// Precomputed-table mode: a tensor of activations indexed by (image id,
/// occluder position), column 0 holding the unoccluded activation and columns
/// 1.. the stride-grid placements in row-major order.
struct ActivationTable {
  std::size_t n_images = 0;
  std::size_t ny = 0, nx = 0;
  int occluder_size_px = 0;
  int stride_px = 0;
  std::size_t height = 0, width = 0;
  std::vector<double> data;  // [n_images, 1 + ny*nx]

  static ActivationTable from_tensor(const TensorData& t) {
    if (t.shape.size() != 2)
      throw FormatError("ActivationTable: need a 2-D tensor", kHeaderOffset);
    ActivationTable table;
    table.n_images = t.shape[0];
    try {
      table.ny = t.metadata.at("grid_ny").get<std::size_t>();
      table.nx = t.metadata.at("grid_nx").get<std::size_t>();
      table.occluder_size_px = t.metadata.at("occluder_size_px").get<int>();
      table.stride_px = t.metadata.at("stride_px").get<int>();
      table.height = t.metadata.at("image_height").get<std::size_t>();
      table.width = t.metadata.at("image_width").get<std::size_t>();
    } catch (const json::exception& e) {
      throw FormatError("ActivationTable: missing grid metadata (" + std::string(e.what()) + ")",
                        kHeaderOffset);
    }
    if (t.shape[1] != 1 + table.ny * table.nx)
      throw FormatError("ActivationTable: column count does not match the grid", kHeaderOffset);
    table.data = t.data;
    return table;
  }

  double base(std::size_t image) const { return data[image * (1 + ny * nx)]; }

  OcclusionGrid grid(std::size_t image) const {
    OcclusionGrid g;
    g.base_activation = base(image);
    g.ny = ny;
    g.nx = nx;
    g.occluder_size_px = occluder_size_px;
    g.stride_px = stride_px;
    g.discrepancy.resize(ny * nx);
    const std::size_t row = image * (1 + ny * nx);
    for (std::size_t i = 0; i < ny * nx; ++i)
      g.discrepancy[i] = g.base_activation - data[row + 1 + i];
    return g;
  }
};

/// Receptive field from a precomputed table: top-k images by base activation,
/// per-image discrepancy maps, re-centered on their maxima, averaged.
inline Map2D average_rf_from_table(const ActivationTable& table, std::size_t k,
                                   bool sum_accumulation = false) {
  if (table.n_images < k || k == 0)
    throw TooFewImages("average_rf_from_table: table holds " + std::to_string(table.n_images) +
                       " images, need " + std::to_string(k));
  std::vector<std::size_t> order(table.n_images);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return table.base(a) > table.base(b); });
  Map2D acc = Map2D::zeros(table.height, table.width);
  for (std::size_t rank = 0; rank < k; ++rank) {
    const Map2D map = accumulate_discrepancy(table.grid(order[rank]), table.height, table.width,
                                             sum_accumulation);
    const auto [py, px] = map_argmax(map);
    const Map2D centered = recenter(map, py, px);
    for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += centered.data[i];
  }
  for (double& v : acc.data) v /= static_cast<double>(k);
  return acc;
}

}  // namespace rsat
