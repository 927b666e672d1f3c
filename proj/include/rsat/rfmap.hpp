#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "rsat/errors.hpp"
#include "rsat/parallel.hpp"

namespace rsat {

/// H x W x C image, row-major (y, x, channel).
struct Image {
  std::size_t height = 0, width = 0, channels = 1;
  std::vector<double> data;

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * channels + c];
  }
  void validate() const {
    if (height == 0 || width == 0 || channels == 0 || data.size() != height * width * channels)
      throw ShapeMismatch("Image: dimensions do not match data size");
  }
};

/// 2-D scalar map (discrepancy maps, receptive fields, feature maps).
struct Map2D {
  std::size_t height = 0, width = 0;
  std::vector<double> data;

  double& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return data[y * width + x]; }

  static Map2D zeros(std::size_t h, std::size_t w) { return {h, w, std::vector<double>(h * w, 0.0)}; }
};

/// Black-box scalar activation of a designated model unit. Implementations
/// that declare themselves reentrant may be called from several threads.
class ActivationProvider {
public:
  virtual ~ActivationProvider() = default;
  virtual double activate(const Image& image) = 0;
  virtual bool reentrant() const { return false; }
};

class FunctionProvider final : public ActivationProvider {
public:
  explicit FunctionProvider(std::function<double(const Image&)> fn, bool reentrant = true)
      : fn_(std::move(fn)), reentrant_(reentrant) {}
  double activate(const Image& image) override { return fn_(image); }
  bool reentrant() const override { return reentrant_; }

private:
  std::function<double(const Image&)> fn_;
  bool reentrant_;
};

struct RfConfig {
  int top_k = 25;
  int occluder_size_px = 11;
  int stride_px = 3;
  double occluder_fill = 0.0;
  bool sum_accumulation = false;  // per-pixel sum instead of mean over covering placements

  void validate(const Image& image) const {
    if (occluder_size_px <= 0 ||
        static_cast<std::size_t>(occluder_size_px) > std::min(image.height, image.width))
      throw OccluderTooLarge("RfConfig: occluder does not fit inside the image");
    if (stride_px < 1) throw ConfigInvalid("RfConfig: stride must be >= 1");
    if (top_k < 1) throw ConfigInvalid("RfConfig: top_k must be >= 1");
  }
};

/// Indices of the k most strongly activating images, descending activation;
/// ties keep input order.
inline std::vector<std::size_t> top_activating_images(ActivationProvider& provider,
                                                      const std::vector<Image>& images,
                                                      std::size_t k) {
  if (images.size() < k)
    throw TooFewImages("top_activating_images: " + std::to_string(images.size()) +
                       " images, need " + std::to_string(k));
  std::vector<double> activation(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) activation[i] = provider.activate(images[i]);
  std::vector<std::size_t> order(images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return activation[a] > activation[b]; });
  order.resize(k);
  return order;
}

/// Per-placement occlusion results on the stride grid.
struct OcclusionGrid {
  double base_activation = 0.0;
  std::size_t ny = 0, nx = 0;  // placements along y and x
  int occluder_size_px = 0;
  int stride_px = 0;
  std::vector<double> discrepancy;  // row-major (gy, gx): base - occluded
};

/// Evaluate activation(original) - activation(occluded) for every occluder
/// placement. Placements run in parallel only when the provider is reentrant.
inline OcclusionGrid occlusion_discrepancies(ActivationProvider& provider, const Image& image,
                                             const RfConfig& cfg, int threads = 1) {
  image.validate();
  cfg.validate(image);
  const auto size = static_cast<std::size_t>(cfg.occluder_size_px);
  const auto stride = static_cast<std::size_t>(cfg.stride_px);
  OcclusionGrid grid;
  grid.base_activation = provider.activate(image);
  grid.ny = (image.height - size) / stride + 1;
  grid.nx = (image.width - size) / stride + 1;
  grid.occluder_size_px = cfg.occluder_size_px;
  grid.stride_px = cfg.stride_px;
  grid.discrepancy.resize(grid.ny * grid.nx);

  auto occluded_activation = [&](Image& scratch, std::size_t y0, std::size_t x0) {
    for (std::size_t y = y0; y < y0 + size; ++y)
      for (std::size_t x = x0; x < x0 + size; ++x)
        for (std::size_t c = 0; c < scratch.channels; ++c)
          scratch.at(y, x, c) = cfg.occluder_fill;
    return provider.activate(scratch);
  };

  if (provider.reentrant() && threads != 1) {
    parallel_for(grid.ny * grid.nx, threads, [&](std::size_t g) {
      Image scratch = image;
      const std::size_t y0 = (g / grid.nx) * stride;
      const std::size_t x0 = (g % grid.nx) * stride;
      grid.discrepancy[g] = grid.base_activation - occluded_activation(scratch, y0, x0);
    });
  } else {
    Image scratch = image;
    std::vector<double> saved(size * size * image.channels);
    for (std::size_t g = 0; g < grid.ny * grid.nx; ++g) {
      const std::size_t y0 = (g / grid.nx) * stride;
      const std::size_t x0 = (g % grid.nx) * stride;
      std::size_t s = 0;
      for (std::size_t y = y0; y < y0 + size; ++y)
        for (std::size_t x = x0; x < x0 + size; ++x)
          for (std::size_t c = 0; c < image.channels; ++c) saved[s++] = scratch.at(y, x, c);
      grid.discrepancy[g] = grid.base_activation - occluded_activation(scratch, y0, x0);
      s = 0;
      for (std::size_t y = y0; y < y0 + size; ++y)
        for (std::size_t x = x0; x < x0 + size; ++x)
          for (std::size_t c = 0; c < image.channels; ++c) scratch.at(y, x, c) = saved[s++];
    }
  }
  return grid;
}

/// Spread per-placement discrepancies onto pixels: each pixel accumulates the
/// discrepancy of every placement covering it (mean by default, sum behind
/// the flag). Pixels no placement covers stay 0.
inline Map2D accumulate_discrepancy(const OcclusionGrid& grid, std::size_t height,
                                    std::size_t width, bool sum_accumulation) {
  Map2D map = Map2D::zeros(height, width);
  std::vector<double> cover(height * width, 0.0);
  const auto size = static_cast<std::size_t>(grid.occluder_size_px);
  const auto stride = static_cast<std::size_t>(grid.stride_px);
  for (std::size_t g = 0; g < grid.discrepancy.size(); ++g) {
    const std::size_t y0 = (g / grid.nx) * stride;
    const std::size_t x0 = (g % grid.nx) * stride;
    for (std::size_t y = y0; y < y0 + size; ++y)
      for (std::size_t x = x0; x < x0 + size; ++x) {
        map.at(y, x) += grid.discrepancy[g];
        cover[y * width + x] += 1.0;
      }
  }
  if (!sum_accumulation)
    for (std::size_t i = 0; i < map.data.size(); ++i)
      if (cover[i] > 0.0) map.data[i] /= cover[i];
  return map;
}

inline Map2D discrepancy_map(ActivationProvider& provider, const Image& image, const RfConfig& cfg,
                             int threads = 1) {
  const OcclusionGrid grid = occlusion_discrepancies(provider, image, cfg, threads);
  return accumulate_discrepancy(grid, image.height, image.width, cfg.sum_accumulation);
}

/// Row-major argmax; ties resolve to the top-left-most position.
inline std::pair<std::size_t, std::size_t> map_argmax(const Map2D& map) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < map.data.size(); ++i)
    if (map.data[i] > map.data[best]) best = i;
  return {best / map.width, best % map.width};
}

/// Translate so that (from_y, from_x) lands on the map center; zero fill.
inline Map2D recenter(const Map2D& map, std::size_t from_y, std::size_t from_x) {
  Map2D out = Map2D::zeros(map.height, map.width);
  const auto cy = static_cast<std::ptrdiff_t>(map.height / 2);
  const auto cx = static_cast<std::ptrdiff_t>(map.width / 2);
  const std::ptrdiff_t dy = cy - static_cast<std::ptrdiff_t>(from_y);
  const std::ptrdiff_t dx = cx - static_cast<std::ptrdiff_t>(from_x);
  for (std::size_t y = 0; y < map.height; ++y) {
    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) - dy;
    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(map.height)) continue;
    for (std::size_t x = 0; x < map.width; ++x) {
      const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) - dx;
      if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(map.width)) continue;
      out.at(y, x) = map.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
    }
  }
  return out;
}

/// Receptive-field estimate: per image a discrepancy map, re-centered on its
/// maximum, averaged across images.
inline Map2D average_rf(ActivationProvider& provider, const std::vector<Image>& images,
                        const RfConfig& cfg, int threads = 1) {
  if (images.empty()) throw TooFewImages("average_rf: no images");
  for (const auto& img : images)
    if (img.height != images.front().height || img.width != images.front().width ||
        img.channels != images.front().channels)
      throw ShapeMismatch("average_rf: images differ in shape");
  Map2D acc = Map2D::zeros(images.front().height, images.front().width);
  for (const auto& img : images) {
    const Map2D map = discrepancy_map(provider, img, cfg, threads);
    const auto [py, px] = map_argmax(map);
    const Map2D centered = recenter(map, py, px);
    for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += centered.data[i];
  }
  for (double& v : acc.data) v /= static_cast<double>(images.size());
  return acc;
}

/// Place the RF (its center) at every feature-map location scaled by the
/// feature-map value, sum the contributions, and threshold the summed map at
/// 50% of its maximum. Feature-map cells map onto image coordinates by
/// uniform scaling.
inline std::vector<std::uint8_t> selectivity_mask(const Map2D& rf, const Map2D& feature_map,
                                                  double threshold_frac = 0.5) {
  if (rf.height == 0 || rf.width == 0 || feature_map.height == 0 || feature_map.width == 0)
    throw ShapeMismatch("selectivity_mask: empty map");
  Map2D summed = Map2D::zeros(rf.height, rf.width);
  const auto cy = static_cast<std::ptrdiff_t>(rf.height / 2);
  const auto cx = static_cast<std::ptrdiff_t>(rf.width / 2);
  for (std::size_t fy = 0; fy < feature_map.height; ++fy) {
    for (std::size_t fx = 0; fx < feature_map.width; ++fx) {
      const double w = feature_map.at(fy, fx);
      if (w == 0.0) continue;
      const auto iy = static_cast<std::ptrdiff_t>(
          (static_cast<double>(fy) + 0.5) * static_cast<double>(rf.height) /
          static_cast<double>(feature_map.height));
      const auto ix = static_cast<std::ptrdiff_t>(
          (static_cast<double>(fx) + 0.5) * static_cast<double>(rf.width) /
          static_cast<double>(feature_map.width));
      for (std::size_t y = 0; y < rf.height; ++y) {
        const std::ptrdiff_t ty = iy + (static_cast<std::ptrdiff_t>(y) - cy);
        if (ty < 0 || ty >= static_cast<std::ptrdiff_t>(rf.height)) continue;
        for (std::size_t x = 0; x < rf.width; ++x) {
          const std::ptrdiff_t tx = ix + (static_cast<std::ptrdiff_t>(x) - cx);
          if (tx < 0 || tx >= static_cast<std::ptrdiff_t>(rf.width)) continue;
          summed.at(static_cast<std::size_t>(ty), static_cast<std::size_t>(tx)) += w * rf.at(y, x);
        }
      }
    }
  }
  bool all_zero = true;
  double max_value = summed.data.empty() ? 0.0 : summed.data[0];
  for (double v : summed.data) {
    if (v != 0.0) all_zero = false;
    max_value = std::max(max_value, v);
  }
  if (all_zero) throw AllZeroMap("selectivity_mask: summed map is all zero");
  const double threshold = threshold_frac * max_value;
  std::vector<std::uint8_t> mask(summed.data.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = summed.data[i] >= threshold ? 1 : 0;
  return mask;
}

/// Layered directed graph; edges connect adjacent layers only.
struct WeightGraph {
  struct Edge {
    int src_layer, src_unit, dst_layer, dst_unit;
    double weight;
  };
  std::vector<int> units_per_layer;
  std::vector<Edge> edges;

  void validate() const {
    for (const auto& e : edges) {
      if (e.dst_layer != e.src_layer + 1)
        throw ShapeMismatch("WeightGraph: edge does not connect adjacent layers");
      if (e.src_layer < 0 || static_cast<std::size_t>(e.dst_layer) >= units_per_layer.size() ||
          e.src_unit < 0 || e.src_unit >= units_per_layer[e.src_layer] || e.dst_unit < 0 ||
          e.dst_unit >= units_per_layer[e.dst_layer])
        throw NodeNotFound("WeightGraph: edge endpoint out of range");
    }
  }
};

struct ConnectionSelection {
  std::vector<WeightGraph::Edge> incoming;
  std::vector<WeightGraph::Edge> outgoing;
};

/// Incoming and outgoing edges whose |weight| exceeds threshold_frac times
/// the maximum |weight| on the same side of the node.
inline ConnectionSelection strongest_connections(const WeightGraph& g, int layer, int unit,
                                                 double threshold_frac) {
  g.validate();
  if (!(threshold_frac > 0.0 && threshold_frac <= 1.0))
    throw ConfigInvalid("strongest_connections: threshold_frac outside (0, 1]");
  if (layer < 0 || static_cast<std::size_t>(layer) >= g.units_per_layer.size() || unit < 0 ||
      unit >= g.units_per_layer[layer])
    throw NodeNotFound("strongest_connections: node (" + std::to_string(layer) + ", " +
                       std::to_string(unit) + ") not in graph");

  ConnectionSelection out;
  double max_in = 0.0, max_out = 0.0;
  for (const auto& e : g.edges) {
    if (e.dst_layer == layer && e.dst_unit == unit) max_in = std::max(max_in, std::abs(e.weight));
    if (e.src_layer == layer && e.src_unit == unit) max_out = std::max(max_out, std::abs(e.weight));
  }
  for (const auto& e : g.edges) {
    if (e.dst_layer == layer && e.dst_unit == unit &&
        std::abs(e.weight) > threshold_frac * max_in)
      out.incoming.push_back(e);
    if (e.src_layer == layer && e.src_unit == unit &&
        std::abs(e.weight) > threshold_frac * max_out)
      out.outgoing.push_back(e);
  }
  return out;
}

}  // namespace rsat
