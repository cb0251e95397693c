#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dign/image_io.hpp"
#include "dign/tensor.hpp"

namespace dign {

/// Binary raster: 1 = valid, 0 = hole.
struct MaskImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> bits;

  static MaskImage valid(std::size_t width, std::size_t height);
  std::uint8_t at(std::size_t x, std::size_t y) const { return bits[y * width + x]; }
  std::uint8_t& at(std::size_t x, std::size_t y) { return bits[y * width + x]; }
  std::size_t hole_count() const;
  double hole_fraction() const;
  bool operator==(const MaskImage&) const = default;
};

enum class ShapeKind { kRectangle, kCircle, kEllipse, kString };

struct ShapeMaskConfig {
  /// Relative sampling weights, indexed by ShapeKind.
  std::array<double, 4> mix{1.0, 1.0, 1.0, 1.0};
  std::size_t min_count = 1;
  std::size_t max_count = 5;
  /// Shape extent as a fraction of the canvas side (per axis for
  /// rectangles and ellipses, of min(w, h) for circles and string segments).
  double min_size = 0.1;
  double max_size = 0.5;
  double min_rotation = 0.0;
  double max_rotation = 6.283185307179586;
  double hole_lo = 0.05;
  double hole_hi = 0.5;
  std::size_t max_attempts = 1000;

  /// Throws ConfigError unless 0.01 <= hole_lo < hole_hi <= 0.9 and the ranges are ordered.
  void validate() const;
};

struct GrowthMaskConfig {
  /// Maximum number of pixels the walk converts.
  std::size_t step_budget = 1u << 20;
  /// Probability that each 4-neighbour of a converted pixel joins the frontier.
  double expand_probability = 0.6;
  std::size_t min_dilation = 1;
  std::size_t max_dilation = 3;
  /// Final (post-dilation) hole fraction range; growth stops once a target
  /// sampled from it is reached.
  double hole_lo = 0.05;
  double hole_hi = 0.5;
  std::size_t max_attempts = 100;

  /// Throws ConfigError on an empty budget or inverted ranges.
  void validate() const;
};

MaskImage gen_shape_mask(std::uint64_t seed, const ShapeMaskConfig& cfg, std::size_t width, std::size_t height);

struct GrowthResult {
  MaskImage grown;  // before dilation: one 4-connected hole
  MaskImage mask;   // dilate(grown, radius)
  std::size_t radius = 0;
  std::size_t seed_x = 0;
  std::size_t seed_y = 0;
};

GrowthResult grow_mask(std::uint64_t seed, const GrowthMaskConfig& cfg, std::size_t width, std::size_t height);

inline MaskImage gen_growth_mask(std::uint64_t seed, const GrowthMaskConfig& cfg, std::size_t width,
                                 std::size_t height) {
  return grow_mask(seed, cfg, width, height).mask;
}

/// Holes grow by the disk {dx^2 + dy^2 <= r^2}; radius 0 is the identity.
MaskImage dilate(const MaskImage& mask, std::size_t radius);

struct BoundingBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive
  bool operator==(const BoundingBox&) const = default;
};

struct MaskStats {
  double hole_fraction = 0.0;
  std::size_t component_count = 0;
  std::vector<BoundingBox> bounding_boxes;  // in raster order of each component's first pixel
};

/// Exact counts; hole components use 4-connectivity.
MaskStats mask_stats(const MaskImage& mask);

/// 0/255 single-channel image.
Image8 mask_to_image(const MaskImage& mask);
/// Thresholds the channel mean at 128: brighter is valid.
MaskImage mask_from_image(const Image8& image);
void save_mask(const std::string& path, const MaskImage& mask);
MaskImage load_mask(const std::string& path);
MaskImage resize_nearest(const MaskImage& mask, std::size_t width, std::size_t height);

/// (1, 1, H, W) tensor of exact 0/1 values.
template <typename T>
Tensor<T> mask_to_tensor(const MaskImage& mask);

enum class MaskMix { kShape, kGrowth, kBoth };
const char* to_string(MaskMix mix);
MaskMix parse_mask_mix(const std::string& text);

struct ManifestEntry {
  std::string filename;
  std::string generator;
  std::uint64_t seed = 0;
  double hole_fraction = 0.0;
  std::size_t components = 0;
  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetOptions {
  std::size_t width = 256;
  std::size_t height = 256;
  ShapeMaskConfig shape;
  GrowthMaskConfig growth;
};

/// Writes mask_NNNNNN.png files and manifest.tsv into `out_dir`. Mask i
/// uses seed derive_seed(seed, {i}); with kBoth, even indices use the shape
/// generator and odd ones the growth generator.
std::vector<ManifestEntry> write_mask_dataset(std::size_t n, const std::string& out_dir, MaskMix mix,
                                              std::uint64_t seed, const DatasetOptions& options = {});

/// Tab-separated: filename, generator, seed, hole_fraction, components.
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace dign
