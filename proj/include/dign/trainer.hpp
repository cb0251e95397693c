#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dign/adam.hpp"
#include "dign/generator.hpp"
#include "dign/losses.hpp"
#include "dign/mask.hpp"

namespace dign {

enum class Precision { kFloat, kDouble };
const char* to_string(Precision p);
Precision parse_precision(const std::string& text);

struct TrainConfig {
  std::string image_dir;
  /// Empty: masks are generated per sample, alternating the shape and growth generators.
  std::string mask_dir;
  std::string out_dir = "run";
  std::size_t resolution = 256;
  std::size_t batch_size = 16;
  std::size_t iterations = 1000;
  ChannelScale channel_scale;
  NormMode norm_mode = NormMode::kScaled;
  AdamOptions adam;
  /// Step schedule: lr * lr_decay_factor^floor((iteration - 1) / lr_decay_every); 0 disables.
  std::size_t lr_decay_every = 0;
  double lr_decay_factor = 0.5;
  LossWeights weights;
  /// 0 writes only the final checkpoint.
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 0;
  Precision precision = Precision::kFloat;
  /// Checkpoint-format file of extractor weights; empty keeps the seeded random extractor.
  std::string extractor_weights;
  /// Checkpoint to continue from; empty starts at initialization.
  std::string resume;
  ShapeMaskConfig shape_masks;
  GrowthMaskConfig growth_masks;

  /// Throws ConfigError on a zero batch, a resolution not divisible by 16, or invalid sub-configs.
  void validate() const;
  GeneratorConfig generator_config() const;
  double lr_at(std::uint64_t iteration) const;
  std::string checkpoint_path() const;
  std::string metrics_path() const;
};

using LogFn = std::function<void(const std::string&)>;

/// Decoded training images, resized to a square resolution.
class ImageSet {
 public:
  /// PNG and PPM/PGM files of `dir` in name order; undecodable files are
  /// skipped with a warning. Throws ConfigError when nothing usable remains.
  static ImageSet scan(const std::string& dir, std::size_t resolution, const LogFn& log);
  /// In-memory set of (1, 3, R, R) tensors.
  static ImageSet from_tensors(const std::vector<Tensor<double>>& images);

  std::size_t size() const { return images_.size(); }
  std::size_t resolution() const { return resolution_; }
  /// 3 * R * R values in [0, 1], channel-major.
  const std::vector<double>& pixels(std::size_t i) const { return images_[i]; }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::size_t resolution_ = 0;
  std::vector<std::vector<double>> images_;
  std::vector<std::string> names_;
};

/// Mask source: files from a directory, or on-the-fly generation.
class MaskSet {
 public:
  static MaskSet scan(const std::string& dir, std::size_t resolution, const LogFn& log);
  static MaskSet generated(std::size_t resolution, ShapeMaskConfig shape, GrowthMaskConfig growth);
  static MaskSet from_masks(std::vector<MaskImage> masks);

  bool is_generated() const { return masks_.empty(); }
  std::size_t size() const { return masks_.size(); }
  /// Mask for one sample, drawn uniformly from the files or generated from `seed`.
  MaskImage sample(std::uint64_t seed) const;

 private:
  std::size_t resolution_ = 0;
  std::vector<MaskImage> masks_;
  ShapeMaskConfig shape_;
  GrowthMaskConfig growth_;
};

template <typename T>
struct Batch {
  Tensor<T> images;  // (B, 3, R, R)
  Tensor<T> masks;   // (B, 1, R, R)
  std::vector<std::size_t> image_indices;
};

/// Batch for a 0-based iteration. Global sample s = iteration * B + j takes
/// image perm_e[s mod n] with e = s / n and perm_e a seeded shuffle; its mask
/// is sampled independently from derive_seed(seed, {iteration, j}).
template <typename T>
Batch<T> make_batch(const ImageSet& images, const MaskSet& masks, std::uint64_t seed, std::uint64_t iteration,
                    std::size_t batch_size);

struct MetricsRow {
  std::uint64_t iteration = 0;  // 1-based; losses measured before that iteration's update
  double hole = 0.0;
  double valid = 0.0;
  double perceptual = 0.0;
  double style = 0.0;
  double total = 0.0;
  bool operator==(const MetricsRow&) const = default;
};

std::string format_metrics(const MetricsRow& row);
std::vector<MetricsRow> read_metrics(const std::string& path);

struct TrainResult {
  std::string checkpoint;
  std::vector<MetricsRow> metrics;  // rows produced by this call only
};

/// Runs cfg.iterations total iterations (counting those already in a resumed
/// checkpoint). Checkpoints and the metrics log go to cfg.out_dir. A
/// non-finite loss throws TrainingError and leaves the last checkpoint intact.
template <typename T>
TrainResult train(const TrainConfig& cfg, const LogFn& log = {});

/// As above with in-memory data.
template <typename T>
TrainResult train(const TrainConfig& cfg, const ImageSet& images, const MaskSet& masks, const LogFn& log = {});

/// Dispatches on cfg.precision.
TrainResult train_any(const TrainConfig& cfg, const LogFn& log = {});

}  // namespace dign
