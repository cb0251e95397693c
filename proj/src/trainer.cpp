#include "dign/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dign/checkpoint.hpp"
#include "dign/image_io.hpp"
#include "dign/ops.hpp"
#include "dign/rng.hpp"

namespace dign {

namespace {

enum Stream : std::uint64_t { kGeneratorInit = 1, kExtractorInit = 2, kEpochShuffle = 3, kMaskDraw = 4 };

std::vector<std::filesystem::path> list_files(const std::string& dir, std::initializer_list<const char*> exts) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw ConfigError("not a directory: " + dir);
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    for (const char* e : exts)
      if (ext == e) out.push_back(entry.path());
  }
  if (ec) throw IoError("cannot list " + dir + ": " + ec.message());
  std::sort(out.begin(), out.end());
  return out;
}

void emit(const LogFn& log, const std::string& text) {
  if (log) log(text);
}

}  // namespace

const char* to_string(Precision p) { return p == Precision::kFloat ? "float" : "double"; }

Precision parse_precision(const std::string& text) {
  if (text == "float" || text == "f32") return Precision::kFloat;
  if (text == "double" || text == "f64") return Precision::kDouble;
  throw ConfigError("unknown precision '" + text + "' (expected float or double)");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (resolution == 0 || resolution % 16 != 0) {
    throw ConfigError("resolution must be a positive multiple of 16, got " + std::to_string(resolution));
  }
  if (!(adam.lr > 0) || !(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1) ||
      !(adam.epsilon > 0)) {
    throw ConfigError("Adam hyperparameters out of range");
  }
  if (!(lr_decay_factor > 0)) throw ConfigError("lr_decay_factor must be positive");
  weights.validate();
  if (mask_dir.empty()) {
    shape_masks.validate();
    growth_masks.validate();
  }
}

GeneratorConfig TrainConfig::generator_config() const {
  GeneratorConfig g = GeneratorConfig::standard(resolution, channel_scale);
  g.norm_mode = norm_mode;
  return g;
}

double TrainConfig::lr_at(std::uint64_t iteration) const {
  if (lr_decay_every == 0 || iteration == 0) return adam.lr;
  return adam.lr * std::pow(lr_decay_factor, static_cast<double>((iteration - 1) / lr_decay_every));
}

std::string TrainConfig::checkpoint_path() const {
  return (std::filesystem::path(out_dir) / "checkpoint.dgck").string();
}

std::string TrainConfig::metrics_path() const { return (std::filesystem::path(out_dir) / "metrics.tsv").string(); }

ImageSet ImageSet::scan(const std::string& dir, std::size_t resolution, const LogFn& log) {
  ImageSet set;
  set.resolution_ = resolution;
  for (const auto& path : list_files(dir, {".png", ".ppm", ".pgm"})) {
    try {
      const Tensor<double> t = image_to_tensor<double>(read_image(path.string()), 3);
      const Tensor<double> r = resize_bilinear(t, resolution, resolution);
      set.images_.emplace_back(r.data().begin(), r.data().end());
      set.names_.push_back(path.filename().string());
    } catch (const Error& e) {
      emit(log, "warning: skipping " + path.string() + ": " + e.what());
    }
  }
  if (set.images_.empty()) throw ConfigError("no usable images in " + dir);
  return set;
}

ImageSet ImageSet::from_tensors(const std::vector<Tensor<double>>& images) {
  if (images.empty()) throw ConfigError("empty image set");
  ImageSet set;
  set.resolution_ = images[0].shape().h;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Shape s = images[i].shape();
    if (s != Shape{1, 3, set.resolution_, set.resolution_}) {
      throw ShapeError("image set entries must be (1, 3, R, R), got " + s.str());
    }
    set.images_.emplace_back(images[i].data().begin(), images[i].data().end());
    set.names_.push_back("image" + std::to_string(i));
  }
  return set;
}

MaskSet MaskSet::scan(const std::string& dir, std::size_t resolution, const LogFn& log) {
  MaskSet set;
  set.resolution_ = resolution;
  for (const auto& path : list_files(dir, {".png", ".ppm", ".pgm"})) {
    try {
      set.masks_.push_back(resize_nearest(load_mask(path.string()), resolution, resolution));
    } catch (const Error& e) {
      emit(log, "warning: skipping " + path.string() + ": " + e.what());
    }
  }
  if (set.masks_.empty()) throw ConfigError("no usable masks in " + dir);
  return set;
}

MaskSet MaskSet::generated(std::size_t resolution, ShapeMaskConfig shape, GrowthMaskConfig growth) {
  shape.validate();
  growth.validate();
  MaskSet set;
  set.resolution_ = resolution;
  set.shape_ = shape;
  set.growth_ = growth;
  return set;
}

MaskSet MaskSet::from_masks(std::vector<MaskImage> masks) {
  if (masks.empty()) throw ConfigError("empty mask set");
  MaskSet set;
  set.resolution_ = masks[0].width;
  for (const auto& m : masks)
    if (m.width != set.resolution_ || m.height != set.resolution_) throw ShapeError("mask set entries must be square and equal");
  set.masks_ = std::move(masks);
  return set;
}

MaskImage MaskSet::sample(std::uint64_t seed) const {
  Rng rng(seed);
  if (!masks_.empty()) return masks_[rng.below(masks_.size())];
  const std::uint64_t kind = rng.below(2);
  const std::uint64_t mask_seed = derive_seed(seed, {kind});
  return kind == 0 ? gen_shape_mask(mask_seed, shape_, resolution_, resolution_)
                   : gen_growth_mask(mask_seed, growth_, resolution_, resolution_);
}

template <typename T>
Batch<T> make_batch(const ImageSet& images, const MaskSet& masks, std::uint64_t seed, std::uint64_t iteration,
                    std::size_t batch_size) {
  if (images.size() == 0) throw ConfigError("make_batch: empty image set");
  const std::size_t n = images.size(), R = images.resolution(), P = R * R;
  Batch<T> batch;
  std::vector<T> img(batch_size * 3 * P), msk(batch_size * P);
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 0; j < batch_size; ++j) {
    const std::uint64_t s = iteration * batch_size + j;
    const std::uint64_t epoch = s / n;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(derive_seed(seed, {kEpochShuffle, epoch}));
      for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      cached_epoch = epoch;
    }
    const std::size_t idx = perm[s % n];
    batch.image_indices.push_back(idx);
    const auto& px = images.pixels(idx);
    std::transform(px.begin(), px.end(), img.begin() + static_cast<std::ptrdiff_t>(j * 3 * P),
                   [](double v) { return static_cast<T>(v); });
    const MaskImage m = masks.sample(derive_seed(seed, {kMaskDraw, iteration, j}));
    if (m.width != R || m.height != R) throw ShapeError("make_batch: mask extent differs from image resolution");
    std::copy(m.bits.begin(), m.bits.end(), msk.begin() + static_cast<std::ptrdiff_t>(j * P));
  }
  batch.images = Tensor<T>::from_data(Shape{batch_size, 3, R, R}, std::move(img));
  batch.masks = Tensor<T>::from_data(Shape{batch_size, 1, R, R}, std::move(msk));
  return batch;
}

std::string format_metrics(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g", static_cast<unsigned long long>(r.iteration),
                r.hole, r.valid, r.perceptual, r.style, r.total);
  return buf;
}

std::vector<MetricsRow> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<MetricsRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream f(line);
    MetricsRow r;
    if (!(f >> r.iteration >> r.hole >> r.valid >> r.perceptual >> r.style >> r.total)) {
      throw ParseError(path + ": malformed metrics line '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

namespace {

template <typename T>
void write_training_checkpoint(const std::string& path, Generator<T>& gen, const AdamState<T>& state,
                               std::uint64_t iteration) {
  CheckpointFile<T> file = snapshot(gen, iteration);
  file.optimizer_step = state.step;
  for (std::size_t i = 0; i < state.names.size(); ++i) {
    file.tensors.emplace_back("adam.m." + state.names[i], state.m[i].detach());
    file.tensors.emplace_back("adam.v." + state.names[i], state.v[i].detach());
  }
  write_checkpoint_file(path, file);
}

template <typename T>
void restore_optimizer(const CheckpointFile<T>& file, AdamState<T>& state) {
  state.step = file.optimizer_step;
  for (std::size_t i = 0; i < state.names.size(); ++i) {
    for (auto [prefix, target] : {std::pair{"adam.m.", &state.m[i]}, std::pair{"adam.v.", &state.v[i]}}) {
      const Tensor<T> t = file.find(prefix + state.names[i]);
      if (!t.defined() || t.shape() != target->shape()) {
        throw IncompatibleError("checkpoint lacks optimizer state for " + state.names[i]);
      }
      std::copy(t.data().begin(), t.data().end(), target->mutable_data().begin());
    }
  }
}

}  // namespace

template <typename T>
TrainResult train(const TrainConfig& cfg, const ImageSet& images, const MaskSet& masks, const LogFn& log) {
  cfg.validate();
  if (images.resolution() != cfg.resolution) throw ConfigError("image set resolution differs from the config");
  Generator<T> gen(cfg.generator_config(), derive_seed(cfg.seed, {kGeneratorInit}));
  FeatureExtractor<T> fx = FeatureExtractor<T>::random(derive_seed(cfg.seed, {kExtractorInit}));
  if (!cfg.extractor_weights.empty()) fx.load_weights(cfg.extractor_weights);
  std::vector<NamedTensor<T>> tensors = gen.tensors();
  AdamState<T> state = AdamState<T>::create(tensors, cfg.adam);

  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create " + cfg.out_dir + ": " + ec.message());

  std::uint64_t start = 0;
  std::vector<MetricsRow> previous;
  if (!cfg.resume.empty()) {
    const CheckpointFile<T> file = read_checkpoint_file<T>(cfg.resume);
    restore(gen, file);
    restore_optimizer(file, state);
    start = file.iteration;
    if (std::filesystem::exists(cfg.metrics_path())) {
      for (const auto& r : read_metrics(cfg.metrics_path()))
        if (r.iteration <= start) previous.push_back(r);
    }
    emit(log, "resumed from " + cfg.resume + " at iteration " + std::to_string(start));
  }
  std::ofstream metrics(cfg.metrics_path(), std::ios::trunc);
  if (!metrics) throw IoError("cannot open " + cfg.metrics_path() + " for writing");
  for (const auto& r : previous) metrics << format_metrics(r) << '\n';
  metrics.flush();

  TrainResult result;
  result.checkpoint = cfg.checkpoint_path();
  std::uint64_t saved_at = ~std::uint64_t{0};
  const std::uint64_t progress_every = std::max<std::uint64_t>(1, cfg.iterations / 20);
  for (std::uint64_t it = start; it < cfg.iterations; ++it) {
    const Batch<T> batch = make_batch<T>(images, masks, cfg.seed, it, cfg.batch_size);
    state.options.lr = cfg.lr_at(it + 1);
    const Tensor<T> out = gen.forward(batch.images, batch.masks, Mode::kTrain);
    const Tensor<T> comp = composite(batch.images, out, batch.masks);
    const LossBreakdown<T> loss = total_loss(batch.images, out, comp, batch.masks, fx, cfg.weights);
    const MetricsRow row{it + 1, loss.hole, loss.valid, loss.perceptual, loss.style,
                         static_cast<double>(loss.total.item())};
    if (!std::isfinite(row.total)) {
      Tape<T>::current().reset();
      throw TrainingError("loss became non-finite at iteration " + std::to_string(it + 1) +
                          "; last good checkpoint kept at " + result.checkpoint);
    }
    backward(loss.total);
    adam_step(tensors, state);
    for (auto& t : tensors) t.tensor.zero_grad();
    metrics << format_metrics(row) << '\n';
    metrics.flush();
    result.metrics.push_back(row);
    if ((it + 1) % progress_every == 0) {
      emit(log, "iter " + std::to_string(it + 1) + " total " + std::to_string(row.total) + " hole " +
                    std::to_string(row.hole));
    }
    if (cfg.checkpoint_every != 0 && (it + 1) % cfg.checkpoint_every == 0) {
      write_training_checkpoint(result.checkpoint, gen, state, it + 1);
      saved_at = it + 1;
    }
  }
  const std::uint64_t final_iter = std::max<std::uint64_t>(start, cfg.iterations);
  if (saved_at != final_iter) write_training_checkpoint(result.checkpoint, gen, state, final_iter);
  return result;
}

template <typename T>
TrainResult train(const TrainConfig& cfg, const LogFn& log) {
  cfg.validate();
  const ImageSet images = ImageSet::scan(cfg.image_dir, cfg.resolution, log);
  const MaskSet masks = cfg.mask_dir.empty()
                            ? MaskSet::generated(cfg.resolution, cfg.shape_masks, cfg.growth_masks)
                            : MaskSet::scan(cfg.mask_dir, cfg.resolution, log);
  return train<T>(cfg, images, masks, log);
}

TrainResult train_any(const TrainConfig& cfg, const LogFn& log) {
  return cfg.precision == Precision::kFloat ? train<float>(cfg, log) : train<double>(cfg, log);
}

#define DIGN_INSTANTIATE(T)                                                                                   \
  template Batch<T> make_batch<T>(const ImageSet&, const MaskSet&, std::uint64_t, std::uint64_t, std::size_t); \
  template TrainResult train<T>(const TrainConfig&, const LogFn&);                                            \
  template TrainResult train<T>(const TrainConfig&, const ImageSet&, const MaskSet&, const LogFn&);

DIGN_INSTANTIATE(float)
DIGN_INSTANTIATE(double)
#undef DIGN_INSTANTIATE

}  // namespace dign
