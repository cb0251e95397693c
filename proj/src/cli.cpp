#include "dign/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>

#include "dign/checkpoint.hpp"
#include "dign/gradcheck_suite.hpp"
#include "dign/image_io.hpp"
#include "dign/kernels.hpp"

namespace dign {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    const auto r = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (const std::exception&) {
    throw UsageError("key " + key + ": expected a non-negative integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (const std::exception&) {
    throw UsageError("key " + key + ": expected a number, got '" + v + "'");
  }
}

template <typename F>
auto wrap_parse(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw UsageError("key " + key + ": " + e.what());
  }
}

using Setter = std::function<void(const std::string& key, const std::string& value)>;

void add_mask_keys(std::map<std::string, Setter>& t, DatasetOptions& o) {
  auto sz = [](std::size_t& f) { return [&f](const std::string& k, const std::string& v) { f = to_u64(k, v); }; };
  auto dbl = [](double& f) { return [&f](const std::string& k, const std::string& v) { f = to_double(k, v); }; };
  t["shape.min_count"] = sz(o.shape.min_count);
  t["shape.max_count"] = sz(o.shape.max_count);
  t["shape.min_size"] = dbl(o.shape.min_size);
  t["shape.max_size"] = dbl(o.shape.max_size);
  t["shape.min_rotation"] = dbl(o.shape.min_rotation);
  t["shape.max_rotation"] = dbl(o.shape.max_rotation);
  t["shape.hole_lo"] = dbl(o.shape.hole_lo);
  t["shape.hole_hi"] = dbl(o.shape.hole_hi);
  t["shape.max_attempts"] = sz(o.shape.max_attempts);
  t["shape.mix"] = [&o](const std::string& k, const std::string& v) {
    std::istringstream in(v);
    std::string part;
    std::size_t i = 0;
    while (std::getline(in, part, ',')) {
      if (i == 4) throw UsageError("key " + k + ": expected four comma-separated weights");
      o.shape.mix[i++] = to_double(k, trim(part));
    }
    if (i != 4) throw UsageError("key " + k + ": expected four comma-separated weights");
  };
  t["growth.step_budget"] = sz(o.growth.step_budget);
  t["growth.expand_probability"] = dbl(o.growth.expand_probability);
  t["growth.min_dilation"] = sz(o.growth.min_dilation);
  t["growth.max_dilation"] = sz(o.growth.max_dilation);
  t["growth.hole_lo"] = dbl(o.growth.hole_lo);
  t["growth.hole_hi"] = dbl(o.growth.hole_hi);
  t["growth.max_attempts"] = sz(o.growth.max_attempts);
}

void apply_table(const std::map<std::string, Setter>& table, const std::map<std::string, std::string>& kv) {
  std::vector<std::string> unknown;
  for (const auto& [k, v] : kv)
    if (!table.count(k)) unknown.push_back(k);
  if (!unknown.empty()) {
    std::string list;
    for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw UsageError("unknown configuration keys: " + list);
  }
  for (const auto& [k, v] : kv) table.at(k)(k, v);
}

}  // namespace

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(n) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw UsageError(path + ":" + std::to_string(n) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

void apply_mask_config(DatasetOptions& opts, const std::map<std::string, std::string>& kv) {
  std::map<std::string, Setter> table;
  add_mask_keys(table, opts);
  apply_table(table, kv);
}

void apply_train_config(TrainConfig& cfg, const std::map<std::string, std::string>& kv) {
  std::map<std::string, Setter> t;
  auto str = [](std::string& f) { return [&f](const std::string&, const std::string& v) { f = v; }; };
  auto sz = [](std::size_t& f) { return [&f](const std::string& k, const std::string& v) { f = to_u64(k, v); }; };
  auto dbl = [](double& f) { return [&f](const std::string& k, const std::string& v) { f = to_double(k, v); }; };
  t["image_dir"] = str(cfg.image_dir);
  t["mask_dir"] = str(cfg.mask_dir);
  t["out_dir"] = str(cfg.out_dir);
  t["extractor_weights"] = str(cfg.extractor_weights);
  t["resume"] = str(cfg.resume);
  t["resolution"] = sz(cfg.resolution);
  t["batch_size"] = sz(cfg.batch_size);
  t["iterations"] = sz(cfg.iterations);
  t["checkpoint_every"] = sz(cfg.checkpoint_every);
  t["lr_decay_every"] = sz(cfg.lr_decay_every);
  t["lr_decay_factor"] = dbl(cfg.lr_decay_factor);
  t["lr"] = dbl(cfg.adam.lr);
  t["beta1"] = dbl(cfg.adam.beta1);
  t["beta2"] = dbl(cfg.adam.beta2);
  t["adam_epsilon"] = dbl(cfg.adam.epsilon);
  t["w_hole"] = dbl(cfg.weights.hole);
  t["w_valid"] = dbl(cfg.weights.valid);
  t["w_perc"] = dbl(cfg.weights.perceptual);
  t["w_style"] = dbl(cfg.weights.style);
  t["seed"] = [&cfg](const std::string& k, const std::string& v) { cfg.seed = to_u64(k, v); };
  t["channel_scale"] = [&cfg](const std::string& k, const std::string& v) {
    cfg.channel_scale = wrap_parse(k, [&] { return ChannelScale::parse(v); });
  };
  t["norm_mode"] = [&cfg](const std::string& k, const std::string& v) {
    cfg.norm_mode = wrap_parse(k, [&] { return parse_norm_mode(v); });
  };
  t["precision"] = [&cfg](const std::string& k, const std::string& v) {
    cfg.precision = wrap_parse(k, [&] { return parse_precision(v); });
  };
  DatasetOptions masks{cfg.resolution, cfg.resolution, cfg.shape_masks, cfg.growth_masks};
  add_mask_keys(t, masks);
  apply_table(t, kv);
  cfg.shape_masks = masks.shape;
  cfg.growth_masks = masks.growth;
}

namespace {

struct GenMasksArgs {
  std::size_t count = 0;
  std::string out;
  std::string mix = "both";
  std::uint64_t seed = 0;
  std::string size = "256x256";
  std::string config;
};

struct TrainArgs {
  std::string config, images, masks, channel_scale, resume, out, precision;
  std::optional<std::size_t> iters, resolution, batch;
  std::optional<std::uint64_t> seed;
};

struct InpaintArgs {
  std::string ckpt, image, mask, out;
};

struct VizArgs {
  std::string ckpt, image, mask, out;
  std::size_t layer = 0;
  std::size_t channels = 15;
};

struct GradArgs {
  std::string only;
  bool inject_fault = false;
};

std::pair<std::size_t, std::size_t> parse_size(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw UsageError("--size expects WxH, got '" + text + "'");
  const std::size_t w = to_u64("--size", text.substr(0, x)), h = to_u64("--size", text.substr(x + 1));
  if (w == 0 || h == 0) throw UsageError("--size extents must be positive");
  return {w, h};
}

int cmd_gen_masks(const GenMasksArgs& a, std::ostream& out) {
  DatasetOptions opts;
  if (!a.config.empty()) apply_mask_config(opts, read_config_file(a.config));
  std::tie(opts.width, opts.height) = parse_size(a.size);
  const MaskMix mix = wrap_parse("--mix", [&] { return parse_mask_mix(a.mix); });
  const auto entries = write_mask_dataset(a.count, a.out, mix, a.seed, opts);
  out << "wrote " << entries.size() << " masks and manifest.tsv to " << a.out << "\n";
  return kExitOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig cfg;
  if (!a.config.empty()) apply_train_config(cfg, read_config_file(a.config));
  if (!a.images.empty()) cfg.image_dir = a.images;
  if (!a.masks.empty()) cfg.mask_dir = a.masks;
  if (!a.out.empty()) cfg.out_dir = a.out;
  if (!a.resume.empty()) cfg.resume = a.resume;
  if (a.iters) cfg.iterations = *a.iters;
  if (a.resolution) cfg.resolution = *a.resolution;
  if (a.batch) cfg.batch_size = *a.batch;
  if (a.seed) cfg.seed = *a.seed;
  if (!a.channel_scale.empty()) cfg.channel_scale = wrap_parse("--channel-scale", [&] { return ChannelScale::parse(a.channel_scale); });
  if (!a.precision.empty()) cfg.precision = wrap_parse("--precision", [&] { return parse_precision(a.precision); });
  if (cfg.image_dir.empty()) throw UsageError("train needs an image directory (--images or image_dir)");
  const TrainResult r = train_any(cfg, [&err](const std::string& line) { err << line << "\n"; });
  out << "trained " << r.metrics.size() << " iterations; checkpoint " << r.checkpoint << "\n";
  if (!r.metrics.empty()) {
    const auto& last = r.metrics.back();
    out << "final hole_l1 " << last.hole << " total " << last.total << "\n";
  }
  return kExitOk;
}

/// Network-resolution tensors for an 8-bit image and its mask.
std::pair<Tensor<float>, Tensor<float>> network_inputs(const Image8& img, const MaskImage& mask, std::size_t r) {
  const Tensor<float> t = resize_bilinear(image_to_tensor<float>(img, 3), r, r);
  return {t, mask_to_tensor<float>(resize_nearest(mask, r, r))};
}

int cmd_inpaint(const InpaintArgs& a, std::ostream& out) {
  Generator<float> gen = load_checkpoint<float>(a.ckpt);
  const Image8 img = read_image(a.image);
  const MaskImage mask = load_mask(a.mask);
  if (mask.width != img.width || mask.height != img.height) {
    throw ShapeError("mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height) + " but image is " +
                     std::to_string(img.width) + "x" + std::to_string(img.height));
  }
  const std::size_t r = gen.config().input_resolution;
  const auto [x, m] = network_inputs(img, mask, r);
  const Tensor<float> filled = resize_bilinear(inpaint(gen, x, m), img.height, img.width);
  const Image8 net = tensor_to_image(filled);
  Image8 result = img;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t xx = 0; xx < img.width; ++xx) {
      if (mask.at(xx, y)) continue;
      const std::size_t p = y * img.width + xx;
      if (img.channels == 3) {
        for (std::size_t c = 0; c < 3; ++c) result.pixels[p * 3 + c] = net.pixels[p * 3 + c];
      } else {
        const unsigned sum = net.pixels[p * 3] + net.pixels[p * 3 + 1] + net.pixels[p * 3 + 2];
        result.pixels[p] = static_cast<std::uint8_t>((sum + 1) / 3);
      }
    }
  write_png(a.out, result);
  out << "wrote " << a.out << "\n";
  return kExitOk;
}

double channel_stat(std::span<const float> v, bool want_max) {
  return want_max ? *std::max_element(v.begin(), v.end()) : *std::min_element(v.begin(), v.end());
}

int cmd_viz(const VizArgs& a, std::ostream& out) {
  Generator<float> gen = load_checkpoint<float>(a.ckpt);
  const auto valid = gen.inception_indices();
  if (std::find(valid.begin(), valid.end(), a.layer) == valid.end()) {
    std::string list;
    for (auto i : valid) list += (list.empty() ? "" : ", ") + std::to_string(i);
    throw UsageError("--layer " + std::to_string(a.layer) + " is not an inception layer; valid indices: " + list);
  }
  const Image8 img = read_image(a.image);
  const MaskImage mask = a.mask.empty() ? MaskImage::valid(img.width, img.height) : load_mask(a.mask);
  if (mask.width != img.width || mask.height != img.height) throw ShapeError("mask and image extents differ");
  const std::size_t r = gen.config().input_resolution;
  const auto [x, m] = network_inputs(img, mask, r);

  NoGradGuard<float> no_grad;
  std::vector<MaskedActivation<float>> inputs;
  gen.forward(x, m, Mode::kEval, nullptr, &inputs);
  InceptionLayer<float>* layer = gen.inception_at(a.layer);
  const auto branches = layer->branch_outputs(inputs[a.layer - 1]);

  std::error_code ec;
  std::filesystem::create_directories(a.out, ec);
  if (ec) throw IoError("cannot create " + a.out + ": " + ec.message());
  std::size_t written = 0;
  for (std::size_t b = 0; b < branches.size(); ++b) {
    const Shape s = branches[b].shape();
    const std::size_t channels = std::min(a.channels, s.c);
    for (std::size_t c = 0; c < channels; ++c) {
      const auto plane = branches[b].data().subspan(c * s.plane(), s.plane());
      const double lo = channel_stat(plane, false), hi = channel_stat(plane, true);
      Image8 dump{s.w, s.h, 1, std::vector<std::uint8_t>(s.plane(), 0)};
      if (hi > lo) {
        for (std::size_t i = 0; i < s.plane(); ++i) {
          dump.pixels[i] = static_cast<std::uint8_t>(std::lround((plane[i] - lo) / (hi - lo) * 255.0));
        }
      }
      std::ostringstream name;
      name << "layer" << a.layer << "_branch" << b << "_ch" << c << ".png";
      write_png((std::filesystem::path(a.out) / name.str()).string(), dump);
      ++written;
    }
  }
  out << "wrote " << written << " channel images from " << branches.size() << " branches to " << a.out << "\n";
  return kExitOk;
}

int cmd_gradcheck(const GradArgs& a, std::ostream& out) {
  GradCheckOptions opts;
  opts.only = a.only;
  opts.inject_fault = a.inject_fault;
  std::vector<GradCheckResult> results;
  try {
    results = run_gradcheck_suite(opts);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  bool ok = !results.empty();
  out << std::left << std::setw(12) << "family" << std::setw(40) << "case" << std::setw(14) << "max rel err"
      << std::setw(10) << "probes" << std::setw(8) << "kinks" << "status\n";
  for (const auto& r : results) {
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << r.max_rel_error;
    out << std::left << std::setw(12) << r.family << std::setw(40) << r.name << std::setw(14) << err.str()
        << std::setw(10) << r.probes << std::setw(8) << r.kinks << (r.passed ? "ok" : "FAIL") << "\n";
    ok = ok && r.passed;
  }
  out << (ok ? "all gradients within " : "gradient mismatch above ") << opts.tolerance << "\n";
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  kernels::configure_threads();
  CLI::App app{"Image inpainting with partial-convolution inception networks"};
  app.require_subcommand(1);

  GenMasksArgs gm;
  auto* sub_gm = app.add_subcommand("gen-masks", "Write a random mask dataset");
  sub_gm->add_option("--count", gm.count, "Number of masks")->required();
  sub_gm->add_option("--out", gm.out, "Output directory")->required();
  sub_gm->add_option("--mix", gm.mix, "shape, growth or both");
  sub_gm->add_option("--seed", gm.seed, "Dataset seed");
  sub_gm->add_option("--size", gm.size, "Mask extent as WxH");
  sub_gm->add_option("--config", gm.config, "Config file with shape.* / growth.* keys");

  TrainArgs tr;
  auto* sub_tr = app.add_subcommand("train", "Train a generator");
  sub_tr->add_option("--config", tr.config, "Config file");
  sub_tr->add_option("--images", tr.images, "Image directory");
  sub_tr->add_option("--masks", tr.masks, "Mask directory (omit to generate masks on the fly)");
  sub_tr->add_option("--iters", tr.iters, "Total iterations");
  sub_tr->add_option("--resolution", tr.resolution, "Square training resolution");
  sub_tr->add_option("--batch", tr.batch, "Batch size");
  sub_tr->add_option("--channel-scale", tr.channel_scale, "Channel multiplier, e.g. 1/8");
  sub_tr->add_option("--resume", tr.resume, "Checkpoint to continue from");
  sub_tr->add_option("--out", tr.out, "Output directory");
  sub_tr->add_option("--seed", tr.seed, "Run seed");
  sub_tr->add_option("--precision", tr.precision, "float or double");

  InpaintArgs ip;
  auto* sub_ip = app.add_subcommand("inpaint", "Fill the holes of an image");
  sub_ip->add_option("--ckpt", ip.ckpt, "Checkpoint")->required();
  sub_ip->add_option("--image", ip.image, "Input image")->required();
  sub_ip->add_option("--mask", ip.mask, "Mask image, black = hole")->required();
  sub_ip->add_option("--out", ip.out, "Output PNG")->required();

  VizArgs vz;
  auto* sub_vz = app.add_subcommand("viz-features", "Dump per-branch activations of an inception layer");
  sub_vz->add_option("--ckpt", vz.ckpt, "Checkpoint")->required();
  sub_vz->add_option("--image", vz.image, "Input image")->required();
  sub_vz->add_option("--mask", vz.mask, "Mask image (default: all valid)");
  sub_vz->add_option("--layer", vz.layer, "Layer index, 1-16")->required();
  sub_vz->add_option("--channels", vz.channels, "Channels per branch");
  sub_vz->add_option("--out", vz.out, "Output directory")->required();

  GradArgs gc;
  auto* sub_gc = app.add_subcommand("gradcheck", "Run the gradient check suite");
  sub_gc->add_option("--only", gc.only, "Restrict to one op family");
  sub_gc->add_flag("--inject-fault", gc.inject_fault, "Corrupt every backward pass by 1%");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sub_gm) return cmd_gen_masks(gm, out);
    if (*sub_tr) return cmd_train(tr, out, err);
    if (*sub_ip) return cmd_inpaint(ip, out);
    if (*sub_vz) return cmd_viz(vz, out);
    if (*sub_gc) return cmd_gradcheck(gc, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace dign
