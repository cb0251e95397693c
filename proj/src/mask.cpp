#include "dign/mask.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dign/rng.hpp"

namespace dign {

MaskImage MaskImage::valid(std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw ShapeError("mask extents must be positive");
  return {width, height, std::vector<std::uint8_t>(width * height, 1)};
}

std::size_t MaskImage::hole_count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{0}));
}

double MaskImage::hole_fraction() const {
  return bits.empty() ? 0.0 : static_cast<double>(hole_count()) / static_cast<double>(bits.size());
}

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::string describe(const ShapeMaskConfig& c) {
  std::ostringstream s;
  s << "shape mask config {count " << c.min_count << ".." << c.max_count << ", size " << c.min_size << ".."
    << c.max_size << ", hole fraction " << c.hole_lo << ".." << c.hole_hi << "}";
  return s.str();
}

std::string describe(const GrowthMaskConfig& c) {
  std::ostringstream s;
  s << "growth mask config {budget " << c.step_budget << ", p " << c.expand_probability << ", dilation "
    << c.min_dilation << ".." << c.max_dilation << ", hole fraction " << c.hole_lo << ".." << c.hole_hi << "}";
  return s.str();
}

/// Marks every pixel whose center satisfies `inside` within the clipped box.
template <typename Inside>
void stamp(MaskImage& m, double x0, double y0, double x1, double y1, Inside inside) {
  const auto lo_x = static_cast<long long>(std::floor(std::max(0.0, x0)));
  const auto lo_y = static_cast<long long>(std::floor(std::max(0.0, y0)));
  const auto hi_x = std::min(static_cast<long long>(m.width) - 1, static_cast<long long>(std::ceil(x1)));
  const auto hi_y = std::min(static_cast<long long>(m.height) - 1, static_cast<long long>(std::ceil(y1)));
  for (long long y = lo_y; y <= hi_y; ++y)
    for (long long x = lo_x; x <= hi_x; ++x)
      if (inside(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
        m.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = 0;
      }
}

/// Center along one axis keeping a half extent inside the canvas when it fits.
double place(Rng& rng, double half_extent, double side) {
  if (2.0 * half_extent <= side) return rng.uniform(half_extent, side - half_extent);
  return rng.uniform(0.0, side);
}

ShapeKind pick_kind(Rng& rng, const std::array<double, 4>& mix) {
  double total = 0.0;
  for (double v : mix) total += v;
  double r = rng.uniform(0.0, total);
  for (std::size_t i = 0; i < 4; ++i) {
    if (r < mix[i]) return static_cast<ShapeKind>(i);
    r -= mix[i];
  }
  for (std::size_t i = 4; i-- > 0;)
    if (mix[i] > 0) return static_cast<ShapeKind>(i);
  return ShapeKind::kRectangle;
}

void draw_rotated(MaskImage& m, Rng& rng, double hx, double hy, double theta, bool ellipse) {
  const double c = std::cos(theta), s = std::sin(theta);
  const double ex = std::abs(hx * c) + std::abs(hy * s);
  const double ey = std::abs(hx * s) + std::abs(hy * c);
  const double cx = place(rng, ex, static_cast<double>(m.width));
  const double cy = place(rng, ey, static_cast<double>(m.height));
  stamp(m, cx - ex, cy - ey, cx + ex, cy + ey, [&](double px, double py) {
    const double dx = px - cx, dy = py - cy;
    const double u = dx * c + dy * s;
    const double v = -dx * s + dy * c;
    if (ellipse) return (u / hx) * (u / hx) + (v / hy) * (v / hy) <= 1.0;
    return std::abs(u) <= hx && std::abs(v) <= hy;
  });
}

void draw_string(MaskImage& m, Rng& rng, const ShapeMaskConfig& cfg) {
  const double w = static_cast<double>(m.width), h = static_cast<double>(m.height);
  const double side = std::min(w, h);
  const auto segments = rng.between(4, 12);
  const double half = std::max(rng.uniform(0.01, 0.05) * side / 2.0, 0.5);
  double x = rng.uniform(0.0, w), y = rng.uniform(0.0, h);
  double angle = rng.uniform(0.0, kTwoPi);
  for (long long i = 0; i < segments; ++i) {
    const double len = rng.uniform(cfg.min_size, cfg.max_size) * side / 2.0;
    const double nx = std::clamp(x + len * std::cos(angle), 0.0, w);
    const double ny = std::clamp(y + len * std::sin(angle), 0.0, h);
    const double dx = nx - x, dy = ny - y, len2 = dx * dx + dy * dy;
    stamp(m, std::min(x, nx) - half, std::min(y, ny) - half, std::max(x, nx) + half, std::max(y, ny) + half,
          [&](double px, double py) {
            double t = len2 > 0 ? ((px - x) * dx + (py - y) * dy) / len2 : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            const double qx = x + t * dx - px, qy = y + t * dy - py;
            return qx * qx + qy * qy <= half * half;
          });
    x = nx;
    y = ny;
    angle += rng.uniform(-kTwoPi / 4, kTwoPi / 4);
  }
}

void draw_shape(MaskImage& m, Rng& rng, const ShapeMaskConfig& cfg) {
  const double w = static_cast<double>(m.width), h = static_cast<double>(m.height);
  const ShapeKind kind = pick_kind(rng, cfg.mix);
  const double theta = rng.uniform(cfg.min_rotation, cfg.max_rotation);
  switch (kind) {
    case ShapeKind::kRectangle: {
      const double sx = rng.uniform(cfg.min_size, cfg.max_size), sy = rng.uniform(cfg.min_size, cfg.max_size);
      draw_rotated(m, rng, sx * w / 2, sy * h / 2, theta, false);
      break;
    }
    case ShapeKind::kCircle: {
      const double r = rng.uniform(cfg.min_size, cfg.max_size) * std::min(w, h) / 2;
      draw_rotated(m, rng, r, r, 0.0, true);
      break;
    }
    case ShapeKind::kEllipse: {
      const double sx = rng.uniform(cfg.min_size, cfg.max_size), sy = rng.uniform(cfg.min_size, cfg.max_size);
      draw_rotated(m, rng, sx * w / 2, sy * h / 2, theta, true);
      break;
    }
    case ShapeKind::kString:
      draw_string(m, rng, cfg);
      break;
  }
}

}  // namespace

void ShapeMaskConfig::validate() const {
  if (!(hole_lo >= 0.01 && hole_hi <= 0.9 && hole_lo < hole_hi)) {
    throw ConfigError("shape mask hole fraction range must satisfy 0.01 <= lo < hi <= 0.9");
  }
  if (min_count == 0 || min_count > max_count) throw ConfigError("shape mask count range must be 1 <= min <= max");
  if (!(min_size > 0 && min_size <= max_size && max_size <= 1)) {
    throw ConfigError("shape mask size range must satisfy 0 < min <= max <= 1");
  }
  if (!(min_rotation <= max_rotation)) throw ConfigError("shape mask rotation range is inverted");
  double total = 0.0;
  for (double v : mix) {
    if (!(v >= 0)) throw ConfigError("shape mix weights must be non-negative");
    total += v;
  }
  if (total <= 0) throw ConfigError("shape mix weights must not all be zero");
  if (max_attempts == 0) throw ConfigError("shape mask attempt budget must be positive");
}

void GrowthMaskConfig::validate() const {
  if (step_budget == 0) throw ConfigError("growth mask step budget must be positive");
  if (!(expand_probability > 0 && expand_probability <= 1)) {
    throw ConfigError("growth expansion probability must lie in (0, 1]");
  }
  if (min_dilation > max_dilation) throw ConfigError("growth dilation range is inverted");
  if (!(hole_lo >= 0 && hole_lo < hole_hi && hole_hi < 1)) {
    throw ConfigError("growth hole fraction range must satisfy 0 <= lo < hi < 1");
  }
  if (max_attempts == 0) throw ConfigError("growth mask attempt budget must be positive");
}

MaskImage gen_shape_mask(std::uint64_t seed, const ShapeMaskConfig& cfg, std::size_t width, std::size_t height) {
  cfg.validate();
  Rng rng(seed);
  for (std::size_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    MaskImage m = MaskImage::valid(width, height);
    const auto count = rng.between(static_cast<long long>(cfg.min_count), static_cast<long long>(cfg.max_count));
    for (long long i = 0; i < count; ++i) draw_shape(m, rng, cfg);
    const double f = m.hole_fraction();
    if (f >= cfg.hole_lo && f <= cfg.hole_hi) return m;
  }
  throw GenerationError("no mask within the hole fraction range after " + std::to_string(cfg.max_attempts) +
                        " attempts for " + describe(cfg));
}

namespace {

std::vector<std::pair<int, int>> disk_offsets(std::size_t radius) {
  std::vector<std::pair<int, int>> out;
  const int r = static_cast<int>(radius);
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dx * dx + dy * dy <= r * r) out.emplace_back(dx, dy);
  return out;
}

}  // namespace

GrowthResult grow_mask(std::uint64_t seed, const GrowthMaskConfig& cfg, std::size_t width, std::size_t height) {
  cfg.validate();
  if (width == 0 || height == 0) throw ShapeError("mask extents must be positive");
  Rng rng(seed);
  const std::size_t area = width * height;
  auto interior = [&](std::size_t side) {
    return side >= 3 ? static_cast<std::size_t>(rng.between(1, static_cast<long long>(side) - 2))
                     : static_cast<std::size_t>(rng.below(side));
  };
  for (std::size_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    GrowthResult res;
    res.radius = static_cast<std::size_t>(
        rng.between(static_cast<long long>(cfg.min_dilation), static_cast<long long>(cfg.max_dilation)));
    const double target = rng.uniform(cfg.hole_lo, cfg.hole_hi);
    const auto target_count = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(target * area)));
    res.seed_x = interior(width);
    res.seed_y = interior(height);
    const auto disk = disk_offsets(res.radius);

    res.grown = MaskImage::valid(width, height);
    std::vector<std::uint8_t> covered(area, 0), queued(area, 0);
    std::size_t covered_count = 0, steps = 0;
    std::vector<std::size_t> frontier{res.seed_y * width + res.seed_x}, reserve;
    queued[frontier[0]] = 1;

    while (steps < cfg.step_budget && covered_count < target_count) {
      while (frontier.empty() && !reserve.empty()) {
        const std::size_t k = rng.below(reserve.size());
        const std::size_t p = reserve[k];
        reserve[k] = reserve.back();
        reserve.pop_back();
        if (res.grown.bits[p] == 1 && !queued[p]) {
          frontier.push_back(p);
          queued[p] = 1;
        }
      }
      if (frontier.empty()) break;
      const std::size_t k = rng.below(frontier.size());
      const std::size_t p = frontier[k];
      frontier[k] = frontier.back();
      frontier.pop_back();
      queued[p] = 0;
      res.grown.bits[p] = 0;
      ++steps;
      const long long px = static_cast<long long>(p % width), py = static_cast<long long>(p / width);
      for (const auto& [dx, dy] : disk) {
        const long long x = px + dx, y = py + dy;
        if (x < 0 || y < 0 || x >= static_cast<long long>(width) || y >= static_cast<long long>(height)) continue;
        auto& c = covered[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)];
        if (!c) {
          c = 1;
          ++covered_count;
        }
      }
      const long long nb[4][2] = {{px - 1, py}, {px + 1, py}, {px, py - 1}, {px, py + 1}};
      for (const auto& [x, y] : nb) {
        if (x < 0 || y < 0 || x >= static_cast<long long>(width) || y >= static_cast<long long>(height)) continue;
        const std::size_t q = static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x);
        if (res.grown.bits[q] == 0 || queued[q]) continue;
        if (rng.bernoulli(cfg.expand_probability)) {
          frontier.push_back(q);
          queued[q] = 1;
        } else {
          reserve.push_back(q);
        }
      }
    }
    res.mask = dilate(res.grown, res.radius);
    const double f = res.mask.hole_fraction();
    if (f >= cfg.hole_lo && f <= cfg.hole_hi) return res;
    if (f < cfg.hole_lo) {
      throw GenerationError("step budget exhausted at hole fraction " + std::to_string(f) + " for " + describe(cfg));
    }
  }
  throw GenerationError("no mask within the hole fraction range after " + std::to_string(cfg.max_attempts) +
                        " attempts for " + describe(cfg));
}

MaskImage dilate(const MaskImage& mask, std::size_t radius) {
  if (radius == 0) return mask;
  MaskImage out = mask;
  const auto disk = disk_offsets(radius);
  const long long w = static_cast<long long>(mask.width), h = static_cast<long long>(mask.height);
  for (long long y = 0; y < h; ++y)
    for (long long x = 0; x < w; ++x) {
      if (mask.bits[static_cast<std::size_t>(y * w + x)] != 0) continue;
      for (const auto& [dx, dy] : disk) {
        const long long xx = x + dx, yy = y + dy;
        if (xx >= 0 && yy >= 0 && xx < w && yy < h) out.bits[static_cast<std::size_t>(yy * w + xx)] = 0;
      }
    }
  return out;
}

MaskStats mask_stats(const MaskImage& mask) {
  MaskStats st;
  st.hole_fraction = mask.hole_fraction();
  const std::size_t w = mask.width, h = mask.height;
  std::vector<std::uint8_t> seen(mask.bits.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.bits.size(); ++start) {
    if (mask.bits[start] != 0 || seen[start]) continue;
    BoundingBox box{start % w, start / w, start % w, start / w};
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const std::size_t x = p % w, y = p / w;
      box.x0 = std::min(box.x0, x);
      box.x1 = std::max(box.x1, x);
      box.y0 = std::min(box.y0, y);
      box.y1 = std::max(box.y1, y);
      auto visit = [&](std::size_t q) {
        if (mask.bits[q] == 0 && !seen[q]) {
          seen[q] = 1;
          stack.push_back(q);
        }
      };
      if (x > 0) visit(p - 1);
      if (x + 1 < w) visit(p + 1);
      if (y > 0) visit(p - w);
      if (y + 1 < h) visit(p + w);
    }
    st.bounding_boxes.push_back(box);
  }
  st.component_count = st.bounding_boxes.size();
  return st;
}

Image8 mask_to_image(const MaskImage& mask) {
  Image8 img{mask.width, mask.height, 1, std::vector<std::uint8_t>(mask.bits.size())};
  for (std::size_t i = 0; i < mask.bits.size(); ++i) img.pixels[i] = mask.bits[i] ? 255 : 0;
  return img;
}

MaskImage mask_from_image(const Image8& image) {
  MaskImage m = MaskImage::valid(image.width, image.height);
  for (std::size_t i = 0; i < m.bits.size(); ++i) {
    unsigned total = 0;
    for (std::size_t c = 0; c < image.channels; ++c) total += image.pixels[i * image.channels + c];
    m.bits[i] = total >= 128u * image.channels ? 1 : 0;
  }
  return m;
}

void save_mask(const std::string& path, const MaskImage& mask) { write_png(path, mask_to_image(mask)); }

MaskImage load_mask(const std::string& path) { return mask_from_image(read_image(path)); }

MaskImage resize_nearest(const MaskImage& mask, std::size_t width, std::size_t height) {
  if (mask.width == width && mask.height == height) return mask;
  MaskImage out = MaskImage::valid(width, height);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = std::min(mask.width - 1, (2 * x + 1) * mask.width / (2 * width));
      const std::size_t sy = std::min(mask.height - 1, (2 * y + 1) * mask.height / (2 * height));
      out.at(x, y) = mask.at(sx, sy);
    }
  return out;
}

template <typename T>
Tensor<T> mask_to_tensor(const MaskImage& mask) {
  std::vector<T> data(mask.bits.begin(), mask.bits.end());
  return Tensor<T>::from_data(Shape{1, 1, mask.height, mask.width}, std::move(data));
}

template Tensor<float> mask_to_tensor<float>(const MaskImage&);
template Tensor<double> mask_to_tensor<double>(const MaskImage&);

const char* to_string(MaskMix mix) {
  switch (mix) {
    case MaskMix::kShape:
      return "shape";
    case MaskMix::kGrowth:
      return "growth";
    case MaskMix::kBoth:
      return "both";
  }
  return "?";
}

MaskMix parse_mask_mix(const std::string& text) {
  if (text == "shape") return MaskMix::kShape;
  if (text == "growth") return MaskMix::kGrowth;
  if (text == "both") return MaskMix::kBoth;
  throw ConfigError("unknown mask mix '" + text + "' (expected shape, growth or both)");
}

namespace {

std::string manifest_line(const ManifestEntry& e) {
  char frac[64];
  std::snprintf(frac, sizeof frac, "%.17g", e.hole_fraction);
  return e.filename + '\t' + e.generator + '\t' + std::to_string(e.seed) + '\t' + frac + '\t' +
         std::to_string(e.components) + '\n';
}

}  // namespace

std::vector<ManifestEntry> write_mask_dataset(std::size_t n, const std::string& out_dir, MaskMix mix,
                                              std::uint64_t seed, const DatasetOptions& options) {
  if (mix != MaskMix::kGrowth) options.shape.validate();
  if (mix != MaskMix::kShape) options.growth.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  std::vector<ManifestEntry> entries(n);
  std::vector<std::string> errors(n);
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 4)
  for (long long i = 0; i < count; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    ManifestEntry& e = entries[idx];
    char name[32];
    std::snprintf(name, sizeof name, "mask_%06zu.png", idx);
    e.filename = name;
    e.seed = derive_seed(seed, {idx});
    const bool shape = mix == MaskMix::kShape || (mix == MaskMix::kBoth && idx % 2 == 0);
    e.generator = shape ? "shape" : "growth";
    try {
      const MaskImage m = shape ? gen_shape_mask(e.seed, options.shape, options.width, options.height)
                                : gen_growth_mask(e.seed, options.growth, options.width, options.height);
      const MaskStats st = mask_stats(m);
      e.hole_fraction = st.hole_fraction;
      e.components = st.component_count;
      save_mask((std::filesystem::path(out_dir) / e.filename).string(), m);
    } catch (const std::exception& ex) {
      errors[idx] = ex.what();
    }
  }
  for (const auto& err : errors)
    if (!err.empty()) throw IoError(err);

  const std::string manifest = (std::filesystem::path(out_dir) / "manifest.tsv").string();
  std::ofstream out(manifest, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + manifest + " for writing");
  for (const auto& e : entries) out << manifest_line(e);
  if (!out.flush()) throw IoError("write failed: " + manifest);
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    ManifestEntry e;
    std::string seed, frac, comps;
    if (!std::getline(fields, e.filename, '\t') || !std::getline(fields, e.generator, '\t') ||
        !std::getline(fields, seed, '\t') || !std::getline(fields, frac, '\t') || !std::getline(fields, comps)) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected five tab-separated fields");
    }
    try {
      e.seed = std::stoull(seed);
      e.hole_fraction = std::stod(frac);
      e.components = std::stoull(comps);
    } catch (const std::exception&) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": malformed number");
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace dign
