#include "dign/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <tuple>

namespace dign {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = msg;
  std::longjmp(png_jmpbuf(png), 1);
}

void png_warn(png_structp, png_const_charp) {}

Image8 read_png(const std::string& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path);
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_warn);
  if (!png) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  Image8 img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError(path + ": " + (message.empty() ? "malformed PNG" : message));
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  img.pixels.resize(img.width * img.height * img.channels);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (img.channels != 1 && img.channels != 3) throw ParseError(path + ": unsupported channel layout");
  return img;
}

Image8 read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  in >> magic;
  std::size_t channels = magic == "P5" ? 1 : magic == "P6" ? 3 : 0;
  if (channels == 0) throw ParseError(path + ": unsupported image format");
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    long long v = -1;
    in >> v;
    if (!in || v <= 0) throw ParseError(path + ": bad header");
    return static_cast<std::size_t>(v);
  };
  Image8 img;
  img.width = next_int();
  img.height = next_int();
  if (next_int() != 255) throw ParseError(path + ": only 8-bit samples are supported");
  in.get();
  img.channels = channels;
  img.pixels.resize(img.width * img.height * channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw ParseError(path + ": truncated");
  return img;
}

}  // namespace

Image8 read_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open " + path);
  unsigned char sig[8] = {};
  probe.read(reinterpret_cast<char*>(sig), 8);
  if (probe.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
  return read_pnm(path);
}

void write_png(const std::string& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw ContractError("write_png: 1 or 3 channels required");
  if (image.pixels.size() != image.width * image.height * image.channels || image.width == 0 || image.height == 0) {
    throw ContractError("write_png: pixel buffer does not match extents");
  }
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open " + path + " for writing");
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_warn);
  if (!png) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(image.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < image.height; ++y) {
    rows[y] = const_cast<png_bytep>(image.pixels.data() + y * image.width * image.channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw IoError("write failed: " + path);
}

template <typename T>
Tensor<T> image_to_tensor(const Image8& image, std::size_t channels) {
  if (channels != 1 && channels != 3) throw ContractError("image_to_tensor: 1 or 3 channels required");
  if (image.channels == 3 && channels == 1) throw ContractError("image_to_tensor: refusing to drop color");
  const Shape s{1, channels, image.height, image.width};
  std::vector<T> data(s.numel());
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) {
        const std::size_t src = image.channels == 1 ? 0 : c;
        data[(c * s.h + y) * s.w + x] = static_cast<T>(image.at(x, y, src)) / T(255);
      }
  return Tensor<T>::from_data(s, std::move(data));
}

template <typename T>
Image8 tensor_to_image(const Tensor<T>& t, std::size_t n) {
  const Shape s = t.shape();
  if (s.c != 1 && s.c != 3) throw ShapeError("tensor_to_image: 1 or 3 channels required, got " + s.str());
  if (n >= s.n) throw ShapeError("tensor_to_image: batch index out of range");
  Image8 img{s.w, s.h, s.c, std::vector<std::uint8_t>(s.plane() * s.c)};
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) {
        const double v = std::clamp(static_cast<double>(t.at(n, c, y, x)), 0.0, 1.0);
        img.pixels[(y * s.w + x) * s.c + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& t, std::size_t height, std::size_t width) {
  const Shape s = t.shape();
  if (height == 0 || width == 0) throw ShapeError("resize_bilinear: zero target extent");
  if (s.h == height && s.w == width) return t.detach();
  const Shape o{s.n, s.c, height, width};
  std::vector<T> out(o.numel());
  auto axis = [](std::size_t dst, std::size_t src_len, std::size_t dst_len) {
    const double pos = (static_cast<double>(dst) + 0.5) * static_cast<double>(src_len) / dst_len - 0.5;
    const double clamped = std::clamp(pos, 0.0, static_cast<double>(src_len - 1));
    const std::size_t i0 = static_cast<std::size_t>(std::floor(clamped));
    const std::size_t i1 = std::min(i0 + 1, src_len - 1);
    return std::tuple<std::size_t, std::size_t, double>{i0, i1, clamped - static_cast<double>(i0)};
  };
  const auto d = t.data();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* src = d.data() + nc * s.plane();
    T* dst = out.data() + nc * o.plane();
    for (std::size_t y = 0; y < height; ++y) {
      const auto [y0, y1, fy] = axis(y, s.h, height);
      for (std::size_t x = 0; x < width; ++x) {
        const auto [x0, x1, fx] = axis(x, s.w, width);
        const double top = src[y0 * s.w + x0] * (1 - fx) + src[y0 * s.w + x1] * fx;
        const double bottom = src[y1 * s.w + x0] * (1 - fx) + src[y1 * s.w + x1] * fx;
        dst[y * width + x] = static_cast<T>(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return Tensor<T>::from_data(o, std::move(out));
}

#define DIGN_INSTANTIATE(T)                                                  \
  template Tensor<T> image_to_tensor<T>(const Image8&, std::size_t);         \
  template Image8 tensor_to_image<T>(const Tensor<T>&, std::size_t);         \
  template Tensor<T> resize_bilinear<T>(const Tensor<T>&, std::size_t, std::size_t);

DIGN_INSTANTIATE(float)
DIGN_INSTANTIATE(double)
#undef DIGN_INSTANTIATE

}  // namespace dign
