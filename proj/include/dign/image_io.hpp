#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dign/tensor.hpp"

namespace dign {

/// Interleaved 8-bit raster, row-major, 1 or 3 channels.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool operator==(const Image8&) const = default;
};

/// PNG (any bit depth, palette, alpha) or binary PGM/PPM, by content.
/// Output has 1 channel for gray sources and 3 otherwise; alpha is dropped
/// and 16-bit samples are reduced to their high byte.
Image8 read_image(const std::string& path);

/// 8-bit gray or RGB PNG.
void write_png(const std::string& path, const Image8& image);

/// (1, channels, H, W) tensor in [0, 1]. A gray image is replicated when
/// `channels` is 3.
template <typename T>
Tensor<T> image_to_tensor(const Image8& image, std::size_t channels = 3);

/// Batch item `n` of a (N, 1 or 3, H, W) tensor, clamped and rounded.
template <typename T>
Image8 tensor_to_image(const Tensor<T>& t, std::size_t n = 0);

/// Bilinear resampling with half-pixel centers; forward only.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& t, std::size_t height, std::size_t width);

}  // namespace dign
