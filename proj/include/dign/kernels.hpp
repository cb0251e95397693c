#pragma once

#include <cstddef>
#include <span>

namespace dign::kernels {

/// Geometry of a 2-D cross-correlation over one image.
struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  std::size_t dilation_h = 1;
  std::size_t dilation_w = 1;

  /// floor((H + 2 pad - dilation (k - 1) - 1) / stride) + 1, or 0 if the window does not fit.
  std::size_t out_h() const;
  std::size_t out_w() const;
  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
};

/// Caps the OpenMP team size from DIGN_THREADS once per process.
void configure_threads();
int max_threads();

// All kernels take whole batches in N-C-H-W layout. Forward kernels overwrite
// their output; backward kernels accumulate into theirs. Every output element
// is reduced in a fixed order by a single thread, so results are bitwise
// independent of the team size.

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::size_t batch, std::span<const T> input, std::span<const T> weight,
                    std::span<T> output);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::size_t batch, std::span<const T> grad_output,
                           std::span<const T> weight, std::span<T> grad_input);

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::size_t batch, std::span<const T> input,
                            std::span<const T> grad_output, std::span<T> grad_weight);

/// Number of valid mask entries under every output window; mask is (batch, 1, H, W).
template <typename T>
void window_count(const ConvGeometry& g, std::size_t batch, std::span<const T> mask, std::span<T> counts);

/// Serial direct-loop implementations kept as the test oracle and benchmark baseline.
namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::size_t batch, std::span<const T> input, std::span<const T> weight,
                    std::span<T> output);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::size_t batch, std::span<const T> grad_output,
                           std::span<const T> weight, std::span<T> grad_input);

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::size_t batch, std::span<const T> input,
                            std::span<const T> grad_output, std::span<T> grad_weight);

template <typename T>
void window_count(const ConvGeometry& g, std::size_t batch, std::span<const T> mask, std::span<T> counts);

}  // namespace reference

}  // namespace dign::kernels
