#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "glassbox/tensor.hpp"

// Forward and reverse kernels for the supported layer kinds. All tensors are
// channel-first {C, H, W}; fc operates on flat vectors.
namespace glassbox::layers {

struct ConvGeometry {
  std::size_t in_channels = 0, in_height = 0, in_width = 0;
  std::size_t out_channels = 0, kernel = 0, stride = 1, padding = 0;

  std::size_t out_height() const { return (in_height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (in_width + 2 * padding - kernel) / stride + 1; }
  std::size_t patch_size() const { return in_channels * kernel * kernel; }
};

ConvGeometry conv_geometry(const Shape& in, const Shape& weight, std::size_t stride, std::size_t padding);

/// Unfolds `in` into a {patch_size, out_h * out_w} matrix (zero padding).
std::vector<float> im2col(const Tensor& in, const ConvGeometry& g);
/// Adjoint of im2col: scatter-adds columns back into a {C, H, W} tensor.
Tensor col2im(std::span<const float> cols, const ConvGeometry& g);

Tensor conv2d(const Tensor& in, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// Transposed convolution with the forward kernel: the gradient of a conv
/// layer's output with respect to its input.
Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& in_shape,
                             std::size_t stride, std::size_t padding);

/// Accumulates into grad_weight / grad_bias.
void conv2d_backward_params(const Tensor& grad_out, const Tensor& in, std::size_t stride,
                            std::size_t padding, Tensor& grad_weight, Tensor& grad_bias);

Tensor relu(const Tensor& in);
/// Passes gradient where the forward input was strictly positive.
Tensor relu_backward(const Tensor& grad_out, const Tensor& forward_in);

/// Max pooling; argmax receives the flat input offset for each output element.
/// Ties resolve to the lowest flat offset.
Tensor maxpool(const Tensor& in, std::size_t window, std::size_t stride, std::vector<std::uint32_t>& argmax);

/// Unpooling: routes every value to its recorded argmax offset.
Tensor unpool(const Tensor& grad_out, std::span<const std::uint32_t> argmax, const Shape& in_shape);

/// Global max over spatial positions, output shape {C}.
Tensor global_maxpool(const Tensor& in, std::vector<std::uint32_t>& argmax);

Tensor fully_connected(const Tensor& in, const Tensor& weight, const Tensor& bias);
Tensor fully_connected_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& in_shape);
void fully_connected_backward_params(const Tensor& grad_out, const Tensor& in, Tensor& grad_weight,
                                     Tensor& grad_bias);

/// Numerically stable softmax (max subtraction, double accumulation).
std::vector<float> softmax(std::span<const float> logits);

}  // namespace glassbox::layers
