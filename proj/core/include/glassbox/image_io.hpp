#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glassbox/mask.hpp"
#include "glassbox/tensor.hpp"

namespace glassbox::image_io {

/// 8-bit interleaved RGB.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

/// {3,H,W} tensor in [0,1] to RGB, nearest-neighbour upscaled by `scale`.
RgbImage to_rgb(const Tensor& image, std::size_t scale = 1);

/// Image with the mask highlighted (orange tint) and non-mask pixels dimmed.
RgbImage overlay(const Tensor& image, const Mask& mask, std::size_t scale = 1);

/// Grayscale heat view of a {H,W} magnitude map, normalized to its max.
RgbImage heatmap(const Tensor& magnitude, std::size_t scale = 1);

std::vector<std::uint8_t> encode_png(const RgbImage& image);
void write_png(const std::string& path, const RgbImage& image);

std::string base64(const std::vector<std::uint8_t>& bytes);

}  // namespace glassbox::image_io
