#include "glassbox/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>

#include "glassbox/errors.hpp"
#include "glassbox/model_io.hpp"

namespace glassbox::image_io {

namespace {

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

void require_rgb(const Tensor& image) {
  if (image.rank() != 3 || image.shape()[0] != 3) {
    throw ShapeError("expected a {3,H,W} image, got " + shape_to_string(image.shape()));
  }
}

RgbImage upscale(const RgbImage& src, std::size_t scale) {
  if (scale <= 1) return src;
  RgbImage out{src.width * scale, src.height * scale, {}};
  out.pixels.resize(out.width * out.height * 3);
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) {
      const std::size_t s = ((y / scale) * src.width + x / scale) * 3;
      const std::size_t d = (y * out.width + x) * 3;
      std::copy_n(src.pixels.begin() + static_cast<std::ptrdiff_t>(s), 3,
                  out.pixels.begin() + static_cast<std::ptrdiff_t>(d));
    }
  }
  return out;
}

void append_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

}  // namespace

RgbImage to_rgb(const Tensor& image, std::size_t scale) {
  require_rgb(image);
  const std::size_t h = image.shape()[1], w = image.shape()[2];
  RgbImage out{w, h, std::vector<std::uint8_t>(w * h * 3)};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.pixels[(y * w + x) * 3 + c] = to_byte(image.at(c, y, x));
    }
  }
  return upscale(out, scale);
}

RgbImage overlay(const Tensor& image, const Mask& mask, std::size_t scale) {
  require_rgb(image);
  const std::size_t h = image.shape()[1], w = image.shape()[2];
  if (mask.height != h || mask.width != w) throw ShapeError("overlay mask does not match the image");
  static constexpr float kTint[3] = {1.0f, 0.55f, 0.0f};
  RgbImage out{w, h, std::vector<std::uint8_t>(w * h * 3)};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const bool on = mask(y, x) != 0;
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = image.at(c, y, x);
        out.pixels[(y * w + x) * 3 + c] = to_byte(on ? 0.6f * v + 0.4f * kTint[c] : 0.35f * v);
      }
    }
  }
  return upscale(out, scale);
}

RgbImage heatmap(const Tensor& magnitude, std::size_t scale) {
  if (magnitude.rank() != 2) throw ShapeError("heatmap expects {H,W}, got " + shape_to_string(magnitude.shape()));
  const std::size_t h = magnitude.shape()[0], w = magnitude.shape()[1];
  float peak = 0.0f;
  for (float v : magnitude.data()) peak = std::max(peak, v);
  RgbImage out{w, h, std::vector<std::uint8_t>(w * h * 3)};
  for (std::size_t i = 0; i < w * h; ++i) {
    const std::uint8_t b = peak > 0.0f ? to_byte(magnitude.data()[i] / peak) : 0;
    out.pixels[i * 3] = out.pixels[i * 3 + 1] = out.pixels[i * 3 + 2] = b;
  }
  return upscale(out, scale);
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  if (image.width == 0 || image.height == 0 || image.pixels.size() != image.width * image.height * 3) {
    throw ShapeError("png encoder given an inconsistent image buffer");
  }
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  // libpng reports errors by longjmp; nothing with a destructor lives between here and there.
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png encoding failed");
  }
  {
    png_set_write_fn(png, &out, append_bytes, nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < image.height; ++y) {
      png_write_row(png, const_cast<png_bytep>(image.pixels.data() + y * image.width * 3));
    }
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const std::string& path, const RgbImage& image) { write_file_bytes(path, encode_png(image)); }

std::string base64(const std::vector<std::uint8_t>& bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

}  // namespace glassbox::image_io
