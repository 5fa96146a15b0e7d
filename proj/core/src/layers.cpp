#include "glassbox/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "glassbox/errors.hpp"

namespace glassbox::layers {

namespace {

float dot(const float* a, const float* b, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

ConvGeometry conv_geometry(const Shape& in, const Shape& weight, std::size_t stride, std::size_t padding) {
  if (in.size() != 3 || weight.size() != 4) throw ShapeError("conv expects {C,H,W} input and {O,C,K,K} weight");
  if (weight[1] != in[0]) {
    throw ShapeError("conv weight expects " + std::to_string(weight[1]) + " input channels, got " +
                     std::to_string(in[0]));
  }
  if (weight[2] != weight[3]) throw ShapeError("conv kernel must be square");
  ConvGeometry g{in[0], in[1], in[2], weight[0], weight[2], stride, padding};
  if (stride == 0 || in[1] + 2 * padding < g.kernel || in[2] + 2 * padding < g.kernel) {
    throw ShapeError("conv kernel does not fit input " + shape_to_string(in));
  }
  return g;
}

std::vector<float> im2col(const Tensor& in, const ConvGeometry& g) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), cols = oh * ow;
  std::vector<float> out(g.patch_size() * cols, 0.0f);
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        float* row = out.data() + ((c * g.kernel + ky) * g.kernel + kx) * cols;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_height)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_width)) continue;
            row[oy * ow + ox] = in.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
          }
        }
      }
    }
  }
  return out;
}

Tensor col2im(std::span<const float> cols_data, const ConvGeometry& g) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), cols = oh * ow;
  Tensor out({g.in_channels, g.in_height, g.in_width});
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const float* row = cols_data.data() + ((c * g.kernel + ky) * g.kernel + kx) * cols;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_height)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_width)) continue;
            out.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) += row[oy * ow + ox];
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d(const Tensor& in, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  const auto g = conv_geometry(in.shape(), weight.shape(), stride, padding);
  const std::size_t cols = g.out_height() * g.out_width(), k = g.patch_size();
  const auto patches = im2col(in, g);
  Tensor out({g.out_channels, g.out_height(), g.out_width()});
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    float* dst = out.data().data() + o * cols;
    std::fill(dst, dst + cols, bias[o]);
    const float* w = weight.data().data() + o * k;
    for (std::size_t j = 0; j < k; ++j) axpy(w[j], patches.data() + j * cols, dst, cols);
  }
  return out;
}

Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& in_shape,
                             std::size_t stride, std::size_t padding) {
  const auto g = conv_geometry(in_shape, weight.shape(), stride, padding);
  const std::size_t cols = g.out_height() * g.out_width(), k = g.patch_size();
  if (grad_out.shape() != Shape{g.out_channels, g.out_height(), g.out_width()}) {
    throw ShapeError("conv gradient shape " + shape_to_string(grad_out.shape()) + " does not match layer output");
  }
  std::vector<float> dcols(k * cols, 0.0f);
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const float* go = grad_out.data().data() + o * cols;
    const float* w = weight.data().data() + o * k;
    for (std::size_t j = 0; j < k; ++j) {
      if (w[j] != 0.0f) axpy(w[j], go, dcols.data() + j * cols, cols);
    }
  }
  return col2im(dcols, g);
}

void conv2d_backward_params(const Tensor& grad_out, const Tensor& in, std::size_t stride,
                            std::size_t padding, Tensor& grad_weight, Tensor& grad_bias) {
  const auto g = conv_geometry(in.shape(), grad_weight.shape(), stride, padding);
  const std::size_t cols = g.out_height() * g.out_width(), k = g.patch_size();
  const auto patches = im2col(in, g);
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const float* go = grad_out.data().data() + o * cols;
    float* gw = grad_weight.data().data() + o * k;
    float bsum = 0.0f;
    for (std::size_t p = 0; p < cols; ++p) bsum += go[p];
    grad_bias[o] += bsum;
    for (std::size_t j = 0; j < k; ++j) gw[j] += dot(go, patches.data() + j * cols, cols);
  }
}

Tensor relu(const Tensor& in) {
  Tensor out = in;
  for (auto& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& forward_in) {
  if (grad_out.shape() != forward_in.shape()) throw ShapeError("relu gradient shape mismatch");
  Tensor out = grad_out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(forward_in[i] > 0.0f)) out[i] = 0.0f;
  }
  return out;
}

Tensor maxpool(const Tensor& in, std::size_t window, std::size_t stride, std::vector<std::uint32_t>& argmax) {
  if (in.rank() != 3) throw ShapeError("maxpool expects {C,H,W} input");
  const std::size_t c_n = in.dim(0), h = in.dim(1), w = in.dim(2);
  if (window == 0 || stride == 0 || window > h || window > w) {
    throw ShapeError("maxpool window does not fit input " + shape_to_string(in.shape()));
  }
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  Tensor out({c_n, oh, ow});
  argmax.assign(out.size(), 0);
  std::size_t o = 0;
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        float best = -std::numeric_limits<float>::infinity();
        std::size_t best_at = (c * h + oy * stride) * w + ox * stride;
        // row-major scan with strict '>' keeps the lowest flat offset on ties
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t at = (c * h + oy * stride + ky) * w + ox * stride + kx;
            if (in[at] > best) {
              best = in[at];
              best_at = at;
            }
          }
        }
        out[o] = best;
        argmax[o] = static_cast<std::uint32_t>(best_at);
      }
    }
  }
  return out;
}

Tensor unpool(const Tensor& grad_out, std::span<const std::uint32_t> argmax, const Shape& in_shape) {
  if (argmax.size() != grad_out.size()) throw TraceError("unpool index count does not match pooled tensor");
  Tensor out(in_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] >= out.size()) throw TraceError("unpool index outside of input tensor");
    out[argmax[i]] += grad_out[i];
  }
  return out;
}

Tensor global_maxpool(const Tensor& in, std::vector<std::uint32_t>& argmax) {
  if (in.rank() != 3) throw ShapeError("global max pool expects {C,H,W} input");
  const std::size_t c_n = in.dim(0), plane = in.dim(1) * in.dim(2);
  Tensor out({c_n});
  argmax.assign(c_n, 0);
  for (std::size_t c = 0; c < c_n; ++c) {
    const float* p = in.data().data() + c * plane;
    std::size_t best = 0;
    for (std::size_t i = 1; i < plane; ++i) {
      if (p[i] > p[best]) best = i;
    }
    out[c] = p[best];
    argmax[c] = static_cast<std::uint32_t>(c * plane + best);
  }
  return out;
}

Tensor fully_connected(const Tensor& in, const Tensor& weight, const Tensor& bias) {
  const std::size_t n_in = in.size(), n_out = bias.size();
  if (weight.shape() != Shape{n_out, n_in}) {
    throw ShapeError("fc weight " + shape_to_string(weight.shape()) + " does not match input of length " +
                     std::to_string(n_in));
  }
  Tensor out({n_out});
  for (std::size_t o = 0; o < n_out; ++o) {
    out[o] = bias[o] + dot(weight.data().data() + o * n_in, in.data().data(), n_in);
  }
  return out;
}

Tensor fully_connected_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& in_shape) {
  const std::size_t n_in = shape_size(in_shape);
  Tensor out(in_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) {
    axpy(grad_out[o], weight.data().data() + o * n_in, out.data().data(), n_in);
  }
  return out;
}

void fully_connected_backward_params(const Tensor& grad_out, const Tensor& in, Tensor& grad_weight,
                                     Tensor& grad_bias) {
  const std::size_t n_in = in.size();
  for (std::size_t o = 0; o < grad_out.size(); ++o) {
    grad_bias[o] += grad_out[o];
    axpy(grad_out[o], in.data().data(), grad_weight.data().data() + o * n_in, n_in);
  }
}

std::vector<float> softmax(std::span<const float> logits) {
  std::vector<float> out(logits.size());
  if (logits.empty()) return out;
  const float peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> e(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp(static_cast<double>(logits[i]) - static_cast<double>(peak));
    sum += e[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<float>(e[i] / sum);
  return out;
}

}  // namespace glassbox::layers
