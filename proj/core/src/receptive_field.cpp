#include "glassbox/receptive_field.hpp"

#include <algorithm>
#include <cmath>

#include "glassbox/errors.hpp"
#include "glassbox/layers.hpp"

namespace glassbox::rf {

void RFParams::validate() const {
  if (!(binarize_fraction > 0.0 && binarize_fraction < 1.0)) {
    throw ValidationError("receptive field binarize fraction must be in (0, 1)");
  }
}

Tensor build_masked_feature(const nn::ForwardTrace& trace, std::size_t feature_id,
                            const features::FeatureStats& stats, double gamma) {
  const Tensor& cf = trace.conv_final();
  if (cf.rank() != 3) throw TraceError("trace has no conv_final tensor");
  if (feature_id >= cf.dim(0) || feature_id >= stats.dim()) {
    throw RangeError("feature " + std::to_string(feature_id) + " outside [0, " + std::to_string(cf.dim(0)) + ")");
  }
  Tensor out(cf.shape());
  const std::size_t plane = cf.dim(1) * cf.dim(2);
  const double cut = gamma * stats.mu[feature_id];
  for (std::size_t i = feature_id * plane; i < (feature_id + 1) * plane; ++i) {
    // a dead feature (mu = 0) never activates, matching normalization
    if (stats.mu[feature_id] > 0.0 && static_cast<double>(cf[i]) >= cut) out[i] = 1.0f;
  }
  return out;
}

Tensor reverse_pass(const nn::Model& model, const nn::ForwardTrace& trace, const Tensor& masked) {
  const std::size_t top = model.conv_final_index();
  if (trace.activations.size() != model.layer_count() || trace.argmax.size() != model.layer_count()) {
    throw TraceError("trace does not belong to this model");
  }
  for (std::size_t i = 0; i <= top; ++i) {
    if (trace.activations[i].shape() != model.output_shape(i)) {
      throw TraceError("trace activation of layer '" + model.layer(i).name + "' does not match the model");
    }
  }
  if (masked.shape() != model.output_shape(top)) {
    throw ShapeError("masked feature shape " + shape_to_string(masked.shape()) + " does not match conv_final " +
                     shape_to_string(model.output_shape(top)));
  }

  Tensor grad = masked;
  for (std::size_t i = top + 1; i-- > 0;) {
    const auto& l = model.layer(i);
    const Shape& in_shape = model.input_shape_of(i);
    switch (l.kind) {
      case nn::LayerKind::relu:
        if (i == 0) throw TraceError("relu as first layer has no recorded pre-activation");
        grad = layers::relu_backward(grad, trace.activations[i - 1]);
        break;
      case nn::LayerKind::maxpool:
        grad = layers::unpool(grad, trace.argmax[i], in_shape);
        break;
      case nn::LayerKind::conv:
        grad = layers::conv2d_backward_input(grad, model.weight(l.weight_name()), in_shape, l.stride, l.padding);
        break;
      default:
        throw TraceError("layer '" + l.name + "' cannot appear before conv_final");
    }
  }

  return grad;
}

Tensor backproject(const nn::Model& model, const nn::ForwardTrace& trace, const Tensor& masked) {
  const Tensor grad = reverse_pass(model, trace, masked);
  const std::size_t h = grad.dim(1), w = grad.dim(2);
  Tensor magnitude({h, w});
  for (std::size_t c = 0; c < grad.dim(0); ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) magnitude[y * w + x] += std::abs(grad.at(c, y, x));
    }
  }
  return magnitude;
}

Mask threshold_magnitude(const Tensor& magnitude, double fraction) {
  if (magnitude.rank() != 2) throw ShapeError("magnitude map must be {H,W}");
  Mask m(magnitude.dim(0), magnitude.dim(1));
  float peak = 0.0f;
  for (float v : magnitude.data()) {
    if (v < 0.0f) throw ValidationError("magnitude map must be non-negative");
    peak = std::max(peak, v);
  }
  if (peak <= 0.0f) return m;
  const double cut = fraction * static_cast<double>(peak);
  for (std::size_t i = 0; i < magnitude.size(); ++i) m.bits[i] = static_cast<double>(magnitude[i]) >= cut ? 1 : 0;
  return m;
}

std::vector<std::pair<int, int>> disk_offsets(std::size_t radius) {
  const int r = static_cast<int>(radius);
  std::vector<std::pair<int, int>> out;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dy * dy + dx * dx <= r * r) out.emplace_back(dy, dx);
    }
  }
  return out;
}

Mask dilate(const Mask& mask, std::size_t radius) {
  if (radius == 0) return mask;
  const auto offsets = disk_offsets(radius);
  Mask out(mask.height, mask.width);
  const auto h = static_cast<int>(mask.height), w = static_cast<int>(mask.width);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(static_cast<std::size_t>(y), static_cast<std::size_t>(x))) continue;
      for (auto [dy, dx] : offsets) {
        const int yy = y + dy, xx = x + dx;
        if (yy >= 0 && yy < h && xx >= 0 && xx < w) out(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) = 1;
      }
    }
  }
  return out;
}

Mask postprocess(const Tensor& magnitude, const RFParams& params) {
  params.validate();
  return dilate(threshold_magnitude(magnitude, params.binarize_fraction), params.dilation_radius);
}

ReceptiveField receptive_field(const nn::Model& model, const nn::ForwardTrace& trace, std::uint64_t sample_id,
                               std::size_t feature_id, const features::FeatureStats& stats, double gamma,
                               const RFParams& params) {
  ReceptiveField out;
  out.sample_id = sample_id;
  out.feature_id = feature_id;
  out.magnitude = backproject(model, trace, build_masked_feature(trace, feature_id, stats, gamma));
  out.mask = postprocess(out.magnitude, params);
  return out;
}

namespace {

double masked_sum(const Tensor& conv_final, const Tensor& masked) {
  double s = 0.0;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (masked[i] != 0.0f) s += static_cast<double>(masked[i]) * static_cast<double>(conv_final[i]);
  }
  return s;
}

}  // namespace

std::vector<Mask> influence_oracle(const nn::Model& model, const Tensor& image,
                                   std::span<const std::size_t> feature_ids, const features::FeatureStats& stats,
                                   double gamma, const InfluenceOptions& options) {
  if (!(options.epsilon > 0.0)) throw ValidationError("finite-difference epsilon must be positive");
  const auto base = nn::forward(model, image);
  const std::size_t h = image.dim(1), w = image.dim(2), channels = image.dim(0);

  std::vector<Tensor> masked;
  std::vector<Mask> out;
  std::vector<std::size_t> live;  // features with a non-empty masked tensor
  for (std::size_t k = 0; k < feature_ids.size(); ++k) {
    masked.push_back(build_masked_feature(base, feature_ids[k], stats, gamma));
    out.emplace_back(h, w);
    if (std::any_of(masked.back().data().begin(), masked.back().data().end(), [](float v) { return v != 0.0f; })) {
      live.push_back(k);
    }
  }
  if (live.empty()) return out;

  const auto eps = static_cast<float>(options.epsilon);
  Tensor probe = image;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c) probe.at(c, y, x) = image.at(c, y, x) + eps;
      const auto plus = nn::forward(model, probe);
      for (std::size_t c = 0; c < channels; ++c) probe.at(c, y, x) = image.at(c, y, x) - eps;
      const auto minus = nn::forward(model, probe);
      for (std::size_t c = 0; c < channels; ++c) probe.at(c, y, x) = image.at(c, y, x);
      for (auto k : live) {
        const double delta = masked_sum(plus.conv_final(), masked[k]) - masked_sum(minus.conv_final(), masked[k]);
        if (std::abs(delta) > options.threshold) out[k](y, x) = 1;
      }
    }
  }
  return out;
}

Mask influence_oracle(const nn::Model& model, const Tensor& image, std::size_t feature_id,
                      const features::FeatureStats& stats, double gamma, const InfluenceOptions& options) {
  const std::size_t ids[] = {feature_id};
  return influence_oracle(model, image, ids, stats, gamma, options).front();
}

}  // namespace glassbox::rf
