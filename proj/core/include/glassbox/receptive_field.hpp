#pragma once

#include <cstdint>

#include "glassbox/features.hpp"
#include "glassbox/mask.hpp"
#include "glassbox/nn.hpp"

// Back-projection of one conv_final map's activated elements to input space.
namespace glassbox::rf {

struct RFParams {
  double binarize_fraction = 0.1;  // threshold = fraction * max magnitude
  std::size_t dilation_radius = 2;  // Euclidean disk

  void validate() const;
};

struct ReceptiveField {
  std::uint64_t sample_id = 0;
  std::size_t feature_id = 0;
  Tensor magnitude;  // {H, W}
  Mask mask;
};

/// conv_final-shaped tensor holding 1 where the target map's element is at
/// least gamma * mu[feature], 0 elsewhere; every other map is zero.
Tensor build_masked_feature(const nn::ForwardTrace& trace, std::size_t feature_id,
                            const features::FeatureStats& stats, double gamma);

/// Reverse pass from conv_final to the input using the trace's ReLU
/// activations and pooling indices, with transposed convolutions. Signed,
/// input-shaped, and linear in `masked`.
Tensor reverse_pass(const nn::Model& model, const nn::ForwardTrace& trace, const Tensor& masked);

/// Per-pixel sum of absolute values of reverse_pass over input channels, shape {H, W}.
Tensor backproject(const nn::Model& model, const nn::ForwardTrace& trace, const Tensor& masked);

/// Pixels >= fraction * max (nothing when the map is all zero).
Mask threshold_magnitude(const Tensor& magnitude, double fraction);
/// Offsets (dy, dx) with dy*dy + dx*dx <= radius*radius.
std::vector<std::pair<int, int>> disk_offsets(std::size_t radius);
Mask dilate(const Mask& mask, std::size_t radius);
Mask postprocess(const Tensor& magnitude, const RFParams& params);

ReceptiveField receptive_field(const nn::Model& model, const nn::ForwardTrace& trace, std::uint64_t sample_id,
                               std::size_t feature_id, const features::FeatureStats& stats, double gamma,
                               const RFParams& params);

/// Finite-difference reference for the reverse pass. The scalar
/// f(x) = sum(masked * conv_final(x)) is evaluated with `masked` fixed from the
/// unperturbed image; a pixel is influential when f(x + eps) - f(x - eps)
/// exceeds `threshold` in magnitude, where the perturbation adds eps to every
/// channel of that pixel.
struct InfluenceOptions {
  double epsilon = 1e-3;
  double threshold = 1e-4;
};

Mask influence_oracle(const nn::Model& model, const Tensor& image, std::size_t feature_id,
                      const features::FeatureStats& stats, double gamma, const InfluenceOptions& options = {});

/// Same as influence_oracle for several features at once, sharing the
/// perturbed forward passes. Result order follows `feature_ids`.
std::vector<Mask> influence_oracle(const nn::Model& model, const Tensor& image,
                                   std::span<const std::size_t> feature_ids, const features::FeatureStats& stats,
                                   double gamma, const InfluenceOptions& options = {});

}  // namespace glassbox::rf
