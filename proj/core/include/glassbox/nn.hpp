#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "glassbox/tensor.hpp"

namespace glassbox::nn {

enum class LayerKind { conv, relu, maxpool, globalmaxpool, fc, softmax };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;
  std::size_t out_maps = 0;  // conv
  std::size_t kernel = 0;    // conv
  std::size_t stride = 1;    // conv, maxpool
  std::size_t padding = 0;   // conv
  std::size_t window = 0;    // maxpool
  std::size_t out_dim = 0;   // fc

  bool has_params() const { return kind == LayerKind::conv || kind == LayerKind::fc; }
  std::string weight_name() const { return name + ".weight"; }
  std::string bias_name() const { return name + ".bias"; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

LayerSpec conv(std::string name, std::size_t out_maps, std::size_t kernel, std::size_t stride,
               std::size_t padding);
LayerSpec relu(std::string name);
LayerSpec maxpool(std::string name, std::size_t window, std::size_t stride);
LayerSpec global_maxpool(std::string name);
LayerSpec fc(std::string name, std::size_t out_dim);
LayerSpec softmax(std::string name);

/// A validated layer stack with its weights. The conv_final layer is the ReLU
/// that follows the last conv layer; its map count is the feature dimension D.
/// The stack must end with fc followed by softmax.
class Model {
 public:
  Model(Shape input_shape, std::vector<LayerSpec> layers, std::map<std::string, Tensor> weights);

  /// conv(16,5,p2) relu pool(2,2) conv(32,5,p2) relu pool(2,2) conv(64,3,p1) relu
  /// gmp fc(C) softmax, Glorot-uniform weights and zero biases.
  static Model reference(std::size_t num_classes, std::uint64_t seed, Shape input_shape = {3, 32, 32});
  static Model initialized(Shape input_shape, std::vector<LayerSpec> layers, std::uint64_t seed);

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::span<const LayerSpec> layers() const noexcept { return layers_; }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t layer_count() const noexcept { return layers_.size(); }

  /// Output shape of layer i.
  const Shape& output_shape(std::size_t i) const { return output_shapes_.at(i); }
  /// Input shape of layer i.
  const Shape& input_shape_of(std::size_t i) const { return i == 0 ? input_shape_ : output_shapes_.at(i - 1); }

  const std::map<std::string, Tensor>& weights() const noexcept { return weights_; }
  const Tensor& weight(const std::string& name) const;
  /// Mutable access for training; the shape must be preserved.
  Tensor& mutable_weight(const std::string& name);

  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  std::size_t conv_final_index() const noexcept { return conv_final_index_; }
  /// Index of the fc layer producing the logits.
  std::size_t logits_index() const noexcept { return layers_.size() - 2; }

  /// CRC32 over every weight payload in name order.
  std::uint32_t checksum() const;

  friend bool operator==(const Model& a, const Model& b) {
    return a.input_shape_ == b.input_shape_ && a.layers_ == b.layers_ && a.weights_ == b.weights_;
  }

 private:
  void validate();

  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::map<std::string, Tensor> weights_;
  std::vector<Shape> output_shapes_;
  std::size_t num_classes_ = 0;
  std::size_t feature_dim_ = 0;
  std::size_t conv_final_index_ = 0;
};

/// Set of conv_final maps to zero before downstream layers.
class AblationMask {
 public:
  AblationMask() = default;
  AblationMask(std::vector<std::size_t> zeroed, std::size_t feature_dim);

  static AblationMask all(std::size_t feature_dim);

  std::span<const std::size_t> zeroed_maps() const noexcept { return zeroed_; }
  bool empty() const noexcept { return zeroed_.empty(); }

 private:
  std::vector<std::size_t> zeroed_;
};

struct ForwardTrace {
  /// activations[i] is the output of layer i.
  std::vector<Tensor> activations;
  /// Flat input offsets per output element for maxpool and globalmaxpool layers;
  /// empty for other layers.
  std::vector<std::vector<std::uint32_t>> argmax;
  std::size_t conv_final_index = 0;
  std::vector<float> logits;
  std::vector<float> probabilities;
  std::size_t predicted_label = 0;

  const Tensor& conv_final() const { return activations.at(conv_final_index); }
};

ForwardTrace forward(const Model& model, const Tensor& image, const AblationMask* mask = nullptr);
inline ForwardTrace forward(const Model& model, const Tensor& image, const AblationMask& mask) {
  return forward(model, image, &mask);
}

/// Runs only the layers after conv_final on a stored conv_final tensor. The
/// returned trace leaves upstream activation slots empty.
ForwardTrace forward_head(const Model& model, Tensor conv_final, const AblationMask* mask = nullptr);

/// Re-runs only the layers after conv_final with the mask applied, reusing the
/// unmasked trace for everything upstream. Equal to forward(model, image, mask).
ForwardTrace forward_from_conv_final(const Model& model, const ForwardTrace& unmasked, const AblationMask& mask);

/// Index of the maximum entry; ties go to the lowest index.
std::size_t argmax(std::span<const float> values);

}  // namespace glassbox::nn
