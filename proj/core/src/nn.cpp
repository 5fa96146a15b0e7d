#include "glassbox/nn.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "glassbox/checksum.hpp"
#include "glassbox/errors.hpp"
#include "glassbox/layers.hpp"
#include "glassbox/rng.hpp"

namespace glassbox::nn {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::globalmaxpool: return "globalmaxpool";
    case LayerKind::fc: return "fc";
    case LayerKind::softmax: return "softmax";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (auto k : {LayerKind::conv, LayerKind::relu, LayerKind::maxpool, LayerKind::globalmaxpool, LayerKind::fc,
                 LayerKind::softmax}) {
    if (to_string(k) == name) return k;
  }
  throw FormatError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec conv(std::string name, std::size_t out_maps, std::size_t kernel, std::size_t stride,
               std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::conv;
  s.name = std::move(name);
  s.out_maps = out_maps;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec relu(std::string name) {
  LayerSpec s;
  s.kind = LayerKind::relu;
  s.name = std::move(name);
  return s;
}

LayerSpec maxpool(std::string name, std::size_t window, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::maxpool;
  s.name = std::move(name);
  s.window = window;
  s.stride = stride;
  return s;
}

LayerSpec global_maxpool(std::string name) {
  LayerSpec s;
  s.kind = LayerKind::globalmaxpool;
  s.name = std::move(name);
  return s;
}

LayerSpec fc(std::string name, std::size_t out_dim) {
  LayerSpec s;
  s.kind = LayerKind::fc;
  s.name = std::move(name);
  s.out_dim = out_dim;
  return s;
}

LayerSpec softmax(std::string name) {
  LayerSpec s;
  s.kind = LayerKind::softmax;
  s.name = std::move(name);
  return s;
}

Model::Model(Shape input_shape, std::vector<LayerSpec> layers, std::map<std::string, Tensor> weights)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), weights_(std::move(weights)) {
  validate();
}

void Model::validate() {
  if (input_shape_.size() != 3) throw ShapeError("model input must be {C,H,W}");
  if (layers_.size() < 2 || layers_.back().kind != LayerKind::softmax ||
      layers_[layers_.size() - 2].kind != LayerKind::fc) {
    throw ShapeError("model must end with fc followed by softmax");
  }
  std::set<std::string> names;
  std::set<std::string> expected_weights;
  output_shapes_.clear();
  Shape shape = input_shape_;
  std::optional<std::size_t> last_conv;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.name.empty() || !names.insert(l.name).second) {
      throw ShapeError("layer names must be unique and non-empty (layer " + std::to_string(i) + ")");
    }
    auto require = [&](const std::string& name, const Shape& want) {
      auto it = weights_.find(name);
      if (it == weights_.end()) throw ShapeError("missing weight tensor '" + name + "'");
      if (it->second.shape() != want) {
        throw ShapeError("weight tensor '" + name + "' has shape " + shape_to_string(it->second.shape()) +
                         ", expected " + shape_to_string(want));
      }
      expected_weights.insert(name);
    };
    switch (l.kind) {
      case LayerKind::conv: {
        if (shape.size() != 3) throw ShapeError("conv layer '" + l.name + "' needs a {C,H,W} input");
        if (l.out_maps == 0 || l.kernel == 0 || l.stride == 0) {
          throw ShapeError("conv layer '" + l.name + "' has zero-sized parameters");
        }
        require(l.weight_name(), {l.out_maps, shape[0], l.kernel, l.kernel});
        require(l.bias_name(), {l.out_maps});
        const auto g = layers::conv_geometry(shape, {l.out_maps, shape[0], l.kernel, l.kernel}, l.stride, l.padding);
        shape = {l.out_maps, g.out_height(), g.out_width()};
        last_conv = i;
        break;
      }
      case LayerKind::relu:
        break;
      case LayerKind::maxpool:
        if (shape.size() != 3 || l.window == 0 || l.stride == 0 || l.window > shape[1] || l.window > shape[2]) {
          throw ShapeError("maxpool layer '" + l.name + "' does not fit input " + shape_to_string(shape));
        }
        shape = {shape[0], (shape[1] - l.window) / l.stride + 1, (shape[2] - l.window) / l.stride + 1};
        break;
      case LayerKind::globalmaxpool:
        if (shape.size() != 3) throw ShapeError("globalmaxpool layer '" + l.name + "' needs a {C,H,W} input");
        shape = {shape[0]};
        break;
      case LayerKind::fc:
        if (l.out_dim == 0) throw ShapeError("fc layer '" + l.name + "' has zero outputs");
        require(l.weight_name(), {l.out_dim, shape_size(shape)});
        require(l.bias_name(), {l.out_dim});
        shape = {l.out_dim};
        break;
      case LayerKind::softmax:
        if (i + 1 != layers_.size()) throw ShapeError("softmax must be the last layer");
        break;
    }
    output_shapes_.push_back(shape);
  }
  for (const auto& [name, _] : weights_) {
    if (!expected_weights.count(name)) throw ShapeError("unexpected weight tensor '" + name + "'");
  }
  if (!last_conv || *last_conv + 1 >= layers_.size() || layers_[*last_conv + 1].kind != LayerKind::relu) {
    throw ShapeError("the last conv layer must be followed by relu (conv_final)");
  }
  conv_final_index_ = *last_conv + 1;
  feature_dim_ = layers_[*last_conv].out_maps;
  num_classes_ = layers_[layers_.size() - 2].out_dim;
}

Model Model::initialized(Shape input_shape, std::vector<LayerSpec> layers, std::uint64_t seed) {
  std::map<std::string, Tensor> weights;
  Shape shape = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    Rng rng(derive_seed(seed, 0x77e1, i));
    if (l.kind == LayerKind::conv) {
      if (shape.size() != 3) throw ShapeError("conv layer '" + l.name + "' needs a {C,H,W} input");
      const double fan_in = static_cast<double>(shape[0] * l.kernel * l.kernel);
      const double fan_out = static_cast<double>(l.out_maps * l.kernel * l.kernel);
      const double s = std::sqrt(6.0 / (fan_in + fan_out));
      Tensor w({l.out_maps, shape[0], l.kernel, l.kernel});
      for (auto& v : w.data()) v = static_cast<float>(uniform(rng, -s, s));
      weights.emplace(l.weight_name(), std::move(w));
      weights.emplace(l.bias_name(), Tensor({l.out_maps}));
      const auto g = layers::conv_geometry(shape, {l.out_maps, shape[0], l.kernel, l.kernel}, l.stride, l.padding);
      shape = {l.out_maps, g.out_height(), g.out_width()};
    } else if (l.kind == LayerKind::maxpool) {
      if (shape.size() != 3 || l.window == 0 || l.stride == 0 || l.window > shape[1] || l.window > shape[2]) {
        throw ShapeError("maxpool layer '" + l.name + "' does not fit input " + shape_to_string(shape));
      }
      shape = {shape[0], (shape[1] - l.window) / l.stride + 1, (shape[2] - l.window) / l.stride + 1};
    } else if (l.kind == LayerKind::globalmaxpool) {
      shape = {shape.at(0)};
    } else if (l.kind == LayerKind::fc) {
      const std::size_t n_in = shape_size(shape);
      const double s = std::sqrt(6.0 / static_cast<double>(n_in + l.out_dim));
      Tensor w({l.out_dim, n_in});
      for (auto& v : w.data()) v = static_cast<float>(uniform(rng, -s, s));
      weights.emplace(l.weight_name(), std::move(w));
      weights.emplace(l.bias_name(), Tensor({l.out_dim}));
      shape = {l.out_dim};
    }
  }
  return Model(std::move(input_shape), std::move(layers), std::move(weights));
}

Model Model::reference(std::size_t num_classes, std::uint64_t seed, Shape input_shape) {
  std::vector<LayerSpec> stack = {
      conv("conv1", 16, 5, 1, 2), relu("relu1"), maxpool("pool1", 2, 2),
      conv("conv2", 32, 5, 1, 2), relu("relu2"), maxpool("pool2", 2, 2),
      conv("conv3", 64, 3, 1, 1), relu("relu3"),
      global_maxpool("gmp"),      fc("fc", num_classes), softmax("prob"),
  };
  return initialized(std::move(input_shape), std::move(stack), seed);
}

const Tensor& Model::weight(const std::string& name) const {
  auto it = weights_.find(name);
  if (it == weights_.end()) throw ShapeError("no weight tensor named '" + name + "'");
  return it->second;
}

Tensor& Model::mutable_weight(const std::string& name) {
  auto it = weights_.find(name);
  if (it == weights_.end()) throw ShapeError("no weight tensor named '" + name + "'");
  return it->second;
}

std::uint32_t Model::checksum() const {
  std::uint32_t crc = 0;
  for (const auto& [name, t] : weights_) crc = crc32(t.data(), crc);
  return crc;
}

AblationMask::AblationMask(std::vector<std::size_t> zeroed, std::size_t feature_dim) : zeroed_(std::move(zeroed)) {
  std::vector<std::size_t> sorted = zeroed_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw RangeError("ablation mask indices must be unique");
  }
  if (!sorted.empty() && sorted.back() >= feature_dim) {
    throw RangeError("ablation mask index " + std::to_string(sorted.back()) + " is outside [0, " +
                     std::to_string(feature_dim) + ")");
  }
}

AblationMask AblationMask::all(std::size_t feature_dim) {
  std::vector<std::size_t> ids(feature_dim);
  for (std::size_t i = 0; i < feature_dim; ++i) ids[i] = i;
  return AblationMask(std::move(ids), feature_dim);
}

std::size_t argmax(std::span<const float> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

namespace {

void apply_mask(Tensor& conv_final, const AblationMask& mask) {
  const std::size_t plane = conv_final.dim(1) * conv_final.dim(2);
  for (auto m : mask.zeroed_maps()) {
    if (m >= conv_final.dim(0)) throw RangeError("ablation mask index " + std::to_string(m) + " out of range");
    std::fill_n(conv_final.data().begin() + static_cast<std::ptrdiff_t>(m * plane), plane, 0.0f);
  }
}

void run_layers(const Model& model, ForwardTrace& trace, std::size_t first, const AblationMask* mask) {
  const std::size_t n = model.layer_count();
  for (std::size_t i = first; i < n; ++i) {
    const auto& l = model.layer(i);
    const Tensor& in = i == 0 ? trace.activations.at(n) : trace.activations[i - 1];
    Tensor out;
    trace.argmax[i].clear();
    switch (l.kind) {
      case LayerKind::conv:
        out = layers::conv2d(in, model.weight(l.weight_name()), model.weight(l.bias_name()), l.stride, l.padding);
        break;
      case LayerKind::relu:
        out = layers::relu(in);
        break;
      case LayerKind::maxpool:
        out = layers::maxpool(in, l.window, l.stride, trace.argmax[i]);
        break;
      case LayerKind::globalmaxpool:
        out = layers::global_maxpool(in, trace.argmax[i]);
        break;
      case LayerKind::fc:
        out = layers::fully_connected(in, model.weight(l.weight_name()), model.weight(l.bias_name()));
        break;
      case LayerKind::softmax: {
        auto p = layers::softmax(in.data());
        const std::size_t n_out = p.size();
        out = Tensor({n_out}, std::move(p));
        break;
      }
    }
    if (!out.all_finite()) throw NumericError("non-finite activation in layer '" + l.name + "'");
    if (i == model.conv_final_index() && mask != nullptr) apply_mask(out, *mask);
    trace.activations[i] = std::move(out);
  }
  trace.activations.resize(n);
  trace.conv_final_index = model.conv_final_index();
  const auto& logits = trace.activations[model.logits_index()];
  trace.logits.assign(logits.data().begin(), logits.data().end());
  const auto& probs = trace.activations.back();
  trace.probabilities.assign(probs.data().begin(), probs.data().end());
  trace.predicted_label = argmax(trace.probabilities);
}

}  // namespace

ForwardTrace forward(const Model& model, const Tensor& image, const AblationMask* mask) {
  if (image.shape() != model.input_shape()) {
    throw ShapeError("input shape " + shape_to_string(image.shape()) + " does not match model input " +
                     shape_to_string(model.input_shape()));
  }
  if (!image.all_finite()) throw NumericError("non-finite value in input image");
  ForwardTrace trace;
  const std::size_t n = model.layer_count();
  // slot n temporarily holds the input so layer 0 can read it uniformly
  trace.activations.resize(n + 1);
  trace.activations[n] = image;
  trace.argmax.resize(n);
  run_layers(model, trace, 0, mask);
  return trace;
}

ForwardTrace forward_from_conv_final(const Model& model, const ForwardTrace& unmasked, const AblationMask& mask) {
  const std::size_t n = model.layer_count();
  if (unmasked.activations.size() != n || unmasked.conv_final_index != model.conv_final_index()) {
    throw TraceError("trace was not produced by this model");
  }
  ForwardTrace trace;
  trace.activations.reserve(n + 1);
  trace.activations.assign(unmasked.activations.begin(),
                           unmasked.activations.begin() + static_cast<std::ptrdiff_t>(model.conv_final_index() + 1));
  trace.activations.resize(n + 1);
  trace.argmax.assign(unmasked.argmax.begin(), unmasked.argmax.end());
  apply_mask(trace.activations[model.conv_final_index()], mask);
  run_layers(model, trace, model.conv_final_index() + 1, nullptr);
  return trace;
}

ForwardTrace forward_head(const Model& model, Tensor conv_final, const AblationMask* mask) {
  const std::size_t n = model.layer_count();
  if (conv_final.shape() != model.output_shape(model.conv_final_index())) {
    throw ShapeError("conv_final shape " + shape_to_string(conv_final.shape()) + " does not match model " +
                     shape_to_string(model.output_shape(model.conv_final_index())));
  }
  ForwardTrace trace;
  trace.activations.resize(n + 1);
  trace.activations[model.conv_final_index()] = std::move(conv_final);
  trace.argmax.resize(n);
  if (mask) apply_mask(trace.activations[model.conv_final_index()], *mask);
  run_layers(model, trace, model.conv_final_index() + 1, nullptr);
  return trace;
}

}  // namespace glassbox::nn
