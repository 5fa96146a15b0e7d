#include "glassbox/trainer.hpp"

#include <cmath>
#include <numeric>
#include <set>

#include "glassbox/errors.hpp"
#include "glassbox/layers.hpp"
#include "glassbox/rng.hpp"

namespace glassbox::nn {

double cross_entropy(std::span<const float> logits, std::size_t label) {
  double peak = logits[0];
  for (float v : logits) peak = std::max(peak, static_cast<double>(v));
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - peak);
  return peak + std::log(sum) - static_cast<double>(logits[label]);
}

Trainer::Trainer(Model model, TrainOptions options) : model_(std::move(model)), options_(options) {
  for (const auto& [name, t] : model_.weights()) velocity_.emplace(name, Tensor(t.shape()));
}

double Trainer::accumulate(const LabeledImage& example, std::map<std::string, Tensor>& grads) const {
  if (example.label >= model_.num_classes()) {
    throw RangeError("label " + std::to_string(example.label) + " outside [0, " +
                     std::to_string(model_.num_classes()) + ")");
  }
  ForwardTrace trace;
  try {
    trace = forward(model_, *example.image);
  } catch (const NumericError& e) {
    throw DivergenceError(std::string(e.what()) + "; try a smaller learning rate");
  }
  const double loss = cross_entropy(trace.logits, example.label);
  if (!std::isfinite(loss)) {
    throw DivergenceError("non-finite training loss; try a smaller learning rate");
  }

  Tensor grad({model_.num_classes()}, trace.probabilities);
  grad[example.label] -= 1.0f;

  auto input_of = [&](std::size_t i) -> const Tensor& { return i == 0 ? *example.image : trace.activations[i - 1]; };
  for (std::size_t i = model_.logits_index() + 1; i-- > 0;) {
    const auto& l = model_.layer(i);
    const Tensor& in = input_of(i);
    switch (l.kind) {
      case LayerKind::fc:
        layers::fully_connected_backward_params(grad, in, grads.at(l.weight_name()), grads.at(l.bias_name()));
        grad = layers::fully_connected_backward_input(grad, model_.weight(l.weight_name()), in.shape());
        break;
      case LayerKind::globalmaxpool:
        if (options_.activity_l1 > 0.0) {
          const Tensor& z = trace.activations[i];
          for (std::size_t j = 0; j < z.size(); ++j) {
            if (z[j] > 0.0f) grad[j] += static_cast<float>(options_.activity_l1);
          }
        }
        grad = layers::unpool(grad, trace.argmax[i], in.shape());
        break;
      case LayerKind::maxpool:
        grad = layers::unpool(grad, trace.argmax[i], in.shape());
        break;
      case LayerKind::relu:
        grad = layers::relu_backward(grad, in);
        break;
      case LayerKind::conv:
        layers::conv2d_backward_params(grad, in, l.stride, l.padding, grads.at(l.weight_name()),
                                       grads.at(l.bias_name()));
        if (i > 0) grad = layers::conv2d_backward_input(grad, model_.weight(l.weight_name()), in.shape(), l.stride,
                                                        l.padding);
        break;
      case LayerKind::softmax:
        break;
    }
  }
  return loss;
}

double Trainer::step(std::span<const LabeledImage> batch) {
  if (batch.empty()) return 0.0;
  std::map<std::string, Tensor> grads;
  for (const auto& [name, t] : model_.weights()) grads.emplace(name, Tensor(t.shape()));
  double total = 0.0;
  for (const auto& ex : batch) total += accumulate(ex, grads);

  if (options_.fc_l1 > 0.0) {
    const auto penalty = static_cast<float>(options_.fc_l1 * static_cast<double>(batch.size()));
    for (const auto& l : model_.layers()) {
      if (l.kind != LayerKind::fc) continue;
      const Tensor& w = model_.weight(l.weight_name());
      Tensor& g = grads.at(l.weight_name());
      for (std::size_t i = 0; i < w.size(); ++i) g[i] += w[i] > 0.0f ? penalty : (w[i] < 0.0f ? -penalty : 0.0f);
    }
  }
  std::set<std::string> nonnegative;
  for (const auto& l : model_.layers()) {
    if (l.kind == LayerKind::fc) nonnegative.insert(l.weight_name());
  }
  const float scale = 1.0f / static_cast<float>(batch.size());
  const auto lr = static_cast<float>(options_.learning_rate);
  const auto mu = static_cast<float>(options_.momentum);
  for (auto& [name, g] : grads) {
    Tensor& v = velocity_.at(name);
    Tensor& w = model_.mutable_weight(name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = mu * v[i] + g[i] * scale;
      w[i] -= lr * v[i];
    }
    if (options_.fc_nonnegative && nonnegative.count(name)) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::max(w[i], 0.0f);
    }
    if (!w.all_finite()) throw DivergenceError("weights of '" + name + "' diverged; try a smaller learning rate");
  }
  return total / static_cast<double>(batch.size());
}

double Trainer::loss(std::span<const LabeledImage> batch) const {
  double total = 0.0;
  for (const auto& ex : batch) {
    total += cross_entropy(forward(model_, *ex.image).logits, ex.label);
  }
  return batch.empty() ? 0.0 : total / static_cast<double>(batch.size());
}

Model train_sgd(const Model& model, std::span<const LabeledImage> data, const TrainOptions& options,
                TrainReport* report) {
  for (const auto& ex : data) {
    if (ex.label >= model.num_classes()) {
      throw RangeError("dataset label " + std::to_string(ex.label) + " outside [0, " +
                       std::to_string(model.num_classes()) + ")");
    }
  }
  if (options.epochs == 0 || data.empty()) return model;
  if (options.batch_size == 0) throw RangeError("batch size must be positive");

  Trainer trainer(model, options);
  Rng rng(derive_seed(options.seed, 0x5eed));
  std::vector<std::size_t> order(data.size());
  std::vector<LabeledImage> batch;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < order.size(); at += options.batch_size) {
      batch.clear();
      for (std::size_t j = at; j < std::min(order.size(), at + options.batch_size); ++j) batch.push_back(data[order[j]]);
      epoch_total += trainer.step(batch);
      ++batches;
      if (report) ++report->steps;
    }
    if (report) report->epoch_loss.push_back(epoch_total / static_cast<double>(batches));
  }
  return std::move(trainer).release();
}

}  // namespace glassbox::nn
