#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "glassbox/nn.hpp"

namespace glassbox::nn {

struct LabeledImage {
  const Tensor* image = nullptr;
  std::size_t label = 0;
};

struct TrainOptions {
  std::size_t epochs = 6;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  /// L1 penalty on the globally pooled conv_final activations (sparse, specific features).
  double activity_l1 = 0.005;
  /// L1 penalty on fully connected weights.
  double fc_l1 = 0.0;
  /// Projects fully connected weights onto w >= 0 after every step, so each
  /// class score is built from positive feature evidence.
  bool fc_nonnegative = true;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
};

/// Mini-batch cross-entropy SGD with momentum over a private copy of the model.
class Trainer {
 public:
  Trainer(Model model, TrainOptions options);

  /// One update on the given batch; returns the mean loss before the update.
  double step(std::span<const LabeledImage> batch);

  /// Mean cross-entropy of the current weights on the batch.
  double loss(std::span<const LabeledImage> batch) const;

  const Model& model() const noexcept { return model_; }
  Model release() && { return std::move(model_); }

 private:
  double accumulate(const LabeledImage& example, std::map<std::string, Tensor>& grads) const;

  Model model_;
  TrainOptions options_;
  std::map<std::string, Tensor> velocity_;
};

/// Cross-entropy of one forward trace against its label: logsumexp(logits) - logit[label].
double cross_entropy(std::span<const float> logits, std::size_t label);

/// Trains for options.epochs passes over a seeded shuffle of `data`.
/// epochs == 0 returns the input model unchanged. Throws DivergenceError on a
/// non-finite loss.
Model train_sgd(const Model& model, std::span<const LabeledImage> data, const TrainOptions& options,
                TrainReport* report = nullptr);

}  // namespace glassbox::nn
