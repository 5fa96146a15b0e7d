#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "glassbox/nn.hpp"
#include "glassbox/tensor.hpp"

// Structural feature analysis over the conv_final layer: pooled feature
// vectors, mean normalization, activated / class-frequent / inference
// features, top-l selection, histograms and ablation curves.
namespace glassbox::features {

/// Global max pool of conv_final, one entry per map (z).
using FeatureVector = std::vector<float>;

FeatureVector global_max_pool(const Tensor& conv_final);

struct FeatureStats {
  std::vector<double> mu;
  std::size_t sample_count = 0;

  std::size_t dim() const noexcept { return mu.size(); }
  friend bool operator==(const FeatureStats&, const FeatureStats&) = default;
};

enum class Normalization { ratio_to_mean, subtract_mean };
enum class ThresholdRule { inclusive, strict };
enum class FeatureRole { activated, class_frequent, inference };

std::string_view to_string(Normalization n);
std::string_view to_string(ThresholdRule r);
std::string_view to_string(FeatureRole r);
Normalization normalization_from_string(std::string_view s);
ThresholdRule threshold_rule_from_string(std::string_view s);

class BinaryFeatureVector {
 public:
  BinaryFeatureVector() = default;
  BinaryFeatureVector(std::vector<std::uint8_t> bits, FeatureRole role);
  static BinaryFeatureVector zeros(std::size_t dim, FeatureRole role);

  std::size_t size() const noexcept { return bits_.size(); }
  bool test(std::size_t i) const { return bits_.at(i) != 0; }
  void set(std::size_t i, bool on = true) { bits_.at(i) = on ? 1 : 0; }
  std::size_t popcount() const;
  /// Indices of set bits, ascending.
  std::vector<std::size_t> support() const;
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  FeatureRole role() const noexcept { return role_; }

  friend bool operator==(const BinaryFeatureVector&, const BinaryFeatureVector&) = default;

 private:
  std::vector<std::uint8_t> bits_;
  FeatureRole role_ = FeatureRole::activated;
};

/// Per-sample ranking key for the statistics set.
struct ScoredSample {
  std::size_t index = 0;          // position in the caller's sample list
  std::size_t label = 0;          // ground-truth class
  double true_class_probability = 0.0;
};

/// Top-n samples per ground-truth class by softmax probability of that class
/// (ties to the lower index), returned in ascending index order. top_n == 0
/// selects every sample. Throws StatsError naming a class with no samples.
std::vector<std::size_t> select_statistics_set(std::span<const ScoredSample> samples, std::size_t num_classes,
                                               std::size_t top_n);

/// Arithmetic mean of z over the selected samples, accumulated in selection order.
FeatureStats compute_feature_stats(std::span<const FeatureVector> z, std::span<const std::size_t> selection);

/// ratio_to_mean: z_j / mu_j (0 when mu_j == 0). subtract_mean: z_j - mu_j.
std::vector<double> normalize(std::span<const float> z, const FeatureStats& stats,
                              Normalization mode = Normalization::ratio_to_mean);

/// Activated feature a: a_j = 1 iff zhat_j >= gamma (inclusive) or > gamma (strict).
BinaryFeatureVector binarize(std::span<const double> zhat, double gamma,
                             ThresholdRule rule = ThresholdRule::inclusive);

struct ClassFrequent {
  std::vector<std::uint32_t> counts;  // activations per feature over the class's samples
  std::vector<std::size_t> ranked;    // all features by count descending, ties to lower index
  BinaryFeatureVector q;              // top-k of `ranked`
  std::size_t samples = 0;

  friend bool operator==(const ClassFrequent&, const ClassFrequent&) = default;
};

using ClassFrequentTable = std::map<std::size_t, ClassFrequent>;

/// Class frequent feature q per class from that class's activated features.
ClassFrequentTable class_frequent(const std::map<std::size_t, std::vector<BinaryFeatureVector>>& per_class,
                                  std::size_t k);

/// Inference feature e = a AND q.
BinaryFeatureVector inference_feature(const BinaryFeatureVector& a, const BinaryFeatureVector& q);

/// Set features of e ordered by zhat descending (ties to lower index), at most l.
std::vector<std::size_t> top_l(const BinaryFeatureVector& e, std::span<const double> zhat, std::size_t l);

struct AnalysisParams {
  double gamma = 2.0;
  std::size_t k = 5;
  std::size_t l = 3;
  Normalization normalization = Normalization::ratio_to_mean;
  ThresholdRule threshold = ThresholdRule::inclusive;
};

struct RankedFeature {
  std::size_t id = 0;
  double zhat = 0.0;
  friend bool operator==(const RankedFeature&, const RankedFeature&) = default;
};

struct InferenceAnalysis {
  std::uint64_t sample_id = 0;
  std::size_t predicted_label = 0;
  /// Label used to look q up: the prediction at test time, the ground truth in
  /// training-time (annotation) mode.
  std::size_t lookup_label = 0;
  float max_softmax = 0.0f;
  std::vector<double> zhat;
  BinaryFeatureVector a;
  BinaryFeatureVector q;
  BinaryFeatureVector e;
  std::vector<RankedFeature> top_features;
};

/// Full structural analysis of one sample. q is looked up by `lookup_label`
/// when given, otherwise by the predicted label.
InferenceAnalysis analyze(std::uint64_t sample_id, std::span<const float> z, std::span<const float> softmax,
                          const FeatureStats& stats, const ClassFrequentTable& table, const AnalysisParams& params,
                          std::optional<std::size_t> lookup_label = std::nullopt);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;

  std::size_t total() const;
};

/// Histogram of z_feature over samples on [0, max]; an all-zero feature puts
/// every sample in the first bin.
Histogram activation_histogram(std::span<const FeatureVector> z, std::size_t feature, std::size_t bins);

enum class AblationMode { random, frequent };
std::string_view to_string(AblationMode m);

struct EvalItem {
  const Tensor* conv_final = nullptr;  // unmasked conv_final of the sample
  std::size_t label = 0;
};

struct AblationOptions {
  AblationMode mode = AblationMode::frequent;
  std::size_t max_deleted = 10;
  std::size_t trials = 10;  // random mode only
  std::uint64_t seed = 1;
};

/// Per-class accuracy after zeroing 0..max_deleted conv_final maps. Frequent
/// mode deletes in `frequent.ranked` order; random mode averages `trials`
/// seeded permutations. Throws RangeError when max_deleted exceeds D.
std::vector<double> ablation_curve(const nn::Model& model, std::span<const EvalItem> eval, std::size_t cls,
                                   const ClassFrequent& frequent, const AblationOptions& options);

}  // namespace glassbox::features
