#include "glassbox/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "glassbox/errors.hpp"
#include "glassbox/rng.hpp"

namespace glassbox::features {

FeatureVector global_max_pool(const Tensor& conv_final) {
  if (conv_final.rank() != 3) throw ShapeError("global max pool expects a {D,H,W} tensor");
  const std::size_t d = conv_final.dim(0), plane = conv_final.dim(1) * conv_final.dim(2);
  FeatureVector z(d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto first = conv_final.data().begin() + static_cast<std::ptrdiff_t>(j * plane);
    z[j] = *std::max_element(first, first + static_cast<std::ptrdiff_t>(plane));
  }
  return z;
}

std::string_view to_string(Normalization n) {
  return n == Normalization::ratio_to_mean ? "ratio_to_mean" : "subtract_mean";
}
std::string_view to_string(ThresholdRule r) { return r == ThresholdRule::inclusive ? "inclusive" : "strict"; }
std::string_view to_string(FeatureRole r) {
  switch (r) {
    case FeatureRole::activated: return "activated";
    case FeatureRole::class_frequent: return "class_frequent";
    case FeatureRole::inference: return "inference";
  }
  return "unknown";
}
std::string_view to_string(AblationMode m) { return m == AblationMode::random ? "random" : "frequent"; }

Normalization normalization_from_string(std::string_view s) {
  if (s == "ratio_to_mean") return Normalization::ratio_to_mean;
  if (s == "subtract_mean") return Normalization::subtract_mean;
  throw ValidationError("unknown normalization '" + std::string(s) + "'");
}

ThresholdRule threshold_rule_from_string(std::string_view s) {
  if (s == "inclusive") return ThresholdRule::inclusive;
  if (s == "strict") return ThresholdRule::strict;
  throw ValidationError("unknown threshold rule '" + std::string(s) + "'");
}

BinaryFeatureVector::BinaryFeatureVector(std::vector<std::uint8_t> bits, FeatureRole role)
    : bits_(std::move(bits)), role_(role) {
  for (auto& b : bits_) b = b ? 1 : 0;
}

BinaryFeatureVector BinaryFeatureVector::zeros(std::size_t dim, FeatureRole role) {
  return BinaryFeatureVector(std::vector<std::uint8_t>(dim, 0), role);
}

std::size_t BinaryFeatureVector::popcount() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::vector<std::size_t> BinaryFeatureVector::support() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i]) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> select_statistics_set(std::span<const ScoredSample> samples, std::size_t num_classes,
                                               std::size_t top_n) {
  std::vector<std::vector<const ScoredSample*>> by_class(num_classes);
  for (const auto& s : samples) {
    if (s.label >= num_classes) throw StatsError("sample label " + std::to_string(s.label) + " out of range");
    by_class[s.label].push_back(&s);
  }
  std::vector<std::size_t> selection;
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& members = by_class[c];
    if (members.empty()) throw StatsError("class " + std::to_string(c) + " has no samples for feature statistics");
    std::stable_sort(members.begin(), members.end(), [](const ScoredSample* a, const ScoredSample* b) {
      if (a->true_class_probability != b->true_class_probability) {
        return a->true_class_probability > b->true_class_probability;
      }
      return a->index < b->index;
    });
    const std::size_t take = top_n == 0 ? members.size() : std::min(top_n, members.size());
    for (std::size_t i = 0; i < take; ++i) selection.push_back(members[i]->index);
  }
  std::sort(selection.begin(), selection.end());
  return selection;
}

FeatureStats compute_feature_stats(std::span<const FeatureVector> z, std::span<const std::size_t> selection) {
  if (selection.empty()) throw StatsError("feature statistics need at least one selected sample");
  const std::size_t d = z[selection.front()].size();
  FeatureStats stats;
  stats.mu.assign(d, 0.0);
  for (auto idx : selection) {
    if (idx >= z.size()) throw StatsError("selection index " + std::to_string(idx) + " out of range");
    if (z[idx].size() != d) throw StatsError("feature vectors have inconsistent dimension");
    for (std::size_t j = 0; j < d; ++j) stats.mu[j] += static_cast<double>(z[idx][j]);
  }
  for (auto& m : stats.mu) m /= static_cast<double>(selection.size());
  stats.sample_count = selection.size();
  return stats;
}

std::vector<double> normalize(std::span<const float> z, const FeatureStats& stats, Normalization mode) {
  if (z.size() != stats.dim()) {
    throw ShapeError("feature vector of length " + std::to_string(z.size()) + " does not match statistics of length " +
                     std::to_string(stats.dim()));
  }
  std::vector<double> zhat(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (mode == Normalization::ratio_to_mean) {
      zhat[j] = stats.mu[j] > 0.0 ? static_cast<double>(z[j]) / stats.mu[j] : 0.0;
    } else {
      zhat[j] = static_cast<double>(z[j]) - stats.mu[j];
    }
  }
  return zhat;
}

BinaryFeatureVector binarize(std::span<const double> zhat, double gamma, ThresholdRule rule) {
  if (!(gamma > 0.0)) throw ValidationError("binarization threshold gamma must be positive");
  std::vector<std::uint8_t> bits(zhat.size());
  for (std::size_t j = 0; j < zhat.size(); ++j) {
    bits[j] = rule == ThresholdRule::inclusive ? zhat[j] >= gamma : zhat[j] > gamma;
  }
  return BinaryFeatureVector(std::move(bits), FeatureRole::activated);
}

ClassFrequentTable class_frequent(const std::map<std::size_t, std::vector<BinaryFeatureVector>>& per_class,
                                  std::size_t k) {
  ClassFrequentTable table;
  for (const auto& [cls, vectors] : per_class) {
    if (vectors.empty()) throw StatsError("class " + std::to_string(cls) + " has no activated features to count");
    const std::size_t d = vectors.front().size();
    if (k > d) throw RangeError("k = " + std::to_string(k) + " exceeds feature dimension " + std::to_string(d));
    ClassFrequent cf;
    cf.counts.assign(d, 0);
    for (const auto& a : vectors) {
      if (a.size() != d) throw ShapeError("activated features of class " + std::to_string(cls) + " differ in length");
      for (std::size_t j = 0; j < d; ++j) cf.counts[j] += a.test(j) ? 1u : 0u;
    }
    cf.ranked.resize(d);
    std::iota(cf.ranked.begin(), cf.ranked.end(), std::size_t{0});
    std::stable_sort(cf.ranked.begin(), cf.ranked.end(),
                     [&](std::size_t x, std::size_t y) { return cf.counts[x] > cf.counts[y]; });
    cf.q = BinaryFeatureVector::zeros(d, FeatureRole::class_frequent);
    for (std::size_t i = 0; i < k; ++i) cf.q.set(cf.ranked[i]);
    cf.samples = vectors.size();
    table.emplace(cls, std::move(cf));
  }
  return table;
}

BinaryFeatureVector inference_feature(const BinaryFeatureVector& a, const BinaryFeatureVector& q) {
  if (a.size() != q.size()) throw ShapeError("activated and class frequent features differ in length");
  std::vector<std::uint8_t> bits(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) bits[j] = a.bits()[j] & q.bits()[j];
  return BinaryFeatureVector(std::move(bits), FeatureRole::inference);
}

std::vector<std::size_t> top_l(const BinaryFeatureVector& e, std::span<const double> zhat, std::size_t l) {
  if (l == 0) throw ValidationError("l must be at least 1");
  if (zhat.size() != e.size()) throw ShapeError("zhat and inference feature differ in length");
  auto ids = e.support();
  std::stable_sort(ids.begin(), ids.end(), [&](std::size_t x, std::size_t y) { return zhat[x] > zhat[y]; });
  if (ids.size() > l) ids.resize(l);
  return ids;
}

InferenceAnalysis analyze(std::uint64_t sample_id, std::span<const float> z, std::span<const float> softmax,
                          const FeatureStats& stats, const ClassFrequentTable& table, const AnalysisParams& params,
                          std::optional<std::size_t> lookup_label) {
  InferenceAnalysis out;
  out.sample_id = sample_id;
  out.predicted_label = nn::argmax(softmax);
  out.max_softmax = softmax.empty() ? 0.0f : softmax[out.predicted_label];
  out.lookup_label = lookup_label.value_or(out.predicted_label);
  out.zhat = normalize(z, stats, params.normalization);
  out.a = binarize(out.zhat, params.gamma, params.threshold);
  auto it = table.find(out.lookup_label);
  if (it == table.end()) throw StatsError("no class frequent feature for class " + std::to_string(out.lookup_label));
  out.q = it->second.q;
  out.e = inference_feature(out.a, out.q);
  for (auto id : top_l(out.e, out.zhat, params.l)) out.top_features.push_back({id, out.zhat[id]});
  return out;
}

std::size_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

Histogram activation_histogram(std::span<const FeatureVector> z, std::size_t feature, std::size_t bins) {
  if (bins == 0) throw ValidationError("histogram needs at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  for (const auto& v : z) h.hi = std::max(h.hi, static_cast<double>(v.at(feature)));
  for (const auto& v : z) {
    std::size_t b = 0;
    if (h.hi > 0.0) {
      b = static_cast<std::size_t>(std::floor(static_cast<double>(v[feature]) / h.hi * static_cast<double>(bins)));
      b = std::min(b, bins - 1);
    }
    ++h.counts[b];
  }
  return h;
}

std::vector<double> ablation_curve(const nn::Model& model, std::span<const EvalItem> eval, std::size_t cls,
                                   const ClassFrequent& frequent, const AblationOptions& options) {
  const std::size_t d = model.feature_dim();
  if (options.max_deleted > d) {
    throw RangeError("cannot delete " + std::to_string(options.max_deleted) + " of " + std::to_string(d) +
                     " feature maps");
  }
  std::vector<const Tensor*> members;
  for (const auto& item : eval) {
    if (item.label == cls) members.push_back(item.conv_final);
  }
  if (members.empty()) throw StatsError("class " + std::to_string(cls) + " has no evaluation samples");

  auto accuracy = [&](const std::vector<std::size_t>& order, std::size_t n) {
    const nn::AblationMask mask(std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n)),
                                d);
    std::size_t hits = 0;
    for (const Tensor* cf : members) hits += nn::forward_head(model, *cf, &mask).predicted_label == cls ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(members.size());
  };

  std::vector<double> curve(options.max_deleted + 1, 0.0);
  if (options.mode == AblationMode::frequent) {
    if (frequent.ranked.size() != d) throw ShapeError("class frequent ranking does not cover every feature map");
    for (std::size_t n = 0; n <= options.max_deleted; ++n) curve[n] = accuracy(frequent.ranked, n);
    return curve;
  }
  const std::size_t trials = std::max<std::size_t>(options.trials, 1);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(options.seed, 0xab1a7e + cls, t));
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t n = 0; n <= options.max_deleted; ++n) curve[n] += accuracy(order, n);
  }
  for (auto& v : curve) v /= static_cast<double>(trials);
  return curve;
}

}  // namespace glassbox::features
