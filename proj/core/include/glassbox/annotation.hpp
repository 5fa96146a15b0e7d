#pragma once

#include <cstdint>
#include <json.hpp>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "glassbox/features.hpp"

// Linguistic feature analysis: the open -> organize -> closed annotation
// process, automatic annotation from ground-truth attributes, and natural
// language rendering of inference features.
namespace glassbox::annotation {

enum class Phase { open, organize, closed };

std::string_view to_string(Phase p);
Phase phase_from_string(std::string_view s);

struct Label {
  std::size_t id = 0;
  std::string name;
  std::string description;
  std::size_t created_in_round = 1;

  friend bool operator==(const Label&, const Label&) = default;
};

struct HistoryEntry {
  std::size_t seq = 0;
  std::size_t round = 1;
  Phase phase = Phase::open;
  std::string action;
  nlohmann::json detail;

  friend bool operator==(const HistoryEntry&, const HistoryEntry&) = default;
};

/// One vocabulary edit of the organize step.
struct Edit {
  enum class Kind { merge, split, rename, add, remove };
  Kind kind = Kind::add;
  std::vector<std::size_t> sources;  // merge
  std::size_t id = 0;                // merge target, split/rename/remove subject
  std::vector<std::string> names;    // split: first name kept by `id`, the rest become new labels
  std::string name;                  // rename, add
  std::string description;           // add

  static Edit merge(std::vector<std::size_t> sources, std::size_t target);
  static Edit split(std::size_t id, std::vector<std::string> names);
  static Edit rename(std::size_t id, std::string name);
  static Edit add(std::string name, std::string description = {});
  static Edit remove(std::size_t id);
};

Edit edit_from_json(const nlohmann::json& j);
nlohmann::json edit_to_json(const Edit& e);

/// Single-writer annotation state. Every successful mutation appends one
/// history entry; failed mutations leave the store untouched.
class AnnotationStore {
 public:
  AnnotationStore() = default;

  Phase phase() const noexcept { return phase_; }
  std::size_t round() const noexcept { return round_; }
  const std::map<std::size_t, Label>& vocabulary() const noexcept { return vocabulary_; }
  const std::map<std::size_t, std::vector<std::string>>& open_texts() const noexcept { return open_texts_; }
  const std::map<std::size_t, std::set<std::size_t>>& assignments() const noexcept { return assignments_; }
  const std::vector<HistoryEntry>& history() const noexcept { return history_; }

  /// Accepted transitions: open->organize, organize->closed, closed->organize.
  void transition(Phase next);

  void open_annotate(std::size_t feature_id, const std::string& text);

  /// Applies the batch atomically; returns ids of labels created by add/split.
  std::vector<std::size_t> organize_labels(std::span<const Edit> edits);

  /// Replaces the feature's labels; an empty set marks it uninterpretable.
  void closed_annotate(std::size_t feature_id, const std::set<std::size_t>& label_ids);

  std::optional<std::size_t> find_label(std::string_view name) const;
  /// Follows merge aliases; nullopt for ids that never existed or were removed.
  std::optional<std::size_t> resolve(std::size_t id) const;
  std::set<std::size_t> labels_of(std::size_t feature_id) const;
  std::vector<std::size_t> features_with_label(std::size_t label_id) const;
  std::vector<std::string> label_names(const std::set<std::size_t>& ids) const;

  nlohmann::json to_json() const;
  static AnnotationStore from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static AnnotationStore load(const std::string& path);

  friend bool operator==(const AnnotationStore&, const AnnotationStore&) = default;

 private:
  void log(std::string action, nlohmann::json detail);
  std::size_t require_label(std::size_t id, const char* context) const;
  void require_unique_name(const std::string& name, std::optional<std::size_t> except) const;

  Phase phase_ = Phase::open;
  std::size_t round_ = 1;
  bool closed_before_ = false;
  std::size_t next_label_id_ = 0;
  std::map<std::size_t, Label> vocabulary_;
  std::map<std::size_t, std::size_t> aliases_;  // merged id -> surviving id
  std::map<std::size_t, std::vector<std::string>> open_texts_;
  std::map<std::size_t, std::set<std::size_t>> assignments_;
  std::vector<HistoryEntry> history_;
};

struct AnnotationImage {
  std::uint64_t sample_id = 0;
  double zhat = 0.0;
  std::string image_path;
  std::string overlay_path;
};

struct AnnotationImageSet {
  std::size_t feature_id = 0;
  std::vector<AnnotationImage> items;
};

/// Up to n samples whose (ground-truth looked-up) inference feature contains
/// the feature, by zhat of that feature descending (ties to lower sample id).
AnnotationImageSet sample_annotation_images(std::span<const features::InferenceAnalysis> analyses,
                                            std::size_t feature_id, std::size_t n);

/// One annotation-set observation: activated feature plus the attributes
/// present in the image.
struct Observation {
  const features::BinaryFeatureVector* activated = nullptr;
  std::set<std::size_t> attributes;
};

struct FeaturePrecision {
  std::size_t activations = 0;
  std::map<std::size_t, std::size_t> co_occurrences;  // attribute -> count
  std::map<std::size_t, double> precision;            // attribute -> co_occurrences / activations
};

struct AutoAnnotation {
  double threshold = 0.8;
  std::vector<FeaturePrecision> features;  // indexed by feature id
  std::map<std::size_t, std::set<std::size_t>> assignments;  // feature -> attributes (only labelled features)
};

/// Feature f gets attribute t iff |a_f = 1 and t present| / |a_f = 1| >= threshold.
AutoAnnotation auto_annotate(std::span<const Observation> observations, std::size_t feature_dim,
                             std::size_t attribute_count, double precision_threshold = 0.8);

/// Closed-phase store whose vocabulary is the attribute names (label id =
/// attribute id) and whose assignments come from `auto_result`.
AnnotationStore store_from_auto_annotation(const AutoAnnotation& auto_result,
                                           std::span<const std::string> attribute_names);

struct DescribedFeature {
  std::size_t feature_id = 0;
  double zhat = 0.0;
  std::vector<std::size_t> label_ids;
  std::string text;  // label names joined with ", " or "(unlabeled feature <id>)"
};

std::vector<DescribedFeature> describe(const features::InferenceAnalysis& analysis, const AnnotationStore& store);

}  // namespace glassbox::annotation
