#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "glassbox/annotation.hpp"
#include "glassbox/consistency.hpp"
#include "glassbox/features.hpp"
#include "glassbox/model_io.hpp"
#include "glassbox/receptive_field.hpp"
#include "glassbox/synth.hpp"
#include "glassbox/trainer.hpp"

// Artifact-level orchestration: each command reads its upstream artifacts
// from the home directory and writes its own, with the configuration and
// input checksums embedded for provenance.
namespace glassbox::pipeline {

struct PipelineConfig {
  features::AnalysisParams analysis;  // gamma, k, l
  std::size_t stats_top_n = 100;
  rf::RFParams rf;
  synth::DatasetSpec dataset;
  nn::TrainOptions train;
  std::uint64_t seed = 1;  // model init; dataset, training and ablation seeds derive from it
  std::string home;
  double auto_annotation_threshold = 0.8;
  double pcr_min_overlap = 0.25;
  std::size_t redundancy = 1;  // workers per consistency question
  std::size_t ablation_max_deleted = 10;
  std::size_t ablation_trials = 10;
  std::size_t annotation_images = 12;  // per feature
  std::size_t histogram_bins = 20;
  std::size_t joint_bins = 5;
  double diagnosis_low = 0.5;
  std::size_t image_scale = 4;
  std::size_t report_cards = 8;

  void validate() const;
  /// Propagates `seed` into the dataset and training seeds.
  void apply_seed();
};

nlohmann::json to_json(const PipelineConfig& c);
PipelineConfig config_from_json(const nlohmann::json& j);

/// --home flag, else $GLASSBOX_HOME, else ./glassbox_home.
std::filesystem::path resolve_home(const std::optional<std::string>& flag);

struct Paths {
  std::filesystem::path home;

  std::filesystem::path dataset() const { return home / "dataset.gbox"; }
  std::filesystem::path dataset_summary() const { return home / "dataset.json"; }
  std::filesystem::path model() const { return home / "model.gbox"; }
  std::filesystem::path train_report() const { return home / "train_report.json"; }
  std::filesystem::path traces() const { return home / "traces_test.gbox"; }
  std::filesystem::path stats() const { return home / "stats.json"; }
  std::filesystem::path class_frequent() const { return home / "class_frequent.json"; }
  std::filesystem::path analysis() const { return home / "analysis.json"; }
  std::filesystem::path annotation_analysis() const { return home / "annotation_set.json"; }
  std::filesystem::path rf() const { return home / "rf.json"; }
  std::filesystem::path rf_dir() const { return home / "rf"; }
  std::filesystem::path images_dir() const { return home / "images"; }
  std::filesystem::path ablation() const { return home / "ablation.json"; }
  std::filesystem::path annotation_dir() const { return home / "annotation"; }
  std::filesystem::path annotation_tasks() const { return home / "annotation_tasks.json"; }
  std::filesystem::path annotation_store() const { return home / "annotation.json"; }
  std::filesystem::path auto_annotation() const { return home / "auto_annotation.json"; }
  std::filesystem::path responses() const { return home / "responses.csv"; }
  std::filesystem::path records() const { return home / "records.jsonl"; }
  std::filesystem::path consistency() const { return home / "consistency.json"; }
  std::filesystem::path site() const { return home / "site"; }
};

/// Throws DependencyError naming `producer` when `path` is missing.
void require_artifact(const std::filesystem::path& path, const std::string& producer);

nlohmann::json read_json(const std::filesystem::path& path);
/// Pretty-printed, sorted keys, trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

nlohmann::json analysis_to_json(const features::InferenceAnalysis& a);
features::InferenceAnalysis analysis_from_json(const nlohmann::json& j);
nlohmann::json stats_to_json(const features::FeatureStats& s);
features::FeatureStats stats_from_json(const nlohmann::json& j);
nlohmann::json class_frequent_to_json(const features::ClassFrequentTable& t);
features::ClassFrequentTable class_frequent_from_json(const nlohmann::json& j, std::size_t dim);
std::string mask_to_hex(const Mask& m);
Mask mask_from_hex(const std::string& hex, std::size_t height, std::size_t width);

/// Loaded `rf` artifact: per test sample, the receptive-field masks of its top features.
struct RfEntry {
  std::size_t feature_id = 0;
  Mask mask;
  std::string overlay;  // path relative to home
};
using RfTable = std::map<std::uint64_t, std::vector<RfEntry>>;
RfTable load_rf_table(const Paths& paths);

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  const PipelineConfig& config() const noexcept { return config_; }
  const Paths& paths() const noexcept { return paths_; }

  // Each command returns a short JSON summary for the CLI.
  nlohmann::json gen_data();
  nlohmann::json train();
  nlohmann::json analyze();
  nlohmann::json rf();
  nlohmann::json ablate();
  nlohmann::json annotate_export();
  nlohmann::json auto_annotate();
  /// Oracle ratios by default; human ratios from a response CSV when given.
  nlohmann::json consistency(const std::optional<std::string>& responses_csv = std::nullopt);
  nlohmann::json report();
  /// gen-data through report with oracle consistency.
  nlohmann::json run_all();

  const synth::Dataset& dataset();
  const nn::Model& model();
  std::vector<features::InferenceAnalysis> test_analyses();

  /// Provenance block: the full config and CRC32 of each named input file.
  nlohmann::json provenance(const std::vector<std::filesystem::path>& inputs) const;

 private:
  PipelineConfig config_;
  Paths paths_;
  std::optional<synth::Dataset> dataset_;
  std::optional<nn::Model> model_;
};

}  // namespace glassbox::pipeline
