#include "glassbox/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>

#include "glassbox/checksum.hpp"
#include "glassbox/errors.hpp"
#include "glassbox/image_io.hpp"
#include "glassbox/report.hpp"
#include "glassbox/rng.hpp"
#include "glassbox/serialization.hpp"

namespace glassbox::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

void PipelineConfig::validate() const {
  if (!(analysis.gamma > 0.0)) throw ValidationError("gamma must be positive");
  if (analysis.k == 0 || analysis.k > 64) throw ValidationError("top-k must be in [1, 64]");
  if (analysis.l == 0) throw ValidationError("top-l must be at least 1");
  if (redundancy == 0) throw ValidationError("redundancy must be at least 1");
  if (joint_bins == 0 || histogram_bins == 0) throw ValidationError("bin counts must be positive");
  if (!(pcr_min_overlap > 0.0 && pcr_min_overlap <= 1.0)) throw ValidationError("pcr overlap must be in (0, 1]");
  if (!(auto_annotation_threshold > 0.0 && auto_annotation_threshold <= 1.0)) {
    throw ValidationError("auto-annotation threshold must be in (0, 1]");
  }
  if (image_scale == 0) throw ValidationError("image scale must be positive");
  rf.validate();
  dataset.validate();
}

void PipelineConfig::apply_seed() {
  dataset.seed = seed;
  train.seed = seed;
}

json to_json(const PipelineConfig& c) {
  return {{"gamma", c.analysis.gamma},
          {"top_k", c.analysis.k},
          {"top_l", c.analysis.l},
          {"normalization", features::to_string(c.analysis.normalization)},
          {"threshold_rule", features::to_string(c.analysis.threshold)},
          {"stats_top_n", c.stats_top_n},
          {"rf", {{"tau", c.rf.binarize_fraction}, {"radius", c.rf.dilation_radius}}},
          {"dataset", c.dataset},
          {"train",
           {{"epochs", c.train.epochs},
            {"learning_rate", c.train.learning_rate},
            {"momentum", c.train.momentum},
            {"batch_size", c.train.batch_size},
            {"seed", c.train.seed},
            {"activity_l1", c.train.activity_l1},
            {"fc_l1", c.train.fc_l1},
            {"fc_nonnegative", c.train.fc_nonnegative}}},
          {"seed", c.seed},
          {"auto_annotation_threshold", c.auto_annotation_threshold},
          {"pcr_min_overlap", c.pcr_min_overlap},
          {"redundancy", c.redundancy},
          {"ablation", {{"max_deleted", c.ablation_max_deleted}, {"trials", c.ablation_trials}}},
          {"annotation_images", c.annotation_images},
          {"histogram_bins", c.histogram_bins},
          {"joint_bins", c.joint_bins},
          {"diagnosis_low", c.diagnosis_low},
          {"image_scale", c.image_scale},
          {"report_cards", c.report_cards}};
}

PipelineConfig config_from_json(const json& j) {
  PipelineConfig c;
  try {
    c.analysis.gamma = j.value("gamma", c.analysis.gamma);
    c.analysis.k = j.value("top_k", c.analysis.k);
    c.analysis.l = j.value("top_l", c.analysis.l);
    if (j.contains("normalization")) {
      c.analysis.normalization = features::normalization_from_string(j["normalization"].get<std::string>());
    }
    if (j.contains("threshold_rule")) {
      c.analysis.threshold = features::threshold_rule_from_string(j["threshold_rule"].get<std::string>());
    }
    c.stats_top_n = j.value("stats_top_n", c.stats_top_n);
    if (j.contains("rf")) {
      c.rf.binarize_fraction = j["rf"].value("tau", c.rf.binarize_fraction);
      c.rf.dilation_radius = j["rf"].value("radius", c.rf.dilation_radius);
    }
    if (j.contains("dataset")) c.dataset = j["dataset"].get<synth::DatasetSpec>();
    if (j.contains("train")) {
      const auto& t = j["train"];
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
      c.train.momentum = t.value("momentum", c.train.momentum);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.seed = t.value("seed", c.train.seed);
      c.train.activity_l1 = t.value("activity_l1", c.train.activity_l1);
      c.train.fc_l1 = t.value("fc_l1", c.train.fc_l1);
      c.train.fc_nonnegative = t.value("fc_nonnegative", c.train.fc_nonnegative);
    }
    c.seed = j.value("seed", c.seed);
    c.auto_annotation_threshold = j.value("auto_annotation_threshold", c.auto_annotation_threshold);
    c.pcr_min_overlap = j.value("pcr_min_overlap", c.pcr_min_overlap);
    c.redundancy = j.value("redundancy", c.redundancy);
    if (j.contains("ablation")) {
      c.ablation_max_deleted = j["ablation"].value("max_deleted", c.ablation_max_deleted);
      c.ablation_trials = j["ablation"].value("trials", c.ablation_trials);
    }
    c.annotation_images = j.value("annotation_images", c.annotation_images);
    c.histogram_bins = j.value("histogram_bins", c.histogram_bins);
    c.joint_bins = j.value("joint_bins", c.joint_bins);
    c.diagnosis_low = j.value("diagnosis_low", c.diagnosis_low);
    c.image_scale = j.value("image_scale", c.image_scale);
    c.report_cards = j.value("report_cards", c.report_cards);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad config: ") + e.what());
  }
  return c;
}

fs::path resolve_home(const std::optional<std::string>& flag) {
  if (flag && !flag->empty()) return *flag;
  if (const char* env = std::getenv("GLASSBOX_HOME"); env && *env) return env;
  return "glassbox_home";
}

void require_artifact(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw DependencyError("missing artifact " + path.string() + "; run `glassbox " + producer + "` first");
  }
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text_file(path.string()));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text_file(path.string(), j.dump(2) + "\n");
}

namespace {

json bits_support(const features::BinaryFeatureVector& v) { return v.support(); }

features::BinaryFeatureVector from_support(const json& j, std::size_t dim, features::FeatureRole role) {
  auto v = features::BinaryFeatureVector::zeros(dim, role);
  for (const auto& i : j) v.set(i.get<std::size_t>());
  return v;
}

std::string rel(const fs::path& p, const fs::path& home) { return fs::relative(p, home).generic_string(); }

}  // namespace

json analysis_to_json(const features::InferenceAnalysis& a) {
  json top = json::array();
  for (const auto& t : a.top_features) top.push_back({{"id", t.id}, {"zhat", t.zhat}});
  return {{"sample_id", a.sample_id}, {"predicted_label", a.predicted_label}, {"lookup_label", a.lookup_label},
          {"max_softmax", a.max_softmax}, {"zhat", a.zhat},  {"a", bits_support(a.a)},
          {"q", bits_support(a.q)},       {"e", bits_support(a.e)}, {"top_features", top}};
}

features::InferenceAnalysis analysis_from_json(const json& j) {
  features::InferenceAnalysis a;
  a.sample_id = j.at("sample_id").get<std::uint64_t>();
  a.predicted_label = j.at("predicted_label").get<std::size_t>();
  a.lookup_label = j.at("lookup_label").get<std::size_t>();
  a.max_softmax = j.at("max_softmax").get<float>();
  a.zhat = j.at("zhat").get<std::vector<double>>();
  const std::size_t dim = a.zhat.size();
  a.a = from_support(j.at("a"), dim, features::FeatureRole::activated);
  a.q = from_support(j.at("q"), dim, features::FeatureRole::class_frequent);
  a.e = from_support(j.at("e"), dim, features::FeatureRole::inference);
  for (const auto& t : j.at("top_features")) {
    a.top_features.push_back({t.at("id").get<std::size_t>(), t.at("zhat").get<double>()});
  }
  return a;
}

json stats_to_json(const features::FeatureStats& s) { return {{"mu", s.mu}, {"sample_count", s.sample_count}}; }

features::FeatureStats stats_from_json(const json& j) {
  return {j.at("mu").get<std::vector<double>>(), j.at("sample_count").get<std::size_t>()};
}

json class_frequent_to_json(const features::ClassFrequentTable& t) {
  json out = json::array();
  for (const auto& [cls, cf] : t) {
    out.push_back({{"class", cls},
                   {"features", bits_support(cf.q)},
                   {"counts", cf.counts},
                   {"ranked", cf.ranked},
                   {"samples", cf.samples}});
  }
  return out;
}

features::ClassFrequentTable class_frequent_from_json(const json& j, std::size_t dim) {
  features::ClassFrequentTable t;
  for (const auto& e : j) {
    features::ClassFrequent cf;
    cf.counts = e.at("counts").get<std::vector<std::uint32_t>>();
    cf.ranked = e.at("ranked").get<std::vector<std::size_t>>();
    cf.q = from_support(e.at("features"), dim, features::FeatureRole::class_frequent);
    cf.samples = e.at("samples").get<std::size_t>();
    t.emplace(e.at("class").get<std::size_t>(), std::move(cf));
  }
  return t;
}

std::string mask_to_hex(const Mask& m) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < m.bits.size(); i += 4) {
    unsigned nibble = 0;
    for (std::size_t b = 0; b < 4 && i + b < m.bits.size(); ++b) nibble |= (m.bits[i + b] & 1u) << (3 - b);
    out += kHex[nibble];
  }
  return out;
}

Mask mask_from_hex(const std::string& hex, std::size_t height, std::size_t width) {
  Mask m(height, width);
  if (hex.size() != (height * width + 3) / 4) throw ParseError("mask hex length does not match its dimensions");
  for (std::size_t i = 0; i < m.bits.size(); ++i) {
    const char c = hex[i / 4];
    const unsigned v = (c >= 'a') ? static_cast<unsigned>(c - 'a' + 10) : static_cast<unsigned>(c - '0');
    if (v > 15) throw ParseError("bad mask hex digit");
    m.bits[i] = static_cast<std::uint8_t>((v >> (3 - i % 4)) & 1u);
  }
  return m;
}

RfTable load_rf_table(const Paths& paths) {
  require_artifact(paths.rf(), "rf");
  const json j = read_json(paths.rf());
  const auto h = j.at("height").get<std::size_t>();
  const auto w = j.at("width").get<std::size_t>();
  RfTable t;
  for (const auto& s : j.at("samples")) {
    auto& list = t[s.at("sample_id").get<std::uint64_t>()];
    for (const auto& f : s.at("features")) {
      list.push_back({f.at("feature_id").get<std::size_t>(), mask_from_hex(f.at("mask").get<std::string>(), h, w),
                      f.at("overlay").get<std::string>()});
    }
  }
  return t;
}

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) {
  config_.apply_seed();
  config_.validate();
  paths_.home = config_.home.empty() ? resolve_home(std::nullopt) : fs::path(config_.home);
  config_.home.clear();  // the artifact root is not part of provenance
}

json Pipeline::provenance(const std::vector<fs::path>& inputs) const {
  json in = json::object();
  for (const auto& p : inputs) in[rel(p, paths_.home)] = hex32(file_crc32(p.string()));
  return {{"config", to_json(config_)}, {"inputs", in}};
}

const synth::Dataset& Pipeline::dataset() {
  if (!dataset_) {
    require_artifact(paths_.dataset(), "gen-data");
    dataset_ = synth::load_dataset(paths_.dataset().string());
  }
  return *dataset_;
}

const nn::Model& Pipeline::model() {
  if (!model_) {
    require_artifact(paths_.model(), "train");
    model_ = nn::load_model(paths_.model().string());
  }
  return *model_;
}

std::vector<features::InferenceAnalysis> Pipeline::test_analyses() {
  require_artifact(paths_.analysis(), "analyze");
  std::vector<features::InferenceAnalysis> out;
  const nlohmann::json samples_doc = read_json(paths_.analysis());
  for (const auto& s : samples_doc.at("samples")) out.push_back(analysis_from_json(s));
  return out;
}

json Pipeline::gen_data() {
  fs::create_directories(paths_.home);
  synth::Dataset d = synth::generate(config_.dataset);
  const json prov = provenance({});
  synth::save_dataset(d, paths_.dataset().string(), prov.dump());

  std::size_t flipped = 0;
  for (const auto& s : d.train) flipped += s.label != s.source_class ? 1 : 0;
  json classes = json::array();
  for (const auto& c : d.classes) {
    json names = json::array();
    for (auto a : c.attributes) names.push_back(d.attributes[a].name);
    classes.push_back({{"id", c.id}, {"name", c.name}, {"attributes", c.attributes}, {"attribute_names", names}});
  }
  json attrs = json::array();
  for (const auto& a : d.attributes) attrs.push_back({{"id", a.id}, {"name", a.name}});
  write_json(paths_.dataset_summary(), {{"provenance", prov},
                                        {"classes", classes},
                                        {"attributes", attrs},
                                        {"train_samples", d.train.size()},
                                        {"test_samples", d.test.size()},
                                        {"flipped_train_labels", flipped},
                                        {"dataset_crc32", hex32(file_crc32(paths_.dataset().string()))}});
  dataset_ = std::move(d);
  return {{"command", "gen-data"},
          {"train", dataset_->train.size()},
          {"test", dataset_->test.size()},
          {"flipped_train_labels", flipped}};
}

namespace {

double accuracy(const nn::Model& m, const std::vector<synth::SynthSample>& samples, bool use_source,
                std::vector<std::size_t>* per_class_hits = nullptr, std::vector<std::size_t>* per_class_total = nullptr) {
  std::size_t ok = 0;
  for (const auto& s : samples) {
    const std::size_t truth = use_source ? s.source_class : s.label;
    const bool hit = nn::forward(m, s.image).predicted_label == truth;
    ok += hit ? 1 : 0;
    if (per_class_hits) {
      (*per_class_hits)[truth] += hit ? 1 : 0;
      (*per_class_total)[truth] += 1;
    }
  }
  return samples.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(samples.size());
}

}  // namespace

json Pipeline::train() {
  const auto& d = dataset();
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<nn::LabeledImage> data;
  data.reserve(d.train.size());
  for (const auto& s : d.train) data.push_back({&s.image, s.label});
  nn::TrainReport rep;
  nn::Model m = nn::train_sgd(nn::Model::reference(d.spec.num_classes, config_.seed), data, config_.train, &rep);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const json prov = provenance({paths_.dataset()});
  nn::save_model(m, paths_.model().string(), prov.dump());
  std::vector<std::size_t> hits(d.spec.num_classes, 0), totals(d.spec.num_classes, 0);
  const double test_acc = accuracy(m, d.test, true, &hits, &totals);
  json per_class = json::array();
  for (std::size_t c = 0; c < hits.size(); ++c) {
    per_class.push_back(totals[c] ? static_cast<double>(hits[c]) / static_cast<double>(totals[c]) : 0.0);
  }
  write_json(paths_.train_report(), {{"provenance", prov},
                                     {"epoch_loss", rep.epoch_loss},
                                     {"steps", rep.steps},
                                     {"test_accuracy", test_acc},
                                     {"per_class_test_accuracy", per_class},
                                     {"model_crc32", hex32(file_crc32(paths_.model().string()))}});
  model_ = std::move(m);
  return {{"command", "train"}, {"test_accuracy", test_acc}, {"seconds", seconds}, {"epochs", config_.train.epochs}};
}

json Pipeline::analyze() {
  const auto& d = dataset();
  const auto& m = model();
  const std::size_t C = d.spec.num_classes;

  // Training pass: statistics set, mean, class frequent table.
  std::vector<features::FeatureVector> z_train;
  std::vector<std::vector<float>> p_train;
  std::vector<features::ScoredSample> scored;
  z_train.reserve(d.train.size());
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    const auto t = nn::forward(m, d.train[i].image);
    z_train.push_back(features::global_max_pool(t.conv_final()));
    scored.push_back({i, d.train[i].label, t.probabilities[d.train[i].label]});
    p_train.push_back(t.probabilities);
  }
  const auto selection = features::select_statistics_set(scored, C, config_.stats_top_n);
  const auto stats = features::compute_feature_stats(z_train, selection);
  std::map<std::size_t, std::vector<features::BinaryFeatureVector>> per_class;
  for (std::size_t c = 0; c < C; ++c) per_class[c];
  for (auto i : selection) {
    per_class[d.train[i].label].push_back(features::binarize(
        features::normalize(z_train[i], stats, config_.analysis.normalization), config_.analysis.gamma,
        config_.analysis.threshold));
  }
  const auto table = features::class_frequent(per_class, config_.analysis.k);

  std::vector<features::FeatureVector> z_sel;
  for (auto i : selection) z_sel.push_back(z_train[i]);
  json hist = json::array();
  for (std::size_t f = 0; f < stats.dim(); ++f) {
    const auto h = features::activation_histogram(z_sel, f, config_.histogram_bins);
    hist.push_back({{"feature", f}, {"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}});
  }
  json selected_ids = json::array();
  for (auto i : selection) selected_ids.push_back(d.train[i].id);

  const json prov = provenance({paths_.dataset(), paths_.model()});
  write_json(paths_.stats(), {{"provenance", prov},
                              {"stats", stats_to_json(stats)},
                              {"selection", selected_ids},
                              {"histograms", hist}});
  write_json(paths_.class_frequent(), {{"provenance", prov}, {"classes", class_frequent_to_json(table)}});

  // Annotation set: the statistics set analysed with ground-truth lookup.
  json annotation_set = json::array();
  for (auto i : selection) {
    const auto a = features::analyze(d.train[i].id, z_train[i], p_train[i], stats, table, config_.analysis,
                                     d.train[i].label);
    json ja = analysis_to_json(a);
    ja["label"] = d.train[i].label;
    annotation_set.push_back(std::move(ja));
  }
  write_json(paths_.annotation_analysis(), {{"provenance", prov}, {"samples", annotation_set}});

  // Test pass: per-sample inference analysis plus conv_final traces.
  std::vector<nn::TraceRecord> traces;
  json samples = json::array();
  std::size_t correct = 0;
  double popcount_a = 0.0;
  for (const auto& s : d.test) {
    const auto t = nn::forward(m, s.image);
    const auto z = features::global_max_pool(t.conv_final());
    const auto a = features::analyze(s.id, z, t.probabilities, stats, table, config_.analysis);
    json ja = analysis_to_json(a);
    ja["ground_truth"] = s.source_class;
    samples.push_back(std::move(ja));
    correct += a.predicted_label == s.source_class ? 1 : 0;
    popcount_a += static_cast<double>(a.a.popcount());
    traces.push_back({s.id, t.conv_final(), t.probabilities});
  }
  nn::save_traces(traces, paths_.traces().string(), prov.dump());
  const double acc = d.test.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(d.test.size());
  const double mean_pop = d.test.empty() ? 0.0 : popcount_a / static_cast<double>(d.test.size());
  write_json(paths_.analysis(), {{"provenance", prov},
                                 {"test_accuracy", acc},
                                 {"mean_popcount_a", mean_pop},
                                 {"samples", samples}});
  return {{"command", "analyze"},
          {"statistics_set", selection.size()},
          {"test_accuracy", acc},
          {"mean_popcount_a", mean_pop}};
}

json Pipeline::rf() {
  const auto& d = dataset();
  const auto& m = model();
  require_artifact(paths_.stats(), "analyze");
  const auto stats = stats_from_json(read_json(paths_.stats()).at("stats"));
  const auto analyses = test_analyses();
  fs::create_directories(paths_.rf_dir());
  fs::create_directories(paths_.images_dir());

  json samples = json::array();
  std::size_t masks = 0;
  for (const auto& a : analyses) {
    const auto& s = d.sample(a.sample_id);
    const auto image_path = paths_.images_dir() / ("sample_" + std::to_string(s.id) + ".png");
    image_io::write_png(image_path.string(), image_io::to_rgb(s.image, config_.image_scale));
    json feats = json::array();
    if (!a.top_features.empty()) {
      const auto trace = nn::forward(m, s.image);
      for (const auto& tf : a.top_features) {
        const auto field = rf::receptive_field(m, trace, s.id, tf.id, stats, config_.analysis.gamma, config_.rf);
        const auto overlay_path =
            paths_.rf_dir() / ("rf_" + std::to_string(s.id) + "_" + std::to_string(tf.id) + ".png");
        image_io::write_png(overlay_path.string(), image_io::overlay(s.image, field.mask, config_.image_scale));
        feats.push_back({{"feature_id", tf.id},
                         {"pixels", field.mask.count()},
                         {"mask", mask_to_hex(field.mask)},
                         {"overlay", rel(overlay_path, paths_.home)}});
        ++masks;
      }
    }
    samples.push_back({{"sample_id", s.id}, {"image", rel(image_path, paths_.home)}, {"features", feats}});
  }
  write_json(paths_.rf(), {{"provenance", provenance({paths_.dataset(), paths_.model(), paths_.stats(),
                                                      paths_.analysis()})},
                           {"height", d.spec.image_size},
                           {"width", d.spec.image_size},
                           {"samples", samples}});
  return {{"command", "rf"}, {"samples", analyses.size()}, {"masks", masks}};
}

json Pipeline::ablate() {
  const auto& d = dataset();
  const auto& m = model();
  require_artifact(paths_.class_frequent(), "analyze");
  require_artifact(paths_.traces(), "analyze");
  const auto table = class_frequent_from_json(read_json(paths_.class_frequent()).at("classes"), m.feature_dim());
  const auto traces = nn::load_traces(paths_.traces().string());
  std::vector<features::EvalItem> eval;
  eval.reserve(traces.size());
  for (const auto& t : traces) eval.push_back({&t.conv_final, d.sample(t.sample_id).source_class});

  json classes = json::array();
  for (const auto& [cls, cf] : table) {
    features::AblationOptions opt;
    opt.max_deleted = config_.ablation_max_deleted;
    opt.trials = config_.ablation_trials;
    opt.seed = derive_seed(config_.seed, 0xab1a7e, cls);
    opt.mode = features::AblationMode::frequent;
    const auto frequent = features::ablation_curve(m, eval, cls, cf, opt);
    opt.mode = features::AblationMode::random;
    const auto random = features::ablation_curve(m, eval, cls, cf, opt);
    std::vector<std::size_t> order(cf.ranked.begin(),
                                   cf.ranked.begin() + static_cast<std::ptrdiff_t>(config_.ablation_max_deleted));
    classes.push_back({{"class", cls},
                       {"name", d.classes.at(cls).name},
                       {"deletion_order", order},
                       {"frequent", frequent},
                       {"random", random}});
  }
  write_json(paths_.ablation(), {{"provenance", provenance({paths_.model(), paths_.class_frequent(), paths_.traces()})},
                                 {"max_deleted", config_.ablation_max_deleted},
                                 {"trials", config_.ablation_trials},
                                 {"classes", classes}});
  return {{"command", "ablate"}, {"classes", classes.size()}};
}

namespace {

std::vector<features::InferenceAnalysis> load_annotation_set(const Paths& paths, std::vector<std::size_t>* labels) {
  require_artifact(paths.annotation_analysis(), "analyze");
  std::vector<features::InferenceAnalysis> out;
  const nlohmann::json samples_doc = read_json(paths.annotation_analysis());
  for (const auto& s : samples_doc.at("samples")) {
    out.push_back(analysis_from_json(s));
    if (labels) labels->push_back(s.at("label").get<std::size_t>());
  }
  return out;
}

}  // namespace

json Pipeline::annotate_export() {
  const auto& d = dataset();
  const auto& m = model();
  require_artifact(paths_.stats(), "analyze");
  const auto stats = stats_from_json(read_json(paths_.stats()).at("stats"));
  const auto set = load_annotation_set(paths_, nullptr);

  json feats = json::array();
  std::size_t images = 0;
  std::map<std::uint64_t, nn::ForwardTrace> traces;
  for (std::size_t f = 0; f < m.feature_dim(); ++f) {
    const auto picked = annotation::sample_annotation_images(set, f, config_.annotation_images);
    const auto dir = paths_.annotation_dir() / ("feature_" + std::to_string(f));
    json items = json::array();
    if (!picked.items.empty()) fs::create_directories(dir);
    for (const auto& it : picked.items) {
      const auto& s = d.sample(it.sample_id);
      auto tr = traces.find(s.id);
      if (tr == traces.end()) tr = traces.emplace(s.id, nn::forward(m, s.image)).first;
      const auto field = rf::receptive_field(m, tr->second, s.id, f, stats, config_.analysis.gamma, config_.rf);
      const auto img = dir / ("sample_" + std::to_string(s.id) + ".png");
      const auto ovl = dir / ("rf_" + std::to_string(s.id) + "_" + std::to_string(f) + ".png");
      image_io::write_png(img.string(), image_io::to_rgb(s.image, config_.image_scale));
      image_io::write_png(ovl.string(), image_io::overlay(s.image, field.mask, config_.image_scale));
      items.push_back({{"sample_id", s.id}, {"zhat", it.zhat}, {"image", rel(img, paths_.home)},
                       {"overlay", rel(ovl, paths_.home)}});
      ++images;
    }
    feats.push_back({{"feature_id", f}, {"images", items}});
  }
  write_json(paths_.annotation_tasks(),
             {{"provenance", provenance({paths_.dataset(), paths_.model(), paths_.stats(),
                                         paths_.annotation_analysis()})},
              {"features", feats}});
  bool created = false;
  if (!fs::exists(paths_.annotation_store())) {
    annotation::AnnotationStore().save(paths_.annotation_store().string());
    created = true;
  }
  return {{"command", "annotate-export"}, {"features", feats.size()}, {"images", images}, {"store_created", created}};
}

json Pipeline::auto_annotate() {
  const auto& d = dataset();
  const auto set = load_annotation_set(paths_, nullptr);
  if (set.empty()) throw MissingDataError("annotation set is empty");
  std::vector<annotation::Observation> obs;
  obs.reserve(set.size());
  for (const auto& a : set) obs.push_back({&a.a, d.sample(a.sample_id).attributes()});
  const std::size_t dim = set.front().a.size();
  const auto result = annotation::auto_annotate(obs, dim, d.attributes.size(), config_.auto_annotation_threshold);
  std::vector<std::string> names;
  for (const auto& a : d.attributes) names.push_back(a.name);
  const auto store = annotation::store_from_auto_annotation(result, names);

  json feats = json::array();
  std::size_t labelled = 0;
  for (std::size_t f = 0; f < result.features.size(); ++f) {
    const auto& fp = result.features[f];
    json prec = json::object();
    for (const auto& [t, p] : fp.precision) prec[names.at(t)] = p;
    std::set<std::size_t> labels;
    if (auto it = result.assignments.find(f); it != result.assignments.end()) labels = it->second;
    labelled += labels.empty() ? 0 : 1;
    feats.push_back({{"feature_id", f}, {"activations", fp.activations}, {"precision", prec}, {"labels", labels}});
  }
  write_json(paths_.auto_annotation(), {{"provenance", provenance({paths_.dataset(), paths_.annotation_analysis()})},
                                        {"threshold", result.threshold},
                                        {"features", feats},
                                        {"store", store.to_json()}});
  return {{"command", "auto-annotate"}, {"labelled_features", labelled}, {"features", feats.size()}};
}

namespace {

std::map<std::size_t, std::set<std::size_t>> load_auto_assignments(const Paths& paths) {
  require_artifact(paths.auto_annotation(), "auto-annotate");
  std::map<std::size_t, std::set<std::size_t>> out;
  const nlohmann::json features_doc = read_json(paths.auto_annotation());
  for (const auto& f : features_doc.at("features")) {
    auto labels = f.at("labels").get<std::set<std::size_t>>();
    if (!labels.empty()) out[f.at("feature_id").get<std::size_t>()] = std::move(labels);
  }
  return out;
}

json mean_block(const std::vector<consistency::ConsistencyRecord>& records, std::optional<bool> correct) {
  double p = 0, l = 0, i = 0;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (correct && r.correct != *correct) continue;
    p += r.pcr;
    l += r.lcr;
    i += r.icr;
    ++n;
  }
  if (n == 0) return {{"count", 0}, {"pcr", nullptr}, {"lcr", nullptr}, {"icr", nullptr}};
  const auto dn = static_cast<double>(n);
  return {{"count", n}, {"pcr", p / dn}, {"lcr", l / dn}, {"icr", i / dn}};
}

}  // namespace

json Pipeline::consistency(const std::optional<std::string>& responses_csv) {
  const auto& d = dataset();
  const auto analyses = test_analyses();
  std::vector<consistency::ConsistencyRecord> records;
  std::vector<fs::path> inputs{paths_.dataset(), paths_.analysis()};
  std::string mode;
  if (responses_csv) {
    mode = "responses";
    require_artifact(*responses_csv, "serve");
    const auto rows = consistency::parse_responses_csv(read_text_file(*responses_csv));
    std::set<std::uint64_t> answered;
    for (const auto& r : rows) answered.insert(r.sample_id);
    std::vector<consistency::SampleOutcome> outcomes;
    for (const auto& a : analyses) {
      if (!answered.count(a.sample_id)) continue;  // only the sampled task set is evaluated
      outcomes.push_back({a.sample_id, a.predicted_label, d.sample(a.sample_id).source_class, a.max_softmax});
    }
    records = consistency::build_records(outcomes, rows);
    inputs.emplace_back(*responses_csv);
  } else {
    mode = "oracle";
    const auto rf_table = load_rf_table(paths_);
    const auto assignments = load_auto_assignments(paths_);
    const auto class_attrs = synth::class_attribute_table(d.spec);
    for (const auto& a : analyses) {
      const auto& s = d.sample(a.sample_id);
      std::vector<Mask> rf_masks, attr_masks;
      if (auto it = rf_table.find(a.sample_id); it != rf_table.end()) {
        for (const auto& e : it->second) rf_masks.push_back(e.mask);
      }
      if (rf_masks.size() != a.top_features.size()) {
        throw MissingDataError("rf artifact lacks masks for sample " + std::to_string(a.sample_id) +
                               "; rerun `glassbox rf`");
      }
      for (const auto& p : s.placements) attr_masks.push_back(p.mask);
      const double pcr = consistency::oracle_pcr(rf_masks, attr_masks, config_.pcr_min_overlap);
      const double lcr = consistency::oracle_lcr(consistency::inference_attributes(a.e, assignments),
                                                 class_attrs.at(a.predicted_label));
      records.push_back({a.sample_id, pcr, lcr, a.max_softmax, a.predicted_label == s.source_class});
    }
    inputs.push_back(paths_.rf());
    inputs.push_back(paths_.auto_annotation());
  }
  write_text_file(paths_.records().string(), consistency::records_to_jsonl(records));

  json joints = json::array();
  for (auto pop : {consistency::Population::correct, consistency::Population::incorrect}) {
    const auto jd = consistency::joint_distribution(records, config_.joint_bins, pop);
    joints.push_back({{"population", consistency::to_string(pop)},
                      {"bins", jd.bins},
                      {"counts", jd.counts},
                      {"normalized", jd.normalized()}});
  }
  consistency::DiagnosisThresholds th;
  th.low = th.high = config_.diagnosis_low;
  json diagnoses = json::array();
  std::map<std::string, std::size_t> tally;
  for (const auto& r : records) {
    json list = json::array();
    for (const auto& dg : consistency::diagnose(r, th)) {
      list.push_back(consistency::to_string(dg.kind));
      ++tally[std::string(consistency::to_string(dg.kind))];
    }
    if (!list.empty()) diagnoses.push_back({{"sample_id", r.sample_id}, {"suggestions", list}});
  }
  const json summary = {{"all", mean_block(records, std::nullopt)},
                        {"correct", mean_block(records, true)},
                        {"incorrect", mean_block(records, false)}};
  write_json(paths_.consistency(), {{"provenance", provenance(inputs)},
                                    {"mode", mode},
                                    {"records", rel(paths_.records(), paths_.home)},
                                    {"records_crc32", hex32(file_crc32(paths_.records().string()))},
                                    {"means", summary},
                                    {"joint", joints},
                                    {"diagnoses", diagnoses},
                                    {"suggestion_counts", tally}});
  return {{"command", "consistency"}, {"mode", mode}, {"records", records.size()}, {"means", summary}};
}

json Pipeline::report() {
  const auto site = report::write_site(paths_, to_json(config_));
  return {{"command", "report"}, {"index", site.index.string()}, {"ablation_curves", site.ablation_curves},
          {"joint_heatmaps", site.joint_heatmaps}, {"no_data_panels", site.no_data_panels}};
}

json Pipeline::run_all() {
  json steps = json::array();
  steps.push_back(gen_data());
  steps.push_back(train());
  steps.push_back(analyze());
  steps.push_back(rf());
  steps.push_back(ablate());
  steps.push_back(annotate_export());
  steps.push_back(auto_annotate());
  steps.push_back(consistency());
  steps.push_back(report());
  return steps;
}

}  // namespace glassbox::pipeline
