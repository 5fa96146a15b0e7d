// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "glassbox/checksum.hpp"
#include "glassbox/consistency.hpp"
#include "glassbox/features.hpp"
#include "glassbox/model_io.hpp"
#include "glassbox/nn.hpp"
#include "glassbox/pipeline.hpp"
#include "glassbox/receptive_field.hpp"
#include "glassbox/rng.hpp"

using namespace glassbox;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("glassbox_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

pipeline::PipelineConfig default_config(const fs::path& home) {
  pipeline::PipelineConfig c;
  c.home = home.string();
  return c;
}

// The default run shared by the training, ablation, structural, RF and
// determinism checks.
struct DefaultRun {
  fs::path home;
  double train_seconds = 0.0;
  double ablate_seconds = 0.0;
  double test_accuracy = 0.0;
};

DefaultRun run_default(const std::string& name) {
  DefaultRun r;
  r.home = scratch(name);
  pipeline::Pipeline p(default_config(r.home));
  p.gen_data();
  auto t0 = std::chrono::steady_clock::now();
  const auto tr = p.train();
  r.train_seconds = seconds_since(t0);
  r.test_accuracy = tr.at("test_accuracy").get<double>();
  p.analyze();
  p.rf();
  t0 = std::chrono::steady_clock::now();
  p.ablate();
  r.ablate_seconds = seconds_since(t0);
  p.annotate_export();
  p.auto_annotate();
  p.consistency();
  p.report();
  return r;
}

Outcome training(const DefaultRun& run) {
  const bool ok = run.test_accuracy >= 0.90 && run.train_seconds <= 300.0;
  return {ok, "test accuracy " + fmt(run.test_accuracy) + " (need >= 0.900), training " + fmt(run.train_seconds, 1) +
                  " s (need <= 300)"};
}

Outcome ablation(const DefaultRun& run) {
  const pipeline::Paths paths{run.home};
  const json ab = pipeline::read_json(paths.ablation());
  const std::size_t k = 5;
  bool ok = run.ablate_seconds <= 120.0 && ab.at("trials").get<std::size_t>() == 10;
  double worst = 1e9;
  std::string worst_class;
  for (const auto& c : ab.at("classes")) {
    const auto frequent = c.at("frequent").get<std::vector<double>>();
    const auto random = c.at("random").get<std::vector<double>>();
    // drop(frequent) - drop(random) with the same baseline
    const double contrast = (frequent[0] - frequent[k]) - (random[0] - random[k]);
    if (contrast < worst) {
      worst = contrast;
      worst_class = c.at("name").get<std::string>();
    }
    ok = ok && contrast >= 0.30;
  }
  return {ok, "smallest contrast " + fmt(worst) + " (" + worst_class + ", need >= 0.300), ablation " +
                  fmt(run.ablate_seconds, 1) + " s (need <= 120)"};
}

Outcome consistency_contrast() {
  const fs::path home = scratch("noisy");
  auto cfg = default_config(home);
  // 5% label noise as required; heavier pixel noise and four epochs put the
  // fixture inside the 90-97% window (see README)
  cfg.dataset.label_noise = 0.05;
  cfg.dataset.noise_level = 0.3;
  cfg.train.epochs = 4;
  pipeline::Pipeline p(cfg);
  p.gen_data();
  const double acc = p.train().at("test_accuracy").get<double>();
  p.analyze();
  p.rf();
  p.auto_annotate();
  const json means = p.consistency().at("means");
  const auto& c = means.at("correct");
  const auto& i = means.at("incorrect");
  std::string detail = "fixture accuracy " + fmt(acc) + " (window 0.900-0.970)";
  if (acc < 0.90 || acc > 0.97 || i.at("count").get<std::size_t>() == 0) {
    return {false, detail + "; fixture outside the window, contrast not evaluated"};
  }
  const double pc = c.at("pcr").get<double>(), pi = i.at("pcr").get<double>();
  const double lc = c.at("lcr").get<double>(), li = i.at("lcr").get<double>();
  detail += "; PCR correct " + fmt(pc) + " vs incorrect " + fmt(pi) + " (diff " + fmt(pc - pi) + ")";
  detail += "; LCR correct " + fmt(lc) + " vs incorrect " + fmt(li) + " (diff " + fmt(lc - li) + ")";
  detail += "; n = " + std::to_string(c.at("count").get<std::size_t>()) + "/" +
            std::to_string(i.at("count").get<std::size_t>());
  return {pc - pi >= 0.10 && lc - li >= 0.10, detail + "; need both diffs >= 0.100"};
}

Outcome aggregation() {
  using namespace consistency;
  const auto rows =
      parse_responses_csv(read_text_file(std::string(GLASSBOX_TEST_FIXTURES) + "/responses_fixture.csv"));
  const std::vector<SampleOutcome> outs = {{101, 2, 2, 0.9}, {102, 1, 3, 0.4}, {103, 0, 0, 0.7}};
  const auto recs = build_records(outs, rows);
  const std::vector<double> want_pcr = {0.75, 0.0, 1.0}, want_lcr = {0.6, 1.0, 0.25};
  bool ok = rows.size() == 120 && recs.size() == 3;
  std::string got;
  for (std::size_t k = 0; ok && k < 3; ++k) {
    ok = recs[k].pcr == want_pcr[k] && recs[k].lcr == want_lcr[k];
    got += (k ? ", " : "") + fmt(recs[k].pcr, 2) + "/" + fmt(recs[k].lcr, 2);
  }
  ok = ok && merge_likert(Answer::strongly_agree) == Merged::agree && merge_likert(Answer::agree) == Merged::agree &&
       merge_likert(Answer::disagree) == Merged::disagree &&
       merge_likert(Answer::strongly_disagree) == Merged::disagree;
  return {ok, "PCR/LCR per sample " + got + " (want 0.75/0.60, 0.00/1.00, 1.00/0.25); merge rule on 4 tokens"};
}

Outcome structural(const DefaultRun& run) {
  using namespace features;
  std::vector<std::string> problems;
  const pipeline::Paths paths{run.home};
  pipeline::Pipeline p(default_config(run.home));
  const auto& d = p.dataset();
  const auto& m = p.model();
  const auto cfg = p.config();
  const json stats_doc = pipeline::read_json(paths.stats());
  const auto stats = pipeline::stats_from_json(stats_doc.at("stats"));
  const auto table = pipeline::class_frequent_from_json(pipeline::read_json(paths.class_frequent()).at("classes"),
                                                        m.feature_dim());

  // naive recount of every class's table from the statistics set
  std::map<std::size_t, std::vector<std::vector<std::uint8_t>>> bits_by_class;
  for (const auto& id : stats_doc.at("selection")) {
    const auto& s = d.sample(id.get<std::uint64_t>());
    const auto z = global_max_pool(nn::forward(m, s.image).conv_final());
    std::vector<std::uint8_t> b(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double zhat = stats.mu[j] == 0.0 ? 0.0 : static_cast<double>(z[j]) / stats.mu[j];
      b[j] = zhat >= cfg.analysis.gamma ? 1 : 0;
    }
    bits_by_class[s.label].push_back(std::move(b));
  }
  std::size_t classes_checked = 0;
  for (const auto& [cls, list] : bits_by_class) {
    std::vector<std::uint32_t> counts(m.feature_dim(), 0);
    for (const auto& b : list)
      for (std::size_t j = 0; j < b.size(); ++j) counts[j] += b[j];
    std::vector<std::size_t> order(counts.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return counts[x] > counts[y]; });
    const auto& cf = table.at(cls);
    bool same = cf.counts == counts && cf.ranked == order && cf.samples == list.size();
    for (std::size_t j = 0; j < counts.size(); ++j) {
      const bool top = std::find(order.begin(), order.begin() + cfg.analysis.k, j) != order.begin() + cfg.analysis.k;
      same = same && cf.q.test(j) == top;
    }
    if (!same) problems.push_back("class " + std::to_string(cls) + " table differs from recount");
    if (cf.q.popcount() != cfg.analysis.k) problems.push_back("popcount(q) != k for class " + std::to_string(cls));
    ++classes_checked;
  }
  if (classes_checked != table.size()) problems.push_back("recount covered fewer classes than the table");
  for (const auto& a : p.test_analyses()) {
    if (a.q.popcount() != cfg.analysis.k) problems.push_back("popcount(q) != k in sample analysis");
  }

  // e = a AND q on random pairs
  Rng rng(20240601);
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::uint8_t> a(64), q(64), want(64);
    for (std::size_t j = 0; j < 64; ++j) {
      a[j] = uniform01(rng) < 0.3 ? 1 : 0;
      q[j] = uniform01(rng) < 0.3 ? 1 : 0;
      want[j] = a[j] & q[j];
    }
    const auto e = inference_feature(BinaryFeatureVector(a, FeatureRole::activated),
                                     BinaryFeatureVector(q, FeatureRole::class_frequent));
    if (!std::equal(want.begin(), want.end(), e.bits().begin(), e.bits().end())) {
      problems.push_back("e != a AND q on random pair " + std::to_string(t));
      break;
    }
  }

  // three dog samples with counts [3,1,2,0,3]
  std::map<std::size_t, std::vector<BinaryFeatureVector>> dog;
  dog[0] = {BinaryFeatureVector({1, 1, 1, 0, 1}, FeatureRole::activated),
            BinaryFeatureVector({1, 0, 1, 0, 1}, FeatureRole::activated),
            BinaryFeatureVector({1, 0, 0, 0, 1}, FeatureRole::activated)};
  const auto dq = class_frequent(dog, 3).at(0).q;
  const std::vector<std::uint8_t> want_dog = {1, 0, 1, 0, 1};
  if (!std::equal(want_dog.begin(), want_dog.end(), dq.bits().begin(), dq.bits().end())) {
    problems.push_back("q(dog) != [1,0,1,0,1]");
  }

  std::string detail = std::to_string(classes_checked) + " class tables recounted, 1000 AND pairs, q(dog) example";
  for (const auto& pr : problems) detail += "; " + pr;
  return {problems.empty(), detail};
}

Outcome receptive_fields(const DefaultRun& run) {
  const pipeline::Paths paths{run.home};
  pipeline::Pipeline p(default_config(run.home));
  const auto& d = p.dataset();
  const auto& m = p.model();
  const double gamma = p.config().analysis.gamma;
  const auto stats = pipeline::stats_from_json(pipeline::read_json(paths.stats()).at("stats"));
  const auto analyses = p.test_analyses();

  std::size_t samples = 0, pairs = 0, subset_failures = 0, influential = 0;
  double worst_linearity = 0.0;
  Rng rng(7);
  // 20 samples spread over the test split
  for (std::size_t n = 0; n < 20 && n < analyses.size(); ++n) {
    const auto& a = analyses[n * analyses.size() / 20];
    const auto& s = d.sample(a.sample_id);
    const auto trace = nn::forward(m, s.image);
    const auto ids = a.e.support();
    ++samples;
    if (ids.empty()) continue;
    const auto infl = rf::influence_oracle(m, s.image, ids, stats, gamma);
    std::vector<Tensor> masked;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      masked.push_back(rf::build_masked_feature(trace, ids[k], stats, gamma));
      const Tensor mag = rf::backproject(m, trace, masked.back());
      Mask support(mag.dim(0), mag.dim(1));
      for (std::size_t i = 0; i < mag.size(); ++i) support.bits[i] = mag[i] != 0.0f ? 1 : 0;
      subset_failures += infl[k].subset_of(support) ? 0 : 1;
      influential += infl[k].count();
      ++pairs;
    }
    // linearity on random combinations of two masked tensors
    if (masked.size() >= 2) {
      const float alpha = static_cast<float>(uniform(rng, -2.0, 2.0));
      const float beta = static_cast<float>(uniform(rng, -2.0, 2.0));
      Tensor mix(masked[0].shape());
      for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * masked[0][i] + beta * masked[1][i];
      const Tensor lhs = rf::reverse_pass(m, trace, mix);
      const Tensor r0 = rf::reverse_pass(m, trace, masked[0]);
      const Tensor r1 = rf::reverse_pass(m, trace, masked[1]);
      for (std::size_t i = 0; i < lhs.size(); ++i) {
        worst_linearity =
            std::max(worst_linearity, static_cast<double>(std::abs(lhs[i] - (alpha * r0[i] + beta * r1[i]))));
      }
    }
  }

  // radius-2 disk: |dy|,|dx| <= 2 with dy^2 + dx^2 <= 4 has 13 cells
  std::vector<std::pair<int, int>> want;
  for (int dy = -2; dy <= 2; ++dy)
    for (int dx = -2; dx <= 2; ++dx)
      if (dy * dy + dx * dx <= 4) want.emplace_back(dy, dx);
  Tensor point({9, 9});
  point[4 * 9 + 4] = 1.0f;
  rf::RFParams params;
  params.dilation_radius = 2;
  const Mask disk = rf::postprocess(point, params);
  bool disk_ok = want.size() == 13 && disk.count() == 13;
  for (const auto& [dy, dx] : want) disk_ok = disk_ok && disk(4 + dy, 4 + dx) == 1;

  const bool ok = samples == 20 && pairs > 0 && influential > 0 && subset_failures == 0 && worst_linearity <= 1e-5 &&
                  disk_ok;
  return {ok, std::to_string(samples) + " samples, " + std::to_string(pairs) + " (sample, feature) pairs, " +
                  std::to_string(influential) + " influential pixels, " + std::to_string(subset_failures) +
                  " outside back-projection support; linearity error " + fmt(worst_linearity * 1e6, 3) +
                  "e-6 (need <= 1e-5); disk radius 2 " + (disk_ok ? "= 13 pixels" : "wrong")};
}

Outcome determinism(const DefaultRun& a, const DefaultRun& b) {
  std::vector<std::string> compared, differing;
  for (const auto& entry : fs::recursive_directory_iterator(a.home)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext != ".json" && ext != ".gbox" && ext != ".jsonl") continue;
    const auto rel = fs::relative(entry.path(), a.home);
    compared.push_back(rel.string());
    const auto other = b.home / rel;
    if (!fs::exists(other) || read_file_bytes(entry.path().string()) != read_file_bytes(other.string())) {
      differing.push_back(rel.string());
    }
  }
  std::string detail = std::to_string(compared.size()) + " JSON/model files compared";
  for (const auto& d : differing) detail += "; differs: " + d;
  const bool has_model = std::find(compared.begin(), compared.end(), "model.gbox") != compared.end();
  return {differing.empty() && has_model && compared.size() >= 10, detail};
}

Outcome diagnosis() {
  using namespace consistency;
  auto kinds = [](double pcr, double lcr, bool correct) {
    std::vector<Suggestion> out;
    for (const auto& dg : diagnose({0, pcr, lcr, 0.5, correct})) out.push_back(dg.kind);
    return out;
  };
  const bool a = kinds(0.2, 0.9, true) == std::vector<Suggestion>{Suggestion::feature_extraction};
  const bool b = kinds(0.9, 0.2, true) == std::vector<Suggestion>{Suggestion::decision_making};
  const bool c = kinds(0.9, 0.9, false) == std::vector<Suggestion>{Suggestion::data_collection};
  return {a && b && c, std::string("(0.2,0.9,correct) ") + (a ? "ok" : "wrong") + ", (0.9,0.2,correct) " +
                           (b ? "ok" : "wrong") + ", (0.9,0.9,incorrect) " + (c ? "ok" : "wrong")};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& check) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << " [" << fmt(seconds_since(t0), 1)
              << " s]" << std::endl;
  };

  // the two default runs are setup, not criteria; errors there fail every dependent line
  std::optional<DefaultRun> first, second;
  std::string setup_error;
  try {
    first = run_default("run_a");
    second = run_default("run_b");
  } catch (const std::exception& e) {
    setup_error = e.what();
  }
  auto needs = [&](auto fn) {
    return [&, fn]() -> Outcome {
      if (!first || !second) return {false, "default run failed: " + setup_error};
      return fn();
    };
  };

  report("training", needs([&] { return training(*first); }));
  report("ablation_contrast", needs([&] { return ablation(*first); }));
  report("consistency_contrast", consistency_contrast);
  report("aggregation_exactness", aggregation);
  report("structural_oracles", needs([&] { return structural(*first); }));
  report("receptive_field_oracle", needs([&] { return receptive_fields(*first); }));
  report("determinism", needs([&] { return determinism(*first, *second); }));
  report("diagnosis_rules", diagnosis);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
