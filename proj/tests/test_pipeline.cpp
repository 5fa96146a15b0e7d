#include <gtest/gtest.h>

#include <fstream>

#include "glassbox/checksum.hpp"
#include "glassbox/errors.hpp"
#include "glassbox/model_io.hpp"
#include "glassbox/pipeline.hpp"
#include "glassbox/report.hpp"
#include "small_home.hpp"

using namespace glassbox;
using namespace glassbox::pipeline;
namespace fs = std::filesystem;

namespace {

// Built once; the tests below only read it or rerun idempotent commands.
const Paths& small_home() {
  static const Paths paths = [] {
    Pipeline p(fixture::small_config(fixture::fresh_dir("pipeline_small").string()));
    p.run_all();
    return p.paths();
  }();
  return paths;
}

std::string slurp(const fs::path& p) { return read_text_file(p.string()); }

}  // namespace

TEST(Pipeline, RunAllWritesEveryArtifact) {
  const auto& paths = small_home();
  for (const auto& p : {paths.dataset(), paths.dataset_summary(), paths.model(), paths.train_report(), paths.traces(),
                        paths.stats(), paths.class_frequent(), paths.analysis(), paths.annotation_analysis(),
                        paths.rf(), paths.ablation(), paths.annotation_tasks(), paths.annotation_store(),
                        paths.auto_annotation(), paths.records(), paths.consistency(), paths.site() / "index.html"}) {
    EXPECT_TRUE(fs::exists(p)) << p;
  }
  const auto cons = read_json(paths.consistency());
  EXPECT_EQ(cons.at("mode"), "oracle");
  const auto analysis = read_json(paths.analysis());
  const auto lines = slurp(paths.records());
  EXPECT_EQ(static_cast<std::size_t>(std::count(lines.begin(), lines.end(), '\n')), analysis.at("samples").size());
  EXPECT_EQ(consistency::parse_records_jsonl(lines).size(), 32u);
}

TEST(Pipeline, ProvenanceCarriesConfigAndInputChecksums) {
  const auto& paths = small_home();
  for (const auto& p : {paths.dataset_summary(), paths.train_report(), paths.stats(), paths.class_frequent(),
                        paths.analysis(), paths.rf(), paths.ablation(), paths.annotation_tasks(),
                        paths.auto_annotation(), paths.consistency()}) {
    const auto j = read_json(p);
    ASSERT_TRUE(j.contains("provenance")) << p;
    EXPECT_TRUE(j["provenance"].contains("config")) << p;
  }
  const auto stats = read_json(paths.stats());
  EXPECT_EQ(stats["provenance"]["inputs"]["model.gbox"], hex32(file_crc32(paths.model().string())));
  EXPECT_EQ(stats["provenance"]["config"]["top_k"], 5);
  const auto model_prov = nlohmann::json::parse(nn::model_provenance(paths.model().string()));
  EXPECT_EQ(model_prov["inputs"]["dataset.gbox"], hex32(file_crc32(paths.dataset().string())));
  // records.jsonl has no header, so its checksum lives in consistency.json
  EXPECT_EQ(read_json(paths.consistency())["records_crc32"], hex32(file_crc32(paths.records().string())));
}

TEST(Pipeline, AnalyzeTwiceIsByteIdentical) {
  const auto& paths = small_home();
  const std::string analysis = slurp(paths.analysis()), stats = slurp(paths.stats());
  const auto traces = read_file_bytes(paths.traces().string());
  Pipeline p(fixture::small_config(paths.home.string()));
  p.analyze();
  EXPECT_EQ(slurp(paths.analysis()), analysis);
  EXPECT_EQ(slurp(paths.stats()), stats);
  EXPECT_EQ(read_file_bytes(paths.traces().string()), traces);
}

TEST(Pipeline, MeanPopcountStrictlyBetween) {
  const auto j = read_json(small_home().analysis());
  const double pop = j.at("mean_popcount_a").get<double>();
  EXPECT_GT(pop, 0.0);
  EXPECT_LT(pop, 64.0);
}

TEST(Pipeline, AnalysisSamplesAreWellFormed) {
  const auto& paths = small_home();
  Pipeline p(fixture::small_config(paths.home.string()));
  for (const auto& a : p.test_analyses()) {
    EXPECT_EQ(a.a.size(), 64u);
    // e = a AND q, so e never has a bit a lacks
    for (std::size_t i = 0; i < 64; ++i) {
      if (a.e.test(i)) EXPECT_TRUE(a.a.test(i));
    }
    EXPECT_LE(a.top_features.size(), 3u);
  }
}

TEST(Pipeline, MissingUpstreamIsDependencyError) {
  const auto dir = fixture::fresh_dir("pipeline_empty");
  Pipeline p(fixture::small_config(dir.string()));
  try {
    p.analyze();
    FAIL();
  } catch (const DependencyError& e) {
    EXPECT_NE(std::string(e.what()).find("gen-data"), std::string::npos);
  }
  p.gen_data();
  try {
    p.analyze();
    FAIL();
  } catch (const DependencyError& e) {
    EXPECT_NE(std::string(e.what()).find("train"), std::string::npos);
  }
  EXPECT_THROW(p.consistency(), DependencyError);
  EXPECT_THROW(p.consistency((dir / "nope.csv").string()), DependencyError);
}

TEST(Pipeline, ReportWithoutRecordsShowsNoDataPanels) {
  const auto dir = fixture::fresh_dir("pipeline_report_empty");
  Paths paths{dir};
  const auto site = report::write_site(paths, nlohmann::json::object());
  EXPECT_TRUE(fs::exists(site.index));
  EXPECT_EQ(site.ablation_curves, 0u);
  EXPECT_EQ(site.joint_heatmaps, 0u);
  EXPECT_GE(site.no_data_panels, 4u);
  EXPECT_NE(slurp(site.index).find("no consistency records"), std::string::npos);
}

TEST(Pipeline, ConsistencyFromResponsesCsv) {
  const auto& paths = small_home();
  Pipeline p(fixture::small_config(paths.home.string()));
  const auto analyses = p.test_analyses();
  const auto a0 = analyses.at(0).sample_id, a1 = analyses.at(1).sample_id;
  const auto csv = paths.home / "fixture_responses.csv";
  {
    std::ofstream out(csv);
    out << consistency::kResponseCsvHeader << '\n';
    out << "PCR-" << a0 << ',' << a0 << ",PCR,w1,agree\n";
    out << "PCR-" << a0 << ',' << a0 << ",PCR,w2,disagree\n";
    out << "LCR-" << a0 << ',' << a0 << ",LCR,w1,strongly_agree\n";
    out << "PCR-" << a1 << ',' << a1 << ",PCR,w1,strongly_disagree\n";
    out << "LCR-" << a1 << ',' << a1 << ",LCR,w1,agree\n";
  }
  const auto summary = p.consistency(csv.string());
  EXPECT_EQ(summary.at("mode"), "responses");
  const auto recs = consistency::parse_records_jsonl(slurp(paths.records()));
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].sample_id, a0);
  EXPECT_DOUBLE_EQ(recs[0].pcr, 0.5);
  EXPECT_DOUBLE_EQ(recs[0].lcr, 1.0);
  EXPECT_DOUBLE_EQ(recs[1].pcr, 0.0);
  {
    std::ofstream out(csv, std::ios::app);
    out << "PCR-" << analyses.at(2).sample_id << ',' << analyses.at(2).sample_id << ",PCR,w1,agree\n";
  }
  EXPECT_THROW(p.consistency(csv.string()), MissingDataError);
  p.consistency();  // back to the oracle records for the other tests
}

TEST(Pipeline, ConfigJsonRoundTrip) {
  auto c = fixture::small_config("");
  c.analysis.gamma = 2.5;
  c.train.fc_nonnegative = false;
  c.redundancy = 3;
  const auto j = to_json(c);
  EXPECT_EQ(to_json(config_from_json(j)), j);
  auto bad = c;
  bad.analysis.k = 0;
  EXPECT_THROW(bad.validate(), ValidationError);
}
