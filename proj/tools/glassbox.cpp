// glassbox command line: runs the analysis pipeline stage by stage against an
// artifact directory (--home or $GLASSBOX_HOME) and serves the annotation API.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "glassbox/errors.hpp"
#include "glassbox/model_io.hpp"
#include "glassbox/pipeline.hpp"
#include "glassbox/server.hpp"

namespace gb = glassbox;
using nlohmann::json;

namespace {

struct Flags {
  std::optional<std::string> home;
  std::optional<std::string> config_file;
  std::optional<double> gamma;
  std::optional<std::size_t> top_k;
  std::optional<std::size_t> top_l;
  std::optional<std::size_t> stats_top_n;
  std::optional<double> rf_tau;
  std::optional<std::size_t> rf_radius;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> label_noise;
  std::optional<std::size_t> train_per_class;
  std::optional<std::size_t> test_per_class;
  std::optional<std::size_t> redundancy;
};

gb::pipeline::PipelineConfig build_config(const Flags& f) {
  gb::pipeline::PipelineConfig c;
  if (f.config_file) c = gb::pipeline::config_from_json(gb::pipeline::read_json(*f.config_file));
  if (f.gamma) c.analysis.gamma = *f.gamma;
  if (f.top_k) c.analysis.k = *f.top_k;
  if (f.top_l) c.analysis.l = *f.top_l;
  if (f.stats_top_n) c.stats_top_n = *f.stats_top_n;
  if (f.rf_tau) c.rf.binarize_fraction = *f.rf_tau;
  if (f.rf_radius) c.rf.dilation_radius = *f.rf_radius;
  if (f.seed) c.seed = *f.seed;
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.label_noise) c.dataset.label_noise = *f.label_noise;
  if (f.train_per_class) c.dataset.train_per_class = *f.train_per_class;
  if (f.test_per_class) c.dataset.test_per_class = *f.test_per_class;
  if (f.redundancy) c.redundancy = *f.redundancy;
  c.home = gb::pipeline::resolve_home(f.home).string();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"glassbox: transparent analysis of CNN inference"};
  app.require_subcommand(1);
  Flags f;
  app.add_option("--home", f.home, "artifact directory (default $GLASSBOX_HOME or ./glassbox_home)");
  app.add_option("--config", f.config_file, "JSON pipeline configuration");
  app.add_option("--gamma", f.gamma, "activation threshold on mean-normalized features (2)");
  app.add_option("--top-k", f.top_k, "class frequent features per class (5)");
  app.add_option("--top-l", f.top_l, "maximum features shown per inference (3)");
  app.add_option("--stats-top-n", f.stats_top_n, "statistics samples per class, 0 = all (100)");
  app.add_option("--rf-tau", f.rf_tau, "receptive field binarization fraction of the max (0.1)");
  app.add_option("--rf-radius", f.rf_radius, "receptive field dilation radius (2)");
  app.add_option("--seed", f.seed, "master seed (1)");
  app.add_option("--epochs", f.epochs, "training epochs");
  app.add_option("--label-noise", f.label_noise, "fraction of flipped training labels");
  app.add_option("--train-per-class", f.train_per_class, "training images per class (200)");
  app.add_option("--test-per-class", f.test_per_class, "test images per class (50)");
  app.add_option("--redundancy", f.redundancy, "workers per consistency question (1)");
  app.fallthrough();

  app.add_subcommand("gen-data", "generate the synthetic attribute dataset");
  app.add_subcommand("train", "train the reference network");
  app.add_subcommand("analyze", "feature statistics, class frequent table, per-sample analysis");
  app.add_subcommand("rf", "receptive fields of every test sample's top features");
  app.add_subcommand("ablate", "accuracy decay curves, frequent vs random deletion");
  app.add_subcommand("annotate-export", "per-feature image sets for human annotation");
  app.add_subcommand("auto-annotate", "label features from ground-truth attributes");
  auto* cons = app.add_subcommand("consistency", "PCR/LCR/ICR records (oracle or human responses)");
  std::optional<std::string> responses;
  cons->add_option("--responses", responses, "response CSV; omit for the automated oracle");
  app.add_subcommand("report", "static HTML report");
  app.add_subcommand("run", "gen-data through report");
  app.add_subcommand("config", "print the effective configuration");
  auto* serve = app.add_subcommand("serve", "HTTP API for annotation and consistency tasks");
  std::string host = "127.0.0.1", static_dir;
  int port = 8080;
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--static", static_dir, "directory of UI assets served at /");

  CLI11_PARSE(app, argc, argv);

  try {
    gb::pipeline::PipelineConfig config = build_config(f);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "config") {
      config.apply_seed();
      std::cout << gb::pipeline::to_json(config).dump(2) << "\n";
      return 0;
    }
    gb::pipeline::Pipeline p(config);
    json out;
    if (cmd == "gen-data") out = p.gen_data();
    else if (cmd == "train") out = p.train();
    else if (cmd == "analyze") out = p.analyze();
    else if (cmd == "rf") out = p.rf();
    else if (cmd == "ablate") out = p.ablate();
    else if (cmd == "annotate-export") out = p.annotate_export();
    else if (cmd == "auto-annotate") out = p.auto_annotate();
    else if (cmd == "consistency") out = p.consistency(responses);
    else if (cmd == "report") out = p.report();
    else if (cmd == "run") out = p.run_all();
    else if (cmd == "serve") {
      gb::server::Service service(p.paths(), p.config());
      std::cerr << "serving " << p.paths().home << " on http://" << host << ":" << port << "\n";
      gb::server::serve(service, host, port, static_dir);
      return 0;
    }
    std::cout << out.dump(2) << "\n";
  } catch (const gb::DependencyError& e) {
    std::cerr << "glassbox: " << e.what() << "\n";
    return 3;
  } catch (const gb::Error& e) {
    std::cerr << "glassbox: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "glassbox: unexpected failure: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
