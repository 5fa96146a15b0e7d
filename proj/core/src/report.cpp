#include "glassbox/report.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "glassbox/annotation.hpp"
#include "glassbox/model_io.hpp"
#include "glassbox/pipeline.hpp"

namespace glassbox::report {

namespace fs = std::filesystem;
using nlohmann::json;

std::string html_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

namespace {

std::string fmt(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string no_data(const std::string& what, const std::string& hint, std::size_t& counter) {
  ++counter;
  return "<div class=\"no-data\"><strong>No data:</strong> " + html_escape(what) + " <em>(" + html_escape(hint) +
         ")</em></div>\n";
}

std::string polyline(const std::vector<double>& ys, double x0, double y0, double w, double h, std::size_t n) {
  std::string pts;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double x = x0 + (n > 0 ? w * static_cast<double>(i) / static_cast<double>(n) : 0.0);
    const double y = y0 + h * (1.0 - std::clamp(ys[i], 0.0, 1.0));
    pts += fmt(x, 1) + "," + fmt(y, 1) + " ";
  }
  return pts;
}

std::string heat_colour(double v) {
  // white -> dark blue
  const int r = static_cast<int>(255 - 215 * v), g = static_cast<int>(255 - 175 * v), b = static_cast<int>(255 - 80 * v);
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", std::clamp(r, 0, 255), std::clamp(g, 0, 255), std::clamp(b, 0, 255));
  return buf;
}

std::string rel_from_site(const std::string& home_relative) { return "../" + home_relative; }

}  // namespace

std::string ablation_svg(const std::string& title, const std::vector<double>& frequent,
                         const std::vector<double>& random) {
  const double x0 = 40, y0 = 20, w = 220, h = 140;
  const std::size_t n = std::max(frequent.size(), random.size()) - 1;
  std::string s = "<svg class=\"ablation-curve\" xmlns=\"http://www.w3.org/2000/svg\" width=\"300\" height=\"200\">\n";
  s += "<text x=\"150\" y=\"14\" text-anchor=\"middle\" font-size=\"12\">" + html_escape(title) + "</text>\n";
  s += "<rect x=\"40\" y=\"20\" width=\"220\" height=\"140\" fill=\"none\" stroke=\"#888\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = y0 + h * (1.0 - t / 4.0);
    s += "<text x=\"34\" y=\"" + fmt(y + 4, 1) + "\" text-anchor=\"end\" font-size=\"9\">" + fmt(t / 4.0) + "</text>\n";
  }
  s += "<text x=\"150\" y=\"180\" text-anchor=\"middle\" font-size=\"10\">deleted feature maps (0-" +
       std::to_string(n) + ")</text>\n";
  s += "<polyline fill=\"none\" stroke=\"#999\" stroke-dasharray=\"4 3\" stroke-width=\"2\" points=\"" +
       polyline(random, x0, y0, w, h, n) + "\"/>\n";
  s += "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"" +
       polyline(frequent, x0, y0, w, h, n) + "\"/>\n";
  s += "<text x=\"255\" y=\"34\" text-anchor=\"end\" font-size=\"9\" fill=\"#999\">random</text>\n";
  s += "<text x=\"255\" y=\"46\" text-anchor=\"end\" font-size=\"9\" fill=\"#c0392b\">frequent</text>\n";
  s += "</svg>\n";
  return s;
}

std::string heatmap_svg(const std::string& title, std::size_t bins, const std::vector<std::size_t>& counts) {
  const double cell = 40, x0 = 50, y0 = 24;
  std::size_t total = 0;
  for (auto c : counts) total += c;
  const double side = cell * static_cast<double>(bins);
  std::string s = "<svg class=\"joint-heatmap\" xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(side + 80, 0) +
                  "\" height=\"" + fmt(side + 70, 0) + "\">\n";
  s += "<text x=\"" + fmt(x0 + side / 2, 1) + "\" y=\"14\" text-anchor=\"middle\" font-size=\"12\">" +
       html_escape(title) + " (n=" + std::to_string(total) + ")</text>\n";
  // rows: PCR bin, top row = highest; columns: LCR bin
  for (std::size_t p = 0; p < bins; ++p) {
    for (std::size_t l = 0; l < bins; ++l) {
      const std::size_t c = counts[p * bins + l];
      const double v = total ? static_cast<double>(c) / static_cast<double>(total) : 0.0;
      const double x = x0 + cell * static_cast<double>(l);
      const double y = y0 + cell * static_cast<double>(bins - 1 - p);
      s += "<rect x=\"" + fmt(x, 1) + "\" y=\"" + fmt(y, 1) + "\" width=\"" + fmt(cell, 0) + "\" height=\"" +
           fmt(cell, 0) + "\" fill=\"" + heat_colour(v) + "\" stroke=\"#ccc\"/>\n";
      s += "<text x=\"" + fmt(x + cell / 2, 1) + "\" y=\"" + fmt(y + cell / 2 + 4, 1) +
           "\" text-anchor=\"middle\" font-size=\"10\" fill=\"" + (v > 0.5 ? "#fff" : "#333") + "\">" +
           std::to_string(c) + "</text>\n";
    }
  }
  for (std::size_t i = 0; i <= bins; ++i) {
    const std::string tick = fmt(static_cast<double>(i) / static_cast<double>(bins), 1);
    s += "<text x=\"" + fmt(x0 + cell * static_cast<double>(i), 1) + "\" y=\"" + fmt(y0 + side + 12, 1) +
         "\" text-anchor=\"middle\" font-size=\"9\">" + tick + "</text>\n";
    s += "<text x=\"" + fmt(x0 - 4, 1) + "\" y=\"" + fmt(y0 + side - cell * static_cast<double>(i) + 3, 1) +
         "\" text-anchor=\"end\" font-size=\"9\">" + tick + "</text>\n";
  }
  s += "<text x=\"" + fmt(x0 + side / 2, 1) + "\" y=\"" + fmt(y0 + side + 28, 1) +
       "\" text-anchor=\"middle\" font-size=\"10\">LCR</text>\n";
  s += "<text x=\"12\" y=\"" + fmt(y0 + side / 2, 1) + "\" font-size=\"10\">PCR</text>\n";
  s += "</svg>\n";
  return s;
}

std::string histogram_svg(const std::string& title, double lo, double hi, const std::vector<std::size_t>& counts) {
  const double x0 = 30, y0 = 20, w = 200, h = 100;
  std::size_t peak = 1;
  for (auto c : counts) peak = std::max(peak, c);
  std::string s = "<svg class=\"histogram\" xmlns=\"http://www.w3.org/2000/svg\" width=\"250\" height=\"150\">\n";
  s += "<text x=\"125\" y=\"14\" text-anchor=\"middle\" font-size=\"11\">" + html_escape(title) + "</text>\n";
  const double bw = counts.empty() ? w : w / static_cast<double>(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double bh = h * static_cast<double>(counts[i]) / static_cast<double>(peak);
    s += "<rect x=\"" + fmt(x0 + bw * static_cast<double>(i), 1) + "\" y=\"" + fmt(y0 + h - bh, 1) + "\" width=\"" +
         fmt(std::max(bw - 1, 0.5), 1) + "\" height=\"" + fmt(bh, 1) + "\" fill=\"#4a78b5\"/>\n";
  }
  s += "<line x1=\"30\" y1=\"120\" x2=\"230\" y2=\"120\" stroke=\"#888\"/>\n";
  s += "<text x=\"30\" y=\"134\" font-size=\"9\">" + fmt(lo) + "</text>\n";
  s += "<text x=\"230\" y=\"134\" text-anchor=\"end\" font-size=\"9\">" + fmt(hi) + "</text>\n";
  s += "</svg>\n";
  return s;
}

namespace {

std::optional<json> maybe_json(const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  return pipeline::read_json(p);
}

// Human store when it holds any closed annotation, otherwise the automatic one.
std::optional<annotation::AnnotationStore> pick_store(const pipeline::Paths& paths, std::string& source) {
  if (fs::exists(paths.annotation_store())) {
    auto store = annotation::AnnotationStore::load(paths.annotation_store().string());
    if (!store.assignments().empty()) {
      source = "human annotation";
      return store;
    }
  }
  if (auto j = maybe_json(paths.auto_annotation())) {
    source = "automatic annotation";
    return annotation::AnnotationStore::from_json(j->at("store"));
  }
  return std::nullopt;
}

}  // namespace

SiteSummary write_site(const pipeline::Paths& paths, const json& config) {
  SiteSummary sum;
  fs::create_directories(paths.site());
  std::string body;

  const auto dataset_json = maybe_json(paths.dataset_summary());
  auto class_name = [&](std::size_t c) -> std::string {
    if (dataset_json) {
      for (const auto& cl : dataset_json->at("classes")) {
        if (cl.at("id").get<std::size_t>() == c) {
          std::string names;
          for (const auto& n : cl.at("attribute_names")) names += (names.empty() ? "" : ", ") + n.get<std::string>();
          return cl.at("name").get<std::string>() + " {" + names + "}";
        }
      }
    }
    return "class_" + std::to_string(c);
  };

  // Training
  body += "<section id=\"training\"><h2>Training</h2>\n";
  if (auto tr = maybe_json(paths.train_report())) {
    body += "<p>Test accuracy: <b>" + fmt(tr->at("test_accuracy").get<double>() * 100.0, 1) + "%</b> after " +
            std::to_string(tr->at("epoch_loss").size()) + " epochs; final epoch loss " +
            fmt(tr->at("epoch_loss").empty() ? 0.0 : tr->at("epoch_loss").back().get<double>(), 4) + ".</p>\n";
  } else {
    body += no_data("no training report", "run train", sum.no_data_panels);
  }
  body += "</section>\n";

  // Cards
  body += "<section id=\"cards\"><h2>Inference cards</h2>\n";
  const auto analysis = maybe_json(paths.analysis());
  const auto rf = maybe_json(paths.rf());
  if (analysis && rf && !analysis->at("samples").empty()) {
    std::string store_source;
    const auto store = pick_store(paths, store_source);
    std::map<std::uint64_t, json> rf_by_sample;
    for (const auto& s : rf->at("samples")) rf_by_sample[s.at("sample_id").get<std::uint64_t>()] = s;
    body += "<p>Feature descriptions from " + html_escape(store ? store_source : "no annotation (ids only)") +
            ".</p>\n<div class=\"cards\">\n";
    std::size_t shown = 0;
    const std::size_t limit = config.value("report_cards", std::size_t{8});
    for (const auto& sj : analysis->at("samples")) {
      if (shown == limit) break;
      const auto a = pipeline::analysis_from_json(sj);
      const auto rit = rf_by_sample.find(a.sample_id);
      if (rit == rf_by_sample.end()) continue;
      std::map<std::size_t, std::string> overlay;
      for (const auto& f : rit->second.at("features")) {
        overlay[f.at("feature_id").get<std::size_t>()] = f.at("overlay").get<std::string>();
      }
      const bool ok = sj.value("ground_truth", a.predicted_label) == a.predicted_label;
      body += "<div class=\"card\">\n<img class=\"input\" src=\"" +
              html_escape(rel_from_site(rit->second.at("image").get<std::string>())) + "\" alt=\"sample " +
              std::to_string(a.sample_id) + "\">\n";
      body += "<p>sample " + std::to_string(a.sample_id) + ": <b>" + html_escape(class_name(a.predicted_label)) +
              "</b> " + (ok ? "" : "<span class=\"wrong\">(misclassified)</span>") +
              " ICR " + fmt(a.max_softmax) + "</p>\n<table><tr><th>feature</th><th>zhat</th><th>visual attribute</th><th>receptive field</th></tr>\n";
      std::vector<annotation::DescribedFeature> desc;
      if (store) desc = annotation::describe(a, *store);
      for (std::size_t i = 0; i < a.top_features.size(); ++i) {
        const auto& tf = a.top_features[i];
        const std::string text = store ? desc[i].text : "(unlabeled feature " + std::to_string(tf.id) + ")";
        body += "<tr><td>" + std::to_string(tf.id) + "</td><td>" + fmt(tf.zhat) + "</td><td>" + html_escape(text) +
                "</td><td>";
        if (auto o = overlay.find(tf.id); o != overlay.end()) {
          body += "<img class=\"rf\" src=\"" + html_escape(rel_from_site(o->second)) + "\" alt=\"rf\">";
        }
        body += "</td></tr>\n";
      }
      if (a.top_features.empty()) body += "<tr><td colspan=\"4\">no inference feature (e is empty)</td></tr>\n";
      body += "</table>\n</div>\n";
      ++shown;
      ++sum.cards;
    }
    body += "</div>\n";
  } else {
    body += no_data("no per-sample analysis or receptive fields", "run analyze and rf", sum.no_data_panels);
  }
  body += "</section>\n";

  // Histograms
  body += "<section id=\"histograms\"><h2>Activation dynamic ranges</h2>\n";
  const auto stats = maybe_json(paths.stats());
  const auto cf = maybe_json(paths.class_frequent());
  if (stats && cf) {
    std::set<std::size_t> chosen;
    for (const auto& c : cf->at("classes")) {
      for (const auto& f : c.at("features")) {
        if (chosen.size() < 8) chosen.insert(f.get<std::size_t>());
      }
    }
    body += "<div class=\"grid\">\n";
    for (const auto& h : stats->at("histograms")) {
      const auto f = h.at("feature").get<std::size_t>();
      if (!chosen.count(f)) continue;
      body += histogram_svg("feature " + std::to_string(f) + " (mu " +
                                fmt(stats->at("stats").at("mu").at(f).get<double>()) + ")",
                            h.at("lo").get<double>(), h.at("hi").get<double>(),
                            h.at("counts").get<std::vector<std::size_t>>());
      ++sum.histograms;
    }
    body += "</div>\n";
  } else {
    body += no_data("no feature statistics", "run analyze", sum.no_data_panels);
  }
  body += "</section>\n";

  // Ablation
  body += "<section id=\"ablation\"><h2>Accuracy decay with feature map deletion</h2>\n";
  if (auto ab = maybe_json(paths.ablation()); ab && !ab->at("classes").empty()) {
    body += "<div class=\"grid\">\n";
    for (const auto& c : ab->at("classes")) {
      body += ablation_svg(class_name(c.at("class").get<std::size_t>()), c.at("frequent").get<std::vector<double>>(),
                           c.at("random").get<std::vector<double>>());
      ++sum.ablation_curves;
    }
    body += "</div>\n";
  } else {
    body += no_data("no ablation curves", "run ablate", sum.no_data_panels);
  }
  body += "</section>\n";

  // Consistency
  body += "<section id=\"consistency\"><h2>Consistency ratios</h2>\n";
  if (auto cs = maybe_json(paths.consistency())) {
    const auto& means = cs->at("means");
    body += "<p>Mode: " + html_escape(cs->at("mode").get<std::string>()) + "</p>\n<table><tr><th>population</th><th>n</th><th>PCR</th><th>LCR</th><th>ICR</th></tr>\n";
    for (const char* pop : {"all", "correct", "incorrect"}) {
      const auto& m = means.at(pop);
      auto cell = [&](const char* k) { return m.at(k).is_null() ? std::string("-") : fmt(m.at(k).get<double>()); };
      body += std::string("<tr><td>") + pop + "</td><td>" + std::to_string(m.at("count").get<std::size_t>()) +
              "</td><td>" + cell("pcr") + "</td><td>" + cell("lcr") + "</td><td>" + cell("icr") + "</td></tr>\n";
    }
    body += "</table>\n<div class=\"grid\">\n";
    for (const auto& jd : cs->at("joint")) {
      const auto counts = jd.at("counts").get<std::vector<std::size_t>>();
      std::size_t n = 0;
      for (auto c : counts) n += c;
      body += "<div>\n" + heatmap_svg(jd.at("population").get<std::string>() + " inference",
                                      jd.at("bins").get<std::size_t>(), counts);
      ++sum.joint_heatmaps;
      if (n == 0) {
        body += no_data("no " + jd.at("population").get<std::string>() + " records", "population is empty",
                        sum.no_data_panels);
      }
      body += "</div>\n";
    }
    body += "</div>\n<h3>Diagnosis</h3>\n<ul>\n";
    const auto& tally = cs->at("suggestion_counts");
    if (tally.empty()) body += "<li>no rule fired</li>\n";
    for (auto it = tally.begin(); it != tally.end(); ++it) {
      body += "<li>" + html_escape(it.key()) + ": " + std::to_string(it.value().get<std::size_t>()) + " samples</li>\n";
    }
    body += "</ul>\n";
  } else {
    body += no_data("no consistency records", "run consistency", sum.no_data_panels);
  }
  body += "</section>\n";

  body += "<section id=\"provenance\"><h2>Configuration</h2>\n<pre>" + html_escape(config.dump(2)) + "</pre>\n</section>\n";

  std::string html =
      "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>glassbox report</title>\n"
      "<style>\nbody{font-family:sans-serif;margin:2em;max-width:1200px}\n"
      ".grid,.cards{display:flex;flex-wrap:wrap;gap:12px}\n.card{border:1px solid #ccc;padding:8px;width:360px}\n"
      ".card img.input{width:128px;image-rendering:pixelated}\n.card img.rf{width:64px;image-rendering:pixelated}\n"
      ".no-data{border:1px dashed #b55;color:#b55;padding:12px;margin:8px 0}\n.wrong{color:#c0392b}\n"
      "table{border-collapse:collapse}td,th{border:1px solid #ddd;padding:2px 6px;font-size:12px}\n</style>\n"
      "</head>\n<body>\n<h1>glassbox analysis report</h1>\n" +
      body + "</body>\n</html>\n";
  sum.index = paths.site() / "index.html";
  write_text_file(sum.index.string(), html);
  return sum;
}

}  // namespace glassbox::report
