#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>

namespace glassbox::pipeline {
struct Paths;
}

// Static HTML/SVG site over whatever pipeline artifacts exist. Missing inputs
// become explicit "no data" panels rather than errors.
namespace glassbox::report {

struct SiteSummary {
  std::filesystem::path index;
  std::size_t cards = 0;
  std::size_t histograms = 0;
  std::size_t ablation_curves = 0;
  std::size_t joint_heatmaps = 0;
  std::size_t no_data_panels = 0;
};

SiteSummary write_site(const pipeline::Paths& paths, const nlohmann::json& config);

std::string html_escape(std::string_view s);

/// Standalone SVG pieces, exposed for tests.
std::string ablation_svg(const std::string& title, const std::vector<double>& frequent,
                         const std::vector<double>& random);
std::string heatmap_svg(const std::string& title, std::size_t bins, const std::vector<std::size_t>& counts);
std::string histogram_svg(const std::string& title, double lo, double hi, const std::vector<std::size_t>& counts);

}  // namespace glassbox::report
