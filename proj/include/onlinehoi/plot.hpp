#pragma once

// Deterministic SVG figures from run, evaluation and ablation reports.

#include "json.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace onlinehoi::plot {

struct Series {
  std::string name;
  std::vector<double> y;
};

struct Bar {
  std::string label;
  double value = 0.0;
  bool has_range = false;
  double lo = 0.0;
  double hi = 0.0;
};

struct Panel {
  std::string title;
  std::vector<Bar> bars;
};

/// `provenance` is embedded verbatim as an XML comment and a metadata block.
std::string line_chart(const std::string& title, const std::vector<Series>& series, const std::string& provenance);
std::string bar_chart(const std::string& title, const std::vector<Panel>& panels, const std::string& provenance);
/// Two-dimensional paths of ground truth and generated motion; each
/// generated frame is shaded by its error.
std::string trajectory_overlay(const std::string& title, const std::vector<std::array<double, 2>>& truth,
                               const std::vector<std::array<double, 2>>& generated, const std::vector<double>& error,
                               const std::string& provenance);

struct PlotResult {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> warnings;
};

/// One figure per report section: loss curve, metric bars and trajectory for
/// evaluation reports; one multi-panel bar chart per ablation family.
PlotResult plot_reports(const std::vector<std::filesystem::path>& reports, const std::filesystem::path& out_dir);

}  // namespace onlinehoi::plot
