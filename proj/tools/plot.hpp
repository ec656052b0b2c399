#pragma once

// SVG figures, each paired with the CSV of the numbers it draws.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dualobs::cli {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct ChartOptions {
  std::string title, x_label, y_label;
  bool log_x = false, log_y = false;
};

std::string line_chart_svg(const std::vector<Series>& series, const ChartOptions& opt);
/// Long format: series,x,y.
std::string series_csv(const std::vector<Series>& series);

/// Region matrix of several evaluation reports: one row per method, columns
/// In-X/In-T, In-X/Ext-T, Ext-X/In-T, Ext-X/Ext-T, In-X, Ext-X, All.
std::string region_table_csv(const std::vector<nlohmann::json>& reports);
std::string region_table_svg(const std::vector<nlohmann::json>& reports);

/// Per-frame MSE of each report.
std::vector<Series> per_frame_series(const std::vector<nlohmann::json>& reports);
/// Runtime vs number of queries, and vs number of requested time points.
std::vector<Series> runtime_series(const nlohmann::json& profile);
std::vector<Series> rollout_series(const nlohmann::json& profile);
/// Loss curves from a metrics.csv table.
std::vector<Series> metrics_series(const std::string& metrics_csv);

}  // namespace dualobs::cli
