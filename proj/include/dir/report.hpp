#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dir/metrics.hpp"

namespace dir {

// One labelled result row; metric order is preserved into the rendered output.
struct AblationRow {
  std::string label;
  std::vector<std::pair<std::string, double>> metrics;
};

struct EvalReport {
  double ap_mean = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  std::vector<std::pair<std::string, double>> pearson;
  std::vector<Histogram> delta_iou_per_epoch;
  std::vector<AblationRow> rows;
};

// Validates that every row carries the same metrics in the same order and
// that the headline row exposes ap/ap50/ap75; throws std::invalid_argument
// naming the offending row or cell.
EvalReport assemble_report(std::span<const AblationRow> rows,
                           const std::string& headline_label,
                           std::vector<std::pair<std::string, double>> pearson = {},
                           std::vector<Histogram> delta_iou_per_epoch = {});

// Comma-separated table with a header row; values use 6 significant digits.
std::string render_csv(std::span<const AblationRow> rows);

// Structured text mirror of the same fields (JSON).
std::string report_json(const EvalReport& report);

std::string format_metric(double v);  // 6 significant digits

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace dir
