#include "dir/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dir {

namespace {

void check_uniform(std::span<const AblationRow> rows) {
  if (rows.empty()) throw std::invalid_argument("report: no rows");
  const AblationRow& head = rows.front();
  if (head.metrics.empty()) throw std::invalid_argument("report: row '" + head.label + "' has no metrics");
  for (const AblationRow& row : rows) {
    if (row.metrics.size() != head.metrics.size())
      throw std::invalid_argument("report: row '" + row.label + "' has a mismatched metric set");
    for (std::size_t i = 0; i < head.metrics.size(); ++i) {
      if (row.metrics[i].first != head.metrics[i].first)
        throw std::invalid_argument("report: row '" + row.label + "' is missing metric '" +
                                    head.metrics[i].first + "'");
    }
  }
}

double metric_value(const AblationRow& row, const std::string& name) {
  for (const auto& [key, value] : row.metrics)
    if (key == name) return value;
  throw std::invalid_argument("report: row '" + row.label + "' is missing metric '" + name + "'");
}

}  // namespace

std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

EvalReport assemble_report(std::span<const AblationRow> rows,
                           const std::string& headline_label,
                           std::vector<std::pair<std::string, double>> pearson,
                           std::vector<Histogram> delta_iou_per_epoch) {
  check_uniform(rows);
  EvalReport report;
  report.rows.assign(rows.begin(), rows.end());
  report.pearson = std::move(pearson);
  report.delta_iou_per_epoch = std::move(delta_iou_per_epoch);

  const AblationRow* headline = nullptr;
  for (const AblationRow& row : report.rows)
    if (row.label == headline_label) headline = &row;
  if (headline == nullptr)
    throw std::invalid_argument("report: headline row '" + headline_label + "' not found");
  report.ap_mean = metric_value(*headline, "ap");
  report.ap50 = metric_value(*headline, "ap50");
  report.ap75 = metric_value(*headline, "ap75");
  return report;
}

std::string render_csv(std::span<const AblationRow> rows) {
  check_uniform(rows);
  std::ostringstream os;
  os << "method";
  for (const auto& [key, value] : rows.front().metrics) os << ',' << key;
  os << '\n';
  for (const AblationRow& row : rows) {
    os << row.label;
    for (const auto& [key, value] : row.metrics) os << ',' << format_metric(value);
    os << '\n';
  }
  return os.str();
}

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["ap"] = {{"mean", report.ap_mean}, {"ap50", report.ap50}, {"ap75", report.ap75}};
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const AblationRow& row : report.rows) {
    nlohmann::ordered_json r;
    r["method"] = row.label;
    for (const auto& [key, value] : row.metrics) r[key] = value;
    rows.push_back(std::move(r));
  }
  j["rows"] = std::move(rows);
  nlohmann::ordered_json pearson = nlohmann::ordered_json::object();
  for (const auto& [key, value] : report.pearson) pearson[key] = value;
  j["pearson"] = std::move(pearson);
  nlohmann::ordered_json drift = nlohmann::ordered_json::array();
  for (std::size_t e = 0; e < report.delta_iou_per_epoch.size(); ++e) {
    const Histogram& h = report.delta_iou_per_epoch[e];
    nlohmann::ordered_json he;
    he["epoch"] = e;
    he["mean"] = h.mean;
    he["count"] = h.count;
    he["lo"] = h.lo;
    he["bin_width"] = h.bin_width;
    he["mass"] = h.mass;
    drift.push_back(std::move(he));
  }
  j["delta_iou"] = std::move(drift);
  return j.dump(2) + "\n";
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("report: cannot open '" + path + "' for writing");
  os << content;
  if (!os) throw std::runtime_error("report: write to '" + path + "' failed");
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("report: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

}  // namespace dir
