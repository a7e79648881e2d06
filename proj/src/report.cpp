#include "affdesk/report.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "affdesk/common.hpp"
#include "affdesk/io.hpp"

namespace aff {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kPaletteSize = 8;

int column_index(const CsvTable& table, const std::string& name,
                 const std::string& file) {
  for (size_t i = 0; i < table.header.size(); ++i)
    if (table.header[i] == name) return static_cast<int>(i);
  throw SchemaError(file + ": missing column '" + name + "'");
}

double cell_number(const std::string& s, const std::string& file) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw SchemaError(file + ": non-numeric cell '" + s + "'");
  return v;
}

}  // namespace

void write_report(const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(out_dir))
    throw IoError("report: no such directory: " + out_dir.string());

  std::vector<fs::path> stats_files, curve_files;
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.path().extension() != ".csv") continue;
    if (name.rfind("stats_", 0) == 0) stats_files.push_back(entry.path());
    if (name.rfind("curves_", 0) == 0) curve_files.push_back(entry.path());
  }
  std::sort(stats_files.begin(), stats_files.end());
  std::sort(curve_files.begin(), curve_files.end());
  if (stats_files.empty() && curve_files.empty())
    throw IoError("report: no stats_*.csv or curves_*.csv under " +
                  out_dir.string());

  const fs::path report_dir = out_dir / "report";
  std::error_code ec;
  fs::create_directories(report_dir, ec);
  if (ec) throw IoError("report: cannot create " + report_dir.string());

  CsvTable summary;
  summary.header = {"run", "paradigm", "metric", "iteration", "value"};

  for (const fs::path& file : stats_files) {
    const std::string fname = file.filename().string();
    const CsvTable table = read_csv(file);
    const int c_iter = column_index(table, "iteration", fname);
    const int c_metric = column_index(table, "metric", fname);
    const int c_value = column_index(table, "value", fname);

    const std::string stem = file.stem().string();
    const std::string paradigm = stem.substr(std::string("stats_").size());

    std::map<std::string, SvgSeries> by_metric;
    std::vector<std::string> metric_order;
    for (const auto& row : table.rows) {
      const std::string& metric = row[c_metric];
      if (!by_metric.count(metric)) {
        SvgSeries s;
        s.label = metric;
        s.color = kPalette[metric_order.size() % kPaletteSize];
        by_metric[metric] = s;
        metric_order.push_back(metric);
      }
      by_metric[metric].xs.push_back(cell_number(row[c_iter], fname));
      by_metric[metric].ys.push_back(cell_number(row[c_value], fname));
      summary.rows.push_back(
          {stem, paradigm, metric, row[c_iter], row[c_value]});
    }
    std::vector<SvgSeries> series;
    for (const std::string& m : metric_order) series.push_back(by_metric[m]);
    write_text_file(report_dir / (stem + ".svg"),
                    render_svg_chart(stem, series, "iteration", "value"));
  }

  for (const fs::path& file : curve_files) {
    const std::string fname = file.filename().string();
    const CsvTable table = read_csv(file);
    const int c_roll = column_index(table, "rollout", fname);
    const int c_step = column_index(table, "step", fname);
    const int c_dist = column_index(table, "distance", fname);

    std::map<std::string, SvgSeries> by_rollout;
    std::vector<std::string> order;
    for (const auto& row : table.rows) {
      const std::string& id = row[c_roll];
      if (!by_rollout.count(id)) {
        SvgSeries s;
        s.label = "rollout " + id;
        s.color = kPalette[order.size() % kPaletteSize];
        by_rollout[id] = s;
        order.push_back(id);
      }
      by_rollout[id].xs.push_back(cell_number(row[c_step], fname));
      by_rollout[id].ys.push_back(cell_number(row[c_dist], fname));
    }
    std::vector<SvgSeries> series;
    for (const std::string& id : order) series.push_back(by_rollout[id]);
    const std::string stem = file.stem().string();
    write_text_file(
        report_dir / (stem + ".svg"),
        render_svg_chart(stem, series, "step", "feature distance"));
  }

  write_csv(report_dir / "summary.csv", summary);
}

}  // namespace aff
