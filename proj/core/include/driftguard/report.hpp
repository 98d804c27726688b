#pragma once

#include <string>
#include <vector>

#include "driftguard/continual.hpp"
#include "driftguard/metrics.hpp"
#include "driftguard/ood.hpp"

namespace driftguard {

// One labeled trace, e.g. the lora / full / no_cl runs of the same wave.
struct NamedTrace {
  std::string method;
  WaveTrace trace;
};

struct DetectionRow {
  std::string method;
  double quantile = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

std::string detection_rows_to_csv(const std::vector<DetectionRow>& rows);
std::vector<DetectionRow> detection_rows_from_csv(const std::string& text);

// Minimal deterministic SVG charts; output is a single self-contained file.
struct SeriesPoint {
  double x = 0.0;
  double y = 0.0;
};
struct Series {
  std::string name;
  std::vector<SeriesPoint> points;
};

std::string render_line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label,
                              const std::vector<Series>& series);
struct BarGroup {
  std::string label;
  std::vector<double> values;  // one per bar name
};
std::string render_grouped_bars(const std::string& title,
                                const std::vector<std::string>& bar_names,
                                const std::vector<BarGroup>& groups);

// Writes trace CSVs (wave,step,pred,dsr,id_f1) per method, the detection CSV
// (method,quantile,precision,recall,f1), DSR/retention line charts per wave
// and one grouped-bar detection chart. Pure function of its inputs: two runs
// over the same data produce byte-identical files.
std::vector<std::string> emit_report(const std::vector<NamedTrace>& traces,
                                     const std::vector<DetectionRow>& detection,
                                     const std::string& out_dir);

}  // namespace driftguard
