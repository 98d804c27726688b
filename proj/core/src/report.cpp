#include "driftguard/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

namespace driftguard {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string fmt(double v) { return format_double(v, 2); }

}  // namespace

std::string detection_rows_to_csv(const std::vector<DetectionRow>& rows) {
  std::ostringstream ss;
  ss << "method,quantile,precision,recall,f1\n";
  for (const auto& r : rows)
    ss << r.method << "," << format_double(r.quantile, 2) << ","
       << format_double(r.precision) << "," << format_double(r.recall) << ","
       << format_double(r.f1) << "\n";
  return ss.str();
}

std::vector<DetectionRow> detection_rows_from_csv(const std::string& text) {
  std::vector<DetectionRow> rows;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    DetectionRow r;
    std::string field;
    std::getline(ls, r.method, ',');
    std::getline(ls, field, ',');
    r.quantile = std::stod(field);
    std::getline(ls, field, ',');
    r.precision = std::stod(field);
    std::getline(ls, field, ',');
    r.recall = std::stod(field);
    std::getline(ls, field, ',');
    r.f1 = std::stod(field);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string render_line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label,
                              const std::vector<Series>& series) {
  const double W = 720, H = 440;
  const double ml = 64, mr = 150, mt = 44, mb = 52;
  const double pw = W - ml - mr, ph = H - mt - mb;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series)
    for (const auto& p : s.points) {
      if (first) {
        xmin = xmax = p.x;
        ymin = ymax = p.y;
        first = false;
      }
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
  if (xmax - xmin < 1e-12) xmax = xmin + 1;
  if (ymax - ymin < 1e-12) ymax = ymin + 1;
  // A little headroom keeps lines off the frame.
  const double ypad = (ymax - ymin) * 0.05;
  ymin -= ypad;
  ymax += ypad;

  auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\""
      << H << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
      << xml_escape(title) << "</text>\n";

  // Axes + ticks.
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw
      << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << mt + ph << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 5.0;
    const double fy = ymin + (ymax - ymin) * i / 5.0;
    svg << "<line x1=\"" << sx(fx) << "\" y1=\"" << mt + ph << "\" x2=\"" << sx(fx)
        << "\" y2=\"" << mt + ph + 5 << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << sx(fx) << "\" y=\"" << mt + ph + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << fmt(fx) << "</text>\n";
    svg << "<line x1=\"" << ml - 5 << "\" y1=\"" << sy(fy) << "\" x2=\"" << ml
        << "\" y2=\"" << sy(fy) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << ml - 9 << "\" y=\"" << sy(fy) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << fmt(fy) << "</text>\n";
  }
  svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
      << xml_escape(x_label) << "</text>\n";
  svg << "<text x=\"18\" y=\"" << mt + ph / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 18 "
      << mt + ph / 2 << ")\">" << xml_escape(y_label) << "</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const char* color = kPalette[si % 8];
    std::ostringstream pts;
    for (const auto& p : series[si].points)
      pts << format_double(sx(p.x), 2) << "," << format_double(sy(p.y), 2) << " ";
    svg << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.8\" points=\"" << pts.str() << "\"/>\n";
    const double ly = mt + 16 + 18 * static_cast<double>(si);
    svg << "<line x1=\"" << ml + pw + 10 << "\" y1=\"" << ly - 4 << "\" x2=\""
        << ml + pw + 34 << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << ml + pw + 40 << "\" y=\"" << ly
        << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << xml_escape(series[si].name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string render_grouped_bars(const std::string& title,
                                const std::vector<std::string>& bar_names,
                                const std::vector<BarGroup>& groups) {
  const double W = 900, H = 440;
  const double ml = 56, mr = 120, mt = 44, mb = 84;
  const double pw = W - ml - mr, ph = H - mt - mb;

  double ymax = 1e-12;
  for (const auto& g : groups)
    for (double v : g.values) ymax = std::max(ymax, v);
  ymax *= 1.08;

  auto sy = [&](double y) { return mt + ph - y / ymax * ph; };
  const double group_w = pw / std::max<size_t>(1, groups.size());
  const double bar_w = group_w * 0.8 / std::max<size_t>(1, bar_names.size());

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\""
      << H << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
      << xml_escape(title) << "</text>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw
      << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << mt + ph << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double fy = ymax * i / 5.0;
    svg << "<text x=\"" << ml - 8 << "\" y=\"" << sy(fy) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << fmt(fy) << "</text>\n";
  }
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const double gx = ml + group_w * static_cast<double>(gi) + group_w * 0.1;
    for (size_t bi = 0; bi < bar_names.size() && bi < groups[gi].values.size(); ++bi) {
      const double v = groups[gi].values[bi];
      svg << "<rect x=\"" << format_double(gx + bar_w * static_cast<double>(bi), 2)
          << "\" y=\"" << format_double(sy(v), 2) << "\" width=\""
          << format_double(bar_w * 0.92, 2) << "\" height=\""
          << format_double(mt + ph - sy(v), 2) << "\" fill=\"" << kPalette[bi % 8]
          << "\"/>\n";
    }
    svg << "<text x=\"" << gx + group_w * 0.4 << "\" y=\"" << mt + ph + 16
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\" transform=\"rotate(-35 "
        << gx + group_w * 0.4 << " " << mt + ph + 16 << ")\">"
        << xml_escape(groups[gi].label) << "</text>\n";
  }
  for (size_t bi = 0; bi < bar_names.size(); ++bi) {
    const double ly = mt + 16 + 18 * static_cast<double>(bi);
    svg << "<rect x=\"" << ml + pw + 10 << "\" y=\"" << ly - 10
        << "\" width=\"12\" height=\"12\" fill=\"" << kPalette[bi % 8] << "\"/>\n";
    svg << "<text x=\"" << ml + pw + 28 << "\" y=\"" << ly
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(bar_names[bi])
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::string> emit_report(const std::vector<NamedTrace>& traces,
                                     const std::vector<DetectionRow>& detection,
                                     const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail("cannot create report directory " + out_dir + ": " + ec.message());

  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    const std::string path = out_dir + "/" + name;
    write_text_file(path, content);
    written.push_back(path);
  };

  // Per-method trace CSVs, concatenating that method's waves.
  std::vector<std::string> methods;
  for (const auto& nt : traces)
    if (std::find(methods.begin(), methods.end(), nt.method) == methods.end())
      methods.push_back(nt.method);
  if (traces.empty()) emit("trace.csv", "wave,step,pred,dsr,id_f1\n");
  for (const auto& method : methods) {
    std::ostringstream csv;
    csv << "wave,step,pred,dsr,id_f1\n";
    for (const auto& nt : traces) {
      if (nt.method != method) continue;
      std::string body = wave_trace_to_csv(nt.trace);
      csv << body.substr(body.find('\n') + 1);  // strip per-trace header
    }
    emit("trace_" + method + ".csv", csv.str());
  }

  // One DSR chart and one retention chart per wave kind, series per method.
  std::vector<AttackKind> kinds;
  for (const auto& nt : traces)
    if (std::find(kinds.begin(), kinds.end(), nt.trace.kind) == kinds.end())
      kinds.push_back(nt.trace.kind);
  for (AttackKind kind : kinds) {
    std::vector<Series> dsr_series, f1_series;
    for (const auto& nt : traces) {
      if (nt.trace.kind != kind) continue;
      Series sd{nt.method, {}};
      Series sf{nt.method, {}};
      sd.points.push_back({0.0, nt.trace.initial_dsr});
      if (!std::isnan(nt.trace.initial_id_f1))
        sf.points.push_back({0.0, nt.trace.initial_id_f1});
      for (const auto& rec : nt.trace.steps) {
        sd.points.push_back({static_cast<double>(rec.step), rec.dsr});
        if (!std::isnan(rec.id_f1))
          sf.points.push_back({static_cast<double>(rec.step), rec.id_f1});
      }
      dsr_series.push_back(std::move(sd));
      if (!sf.points.empty()) f1_series.push_back(std::move(sf));
    }
    const std::string kind_name = to_string(kind);
    emit("dsr_" + kind_name + ".svg",
         render_line_chart("Holdout DSR over update steps: " + kind_name,
                           "update step", "DSR", dsr_series));
    if (!f1_series.empty())
      emit("retention_" + kind_name + ".svg",
           render_line_chart("In-distribution macro F1 over update steps: " + kind_name,
                             "update step", "macro F1", f1_series));
  }

  emit("detection.csv", detection_rows_to_csv(detection));
  if (!detection.empty()) {
    std::vector<BarGroup> groups;
    for (const auto& r : detection) {
      BarGroup g;
      g.label = r.method + " @" + format_double(r.quantile, 2);
      g.values = {r.precision, r.recall, r.f1};
      groups.push_back(std::move(g));
    }
    emit("detection_bars.svg",
         render_grouped_bars("OOD detection by method and quantile threshold",
                             {"precision", "recall", "f1"}, groups));
  }
  return written;
}

}  // namespace driftguard
