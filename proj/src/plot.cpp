#include "rlvr/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace rlvr {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

std::vector<std::string> metrics_column_names() {
  return {"mean_total_reward", "mean_format_reward", "mean_accuracy_reward",
          "mean_completion_length", "mean_kl", "pg_loss", "wall_ms"};
}

double metrics_column(const MetricsRow& r, const std::string& column) {
  if (column == "mean_total_reward") return r.mean_total_reward;
  if (column == "mean_format_reward") return r.mean_format_reward;
  if (column == "mean_accuracy_reward") return r.mean_accuracy_reward;
  if (column == "mean_completion_length") return r.mean_completion_length;
  if (column == "mean_kl") return r.mean_kl;
  if (column == "pg_loss") return r.pg_loss;
  if (column == "wall_ms") return r.wall_ms;
  throw std::invalid_argument("unknown metrics column: " + column);
}

std::string render_metrics_svg(const std::vector<MetricsRow>& rows,
                               const std::vector<std::string>& columns) {
  if (rows.empty()) throw std::invalid_argument("render_metrics_svg: no rows");
  if (columns.empty()) throw std::invalid_argument("render_metrics_svg: no columns");

  constexpr int kW = 900, kChartH = 170, kPad = 50, kTop = 26;
  const int total_h = kTop + static_cast<int>(columns.size()) * (kChartH + 24) + 10;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << total_h
      << "\" viewBox=\"0 0 " << kW << " " << total_h << "\">\n";
  svg << "<metadata><![CDATA[\n" << metrics_header() << "\n";
  for (const auto& r : rows) svg << metrics_row_csv(r) << "\n";
  svg << "]]></metadata>\n";
  svg << "<rect width=\"" << kW << "\" height=\"" << total_h << "\" fill=\"white\"/>\n";

  const double x0 = rows.front().step, x1 = rows.back().step;
  const double xspan = x1 > x0 ? x1 - x0 : 1.0;

  int top = kTop;
  for (const auto& col : columns) {
    double lo = metrics_column(rows[0], col), hi = lo;
    for (const auto& r : rows) {
      const double v = metrics_column(r, col);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    const int y0 = top, y1 = top + kChartH;

    svg << "<text x=\"" << kPad << "\" y=\"" << (y0 - 6) << "\" font-family=\"monospace\" "
        << "font-size=\"13\">" << col << "</text>\n";
    svg << "<rect x=\"" << kPad << "\" y=\"" << y0 << "\" width=\"" << (kW - 2 * kPad)
        << "\" height=\"" << kChartH << "\" fill=\"none\" stroke=\"#888\"/>\n";
    svg << "<text x=\"" << (kPad + 4) << "\" y=\"" << (y0 + 13)
        << "\" font-family=\"monospace\" font-size=\"11\">" << num(hi) << "</text>\n";
    svg << "<text x=\"" << (kPad + 4) << "\" y=\"" << (y1 - 4)
        << "\" font-family=\"monospace\" font-size=\"11\">" << num(lo) << "</text>\n";
    svg << "<text x=\"" << (kW - kPad - 60) << "\" y=\"" << (y1 + 14)
        << "\" font-family=\"monospace\" font-size=\"11\">step " << num(x1) << "</text>\n";

    svg << "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\" points=\"";
    for (const auto& r : rows) {
      const double px = kPad + (r.step - x0) / xspan * (kW - 2 * kPad);
      const double py = y1 - (metrics_column(r, col) - lo) / span * kChartH;
      svg << num(px) << ',' << num(py) << ' ';
    }
    svg << "\"/>\n";
    top = y1 + 24;
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace rlvr
