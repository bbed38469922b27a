#include "gfnvi/harness/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "gfnvi/error.hpp"
#include "gfnvi/harness/config.hpp"

namespace gfnvi {

namespace {

std::vector<std::string> splitCsv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string escapeXml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

PlotKind parsePlotKind(const std::string& name) {
  if (name == "nll") return PlotKind::Nll;
  if (name == "elbo") return PlotKind::Elbo;
  throw Error(ErrorCode::ConfigError, "unknown plot kind '" + name + "' (nll | elbo)");
}

std::vector<PlotSeries> loadPlotSeries(const std::filesystem::path& csv, PlotKind kind) {
  std::ifstream in(csv);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::IoError, csv.string() + " is empty");
  const auto header = splitCsv(line);
  auto column = [&](const std::string& name) -> long {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : it - header.begin();
  };
  const std::string metric = kind == PlotKind::Nll ? "nll_test" : "elbo";
  const long stepCol = column("step");
  const long valueCol = column(metric);
  if (stepCol < 0) throw Error(ErrorCode::MissingColumn, "no 'step' column in " + csv.string());
  if (valueCol < 0) throw Error(ErrorCode::MissingColumn, "no '" + metric + "' column in " + csv.string());
  const long labelCol = column("label");

  // label -> step -> (sum, count); insertion order of labels is kept.
  std::vector<std::string> order;
  std::map<std::string, std::map<double, std::pair<double, int>>> acc;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    const auto f = splitCsv(line);
    if (static_cast<long>(f.size()) <= std::max(stepCol, valueCol)) continue;
    if (f[valueCol].empty()) continue;
    double step = 0.0, value = 0.0;
    try {
      step = std::stod(f[stepCol]);
      value = std::stod(f[valueCol]);
    } catch (const std::exception&) {
      continue;
    }
    if (!std::isfinite(value)) continue;
    const std::string label = labelCol >= 0 && labelCol < static_cast<long>(f.size()) ? f[labelCol] : metric;
    if (!acc.count(label)) order.push_back(label);
    auto& slot = acc[label][step];
    slot.first += value;
    slot.second += 1;
  }
  if (rows == 0) throw Error(ErrorCode::IoError, csv.string() + " has no data rows");

  std::vector<PlotSeries> out;
  for (const auto& label : order) {
    PlotSeries s{label, {}};
    for (const auto& [step, sc] : acc[label]) s.points.emplace_back(step, sc.first / sc.second);
    out.push_back(std::move(s));
  }
  return out;
}

std::string renderSvg(const std::vector<PlotSeries>& series, PlotKind kind) {
  constexpr double W = 720, H = 440, left = 70, right = 200, top = 30, bottom = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pw = W - left - right, ph = H - top - bottom;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  const std::string ylabel = kind == PlotKind::Nll ? "test NLL (nats)" : "E[log w] (nats)";
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n",
      W, H);
  svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", left,
                     top, pw, ph);
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4.0, yv = y0 + (y1 - y0) * t / 4.0;
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{:.6g}</text>\n", sx(xv),
                       H - bottom + 18, xv);
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{:.4g}</text>\n", left - 6, sy(yv) + 4,
                       yv);
  }
  svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">step</text>\n", left + pw / 2, H - 12);
  svg += fmt::format(
      "<text x=\"16\" y=\"{:.2f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2f})\">{}</text>\n",
      top + ph / 2, top + ph / 2, ylabel);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    std::string pts;
    for (const auto& [x, y] : series[i].points) pts += fmt::format("{}{:.2f},{:.2f}", pts.empty() ? "" : " ", sx(x), sy(y));
    svg += fmt::format("<polyline class=\"series\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\">"
                       "<title>{}</title></polyline>\n",
                       color, pts, escapeXml(series[i].label));
    const double ly = top + 14 + 16.0 * static_cast<double>(i);
    svg += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" stroke=\"{3}\" stroke-width=\"2\"/>\n",
                       W - right + 12, ly, W - right + 32, color);
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\">{}</text>\n", W - right + 38, ly + 4,
                       escapeXml(series[i].label));
  }
  svg += "</svg>\n";
  return svg;
}

void plotMetrics(const std::filesystem::path& csv, PlotKind kind, const std::filesystem::path& svgOut) {
  const auto series = loadPlotSeries(csv, kind);
  std::ofstream out(svgOut, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + svgOut.string());
  out << renderSvg(series, kind);
}

}  // namespace gfnvi
