#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace gfnvi {

enum class PlotKind { Nll, Elbo };

PlotKind parsePlotKind(const std::string& name);

struct PlotSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (step, value), sorted by step
};

/// Reads a metrics.csv or a sweep runs.csv. Rows sharing a `label` are averaged
/// per step over seeds; a file without a label column is one series. Throws
/// MissingColumn, or IoError for an unreadable or row-less file.
std::vector<PlotSeries> loadPlotSeries(const std::filesystem::path& csv, PlotKind kind);

/// Deterministic SVG: one polyline per series, with a legend.
std::string renderSvg(const std::vector<PlotSeries>& series, PlotKind kind);

void plotMetrics(const std::filesystem::path& csv, PlotKind kind, const std::filesystem::path& svgOut);

}  // namespace gfnvi
