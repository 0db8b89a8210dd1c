#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace strider::tools {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Panel {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  std::vector<Series> series;
  bool steps = false;  // draw as a staircase (CDFs)
};

/// Panels laid out left to right.
std::string render_lines(const std::vector<Panel>& panels);

/// One row per entry of `rows`; cells absent from a shorter row stay blank.
std::string render_heatmap(const std::string& title, const std::vector<std::string>& row_names,
                           const std::vector<std::vector<double>>& rows);

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::vector<double> column(const std::string& name) const;
  std::vector<std::string> text_column(const std::string& name) const;
};

Csv read_csv(const std::filesystem::path& path);

/// Sorted values and their empirical CDF (i / n).
Series empirical_cdf(std::string name, std::vector<double> values);

}  // namespace strider::tools
