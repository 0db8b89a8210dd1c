#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "strider/error.hpp"

namespace strider::tools {

namespace {

constexpr double kPanelW = 420, kPanelH = 320, kLeft = 64, kRight = 16, kTop = 36, kBottom = 48;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

struct Range {
  double lo = 0, hi = 1;
};

Range range_of(const std::vector<Series>& series, bool use_x) {
  Range r{INFINITY, -INFINITY};
  for (const auto& s : series) {
    for (double v : use_x ? s.x : s.y) {
      if (std::isfinite(v)) {
        r.lo = std::min(r.lo, v);
        r.hi = std::max(r.hi, v);
      }
    }
  }
  if (!std::isfinite(r.lo)) return {0, 1};
  if (r.hi - r.lo < 1e-12) {
    r.lo -= 0.5;
    r.hi += 0.5;
  }
  return r;
}

void draw_panel(std::ostringstream& os, const Panel& p, double x0) {
  const Range rx = range_of(p.series, true), ry = range_of(p.series, false);
  const double w = kPanelW - kLeft - kRight, h = kPanelH - kTop - kBottom;
  auto sx = [&](double v) { return x0 + kLeft + (v - rx.lo) / (rx.hi - rx.lo) * w; };
  auto sy = [&](double v) { return kTop + h - (v - ry.lo) / (ry.hi - ry.lo) * h; };
  os << "<text x='" << x0 + kPanelW / 2 << "' y='20' text-anchor='middle' font-size='14'>" << esc(p.title)
     << "</text>\n";
  os << "<rect x='" << x0 + kLeft << "' y='" << kTop << "' width='" << w << "' height='" << h
     << "' fill='none' stroke='#444'/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = rx.lo + (rx.hi - rx.lo) * i / 4, fy = ry.lo + (ry.hi - ry.lo) * i / 4;
    os << "<text x='" << sx(fx) << "' y='" << kTop + h + 16 << "' text-anchor='middle' font-size='10'>"
       << num(fx) << "</text>\n";
    os << "<text x='" << x0 + kLeft - 6 << "' y='" << sy(fy) + 3 << "' text-anchor='end' font-size='10'>"
       << num(fy) << "</text>\n";
  }
  os << "<text x='" << x0 + kLeft + w / 2 << "' y='" << kPanelH - 10
     << "' text-anchor='middle' font-size='12'>" << esc(p.xlabel) << "</text>\n";
  os << "<text transform='translate(" << x0 + 14 << "," << kTop + h / 2
     << ") rotate(-90)' text-anchor='middle' font-size='12'>" << esc(p.ylabel) << "</text>\n";
  for (std::size_t k = 0; k < p.series.size(); ++k) {
    const auto& s = p.series[k];
    const char* color = kColors[k % std::size(kColors)];
    os << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (p.steps && i > 0) os << sx(s.x[i]) << ',' << sy(s.y[i - 1]) << ' ';
      os << sx(s.x[i]) << ',' << sy(s.y[i]) << ' ';
    }
    os << "'/>\n";
    if (p.series.size() > 1) {
      os << "<text x='" << x0 + kLeft + 8 << "' y='" << kTop + 14 + 14 * k << "' font-size='11' fill='" << color
         << "'>" << esc(s.name) << "</text>\n";
    }
  }
}

}  // namespace

std::string render_lines(const std::vector<Panel>& panels) {
  std::ostringstream os;
  const double width = kPanelW * static_cast<double>(std::max<std::size_t>(panels.size(), 1));
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << kPanelH
     << "' font-family='sans-serif'>\n<rect width='100%' height='100%' fill='white'/>\n";
  for (std::size_t i = 0; i < panels.size(); ++i) draw_panel(os, panels[i], kPanelW * static_cast<double>(i));
  os << "</svg>\n";
  return os.str();
}

std::string render_heatmap(const std::string& title, const std::vector<std::string>& row_names,
                           const std::vector<std::vector<double>>& rows) {
  std::size_t cols = 0;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& r : rows) {
    cols = std::max(cols, r.size());
    for (double v : r) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (hi - lo < 1e-12) hi = lo + 1;
  const double cell = std::clamp(900.0 / static_cast<double>(std::max<std::size_t>(cols, 1)), 2.0, 24.0);
  const double left = 110, top = 36, rh = 18;
  const double width = left + cell * static_cast<double>(cols) + 70;
  const double height = top + rh * static_cast<double>(rows.size()) + 30;
  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
     << "' font-family='sans-serif'>\n<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << width / 2 << "' y='20' text-anchor='middle' font-size='14'>" << esc(title) << "</text>\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double y = top + rh * static_cast<double>(r);
    os << "<text x='" << left - 6 << "' y='" << y + rh * 0.7 << "' text-anchor='end' font-size='10'>"
       << esc(r < row_names.size() ? row_names[r] : "") << "</text>\n";
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const double t = (rows[r][c] - lo) / (hi - lo);
      const int shade = static_cast<int>(std::lround(255 * (1 - t)));
      os << "<rect x='" << left + cell * static_cast<double>(c) << "' y='" << y << "' width='" << cell
         << "' height='" << rh << "' fill='rgb(" << shade << ',' << shade << ",255)'/>\n";
    }
  }
  const double lx = left + cell * static_cast<double>(cols) + 12;
  os << "<text x='" << lx << "' y='" << top + 10 << "' font-size='10'>" << num(hi) << "</text>\n";
  os << "<text x='" << lx << "' y='" << height - 34 << "' font-size='10'>" << num(lo) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::vector<std::string> Csv::text_column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw Error(Errc::parse_error, "CSV has no column " + name);
  const auto idx = static_cast<std::size_t>(it - header.begin());
  std::vector<std::string> out;
  for (const auto& r : rows) {
    if (idx >= r.size()) throw Error(Errc::parse_error, "short CSV row");
    out.push_back(r[idx]);
  }
  return out;
}

std::vector<double> Csv::column(const std::string& name) const {
  std::vector<double> out;
  for (const auto& t : text_column(name)) {
    try {
      out.push_back(std::stod(t));
    } catch (const std::exception&) {
      throw Error(Errc::parse_error, "non-numeric value '" + t + "' in column " + name);
    }
  }
  return out;
}

Csv read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  Csv csv;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  if (!std::getline(in, line)) throw Error(Errc::parse_error, path.string() + " is empty");
  csv.header = split(line);
  while (std::getline(in, line)) {
    if (!line.empty()) csv.rows.push_back(split(line));
  }
  return csv;
}

Series empirical_cdf(std::string name, std::vector<double> values) {
  std::sort(values.begin(), values.end());
  Series s{std::move(name), {}, {}};
  const double n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    s.x.push_back(values[i]);
    s.y.push_back(static_cast<double>(i + 1) / n);
  }
  return s;
}

}  // namespace strider::tools
