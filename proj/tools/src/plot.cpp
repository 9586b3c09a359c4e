// SPDX-License-Identifier: Apache-2.0
#include "pkt_cli/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pkt/error.hpp"

namespace pkt::cli {

namespace {

using Rgb = std::array<std::uint8_t, 3>;

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// White to dark blue.
Rgb heat(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return {static_cast<std::uint8_t>(255 - 247 * v), static_cast<std::uint8_t>(255 - 207 * v),
          static_cast<std::uint8_t>(255 - 148 * v)};
}

std::string hex(Rgb c) {
  static const char* digits = "0123456789abcdef";
  std::string s = "#";
  for (auto b : c) {
    s += digits[b >> 4];
    s += digits[b & 15];
  }
  return s;
}

bool is_heatmap(const CsvTable& t) {
  if (t.header.size() < 2 || t.header[0] != "step") return false;
  return std::all_of(t.header.begin() + 1, t.header.end(),
                     [](const std::string& h) { return !h.empty() && h[0] == 'w'; });
}

class Raster {
 public:
  Raster(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w * h), Rgb{255, 255, 255}) {}

  void set(int x, int y, Rgb c) {
    if (x >= 0 && y >= 0 && x < w_ && y < h_) px_[static_cast<std::size_t>(y * w_ + x)] = c;
  }
  void rect(int x, int y, int w, int h, Rgb c) {
    for (int j = y; j < y + h; ++j) {
      for (int i = x; i < x + w; ++i) set(i, j, c);
    }
  }
  void line(int x0, int y0, int x1, int y1, Rgb c) {
    const int dx = std::abs(x1 - x0);
    const int dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1;
    const int sy = y0 < y1 ? 1 : -1;
    int e = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * e;
      if (e2 >= dy) {
        e += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        e += dx;
        y0 += sy;
      }
    }
  }
  void write_ppm(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("plot: cannot write " + path.string());
    out << "P6\n" << w_ << ' ' << h_ << "\n255\n";
    for (const auto& p : px_) out.write(reinterpret_cast<const char*>(p.data()), 3);
  }

 private:
  int w_, h_;
  std::vector<Rgb> px_;
};

constexpr int kCell = 16;
constexpr int kMargin = 40;
constexpr int kChartW = 640;
constexpr int kChartH = 320;

void heatmap_svg(const CsvTable& t, std::ostream& out) {
  const int n = static_cast<int>(t.rows.size());
  const int m = static_cast<int>(t.header.size()) - 1;
  const int w = 2 * kMargin + m * kCell;
  const int h = 2 * kMargin + n * kCell;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < m; ++c) {
      const double v = t.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c + 1)];
      out << "<rect x=\"" << kMargin + c * kCell << "\" y=\"" << kMargin + r * kCell
          << "\" width=\"" << kCell << "\" height=\"" << kCell << "\" fill=\"" << hex(heat(v))
          << "\"><title>t=" << r + 1 << " i=" << c + 1 << " " << v << "</title></rect>\n";
    }
  }
  out << "<text x=\"" << kMargin << "\" y=\"" << kMargin / 2
      << "\" font-family=\"sans-serif\" font-size=\"12\">attention (row: step, column: "
         "position)</text>\n</svg>\n";
}

void heatmap_ppm(const CsvTable& t, const std::filesystem::path& path) {
  const int n = static_cast<int>(t.rows.size());
  const int m = static_cast<int>(t.header.size()) - 1;
  Raster img(2 * kMargin + m * kCell, 2 * kMargin + n * kCell);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < m; ++c) {
      img.rect(kMargin + c * kCell, kMargin + r * kCell, kCell, kCell,
               heat(t.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c + 1)]));
    }
  }
  img.write_ppm(path);
}

std::vector<std::pair<double, double>> sim_points(const CsvTable& t) {
  const int step = t.column("step");
  const int sim = t.column("sim");
  std::vector<std::pair<double, double>> pts;
  for (const auto& row : t.rows) {
    pts.emplace_back(row[static_cast<std::size_t>(step)], row[static_cast<std::size_t>(sim)]);
  }
  return pts;
}

// Maps a step and a similarity in [0, 1] to chart coordinates.
std::pair<int, int> to_chart(double x, double y, double x_max) {
  const double fx = x_max > 1.0 ? (x - 1.0) / (x_max - 1.0) : 0.5;
  return {kMargin + static_cast<int>(std::lround(fx * kChartW)),
          kMargin + static_cast<int>(std::lround((1.0 - std::clamp(y, 0.0, 1.0)) * kChartH))};
}

void line_svg(const CsvTable& t, std::ostream& out) {
  const auto pts = sim_points(t);
  const double x_max = pts.empty() ? 1.0 : pts.back().first;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kChartW + 2 * kMargin
      << "\" height=\"" << kChartH + 2 * kMargin
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kChartW
      << "\" height=\"" << kChartH << "\" fill=\"none\" stroke=\"#999\"/>\n"
      << "<polyline fill=\"none\" stroke=\"#08306b\" stroke-width=\"2\" points=\"";
  for (const auto& [x, y] : pts) {
    const auto [px, py] = to_chart(x, y, x_max);
    out << px << ',' << py << ' ';
  }
  out << "\"/>\n<text x=\"" << kMargin << "\" y=\"" << kMargin / 2
      << "\" font-family=\"sans-serif\" font-size=\"12\">sim per step (0 to 1)</text>\n</svg>\n";
}

void line_ppm(const CsvTable& t, const std::filesystem::path& path) {
  const auto pts = sim_points(t);
  const double x_max = pts.empty() ? 1.0 : pts.back().first;
  Raster img(kChartW + 2 * kMargin, kChartH + 2 * kMargin);
  const Rgb frame{153, 153, 153};
  img.line(kMargin, kMargin, kMargin + kChartW, kMargin, frame);
  img.line(kMargin, kMargin + kChartH, kMargin + kChartW, kMargin + kChartH, frame);
  img.line(kMargin, kMargin, kMargin, kMargin + kChartH, frame);
  img.line(kMargin + kChartW, kMargin, kMargin + kChartW, kMargin + kChartH, frame);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const auto [x0, y0] = to_chart(pts[i - 1].first, pts[i - 1].second, x_max);
    const auto [x1, y1] = to_chart(pts[i].first, pts[i].second, x_max);
    img.line(x0, y0, x1, y1, {8, 48, 107});
  }
  img.write_ppm(path);
}

}  // namespace

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

CsvTable read_numeric_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  t.header = split(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != t.header.size()) {
      throw DataError(path.string() + ": line " + std::to_string(lineno) + " has " +
                      std::to_string(cells.size()) + " fields, expected " +
                      std::to_string(t.header.size()));
    }
    std::vector<double> row;
    for (const auto& c : cells) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (c.empty() || end != c.c_str() + c.size()) {
        throw DataError(path.string() + ": line " + std::to_string(lineno) +
                        ": non-numeric field '" + c + "'");
      }
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

void render_plot(const CsvTable& table, const std::filesystem::path& out) {
  const std::string ext = out.extension().string();
  if (ext != ".svg" && ext != ".ppm") {
    throw Error("plot: output must end in .svg or .ppm, got '" + out.string() + "'");
  }
  const bool heatmap = is_heatmap(table);
  if (!heatmap && (table.column("sim") < 0 || table.column("step") < 0)) {
    throw DataError("plot: expected an attention export (step,w1,...) or a representation "
                    "export with step and sim columns");
  }
  if (ext == ".ppm") {
    heatmap ? heatmap_ppm(table, out) : line_ppm(table, out);
    return;
  }
  std::ofstream f(out);
  if (!f) throw Error("plot: cannot write " + out.string());
  heatmap ? heatmap_svg(table, f) : line_svg(table, f);
}

}  // namespace pkt::cli
