// SPDX-License-Identifier: Apache-2.0
//
// Static rendering of exported CSVs: attention matrices as heatmaps and
// representation exports as a similarity-per-step line chart.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace pkt::cli {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  /// Index of a header column, or -1.
  int column(const std::string& name) const;
};

CsvTable read_numeric_csv(const std::filesystem::path& path);

/// Writes .svg or .ppm depending on the output extension.
/// Throws pkt::Error for other extensions or unrecognized CSV layouts.
void render_plot(const CsvTable& table, const std::filesystem::path& out);

}  // namespace pkt::cli
