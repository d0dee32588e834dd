#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fssl/run_io.hpp"

namespace fssl {

struct ReportRow {
  std::string run;
  double mu = 0.0;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  std::string defense;
  bool attack = false;
  double acc = 0.0;
  double asr = 0.0;
  std::optional<double> retention;  // last persistence point, when the run has one
};

struct Report {
  std::vector<RunRecord> runs;  // same order as rows
  std::vector<ReportRow> rows;  // sorted by (mu, run name)

  std::string table_text() const;
  std::string table_csv() const;
};

// Each path is either a run directory or a directory whose immediate
// subdirectories are runs. MissingMetrics when no run is found.
Report build_report(const std::vector<std::filesystem::path>& paths);

// table.txt, table.csv, acc.svg, asr.svg and (when any run has one)
// persistence.svg.
void write_report(const Report& report, const std::filesystem::path& out_dir);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series);

}  // namespace fssl
