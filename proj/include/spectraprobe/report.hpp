#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "spectraprobe/pipeline.hpp"

namespace spectraprobe {

using Cell = std::variant<std::monostate, std::string, double, std::int64_t, bool>;

/// A versioned table. CSV gets one "# schema=..." comment line, a header
/// and the rows; JSON carries the same schema line fields, columns and rows.
struct Table {
  std::string schema;
  int version = 1;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row);
};

/// Shortest round-trip decimal; NaN and infinities as "NaN", "inf", "-inf".
std::string format_number(double v);
std::string hex64(std::uint64_t v);

std::string to_csv(const Table& table);
std::string to_json(const Table& table);

/// Writes <dir>/<name>.csv and <dir>/<name>.json.
void write_table(const std::filesystem::path& dir, const std::string& name, const Table& table);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Plain CSV as written by to_csv; comment lines are skipped, all cells
/// come back as strings.
struct CsvData {
  std::vector<std::string> comments;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
};
CsvData read_csv(const std::filesystem::path& path);
double parse_number(const std::string& text);

Table diagnostics_table(const DiagnoseResult& result, const BundleManifest& manifest, const RunConfig& config);
Table contrast_table(const ContrastResult& result, bool voice_types, const RunConfig& config);
Table curves_table(const ContrastResult& result, const BundleManifest& manifest);
Table pairs_table(const ContrastResult& result, const BundleManifest& manifest);
Table exclusions_table(const ContrastResult& result, const BundleManifest& manifest);
Table sweep_table(const SweepResult& result, const RunConfig& base);
Table sweep_summary_table(const SweepResult& result);
Table ablation_table(const AblationRow& row, const RunConfig& config);

struct Bar {
  std::string label;
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double g_trim = 0.0;
  double q = 1.0;
};

/// Bar chart with CI whiskers, g_trim labels above bars and a star for
/// q < q_threshold (strict).
std::string svg_bar_chart(const std::string& title, const std::string& y_label, const std::vector<Bar>& bars,
                          double q_threshold = 0.05);

/// Writes every contrast table plus the charts.
void write_contrast_outputs(const std::filesystem::path& dir, const ContrastResult& result,
                            const BundleManifest& manifest, const RunConfig& config);

/// Renders per-language and per-voice-type charts and summary.txt from the
/// contrast tables in `dir`. Returns the files written.
std::vector<std::filesystem::path> render_report(const std::filesystem::path& dir, double q_threshold = 0.05);

}  // namespace spectraprobe
