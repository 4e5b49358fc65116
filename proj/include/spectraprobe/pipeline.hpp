#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spectraprobe/bundle_io.hpp"
#include "spectraprobe/contrast.hpp"
#include "spectraprobe/graph_builder.hpp"
#include "spectraprobe/spectral.hpp"
#include "spectraprobe/stats.hpp"
#include "spectraprobe/tokstress.hpp"

namespace spectraprobe {

struct RunConfig {
  LaplacianSpec laplacian;
  AggregationScheme aggregation;
  std::optional<int> hfer_k;     // at most one of hfer_k / hfer_c may be set;
  std::optional<double> hfer_c;  // neither means c = 0.20
  std::vector<LayerWindow> windows;  // empty: early/mid/late
  StatsConfig stats;
  int max_token_delta = 2;
  std::string condition_a = "active";
  std::string condition_b = "passive";
  CharCount char_count = CharCount::scalar_values;
  std::filesystem::path output_dir = "spectraprobe-out";
  int threads = 0;  // 0: SPECTRAPROBE_THREADS, else hardware concurrency

  HferCutoff cutoff() const;
  void validate() const;
};

/// Canonical text of every setting that changes per-layer diagnostics.
std::string diagnostic_config_text(const RunConfig& config, int num_layers);
std::uint64_t diagnostic_fingerprint(const RunConfig& config, int num_layers);

/// Canonical text / hash of the complete configuration.
std::string config_text(const RunConfig& config);
std::uint64_t config_fingerprint(const RunConfig& config);

/// Resolved pool size: `requested` if positive, else SPECTRAPROBE_THREADS,
/// else the hardware concurrency; at least 1.
int worker_count(int requested);

struct DiagnosticRow {
  std::size_t item = 0;
  int ordinal = 0;
  LayerDiagnostics d;
  int excluded_special = 0;
  int dropped_isolated = 0;
};

struct DiagnoseResult {
  std::uint64_t fingerprint = 0;
  std::vector<DiagnosticRow> rows;  // ordered by (item_id, ordinal)
  std::map<std::size_t, DiagnosticSeries> series;
};

/// Diagnostics for one (item, block). Errors carry item/layer context.
DiagnosticRow diagnose_layer(const Bundle& bundle, std::size_t item, int ordinal, const RunConfig& config);

/// All layers of the listed items (all items when empty), in parallel.
DiagnoseResult diagnose_bundle(const Bundle& bundle, const RunConfig& config,
                               const std::vector<std::size_t>& items = {});

struct ContrastRow {
  std::string family;
  std::string group;  // language, or voice type for aggregate rows
  std::string voice_type;
  std::string window;
  Metric metric = Metric::fiedler;
  StatsSummary stats;
};

struct CurveRow {
  std::string language;
  Metric metric = Metric::fiedler;
  int ordinal = 0;
  double mean_delta = 0.0;
  int n = 0;
};

struct ContrastResult {
  std::uint64_t fingerprint = 0;
  std::string family;
  std::vector<LayerWindow> windows;
  std::vector<std::string> warnings;
  Pairing pairing;
  LengthFilterResult filter;
  std::vector<PairedContrast> contrasts;
  std::vector<ContrastRow> languages;
  std::vector<ContrastRow> voice_types;
  std::vector<CurveRow> curves;

  /// True when any per-language statistic came out degenerate (NaN or flagged).
  bool degenerate() const;
  const ContrastRow* find(const std::string& group, const std::string& window, Metric metric) const;
};

std::vector<LayerWindow> resolve_windows(const RunConfig& config, int num_layers,
                                         std::vector<std::string>* warnings = nullptr);

/// pair -> length filter -> diagnose -> delta -> aggregate -> statistics.
ContrastResult run_contrast(const Bundle& bundle, const RunConfig& config);

enum class SweepAxis { hfer_cutoff, theta, laplacian, aggregation, window };

std::string to_string(SweepAxis axis);
SweepAxis sweep_axis_from_string(const std::string& name);

/// Copy of `base` with one axis set from its text value ("0.1", "symmetric",
/// "uniform", "1:4", "k=3" for an index cutoff).
RunConfig apply_sweep_value(const RunConfig& base, SweepAxis axis, const std::string& value);

struct SweepRow {
  std::string value;
  std::string language;
  std::string window;
  Metric metric = Metric::fiedler;
  double mean = 0.0;
  double p_perm = 1.0;
  double q_fdr = 1.0;
  bool sign_agrees = true;  // same sign as the base configuration
};

struct SweepSummary {
  std::string value;
  Metric metric = Metric::fiedler;
  int languages = 0;
  int sign_agreements = 0;
  int significant = 0;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::laplacian;
  std::vector<SweepRow> rows;
  std::vector<SweepSummary> summary;
};

/// Runs the contrast once per value and compares each language's endpoint
/// on the primary (first) window against the base configuration's.
SweepResult run_sweep(const Bundle& bundle, const RunConfig& base, SweepAxis axis,
                      const std::vector<std::string>& values);

struct AblationRow {
  std::string label;
  std::vector<std::pair<std::string, double>> windows;  // early, mid, late, overall
  int pairs = 0;
};

/// Per-window mean of (delta lambda_2 ablated - delta lambda_2 baseline).
AblationRow run_ablation_summary(const Bundle& baseline, const Bundle& ablated, const RunConfig& config);

}  // namespace spectraprobe
