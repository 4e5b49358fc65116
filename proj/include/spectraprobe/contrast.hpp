#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "spectraprobe/bundle_io.hpp"
#include "spectraprobe/spectral.hpp"

namespace spectraprobe {

/// Inclusive window of transformer-block ordinals (1 = first block).
struct LayerWindow {
  std::string label;
  int lo = 0;
  int hi = 0;

  bool empty() const { return hi < lo; }
  bool operator==(const LayerWindow&) const = default;
};

/// early = [2,5], mid = [6,10], late = [11, num_layers]. A model too
/// shallow for a window gets it clamped (possibly empty) plus a warning.
std::vector<LayerWindow> default_windows(int num_layers, std::vector<std::string>* warnings = nullptr);

/// Parses "lo:hi" (optionally "label=lo:hi").
LayerWindow parse_window(const std::string& text);

void check_window(const LayerWindow& window, int num_layers);

enum class Metric { energy, entropy, hfer, fiedler };
inline constexpr std::array<Metric, 4> kAllMetrics{Metric::energy, Metric::entropy, Metric::hfer,
                                                   Metric::fiedler};

std::string to_string(Metric metric);
Metric metric_from_string(const std::string& name);
double metric_value(const LayerDiagnostics& d, Metric metric);

struct ItemPair {
  std::size_t a = 0;  // manifest index, condition_a
  std::size_t b = 0;  // manifest index, condition_b
  std::string language;
  VoiceType voice_type = VoiceType::other;
  std::int64_t paraphrase_id = 0;
  int token_count_delta = 0;  // |N_b - N_a|
};

struct Pairing {
  std::vector<ItemPair> pairs;
  std::vector<std::size_t> orphans;  // items of either condition without a partner
};

/// Matches condition_a and condition_b items on (language, paraphrase_id).
/// Pairs come out in manifest order of their condition_a item.
Pairing pair_items(const BundleManifest& manifest, const std::string& condition_a,
                   const std::string& condition_b);

/// Per-layer diagnostics of one item plus the fingerprint of the
/// configuration that produced them.
struct DiagnosticSeries {
  std::uint64_t fingerprint = 0;
  std::vector<LayerDiagnostics> layers;  // index = ordinal - 1
};

struct WindowSummary {
  std::array<double, 4> delta{};   // mean of (b - a), indexed by Metric
  std::array<double, 4> mean_a{};  // mean of condition_a values over the window
  std::array<double, 4> mean_b{};
};

struct PairedContrast {
  std::string family;
  std::string language;
  VoiceType voice_type = VoiceType::other;
  std::int64_t paraphrase_id = 0;
  std::size_t item_a = 0;
  std::size_t item_b = 0;
  int token_count_delta = 0;
  std::array<std::vector<double>, 4> deltas;  // [metric][ordinal - 1], b - a
  std::map<std::string, WindowSummary> windows;

  double endpoint(const std::string& window, Metric metric) const;
};

double window_mean(const std::vector<double>& per_layer, const LayerWindow& window);

PairedContrast delta_per_layer(const ItemPair& pair, const DiagnosticSeries& a,
                               const DiagnosticSeries& b, const std::vector<LayerWindow>& windows);

struct LengthFilterResult {
  std::vector<ItemPair> kept;
  std::vector<std::pair<std::string, int>> excluded_per_language;  // manifest language order
};

inline constexpr int kNoTokenLimit = std::numeric_limits<int>::max();

LengthFilterResult length_control_filter(const std::vector<ItemPair>& pairs, int max_token_delta = 2);

enum class GroupBy { language, voice_type, family };

struct GroupEndpoint {
  std::string group;
  std::vector<double> values;  // paraphrase-level windowed endpoints
  double mean = 0.0;
  std::size_t n() const { return values.size(); }
};

/// Mean paraphrase-level endpoint per group, groups in order of first
/// appearance. `expected_groups` (may be empty) lists groups that must be
/// present; a missing one raises "empty group".
std::vector<GroupEndpoint> aggregate(const std::vector<PairedContrast>& contrasts, GroupBy group_by,
                                     const std::string& window, Metric metric,
                                     const std::vector<std::string>& expected_groups = {});

}  // namespace spectraprobe
