#include "spectraprobe/contrast.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "spectraprobe/error.hpp"

namespace spectraprobe {

std::vector<LayerWindow> default_windows(int num_layers, std::vector<std::string>* warnings) {
  std::vector<LayerWindow> out{{"early", 2, 5}, {"mid", 6, 10}, {"late", 11, num_layers}};
  for (auto& w : out) {
    if (w.hi > num_layers) w.hi = num_layers;
    if (w.empty() && warnings)
      warnings->push_back("window '" + w.label + "' is empty for a " + std::to_string(num_layers) +
                          "-layer model");
  }
  return out;
}

LayerWindow parse_window(const std::string& text) {
  LayerWindow w;
  std::string body = text;
  if (auto eq = text.find('='); eq != std::string::npos) {
    w.label = text.substr(0, eq);
    body = text.substr(eq + 1);
  }
  const auto colon = body.find(':');
  if (colon == std::string::npos) throw UsageError("window '" + text + "' is not of the form lo:hi");
  try {
    std::size_t used = 0;
    w.lo = std::stoi(body.substr(0, colon), &used);
    if (used != colon) throw UsageError("");
    const auto rest = body.substr(colon + 1);
    w.hi = std::stoi(rest, &used);
    if (used != rest.size()) throw UsageError("");
  } catch (const std::exception&) {
    throw UsageError("window '" + text + "' is not of the form lo:hi");
  }
  if (w.lo > w.hi) throw UsageError("window '" + text + "' has lo > hi");
  if (w.lo < 1) throw UsageError("window '" + text + "' starts before block 1");
  if (w.label.empty()) w.label = std::to_string(w.lo) + "-" + std::to_string(w.hi);
  return w;
}

void check_window(const LayerWindow& window, int num_layers) {
  if (window.empty()) return;
  if (window.lo < 1 || window.hi > num_layers)
    throw UsageError("window '" + window.label + "' [" + std::to_string(window.lo) + "," +
                     std::to_string(window.hi) + "] exceeds the model depth " + std::to_string(num_layers));
}

std::string to_string(Metric metric) {
  switch (metric) {
    case Metric::energy: return "energy";
    case Metric::entropy: return "entropy";
    case Metric::hfer: return "hfer";
    case Metric::fiedler: return "fiedler";
  }
  return "unknown";
}

Metric metric_from_string(const std::string& name) {
  if (name == "energy") return Metric::energy;
  if (name == "entropy" || name == "spectral_entropy") return Metric::entropy;
  if (name == "hfer") return Metric::hfer;
  if (name == "fiedler" || name == "lambda2") return Metric::fiedler;
  throw UsageError("unknown metric '" + name + "'");
}

double metric_value(const LayerDiagnostics& d, Metric metric) {
  switch (metric) {
    case Metric::energy: return d.energy;
    case Metric::entropy: return d.spectral_entropy;
    case Metric::hfer: return d.hfer;
    case Metric::fiedler: return d.fiedler;
  }
  return 0.0;
}

Pairing pair_items(const BundleManifest& manifest, const std::string& condition_a,
                   const std::string& condition_b) {
  if (condition_a == condition_b)
    throw UsageError("condition_a and condition_b must differ (duplicate the items under a new label for a self-contrast)");
  using Key = std::tuple<std::string, std::int64_t>;
  std::map<Key, std::size_t> side_a;
  std::map<Key, std::size_t> side_b;
  bool has_a = false;
  bool has_b = false;
  for (std::size_t i = 0; i < manifest.items.size(); ++i) {
    const auto& item = manifest.items[i];
    const bool is_a = item.condition == condition_a;
    const bool is_b = item.condition == condition_b;
    if (!is_a && !is_b) continue;
    has_a |= is_a;
    has_b |= is_b;
    auto& side = is_a ? side_a : side_b;
    if (!side.emplace(Key{item.language, item.paraphrase_id}, i).second)
      throw DataError("duplicate (language, paraphrase_id, condition) triple: (" + item.language + ", " +
                      std::to_string(item.paraphrase_id) + ", " + item.condition + ")");
  }
  if (!has_a) throw DataError("condition '" + condition_a + "' not present in manifest");
  if (!has_b) throw DataError("condition '" + condition_b + "' not present in manifest");

  Pairing out;
  for (std::size_t i = 0; i < manifest.items.size(); ++i) {
    const auto& item = manifest.items[i];
    const Key key{item.language, item.paraphrase_id};
    if (item.condition == condition_a) {
      auto it = side_b.find(key);
      if (it == side_b.end()) {
        out.orphans.push_back(i);
        continue;
      }
      const auto& partner = manifest.items[it->second];
      ItemPair p;
      p.a = i;
      p.b = it->second;
      p.language = item.language;
      p.voice_type = item.voice_type;
      p.paraphrase_id = item.paraphrase_id;
      p.token_count_delta = std::abs(static_cast<int>(partner.tokens.size()) - static_cast<int>(item.tokens.size()));
      out.pairs.push_back(p);
    } else if (item.condition == condition_b && !side_a.contains(key)) {
      out.orphans.push_back(i);
    }
  }
  return out;
}

double window_mean(const std::vector<double>& per_layer, const LayerWindow& window) {
  if (window.empty()) return std::nan("");
  if (window.lo < 1 || window.hi > static_cast<int>(per_layer.size()))
    throw UsageError("window '" + window.label + "' outside the available layers");
  double sum = 0.0;
  for (int l = window.lo; l <= window.hi; ++l) sum += per_layer[static_cast<std::size_t>(l - 1)];
  return sum / static_cast<double>(window.hi - window.lo + 1);
}

double PairedContrast::endpoint(const std::string& window, Metric metric) const {
  auto it = windows.find(window);
  if (it == windows.end()) throw UsageError("no window named '" + window + "'");
  return it->second.delta[static_cast<std::size_t>(metric)];
}

PairedContrast delta_per_layer(const ItemPair& pair, const DiagnosticSeries& a, const DiagnosticSeries& b,
                               const std::vector<LayerWindow>& windows) {
  if (a.fingerprint != b.fingerprint)
    throw DataError("configuration fingerprint mismatch between contrasted items");
  if (a.layers.size() != b.layers.size()) throw DataError("contrasted items differ in layer count");
  PairedContrast c;
  c.language = pair.language;
  c.voice_type = pair.voice_type;
  c.paraphrase_id = pair.paraphrase_id;
  c.item_a = pair.a;
  c.item_b = pair.b;
  c.token_count_delta = pair.token_count_delta;

  std::array<std::vector<double>, 4> va;
  std::array<std::vector<double>, 4> vb;
  for (auto metric : kAllMetrics) {
    const auto m = static_cast<std::size_t>(metric);
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
      va[m].push_back(metric_value(a.layers[l], metric));
      vb[m].push_back(metric_value(b.layers[l], metric));
      c.deltas[m].push_back(vb[m].back() - va[m].back());
    }
  }
  for (const auto& w : windows) {
    WindowSummary s;
    for (std::size_t m = 0; m < 4; ++m) {
      s.delta[m] = window_mean(c.deltas[m], w);
      s.mean_a[m] = window_mean(va[m], w);
      s.mean_b[m] = window_mean(vb[m], w);
    }
    c.windows[w.label] = s;
  }
  return c;
}

LengthFilterResult length_control_filter(const std::vector<ItemPair>& pairs, int max_token_delta) {
  LengthFilterResult out;
  std::map<std::string, std::size_t> slot;
  for (const auto& p : pairs) {
    if (!slot.contains(p.language)) {
      slot[p.language] = out.excluded_per_language.size();
      out.excluded_per_language.emplace_back(p.language, 0);
    }
    if (p.token_count_delta <= max_token_delta)
      out.kept.push_back(p);
    else
      ++out.excluded_per_language[slot[p.language]].second;
  }
  return out;
}

std::vector<GroupEndpoint> aggregate(const std::vector<PairedContrast>& contrasts, GroupBy group_by,
                                     const std::string& window, Metric metric,
                                     const std::vector<std::string>& expected_groups) {
  auto key_of = [group_by](const PairedContrast& c) {
    switch (group_by) {
      case GroupBy::language: return c.language;
      case GroupBy::voice_type: return to_string(c.voice_type);
      case GroupBy::family: return c.family;
    }
    return c.language;
  };
  std::vector<GroupEndpoint> out;
  std::map<std::string, std::size_t> slot;
  for (const auto& g : expected_groups) {
    slot[g] = out.size();
    out.push_back({g, {}, 0.0});
  }
  for (const auto& c : contrasts) {
    const auto key = key_of(c);
    auto it = slot.find(key);
    if (it == slot.end()) {
      it = slot.emplace(key, out.size()).first;
      out.push_back({key, {}, 0.0});
    }
    out[it->second].values.push_back(c.endpoint(window, metric));
  }
  for (auto& g : out) {
    if (g.values.empty()) throw DataError("empty group '" + g.group + "' after length-control filtering");
    double sum = 0.0;
    for (double v : g.values) sum += v;
    g.mean = sum / static_cast<double>(g.values.size());
  }
  return out;
}

}  // namespace spectraprobe
