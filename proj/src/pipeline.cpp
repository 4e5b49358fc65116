#include "spectraprobe/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "spectraprobe/error.hpp"

namespace spectraprobe {

namespace {

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class Fn>
auto with_context(const std::string& context, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const DataError& e) {
    throw DataError(context + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(context + ": " + e.what());
  } catch (const UsageError& e) {
    throw UsageError(context + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(context + ": " + e.what());
  }
}

// Runs task(i) for i in [0, count) on a bounded pool. The first failing
// task in index order determines the rethrown exception, so error
// reporting does not depend on scheduling.
template <class Task>
void parallel_for(std::size_t count, int workers, Task&& task) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto pool = static_cast<std::size_t>(std::max(1, workers));
  if (pool == 1 || count < 2) {
    run();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < std::min(pool, count); ++t) threads.emplace_back(run);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

HferCutoff RunConfig::cutoff() const {
  if (hfer_k) return HferCutoff::at_index(*hfer_k);
  return HferCutoff::energy_mass(hfer_c.value_or(0.20));
}

void RunConfig::validate() const {
  if (hfer_k && hfer_c) throw UsageError("set either an HFER index cutoff (K) or a mass fraction (c), not both");
  if (hfer_k && *hfer_k < 1) throw UsageError("HFER index cutoff K must be >= 1");
  if (hfer_c && !(*hfer_c > 0.0 && *hfer_c < 1.0)) throw UsageError("HFER mass fraction c must lie in (0, 1)");
  if (!(laplacian.theta > 0.0 && laplacian.theta <= std::numbers::pi))
    throw UsageError("theta must lie in (0, pi]");
  if (max_token_delta < 0) throw UsageError("max token delta must be >= 0");
  if (condition_a.empty() || condition_b.empty()) throw UsageError("conditions must be named");
  stats.validate();
}

std::string diagnostic_config_text(const RunConfig& c, int num_layers) {
  std::ostringstream os;
  os << "laplacian=" << to_string(c.laplacian.kind);
  if (c.laplacian.kind == LaplacianKind::magnetic) os << ";theta=" << num(c.laplacian.theta);
  os << ";agg=" << to_string(c.aggregation.kind) << ";exclude_special=" << (c.aggregation.exclude_special ? 1 : 0)
     << ";cutoff=" << c.cutoff().describe() << ";layers=1:" << num_layers;
  return os.str();
}

std::uint64_t diagnostic_fingerprint(const RunConfig& c, int num_layers) {
  return fnv1a(diagnostic_config_text(c, num_layers));
}

std::string config_text(const RunConfig& c) {
  std::ostringstream os;
  os << "laplacian=" << to_string(c.laplacian.kind) << ";theta=" << num(c.laplacian.theta)
     << ";agg=" << to_string(c.aggregation.kind) << ";exclude_special=" << (c.aggregation.exclude_special ? 1 : 0)
     << ";cutoff=" << c.cutoff().describe() << ";windows=";
  for (const auto& w : c.windows) os << w.label << "=" << w.lo << ":" << w.hi << ",";
  os << ";boot=" << c.stats.bootstrap_resamples << ";boot_kind=" << to_string(c.stats.bootstrap_kind)
     << ";perm=" << c.stats.permutation_shuffles << ";fdr_q=" << num(c.stats.fdr_q)
     << ";winsor=" << num(c.stats.winsor_fraction) << ";trim=" << num(c.stats.trim_fraction)
     << ";seed=" << c.stats.seed << ";max_token_delta=" << c.max_token_delta << ";conditions=" << c.condition_a
     << "," << c.condition_b << ";chars=" << to_string(c.char_count);
  return os.str();
}

std::uint64_t config_fingerprint(const RunConfig& c) { return fnv1a(config_text(c)); }

int worker_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SPECTRAPROBE_THREADS")) {
    int v = 0;
    const std::string_view s(env);
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec == std::errc() && v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

DiagnosticRow diagnose_layer(const Bundle& bundle, std::size_t item, int ordinal, const RunConfig& config) {
  const auto& rec = bundle.manifest().items.at(item);
  return with_context("item '" + rec.item_id + "' layer " + std::to_string(ordinal), [&] {
    const auto n = rec.tokens.size();
    auto special = std::make_unique<bool[]>(n);
    for (std::size_t i = 0; i < n; ++i) special[i] = rec.tokens[i].special;
    const Tensor attention = bundle.attention(item, ordinal);
    const Tensor hidden = bundle.hidden(item, ordinal);
    const auto build = build_token_graph(attention, std::span<const bool>(special.get(), n), config.aggregation,
                                         config.laplacian);
    const auto d = static_cast<Eigen::Index>(hidden.dims[1]);
    Matrix x(build.graph.size(), d);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const auto src = static_cast<std::size_t>(build.graph.nodes[static_cast<std::size_t>(r)]);
      for (Eigen::Index c = 0; c < d; ++c)
        x(r, c) = static_cast<double>(hidden.data[src * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)]);
    }
    DiagnosticRow row;
    row.item = item;
    row.ordinal = ordinal;
    row.d = layer_diagnostics(build.graph, x, config.cutoff());
    row.excluded_special = static_cast<int>(build.excluded_special.size());
    row.dropped_isolated = static_cast<int>(build.dropped_isolated.size());
    return row;
  });
}

DiagnoseResult diagnose_bundle(const Bundle& bundle, const RunConfig& config, const std::vector<std::size_t>& items) {
  config.validate();
  const auto& m = bundle.manifest();
  std::vector<std::size_t> order = items;
  if (order.empty())
    for (std::size_t i = 0; i < m.items.size(); ++i) order.push_back(i);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return m.items[a].item_id < m.items[b].item_id; });
  order.erase(std::unique(order.begin(), order.end()), order.end());

  const auto layers = static_cast<std::size_t>(m.num_layers);
  DiagnoseResult out;
  out.fingerprint = diagnostic_fingerprint(config, m.num_layers);
  out.rows.resize(order.size() * layers);
  parallel_for(out.rows.size(), worker_count(config.threads), [&](std::size_t t) {
    out.rows[t] = diagnose_layer(bundle, order[t / layers], static_cast<int>(t % layers) + 1, config);
  });
  for (const auto& row : out.rows) {
    auto& s = out.series[row.item];
    s.fingerprint = out.fingerprint;
    s.layers.push_back(row.d);
  }
  return out;
}

bool ContrastResult::degenerate() const {
  auto bad = [](const ContrastRow& r) {
    const auto& s = r.stats;
    return !s.notes.empty() || !std::isfinite(s.g_trim) || !std::isfinite(s.ci_lo) || !std::isfinite(s.ci_hi);
  };
  // Voice-type groups often hold a single language; their notes are reported but not fatal.
  return std::any_of(languages.begin(), languages.end(), bad);
}

const ContrastRow* ContrastResult::find(const std::string& group, const std::string& window, Metric metric) const {
  for (const auto* table : {&languages, &voice_types})
    for (const auto& r : *table)
      if (r.group == group && r.window == window && r.metric == metric) return &r;
  return nullptr;
}

std::vector<LayerWindow> resolve_windows(const RunConfig& config, int num_layers, std::vector<std::string>* warnings) {
  if (config.windows.empty()) return default_windows(num_layers, warnings);
  std::set<std::string> labels;
  for (const auto& w : config.windows) {
    check_window(w, num_layers);
    if (!labels.insert(w.label).second) throw UsageError("duplicate window label '" + w.label + "'");
  }
  return config.windows;
}

ContrastResult run_contrast(const Bundle& bundle, const RunConfig& config) {
  config.validate();
  const auto& m = bundle.manifest();
  ContrastResult out;
  out.family = m.family_name();
  out.windows = resolve_windows(config, m.num_layers, &out.warnings);
  out.pairing = pair_items(m, config.condition_a, config.condition_b);
  if (out.pairing.pairs.empty())
    throw DataError("empty pairing: no (language, paraphrase_id) matches between '" + config.condition_a + "' and '" +
                    config.condition_b + "'");
  if (!out.pairing.orphans.empty())
    out.warnings.push_back(std::to_string(out.pairing.orphans.size()) + " unpaired item(s)");
  out.filter = length_control_filter(out.pairing.pairs, config.max_token_delta);
  for (const auto& [lang, count] : out.filter.excluded_per_language)
    if (count > 0)
      out.warnings.push_back("length control excluded " + std::to_string(count) + " pair(s) in " + lang);

  std::vector<std::size_t> needed;
  for (const auto& p : out.filter.kept) {
    needed.push_back(p.a);
    needed.push_back(p.b);
  }
  const auto diag = diagnose_bundle(bundle, config, needed);
  out.fingerprint = diag.fingerprint;

  for (const auto& p : out.filter.kept) {
    auto c = delta_per_layer(p, diag.series.at(p.a), diag.series.at(p.b), out.windows);
    c.family = out.family;
    out.contrasts.push_back(std::move(c));
  }

  std::vector<std::string> languages;
  std::map<std::string, std::string> voice_of;
  for (const auto& p : out.pairing.pairs) {
    if (!voice_of.contains(p.language)) {
      languages.push_back(p.language);
      voice_of[p.language] = to_string(p.voice_type);
    }
  }

  for (const auto& w : out.windows) {
    if (w.empty()) continue;
    for (auto metric : kAllMetrics) {
      const auto mi = static_cast<std::size_t>(metric);
      const auto groups = aggregate(out.contrasts, GroupBy::language, w.label, metric, languages);
      std::map<std::string, std::pair<double, double>> cond_sums;
      for (const auto& c : out.contrasts) {
        const auto& s = c.windows.at(w.label);
        cond_sums[c.language].first += s.mean_a[mi];
        cond_sums[c.language].second += s.mean_b[mi];
      }
      std::vector<GroupSample> samples;
      for (const auto& g : groups) {
        const double n = static_cast<double>(g.n());
        samples.push_back({g.group, g.values, cond_sums[g.group].first / n, cond_sums[g.group].second / n});
      }
      const auto lang_stats = summarize_groups(samples, config.stats, TestKind::paired);
      for (std::size_t i = 0; i < samples.size(); ++i)
        out.languages.push_back({out.family, samples[i].group, voice_of[samples[i].group], w.label, metric, lang_stats[i]});

      // Voice-type aggregates over language-level contrasts.
      std::vector<GroupSample> voice;
      std::map<std::string, std::size_t> slot;
      std::vector<int> counts;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& vt = voice_of[samples[i].group];
        auto it = slot.find(vt);
        if (it == slot.end()) {
          it = slot.emplace(vt, voice.size()).first;
          voice.push_back({vt, {}, 0.0, 0.0});
          counts.push_back(0);
        }
        auto& g = voice[it->second];
        g.values.push_back(lang_stats[i].mean);
        g.mean_a += samples[i].mean_a;
        g.mean_b += samples[i].mean_b;
        ++counts[it->second];
      }
      for (std::size_t i = 0; i < voice.size(); ++i) {
        voice[i].mean_a /= counts[i];
        voice[i].mean_b /= counts[i];
      }
      const auto voice_stats = summarize_groups(voice, config.stats, TestKind::signflip);
      for (std::size_t i = 0; i < voice.size(); ++i)
        out.voice_types.push_back({out.family, voice[i].group, voice[i].group, w.label, metric, voice_stats[i]});
    }
  }

  for (const auto& lang : languages) {
    for (auto metric : kAllMetrics) {
      const auto mi = static_cast<std::size_t>(metric);
      for (int l = 1; l <= m.num_layers; ++l) {
        CurveRow r{lang, metric, l, 0.0, 0};
        for (const auto& c : out.contrasts) {
          if (c.language != lang) continue;
          r.mean_delta += c.deltas[mi][static_cast<std::size_t>(l - 1)];
          ++r.n;
        }
        if (r.n > 0) r.mean_delta /= r.n;
        out.curves.push_back(r);
      }
    }
  }
  return out;
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::hfer_cutoff: return "hfer_cutoff";
    case SweepAxis::theta: return "theta";
    case SweepAxis::laplacian: return "laplacian";
    case SweepAxis::aggregation: return "aggregation";
    case SweepAxis::window: return "window";
  }
  return "unknown";
}

SweepAxis sweep_axis_from_string(const std::string& name) {
  if (name == "hfer_cutoff" || name == "hfer" || name == "cutoff") return SweepAxis::hfer_cutoff;
  if (name == "theta") return SweepAxis::theta;
  if (name == "laplacian") return SweepAxis::laplacian;
  if (name == "aggregation" || name == "agg") return SweepAxis::aggregation;
  if (name == "window") return SweepAxis::window;
  throw UsageError("unknown sweep axis '" + name + "'");
}

RunConfig apply_sweep_value(const RunConfig& base, SweepAxis axis, const std::string& value) {
  RunConfig c = base;
  auto parse = [&](std::string_view text) {
    double v = 0.0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
      throw UsageError("sweep value '" + value + "' is not a number");
    return v;
  };
  switch (axis) {
    case SweepAxis::hfer_cutoff:
      if (value.rfind("k=", 0) == 0 || value.rfind("K=", 0) == 0) {
        c.hfer_k = static_cast<int>(parse(std::string_view(value).substr(2)));
        c.hfer_c.reset();
      } else if (!value.empty() && value.back() == '%') {
        c.hfer_c = parse(std::string_view(value).substr(0, value.size() - 1)) / 100.0;
        c.hfer_k.reset();
      } else {
        c.hfer_c = parse(value);
        c.hfer_k.reset();
      }
      break;
    case SweepAxis::theta:
      c.laplacian.kind = LaplacianKind::magnetic;
      c.laplacian.theta = parse(value);
      break;
    case SweepAxis::laplacian: c.laplacian.kind = laplacian_kind_from_string(value); break;
    case SweepAxis::aggregation: c.aggregation.kind = aggregation_kind_from_string(value); break;
    case SweepAxis::window: c.windows = {parse_window(value)}; break;
  }
  c.validate();
  return c;
}

SweepResult run_sweep(const Bundle& bundle, const RunConfig& base, SweepAxis axis,
                      const std::vector<std::string>& values) {
  if (values.empty()) throw UsageError("sweep needs at least one axis value");
  SweepResult out;
  out.axis = axis;
  const auto reference = run_contrast(bundle, base);
  const auto base_window = std::find_if(reference.windows.begin(), reference.windows.end(),
                                        [](const LayerWindow& w) { return !w.empty(); });
  if (base_window == reference.windows.end()) throw UsageError("base configuration has no nonempty window");

  for (const auto& value : values) {
    const auto cfg = apply_sweep_value(base, axis, value);
    const auto res = run_contrast(bundle, cfg);
    const auto win = std::find_if(res.windows.begin(), res.windows.end(),
                                  [](const LayerWindow& w) { return !w.empty(); });
    if (win == res.windows.end()) throw UsageError("sweep value '" + value + "' leaves no nonempty window");
    for (auto metric : kAllMetrics) {
      SweepSummary s{value, metric, 0, 0, 0};
      for (const auto& r : res.languages) {
        if (r.window != win->label || r.metric != metric) continue;
        const auto* ref = reference.find(r.group, base_window->label, metric);
        SweepRow row{value, r.group, r.window, metric, r.stats.mean, r.stats.p_perm, r.stats.q_fdr, true};
        row.sign_agrees = ref && sign_of(ref->stats.mean) == sign_of(r.stats.mean);
        ++s.languages;
        s.sign_agreements += row.sign_agrees ? 1 : 0;
        s.significant += r.stats.reject ? 1 : 0;
        out.rows.push_back(row);
      }
      out.summary.push_back(s);
    }
  }
  return out;
}

AblationRow run_ablation_summary(const Bundle& baseline, const Bundle& ablated, const RunConfig& config) {
  config.validate();
  const auto& mb = baseline.manifest();
  const auto& ma = ablated.manifest();
  if (mb.num_layers != ma.num_layers) throw DataError("baseline and ablated bundles differ in layer count");
  std::set<std::string> ids_b;
  std::set<std::string> ids_a;
  for (const auto& it : mb.items) ids_b.insert(it.item_id);
  for (const auto& it : ma.items) ids_a.insert(it.item_id);
  if (ids_b != ids_a) {
    std::string missing;
    for (const auto& id : ids_b)
      if (!ids_a.contains(id)) missing += " -" + id;
    for (const auto& id : ids_a)
      if (!ids_b.contains(id)) missing += " +" + id;
    throw DataError("item mismatch between baseline and ablated bundles:" + missing);
  }

  auto windows = resolve_windows(config, mb.num_layers);
  std::erase_if(windows, [](const LayerWindow& w) { return w.empty(); });
  windows.push_back({"overall", 1, mb.num_layers});

  const auto pairing = pair_items(mb, config.condition_a, config.condition_b);
  if (pairing.pairs.empty()) throw DataError("empty pairing in baseline bundle");
  std::vector<std::size_t> needed;
  for (const auto& p : pairing.pairs) {
    needed.push_back(p.a);
    needed.push_back(p.b);
  }
  std::vector<std::size_t> needed_ablated;
  for (auto i : needed) needed_ablated.push_back(*ma.find_item(mb.items[i].item_id));
  const auto db = diagnose_bundle(baseline, config, needed);
  const auto da = diagnose_bundle(ablated, config, needed_ablated);

  AblationRow row;
  row.label = ma.ablation_label.value_or("ablated");
  row.pairs = static_cast<int>(pairing.pairs.size());
  const auto fiedler = static_cast<std::size_t>(Metric::fiedler);
  std::vector<double> sums(windows.size(), 0.0);
  for (const auto& p : pairing.pairs) {
    const auto ia = *ma.find_item(mb.items[p.a].item_id);
    const auto ib = *ma.find_item(mb.items[p.b].item_id);
    ItemPair pa = p;
    pa.a = ia;
    pa.b = ib;
    const auto cb = delta_per_layer(p, db.series.at(p.a), db.series.at(p.b), {});
    const auto ca = delta_per_layer(pa, da.series.at(ia), da.series.at(ib), {});
    std::vector<double> diff(cb.deltas[fiedler].size());
    for (std::size_t l = 0; l < diff.size(); ++l) diff[l] = ca.deltas[fiedler][l] - cb.deltas[fiedler][l];
    for (std::size_t w = 0; w < windows.size(); ++w) sums[w] += window_mean(diff, windows[w]);
  }
  for (std::size_t w = 0; w < windows.size(); ++w)
    row.windows.emplace_back(windows[w].label, sums[w] / static_cast<double>(row.pairs));
  return row;
}

}  // namespace spectraprobe
