#include "spectraprobe/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>

#include <CLI11.hpp>

#include "spectraprobe/bundle_io.hpp"
#include "spectraprobe/config.hpp"
#include "spectraprobe/error.hpp"
#include "spectraprobe/pipeline.hpp"
#include "spectraprobe/report.hpp"
#include "spectraprobe/scores.hpp"
#include "spectraprobe/tokstress.hpp"

namespace spectraprobe {

namespace {

namespace fs = std::filesystem;

struct FlagSpec {
  const char* flag;
  const char* key;
  const char* help;
};

constexpr FlagSpec kAnalysisFlags[] = {
    {"--laplacian", "laplacian", "combinatorial|symmetric|random_walk|directed_rw|magnetic (default random_walk)"},
    {"--agg", "agg", "head aggregation: mass_weighted|uniform (default mass_weighted)"},
    {"--exclude-special", "exclude_special", "drop manifest-flagged special tokens (default true)"},
    {"--theta", "theta", "magnetic phase in (0, pi] (default 0.2)"},
    {"--hfer-c", "hfer_c", "HFER spectral-mass fraction c (default 0.20)"},
    {"--hfer-k", "hfer_k", "HFER index cutoff K"},
    {"--window", "window", "layer window lo:hi or label=lo:hi (repeatable; default early/mid/late)"},
    {"--boot", "boot", "bootstrap resamples (default 2000)"},
    {"--boot-kind", "boot_kind", "percentile|bca (default percentile)"},
    {"--perm", "perm", "permutation shuffles (default 10000)"},
    {"--fdr-q", "fdr_q", "BH-FDR level (default 0.05)"},
    {"--winsor", "winsor", "winsorization fraction for g_trim (default 0.01)"},
    {"--trim", "trim", "trimming fraction for g_trim (default 0.20)"},
    {"--seed", "seed", "random seed (default 0)"},
    {"--max-token-delta", "max_token_delta", "length control limit, or 'inf' (default 2)"},
    {"--out", "out", "output directory (default spectraprobe-out)"},
    {"--condition-a", "condition_a", "reference condition (default active)"},
    {"--condition-b", "condition_b", "contrasted condition (default passive)"},
    {"--chars", "chars", "character count for phi: scalar_values|bytes|manifest"},
    {"--threads", "threads", "worker threads (default SPECTRAPROBE_THREADS or all cores)"},
};

struct AnalysisFlags {
  std::map<std::string, std::vector<std::string>> values;
  std::string config_file;

  void attach(CLI::App* app) {
    for (const auto& f : kAnalysisFlags) {
      auto* opt = app->add_option(f.flag, values[f.key], f.help)->type_name("VALUE");
      if (std::string(f.key) != "window") opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
    app->add_option("--config", config_file, "plain-text key=value config file; flags override it");
  }

  RunConfig build() const {
    Settings file;
    if (!config_file.empty()) file = read_config_file(config_file);
    Settings flags;
    for (const auto& f : kAnalysisFlags)
      for (const auto& v : values.at(f.key)) flags.emplace_back(f.key, v);
    return build_config(file, flags);
  }
};

void require_manifest(const fs::path& bundle) {
  if (!fs::is_directory(bundle)) throw IoError("bundle directory not found: " + bundle.string());
  if (!fs::exists(bundle / "manifest.json")) throw IoError("missing manifest: " + (bundle / "manifest.json").string());
}

// Validation gate ahead of analysis. Returns false (after printing) on violations.
bool validate_gate(const fs::path& bundle, std::ostream& err) {
  require_manifest(bundle);
  const auto violations = validate_bundle(bundle);
  for (const auto& v : violations) err << format_violation(v) << "\n";
  if (!violations.empty()) err << bundle.string() << ": " << violations.size() << " violation(s)\n";
  return violations.empty();
}

void print_primary(const ContrastResult& r, std::ostream& out) {
  const auto win = std::find_if(r.windows.begin(), r.windows.end(), [](const LayerWindow& w) { return !w.empty(); });
  if (win == r.windows.end()) return;
  out << "family " << r.family << ", window " << win->label << " [" << win->lo << "," << win->hi
      << "], fiedler delta:\n";
  for (const auto& row : r.languages) {
    if (row.window != win->label || row.metric != Metric::fiedler) continue;
    out << "  " << row.group << "  mean " << format_number(row.stats.mean) << "  q " << format_number(row.stats.q_fdr)
        << (row.stats.reject ? "  *" : "") << "\n";
  }
}

int finish_contrast(const ContrastResult& r, std::ostream& err) {
  for (const auto& w : r.warnings) err << "warning: " << w << "\n";
  if (r.degenerate()) {
    err << "degenerate statistics in at least one group (see the notes column)\n";
    return 1;
  }
  return 0;
}

std::vector<double> final_layer_fiedler(const Bundle& bundle, const std::vector<std::size_t>& items,
                                        const RunConfig& config) {
  std::vector<double> out;
  for (auto i : items) out.push_back(diagnose_layer(bundle, i, bundle.manifest().num_layers, config).d.fiedler);
  return out;
}

std::vector<std::size_t> items_with_condition(const BundleManifest& m, const std::string& condition) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.items.size(); ++i)
    if (m.items[i].condition == condition) out.push_back(i);
  if (out.empty()) throw DataError("no items with condition '" + condition + "'");
  return out;
}

int cmd_validate(const std::string& path, std::ostream& out, std::ostream& err) {
  if (!validate_gate(path, err)) return 1;
  out << path << ": ok\n";
  return 0;
}

int cmd_diagnose(const std::string& path, const RunConfig& config, std::ostream& out, std::ostream& err) {
  if (!validate_gate(path, err)) return 1;
  const auto bundle = Bundle::open(path);
  const auto result = diagnose_bundle(bundle, config);
  write_table(config.output_dir, "diagnostics", diagnostics_table(result, bundle.manifest(), config));
  out << "diagnostics: " << result.rows.size() << " rows, fingerprint " << hex64(result.fingerprint) << " -> "
      << (config.output_dir / "diagnostics.csv").string() << "\n";
  return 0;
}

int cmd_contrast(const std::string& path, const RunConfig& config, std::ostream& out, std::ostream& err) {
  if (!validate_gate(path, err)) return 1;
  const auto bundle = Bundle::open(path);
  const auto result = run_contrast(bundle, config);
  write_contrast_outputs(config.output_dir, result, bundle.manifest(), config);
  print_primary(result, out);
  return finish_contrast(result, err);
}

int cmd_sweep(const std::string& path, const RunConfig& config, const std::string& axis,
              const std::vector<std::string>& values, std::ostream& out, std::ostream& err) {
  if (!validate_gate(path, err)) return 1;
  const auto bundle = Bundle::open(path);
  const auto result = run_sweep(bundle, config, sweep_axis_from_string(axis), values);
  write_table(config.output_dir, "sweep", sweep_table(result, config));
  write_table(config.output_dir, "sweep_summary", sweep_summary_table(result));
  for (const auto& s : result.summary)
    if (s.metric == Metric::fiedler)
      out << axis << "=" << s.value << ": fiedler sign agreement " << s.sign_agreements << "/" << s.languages
          << ", significant " << s.significant << "\n";
  return 0;
}

int cmd_ablation(const std::string& base_path, const std::string& abl_path, const RunConfig& config,
                 std::ostream& out, std::ostream& err) {
  if (!validate_gate(base_path, err) || !validate_gate(abl_path, err)) return 1;
  const auto row = run_ablation_summary(Bundle::open(base_path), Bundle::open(abl_path), config);
  write_table(config.output_dir, "ablation_summary", ablation_table(row, config));
  out << row.label << ":";
  for (const auto& [label, v] : row.windows) out << " " << label << " " << format_number(v);
  out << "\n";
  return 0;
}

int cmd_tokstress(const std::string& path, const RunConfig& config, std::ostream& out, std::ostream& err) {
  if (!validate_gate(path, err)) return 1;
  const auto bundle = Bundle::open(path);
  const auto& m = bundle.manifest();
  TokstressOptions opts{config.char_count, config.aggregation.exclude_special};

  Table items;
  items.schema = "tokstress_items";
  items.meta = {{"chars", to_string(config.char_count)}, {"exclude_special", config.aggregation.exclude_special ? "true" : "false"}};
  items.columns = {"item_id", "language", "condition", "token_count", "char_count", "phi", "h_frag", "h_frag_norm",
                   "specials_excluded"};
  std::vector<TokenizerMetrics> metrics;
  for (const auto& it : m.items) {
    metrics.push_back(tokenizer_metrics(it, opts));
    const auto& t = metrics.back();
    items.add({it.item_id, it.language, it.condition, std::int64_t{t.token_count}, std::int64_t{t.char_count}, t.phi,
               t.h_frag, t.h_frag_norm, std::int64_t{t.specials_excluded}});
  }
  write_table(config.output_dir, "tokstress_items", items);

  const auto contrast = run_contrast(bundle, config);
  const auto win = std::find_if(contrast.windows.begin(), contrast.windows.end(),
                                [](const LayerWindow& w) { return !w.empty(); });
  if (win == contrast.windows.end()) throw UsageError("no nonempty window for the stress join");
  std::vector<LanguageEndpoint> endpoints;
  std::map<std::string, std::pair<double, int>> tok_delta;
  for (const auto& c : contrast.contrasts) {
    tok_delta[c.language].first += c.token_count_delta;
    ++tok_delta[c.language].second;
  }
  for (const auto& row : contrast.languages)
    if (row.window == win->label && row.metric == Metric::fiedler)
      endpoints.push_back({row.group, std::abs(row.stats.mean),
                           tok_delta[row.group].first / std::max(1, tok_delta[row.group].second)});
  std::vector<ItemStress> stress;
  std::vector<bool> used(m.items.size(), false);
  for (const auto& c : contrast.contrasts) used[c.item_a] = used[c.item_b] = true;
  for (std::size_t i = 0; i < m.items.size(); ++i)
    if (used[i]) stress.push_back({m.items[i].language, metrics[i]});
  auto rows = stress_join(stress, endpoints);
  standardize_covariates(rows);

  Table langs;
  langs.schema = "tokstress_languages";
  langs.meta = {{"window", win->label}, {"endpoint", "abs_mean_fiedler_delta"}, {"fingerprint", hex64(contrast.fingerprint)}};
  langs.columns = {"family", "language", "n_items", "mean_phi", "mean_h_frag_norm", "endpoint", "token_count_delta",
                   "z_phi", "z_h_frag_norm"};
  for (const auto& r : rows)
    langs.add({m.family_name(), r.language, std::int64_t{r.n_items}, r.mean_phi, r.mean_h_frag_norm, r.endpoint,
               r.token_count_delta, r.z_phi, r.z_h_frag_norm});
  write_table(config.output_dir, "tokstress_languages", langs);

  Table corr;
  corr.schema = "tokstress_correlations";
  corr.columns = {"x", "y", "n", "pearson", "spearman", "pearson_ci_lo", "pearson_ci_hi", "note"};
  std::vector<double> y;
  for (const auto& r : rows) y.push_back(r.endpoint);
  for (const auto& [name, field] : {std::pair{"mean_phi", &StressRow::mean_phi},
                                    std::pair{"mean_h_frag_norm", &StressRow::mean_h_frag_norm}}) {
    std::vector<double> x;
    for (const auto& r : rows) x.push_back(r.*field);
    try {
      const auto c = correlations(x, y, config.stats);
      corr.add({std::string(name), std::string("endpoint"), std::int64_t{c.n}, c.pearson, c.spearman, c.pearson_ci.lo,
                c.pearson_ci.hi, std::string()});
    } catch (const DataError& e) {
      corr.add({std::string(name), std::string("endpoint"), std::int64_t(x.size()), std::monostate{}, std::monostate{},
                std::monostate{}, std::monostate{}, std::string(e.what())});
    }
  }
  write_table(config.output_dir, "tokstress_correlations", corr);
  out << "tokstress: " << m.items.size() << " items, " << rows.size() << " languages -> "
      << config.output_dir.string() << "\n";
  return finish_contrast(contrast, err);
}

int cmd_correlate(const std::string& path, const std::string& xcol, const std::string& ycol, const RunConfig& config,
                  std::ostream& out) {
  const auto csv = read_csv(path);
  for (const auto* name : {&xcol, &ycol})
    if (std::find(csv.columns.begin(), csv.columns.end(), *name) == csv.columns.end())
      throw UsageError("correlate: no column '" + *name + "' in " + path);
  const auto xi = csv.column(xcol);
  const auto yi = csv.column(ycol);
  std::vector<double> x;
  std::vector<double> y;
  for (const auto& row : csv.rows) {
    x.push_back(parse_number(row[xi]));
    y.push_back(parse_number(row[yi]));
  }
  const auto c = correlations(x, y, config.stats);
  Table t;
  t.schema = "correlation";
  t.meta = {{"source", fs::path(path).filename().string()}, {"seed", std::to_string(config.stats.seed)}};
  t.columns = {"x", "y", "n", "pearson", "spearman", "pearson_ci_lo", "pearson_ci_hi", "skipped_resamples"};
  t.add({xcol, ycol, std::int64_t{c.n}, c.pearson, c.spearman, c.pearson_ci.lo, c.pearson_ci.hi,
         std::int64_t{c.skipped_resamples}});
  write_table(config.output_dir, "correlation", t);
  out << "pearson " << format_number(c.pearson) << " [" << format_number(c.pearson_ci.lo) << ", "
      << format_number(c.pearson_ci.hi) << "], spearman " << format_number(c.spearman) << " (n=" << c.n << ")\n";
  return 0;
}

int cmd_rci(const std::string& input, const std::string& group_column, const RunConfig& config, std::ostream& out,
            std::ostream& err) {
  Table t;
  t.schema = "rci";
  t.columns = {"group", "n", "z_energy", "z_entropy", "z_hfer", "z_fiedler", "rci"};
  if (fs::is_directory(input)) {
    if (!validate_gate(input, err)) return 1;
    const auto bundle = Bundle::open(input);
    const auto& m = bundle.manifest();
    const LayerWindow win = config.windows.empty() ? LayerWindow{"all", 1, m.num_layers} : config.windows.front();
    check_window(win, m.num_layers);
    const auto diag = diagnose_bundle(bundle, config);
    std::vector<std::string> groups;
    std::vector<LayerDiagnostics> rows;
    for (const auto& [item, series] : diag.series) {
      LayerDiagnostics avg;
      std::array<std::vector<double>, 4> per;
      for (const auto& d : series.layers)
        for (auto metric : kAllMetrics) per[static_cast<std::size_t>(metric)].push_back(metric_value(d, metric));
      avg.energy = window_mean(per[0], win);
      avg.spectral_entropy = window_mean(per[1], win);
      avg.hfer = window_mean(per[2], win);
      avg.fiedler = window_mean(per[3], win);
      groups.push_back(m.items[item].condition);
      rows.push_back(avg);
    }
    t.meta = {{"cohort", "items"}, {"window", win.label}, {"fingerprint", hex64(diag.fingerprint)}};
    for (const auto& r : rci_by_group(groups, rows))
      t.add({r.group, std::int64_t{r.n}, r.z.z_energy, r.z.z_entropy, r.z.z_hfer, r.z.z_fiedler, r.rci});
  } else {
    const auto csv = read_csv(input);
    const auto has = [&](const std::string& c) {
      return std::find(csv.columns.begin(), csv.columns.end(), c) != csv.columns.end();
    };
    const bool labeled = has(group_column);
    if (has("z_energy")) {
      t.meta = {{"cohort", "precomputed_z"}};
      for (std::size_t i = 0; i < csv.rows.size(); ++i) {
        const auto& row = csv.rows[i];
        ZScoredDiagnostics z{parse_number(row[csv.column("z_energy")]), parse_number(row[csv.column("z_entropy")]),
                             parse_number(row[csv.column("z_hfer")]), parse_number(row[csv.column("z_fiedler")])};
        t.add({labeled ? row[csv.column(group_column)] : std::to_string(i + 1), std::int64_t{1}, z.z_energy,
               z.z_entropy, z.z_hfer, z.z_fiedler, rci(z)});
      }
    } else {
      if (!labeled) throw UsageError("rci: table lacks the group column '" + group_column + "'");
      const std::string entropy_col = has("spectral_entropy") ? "spectral_entropy" : "entropy";
      std::vector<std::string> groups;
      std::vector<LayerDiagnostics> rows;
      for (const auto& row : csv.rows) {
        LayerDiagnostics d;
        d.energy = parse_number(row[csv.column("energy")]);
        d.spectral_entropy = parse_number(row[csv.column(entropy_col)]);
        d.hfer = parse_number(row[csv.column("hfer")]);
        d.fiedler = parse_number(row[csv.column("fiedler")]);
        groups.push_back(row[csv.column(group_column)]);
        rows.push_back(d);
      }
      t.meta = {{"cohort", "rows"}};
      for (const auto& r : rci_by_group(groups, rows))
        t.add({r.group, std::int64_t{r.n}, r.z.z_energy, r.z.z_entropy, r.z.z_hfer, r.z.z_fiedler, r.rci});
    }
  }
  write_table(config.output_dir, "rci", t);
  for (const auto& row : t.rows) out << std::get<std::string>(row[0]) << "  RCI " << format_number(std::get<double>(row[6])) << "\n";
  return 0;
}

int cmd_shd_calibrate(const std::string& path, const std::string& reference, const std::string& positive,
                      const std::string& negative, std::optional<double> tau, const RunConfig& config,
                      std::ostream& out, std::ostream& err) {
  if (!validate_gate(path, err)) return 1;
  const auto bundle = Bundle::open(path);
  const auto& m = bundle.manifest();
  const auto ref = final_layer_fiedler(bundle, items_with_condition(m, reference), config);
  ShdCalibration calib;
  if (!positive.empty() || !negative.empty()) {
    if (positive.empty() || negative.empty()) throw UsageError("threshold tuning needs both --positive and --negative");
    if (tau) throw UsageError("give either --tau or a labeled tuning set, not both");
    const auto pos = final_layer_fiedler(bundle, items_with_condition(m, positive), config);
    const auto neg = final_layer_fiedler(bundle, items_with_condition(m, negative), config);
    std::vector<double> values = pos;
    values.insert(values.end(), neg.begin(), neg.end());
    std::vector<bool> labels(pos.size(), true);
    labels.resize(values.size(), false);
    calib = shd_calibrate(ref, values, labels);
  } else {
    calib = shd_calibrate(ref, tau);
  }
  calib.config_fingerprint = diagnostic_fingerprint(config, m.num_layers);
  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  const auto file = config.output_dir / "shd_calibration.txt";
  write_calibration(file, calib);
  out << "mu_fid " << format_number(calib.mu_fid) << ", sigma_fid " << format_number(calib.sigma_fid) << ", tau_d "
      << format_number(calib.tau_d);
  if (calib.balanced_accuracy) out << " (balanced accuracy " << format_number(*calib.balanced_accuracy) << ")";
  out << " -> " << file.string() << "\n";
  return 0;
}

int cmd_shd_detect(const std::string& path, const std::string& calibration, const RunConfig& config,
                   std::ostream& out, std::ostream& err) {
  if (!validate_gate(path, err)) return 1;
  const auto calib = read_calibration(calibration);
  const auto bundle = Bundle::open(path);
  const auto& m = bundle.manifest();
  if (calib.config_fingerprint && *calib.config_fingerprint != diagnostic_fingerprint(config, m.num_layers))
    throw DataError("calibration was fitted under different diagnostic settings (fingerprint mismatch)");
  std::vector<std::size_t> all(m.items.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto f = final_layer_fiedler(bundle, all, config);
  Table t;
  t.schema = "shd_flags";
  t.meta = {{"mu_fid", format_number(calib.mu_fid)}, {"sigma_fid", format_number(calib.sigma_fid)},
            {"tau_d", format_number(calib.tau_d)}};
  t.columns = {"item_id", "condition", "f_last", "z_fid", "flag"};
  int flagged = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const int flag = shd_detect(f[i], calib);
    flagged += flag;
    t.add({m.items[i].item_id, m.items[i].condition, f[i], shd_z(f[i], calib), std::int64_t{flag}});
  }
  write_table(config.output_dir, "shd_flags", t);
  out << "shd: " << flagged << " of " << all.size() << " item(s) flagged\n";
  return 0;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spectral diagnostics of attention-induced token graphs", "spectraprobe"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "spectraprobe 0.1.0");

  std::string bundle_path;
  std::string second_path;
  AnalysisFlags flags;
  std::function<int()> action;

  auto* validate = app.add_subcommand("validate", "check a capture bundle against every format invariant");
  validate->add_option("bundle", bundle_path, "bundle directory")->required();
  validate->callback([&] { action = [&] { return cmd_validate(bundle_path, out, err); }; });

  auto* diagnose = app.add_subcommand("diagnose", "per-item, per-layer diagnostics table");
  diagnose->add_option("bundle", bundle_path)->required();
  flags.attach(diagnose);
  diagnose->callback([&] { action = [&] { return cmd_diagnose(bundle_path, flags.build(), out, err); }; });

  auto* contrast = app.add_subcommand("contrast", "paired condition contrast with full statistics");
  contrast->add_option("bundle", bundle_path)->required();
  flags.attach(contrast);
  contrast->callback([&] { action = [&] { return cmd_contrast(bundle_path, flags.build(), out, err); }; });

  std::string axis;
  std::vector<std::string> axis_values;
  auto* sweep = app.add_subcommand("sweep", "robustness sweep over one configuration axis");
  sweep->add_option("bundle", bundle_path)->required();
  sweep->add_option("--axis", axis, "hfer_cutoff|theta|laplacian|aggregation|window")->required();
  sweep->add_option("--values", axis_values, "comma-separated axis values")->required()->delimiter(',');
  flags.attach(sweep);
  sweep->callback([&] { action = [&] { return cmd_sweep(bundle_path, flags.build(), axis, axis_values, out, err); }; });

  auto* ablation = app.add_subcommand("ablation-summary", "windowed change in delta lambda_2 under ablation");
  ablation->add_option("baseline", bundle_path)->required();
  ablation->add_option("ablated", second_path)->required();
  flags.attach(ablation);
  ablation->callback([&] { action = [&] { return cmd_ablation(bundle_path, second_path, flags.build(), out, err); }; });

  auto* tokstress = app.add_subcommand("tokstress", "tokenizer-stress covariates joined to the endpoint");
  tokstress->add_option("bundle", bundle_path)->required();
  flags.attach(tokstress);
  tokstress->callback([&] { action = [&] { return cmd_tokstress(bundle_path, flags.build(), out, err); }; });

  std::string xcol;
  std::string ycol;
  auto* correlate = app.add_subcommand("correlate", "Pearson and Spearman correlation of two table columns");
  correlate->add_option("table", bundle_path, "CSV table")->required();
  correlate->add_option("--x", xcol)->required();
  correlate->add_option("--y", ycol)->required();
  flags.attach(correlate);
  correlate->callback([&] { action = [&] { return cmd_correlate(bundle_path, xcol, ycol, flags.build(), out); }; });

  std::string group_column = "group";
  auto* rci_cmd = app.add_subcommand("rci", "Reconfiguration Change Index per group");
  rci_cmd->add_option("input", bundle_path, "bundle directory or CSV table")->required();
  rci_cmd->add_option("--group-column", group_column, "label column of a CSV input (default group)");
  flags.attach(rci_cmd);
  rci_cmd->callback([&] { action = [&] { return cmd_rci(bundle_path, group_column, flags.build(), out, err); }; });

  auto* shd = app.add_subcommand("shd", "final-layer Fiedler detector");
  shd->require_subcommand(1);
  std::string reference;
  std::string positive;
  std::string negative;
  std::optional<double> tau;
  auto* calibrate = shd->add_subcommand("calibrate", "fit mu/sigma (and optionally tau_d)");
  calibrate->add_option("bundle", bundle_path)->required();
  calibrate->add_option("--reference", reference, "condition forming the reference corpus")->required();
  calibrate->add_option("--positive", positive, "condition labeled positive for threshold tuning");
  calibrate->add_option("--negative", negative, "condition labeled negative for threshold tuning");
  calibrate->add_option("--tau", tau, "fixed decision threshold");
  flags.attach(calibrate);
  calibrate->callback([&] {
    action = [&] { return cmd_shd_calibrate(bundle_path, reference, positive, negative, tau, flags.build(), out, err); };
  });
  std::string calibration_file;
  auto* detect = shd->add_subcommand("detect", "flag items whose z_fid exceeds tau_d");
  detect->add_option("bundle", bundle_path)->required();
  detect->add_option("--calibration", calibration_file)->required();
  flags.attach(detect);
  detect->callback([&] { action = [&] { return cmd_shd_detect(bundle_path, calibration_file, flags.build(), out, err); }; });

  double report_q = 0.05;
  auto* report = app.add_subcommand("report", "SVG charts and summary from contrast tables");
  report->add_option("analysis_dir", bundle_path)->required();
  report->add_option("--fdr-q", report_q, "star threshold (strict <)");
  report->callback([&] {
    action = [&] {
      for (const auto& p : render_report(bundle_path, report_q)) out << p.string() << "\n";
      return 0;
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  return action ? action() : 2;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace spectraprobe
