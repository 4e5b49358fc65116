#include "spectraprobe/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "spectraprobe/error.hpp"

namespace spectraprobe {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string cell_text(const Cell& c) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) return "";
        else if constexpr (std::is_same_v<T, std::string>) return v;
        else if constexpr (std::is_same_v<T, double>) return format_number(v);
        else if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
        else return std::to_string(v);
      },
      c);
}

nlohmann::ordered_json cell_json(const Cell& c) {
  return std::visit(
      [](const auto& v) -> nlohmann::ordered_json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) return nullptr;
        else if constexpr (std::is_same_v<T, double>) {
          if (!std::isfinite(v)) return nullptr;
          return v;
        } else return v;
      },
      c);
}

std::string schema_line(const Table& t) {
  std::string line = "# schema=spectraprobe." + t.schema + "/" + std::to_string(t.version);
  for (const auto& [k, v] : t.meta) line += " " + k + "=" + v;
  return line;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fx(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::pair<std::string, std::string>> common_meta(std::uint64_t fingerprint, const RunConfig& config) {
  return {{"fingerprint", hex64(fingerprint)}, {"config", hex64(config_fingerprint(config))}};
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string join_notes(const std::vector<std::string>& notes) {
  std::string out;
  for (const auto& n : notes) out += (out.empty() ? "" : "; ") + n;
  return out;
}

}  // namespace

void Table::add(std::vector<Cell> row) {
  if (row.size() != columns.size())
    throw std::logic_error("table '" + schema + "': row width " + std::to_string(row.size()) + " != " +
                           std::to_string(columns.size()));
  rows.push_back(std::move(row));
}

std::string format_number(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";  // folds -0
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string to_csv(const Table& t) {
  std::string out = schema_line(t) + "\n";
  for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + csv_escape(t.columns[i]);
  out += "\n";
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_escape(cell_text(row[i]));
    out += "\n";
  }
  return out;
}

std::string to_json(const Table& t) {
  nlohmann::ordered_json j;
  j["schema"] = "spectraprobe." + t.schema;
  j["version"] = t.version;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  for (const auto& [k, v] : t.meta) meta[k] = v;
  j["meta"] = meta;
  j["columns"] = t.columns;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : t.rows) {
    nlohmann::ordered_json r = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < row.size(); ++i) r[t.columns[i]] = cell_json(row[i]);
    rows.push_back(std::move(r));
  }
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void write_table(const std::filesystem::path& dir, const std::string& name, const Table& table) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  write_text(dir / (name + ".csv"), to_csv(table));
  write_text(dir / (name + ".json"), to_json(table));
}

std::size_t CsvData::column(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw DataError("table has no column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

CsvData read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  CsvData out;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      out.comments.push_back(line);
      continue;
    }
    auto cells = split_csv_line(line);
    if (!header) {
      out.columns = std::move(cells);
      header = true;
    } else {
      if (cells.size() != out.columns.size())
        throw DataError(path.string() + ": row has " + std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(out.columns.size()));
      out.rows.push_back(std::move(cells));
    }
  }
  if (!header) throw DataError(path.string() + ": no header row");
  return out;
}

double parse_number(const std::string& text) {
  if (text == "NaN" || text == "nan" || text.empty()) return kNaN;
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw DataError("not a number: '" + text + "'");
  return v;
}

Table diagnostics_table(const DiagnoseResult& result, const BundleManifest& manifest, const RunConfig& config) {
  Table t;
  t.schema = "diagnostics";
  t.meta = common_meta(result.fingerprint, config);
  t.meta.emplace_back("model", manifest.model_id);
  t.columns = {"item_id", "language", "condition", "paraphrase_id", "layer", "layer_label", "nodes",
               "excluded_special", "dropped_isolated", "energy", "spectral_entropy", "hfer", "fiedler",
               "cutoff_index", "fingerprint"};
  for (const auto& r : result.rows) {
    const auto& item = manifest.items[r.item];
    t.add({item.item_id, item.language, item.condition, std::int64_t{item.paraphrase_id}, std::int64_t{r.ordinal},
           std::int64_t{manifest.layer_label(r.ordinal)}, std::int64_t{r.d.nodes}, std::int64_t{r.excluded_special},
           std::int64_t{r.dropped_isolated}, r.d.energy, r.d.spectral_entropy, r.d.hfer, r.d.fiedler,
           std::int64_t{r.d.cutoff_index}, hex64(result.fingerprint)});
  }
  return t;
}

Table contrast_table(const ContrastResult& result, bool voice_types, const RunConfig& config) {
  Table t;
  t.schema = voice_types ? "contrast_voice_types" : "contrast_languages";
  t.meta = common_meta(result.fingerprint, config);
  t.meta.emplace_back("conditions", config.condition_b + "-" + config.condition_a);
  t.meta.emplace_back("test", voice_types ? "signflip_language_means" : "paired_signflip");
  t.columns = {"family", "group", "voice_type", "window", "metric", "n", "mean", "ci_lo", "ci_hi", "p_perm",
               "q_fdr", "reject", "g_trim", "delta_sym_pct", "epsilon", "notes"};
  for (const auto& r : voice_types ? result.voice_types : result.languages) {
    const auto& s = r.stats;
    t.add({r.family, r.group, r.voice_type, r.window, to_string(r.metric), std::int64_t{s.n}, s.mean, s.ci_lo,
           s.ci_hi, s.p_perm, s.q_fdr, s.reject, s.g_trim, s.delta_sym_pct, s.epsilon, join_notes(s.notes)});
  }
  return t;
}

Table curves_table(const ContrastResult& result, const BundleManifest& manifest) {
  Table t;
  t.schema = "contrast_curves";
  t.meta = {{"fingerprint", hex64(result.fingerprint)}};
  t.columns = {"family", "language", "metric", "layer", "layer_label", "mean_delta", "n"};
  for (const auto& c : result.curves)
    t.add({result.family, c.language, to_string(c.metric), std::int64_t{c.ordinal},
           std::int64_t{manifest.layer_label(c.ordinal)}, c.mean_delta, std::int64_t{c.n}});
  return t;
}

Table pairs_table(const ContrastResult& result, const BundleManifest& manifest) {
  Table t;
  t.schema = "contrast_pairs";
  t.meta = {{"fingerprint", hex64(result.fingerprint)}};
  t.columns = {"language", "paraphrase_id", "item_a", "item_b", "token_count_delta", "window", "metric",
               "delta", "mean_a", "mean_b"};
  for (const auto& c : result.contrasts) {
    for (const auto& w : result.windows) {
      if (w.empty()) continue;
      const auto& s = c.windows.at(w.label);
      for (auto metric : kAllMetrics) {
        const auto m = static_cast<std::size_t>(metric);
        t.add({c.language, std::int64_t{c.paraphrase_id}, manifest.items[c.item_a].item_id,
               manifest.items[c.item_b].item_id, std::int64_t{c.token_count_delta}, w.label, to_string(metric),
               s.delta[m], s.mean_a[m], s.mean_b[m]});
      }
    }
  }
  return t;
}

Table exclusions_table(const ContrastResult& result, const BundleManifest& manifest) {
  Table t;
  t.schema = "contrast_exclusions";
  t.columns = {"kind", "language", "detail", "count"};
  for (const auto& [lang, count] : result.filter.excluded_per_language)
    t.add({std::string("length_control"), lang, std::string("token_count_delta above limit"),
           std::int64_t{count}});
  for (auto i : result.pairing.orphans) {
    const auto& item = manifest.items[i];
    t.add({std::string("orphan"), item.language, item.item_id, std::int64_t{1}});
  }
  for (const auto& w : result.warnings) t.add({std::string("warning"), std::string(), w, std::int64_t{0}});
  return t;
}

Table sweep_table(const SweepResult& result, const RunConfig& base) {
  Table t;
  t.schema = "sweep";
  t.meta = {{"axis", to_string(result.axis)}, {"base_config", hex64(config_fingerprint(base))}};
  t.columns = {"axis", "value", "language", "window", "metric", "mean", "p_perm", "q_fdr", "sign_agrees"};
  for (const auto& r : result.rows)
    t.add({to_string(result.axis), r.value, r.language, r.window, to_string(r.metric), r.mean, r.p_perm, r.q_fdr,
           r.sign_agrees});
  return t;
}

Table sweep_summary_table(const SweepResult& result) {
  Table t;
  t.schema = "sweep_summary";
  t.meta = {{"axis", to_string(result.axis)}};
  t.columns = {"axis", "value", "metric", "languages", "sign_agreements", "agreement_fraction", "significant"};
  for (const auto& s : result.summary)
    t.add({to_string(result.axis), s.value, to_string(s.metric), std::int64_t{s.languages},
           std::int64_t{s.sign_agreements},
           s.languages > 0 ? static_cast<double>(s.sign_agreements) / s.languages : kNaN,
           std::int64_t{s.significant}});
  return t;
}

Table ablation_table(const AblationRow& row, const RunConfig& config) {
  Table t;
  t.schema = "ablation_summary";
  t.meta = {{"config", hex64(config_fingerprint(config))}, {"metric", "fiedler"}};
  t.columns = {"ablation"};
  std::vector<Cell> cells{row.label};
  for (const auto& [label, value] : row.windows) {
    t.columns.push_back(label);
    cells.emplace_back(value);
  }
  t.columns.push_back("pairs");
  cells.emplace_back(std::int64_t{row.pairs});
  t.add(std::move(cells));
  return t;
}

std::string svg_bar_chart(const std::string& title, const std::string& y_label, const std::vector<Bar>& bars,
                          double q_threshold) {
  const double left = 70;
  const double top = 56;
  const double plot_h = 260;
  const double slot = 48;
  const double bottom = 110;
  const double width = left + 30 + slot * static_cast<double>(std::max<std::size_t>(bars.size(), 1));
  const double height = top + plot_h + bottom;

  double lo_v = 0.0;
  double hi_v = 0.0;
  for (const auto& b : bars)
    for (double v : {b.mean, b.lo, b.hi})
      if (std::isfinite(v)) {
        lo_v = std::min(lo_v, v);
        hi_v = std::max(hi_v, v);
      }
  if (hi_v - lo_v <= 0.0) {
    lo_v -= 1.0;
    hi_v += 1.0;
  }
  const double pad = 0.12 * (hi_v - lo_v);
  lo_v -= pad;
  hi_v += pad;
  auto y = [&](double v) { return top + (hi_v - v) / (hi_v - lo_v) * plot_h; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fx(width, 0) << "\" height=\"" << fx(height, 0)
    << "\" viewBox=\"0 0 " << fx(width, 0) << " " << fx(height, 0)
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<title>" << xml_escape(title) << "</title>\n";
  s << "<rect x=\"0\" y=\"0\" width=\"" << fx(width, 0) << "\" height=\"" << fx(height, 0) << "\" fill=\"white\"/>\n";
  s << "<text x=\"" << fx(left) << "\" y=\"22\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  s << "<text x=\"16\" y=\"" << fx(top + plot_h / 2) << "\" transform=\"rotate(-90 16 " << fx(top + plot_h / 2)
    << ")\" text-anchor=\"middle\">" << xml_escape(y_label) << "</text>\n";
  s << "<line x1=\"" << fx(left) << "\" y1=\"" << fx(top) << "\" x2=\"" << fx(left) << "\" y2=\"" << fx(top + plot_h)
    << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo_v + (hi_v - lo_v) * k / 4.0;
    s << "<text x=\"" << fx(left - 6) << "\" y=\"" << fx(y(v) + 4) << "\" text-anchor=\"end\">" << fx(v, 3)
      << "</text>\n";
  }
  s << "<line x1=\"" << fx(left) << "\" y1=\"" << fx(y(0.0)) << "\" x2=\"" << fx(width - 20) << "\" y2=\""
    << fx(y(0.0)) << "\" stroke=\"#888888\"/>\n";

  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& b = bars[i];
    const double cx = left + slot * (static_cast<double>(i) + 0.5);
    s << "<g class=\"bar\">\n";
    if (std::isfinite(b.mean)) {
      const double y0 = y(0.0);
      const double ym = y(b.mean);
      s << "<rect x=\"" << fx(cx - 14) << "\" y=\"" << fx(std::min(y0, ym)) << "\" width=\"28\" height=\""
        << fx(std::abs(y0 - ym)) << "\" fill=\"" << (b.mean < 0 ? "#cc6677" : "#4477aa") << "\"/>\n";
    }
    double label_y = y(std::max(0.0, std::isfinite(b.mean) ? b.mean : 0.0));
    if (std::isfinite(b.lo) && std::isfinite(b.hi)) {
      s << "<line class=\"whisker\" x1=\"" << fx(cx) << "\" y1=\"" << fx(y(b.lo)) << "\" x2=\"" << fx(cx)
        << "\" y2=\"" << fx(y(b.hi)) << "\" stroke=\"black\"/>\n";
      for (double v : {b.lo, b.hi})
        s << "<line x1=\"" << fx(cx - 6) << "\" y1=\"" << fx(y(v)) << "\" x2=\"" << fx(cx + 6) << "\" y2=\""
          << fx(y(v)) << "\" stroke=\"black\"/>\n";
      label_y = std::min(label_y, y(b.hi));
    }
    s << "<text class=\"gtrim\" x=\"" << fx(cx) << "\" y=\"" << fx(label_y - 5)
      << "\" text-anchor=\"middle\" font-size=\"9\">g=" << (std::isfinite(b.g_trim) ? fx(b.g_trim) : "NaN")
      << "</text>\n";
    if (b.q < q_threshold)
      s << "<text class=\"star\" x=\"" << fx(cx) << "\" y=\"" << fx(label_y - 16)
        << "\" text-anchor=\"middle\" font-size=\"14\">*</text>\n";
    s << "<text x=\"" << fx(cx) << "\" y=\"" << fx(top + plot_h + 14) << "\" transform=\"rotate(45 " << fx(cx) << " "
      << fx(top + plot_h + 14) << ")\">" << xml_escape(b.label) << "</text>\n";
    s << "</g>\n";
  }
  s << "<text x=\"" << fx(left) << "\" y=\"" << fx(height - 12)
    << "\" font-size=\"10\">Whiskers: 95% bootstrap CI. Labels: trimmed Hedges' g. * : BH-FDR q &lt; "
    << format_number(q_threshold) << " (strict).</text>\n";
  s << "</svg>\n";
  return s.str();
}

void write_contrast_outputs(const std::filesystem::path& dir, const ContrastResult& result,
                            const BundleManifest& manifest, const RunConfig& config) {
  write_table(dir, "contrast_languages", contrast_table(result, false, config));
  write_table(dir, "contrast_voice_types", contrast_table(result, true, config));
  write_table(dir, "contrast_curves", curves_table(result, manifest));
  write_table(dir, "contrast_pairs", pairs_table(result, manifest));
  write_table(dir, "contrast_exclusions", exclusions_table(result, manifest));
  render_report(dir, config.stats.fdr_q);
}

std::vector<std::filesystem::path> render_report(const std::filesystem::path& dir, double q_threshold) {
  const auto lang_path = dir / "contrast_languages.csv";
  if (!std::filesystem::exists(lang_path)) throw IoError("missing table " + lang_path.string());
  std::vector<std::filesystem::path> written;
  std::ostringstream summary;
  summary << "spectraprobe report\n";

  for (const char* kind : {"languages", "voice_types"}) {
    const auto path = dir / (std::string("contrast_") + kind + ".csv");
    if (!std::filesystem::exists(path)) {
      if (std::string(kind) == "languages") throw IoError("missing table " + path.string());
      continue;
    }
    const auto csv = read_csv(path);
    const auto c_group = csv.column("group");
    const auto c_window = csv.column("window");
    const auto c_metric = csv.column("metric");
    const auto c_family = csv.column("family");
    std::vector<std::pair<std::string, std::string>> panels;
    std::map<std::pair<std::string, std::string>, std::vector<Bar>> bars;
    std::map<std::pair<std::string, std::string>, std::vector<std::string>> significant;
    std::string family;
    for (const auto& row : csv.rows) {
      family = row[c_family];
      const auto key = std::make_pair(row[c_window], row[c_metric]);
      if (!bars.contains(key)) panels.push_back(key);
      Bar b;
      b.label = row[c_group];
      b.mean = parse_number(row[csv.column("mean")]);
      b.lo = parse_number(row[csv.column("ci_lo")]);
      b.hi = parse_number(row[csv.column("ci_hi")]);
      b.g_trim = parse_number(row[csv.column("g_trim")]);
      b.q = parse_number(row[csv.column("q_fdr")]);
      if (b.q < q_threshold) significant[key].push_back(b.label);
      bars[key].push_back(b);
    }
    summary << "\n[" << kind << "] family " << family << "\n";
    for (const auto& key : panels) {
      const auto name = std::string(kind) + "_" + key.first + "_" + key.second + ".svg";
      const auto title = family + ": " + key.second + " delta, window " + key.first + " (" + kind + ")";
      write_text(dir / name, svg_bar_chart(title, "mean delta " + key.second, bars[key], q_threshold));
      written.push_back(dir / name);
      summary << key.first << " " << key.second << ": " << bars[key].size() << " group(s), q < "
              << format_number(q_threshold) << ":";
      if (significant[key].empty()) summary << " none";
      for (const auto& g : significant[key]) summary << " " << g;
      summary << "\n";
    }
  }
  write_text(dir / "summary.txt", summary.str());
  written.push_back(dir / "summary.txt");
  return written;
}

}  // namespace spectraprobe
