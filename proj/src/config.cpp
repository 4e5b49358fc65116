#include "spectraprobe/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>

#include <CLI11.hpp>

#include "spectraprobe/error.hpp"

namespace spectraprobe {

namespace {

std::string normalize_key(std::string key) {
  std::replace(key.begin(), key.end(), '-', '_');
  return key;
}

template <class T>
T parse_as(const std::string& key, const std::string& value) {
  T v{};
  auto res = std::from_chars(value.data(), value.data() + value.size(), v);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size())
    throw UsageError("setting '" + key + "': cannot parse '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "on" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "off" || value == "no") return false;
  throw UsageError("setting '" + key + "': expected a boolean, got '" + value + "'");
}

}  // namespace

const std::vector<std::string>& known_settings() {
  static const std::vector<std::string> keys{
      "laplacian", "agg",   "exclude_special", "theta", "hfer_c", "hfer_k",          "window",
      "boot",      "boot_kind", "perm",        "fdr_q", "winsor", "trim",            "seed",
      "max_token_delta", "out", "condition_a", "condition_b", "chars", "threads"};
  return keys;
}

Settings read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw UsageError("config file " + path.string() + ": " + e.what());
  }
  Settings out;
  const auto& known = known_settings();
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    const auto key = normalize_key(item.fullname());
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw UsageError("config file " + path.string() + ": unknown setting '" + key + "'");
    if (item.inputs.empty()) throw UsageError("config file " + path.string() + ": setting '" + key + "' has no value");
    for (const auto& v : item.inputs) out.emplace_back(key, v);
  }
  return out;
}

void apply_setting(RunConfig& c, const std::string& raw_key, const std::string& value) {
  const auto key = normalize_key(raw_key);
  if (key == "laplacian") c.laplacian.kind = laplacian_kind_from_string(value);
  else if (key == "agg") c.aggregation.kind = aggregation_kind_from_string(value);
  else if (key == "exclude_special") c.aggregation.exclude_special = parse_bool(key, value);
  else if (key == "theta") c.laplacian.theta = parse_as<double>(key, value);
  else if (key == "hfer_c") c.hfer_c = parse_as<double>(key, value);
  else if (key == "hfer_k") c.hfer_k = parse_as<int>(key, value);
  else if (key == "window") c.windows.push_back(parse_window(value));
  else if (key == "boot") c.stats.bootstrap_resamples = parse_as<int>(key, value);
  else if (key == "boot_kind") c.stats.bootstrap_kind = bootstrap_kind_from_string(value);
  else if (key == "perm") c.stats.permutation_shuffles = parse_as<int>(key, value);
  else if (key == "fdr_q") c.stats.fdr_q = parse_as<double>(key, value);
  else if (key == "winsor") c.stats.winsor_fraction = parse_as<double>(key, value);
  else if (key == "trim") c.stats.trim_fraction = parse_as<double>(key, value);
  else if (key == "seed") c.stats.seed = parse_as<std::uint64_t>(key, value);
  else if (key == "max_token_delta") {
    c.max_token_delta = (value == "inf" || value == "none") ? kNoTokenLimit : parse_as<int>(key, value);
  } else if (key == "out") c.output_dir = value;
  else if (key == "condition_a") c.condition_a = value;
  else if (key == "condition_b") c.condition_b = value;
  else if (key == "chars") c.char_count = char_count_from_string(value);
  else if (key == "threads") c.threads = parse_as<int>(key, value);
  else throw UsageError("unknown setting '" + key + "'");
}

RunConfig build_config(const Settings& file, const Settings& flags) {
  std::set<std::string> overridden;
  for (const auto& [k, v] : flags) overridden.insert(normalize_key(k));
  if (overridden.contains("hfer_k") || overridden.contains("hfer_c")) {
    overridden.insert("hfer_k");
    overridden.insert("hfer_c");
  }
  RunConfig c;
  for (const auto& [k, v] : file)
    if (!overridden.contains(normalize_key(k))) apply_setting(c, k, v);
  for (const auto& [k, v] : flags) apply_setting(c, k, v);
  c.validate();
  return c;
}

}  // namespace spectraprobe
