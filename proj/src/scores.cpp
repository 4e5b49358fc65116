#include "spectraprobe/scores.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "spectraprobe/error.hpp"
#include "spectraprobe/stats.hpp"

namespace spectraprobe {

namespace {

std::string exact(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text, const std::string& key) {
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw DataError("calibration: bad value for '" + key + "': " + text);
  return v;
}

}  // namespace

double rci(const ZScoredDiagnostics& z) { return (z.z_entropy + z.z_fiedler) - (z.z_energy + z.z_hfer); }

std::vector<ZScoredDiagnostics> zscore_cohort(std::span<const LayerDiagnostics> rows) {
  if (rows.size() < 2) throw DataError("z-scoring needs at least two cohort rows");
  std::vector<double> e, h, f, s;
  for (const auto& r : rows) {
    e.push_back(r.energy);
    s.push_back(r.spectral_entropy);
    h.push_back(r.hfer);
    f.push_back(r.fiedler);
  }
  const auto ze = standardize(e);
  const auto zs = standardize(s);
  const auto zh = standardize(h);
  const auto zf = standardize(f);
  std::vector<ZScoredDiagnostics> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = {ze[i], zs[i], zh[i], zf[i]};
  return out;
}

std::vector<RciRow> rci_by_group(std::span<const std::string> groups, std::span<const LayerDiagnostics> rows) {
  if (groups.size() != rows.size()) throw DataError("rci: group labels and rows differ in length");
  const auto z = zscore_cohort(rows);
  std::vector<RciRow> out;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto it = slot.find(groups[i]);
    if (it == slot.end()) {
      it = slot.emplace(groups[i], out.size()).first;
      out.push_back({groups[i], 0, {}, 0.0});
    }
    auto& r = out[it->second];
    ++r.n;
    r.z.z_energy += z[i].z_energy;
    r.z.z_entropy += z[i].z_entropy;
    r.z.z_hfer += z[i].z_hfer;
    r.z.z_fiedler += z[i].z_fiedler;
  }
  for (auto& r : out) {
    const double n = r.n;
    r.z = {r.z.z_energy / n, r.z.z_entropy / n, r.z.z_hfer / n, r.z.z_fiedler / n};
    r.rci = rci(r.z);
  }
  return out;
}

ThresholdFit tune_threshold(std::span<const double> z, const std::vector<bool>& positive) {
  if (z.size() != positive.size()) throw DataError("threshold tuning: values and labels differ in length");
  const auto pos = std::count(positive.begin(), positive.end(), true);
  const auto neg = static_cast<std::ptrdiff_t>(positive.size()) - pos;
  if (pos == 0 || neg == 0) throw DataError("threshold tuning needs both classes");

  std::vector<double> grid(z.begin(), z.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  ThresholdFit best{grid.front(), -1.0};
  for (double tau : grid) {
    std::ptrdiff_t tp = 0;
    std::ptrdiff_t tn = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const bool flag = z[i] > tau;
      if (flag && positive[i]) ++tp;
      if (!flag && !positive[i]) ++tn;
    }
    const double ba = 0.5 * (static_cast<double>(tp) / static_cast<double>(pos) +
                             static_cast<double>(tn) / static_cast<double>(neg));
    if (ba >= best.balanced_accuracy) best = {tau, ba};  // ascending grid: ties keep the larger tau
  }
  return best;
}

ShdCalibration shd_calibrate(std::span<const double> reference, std::optional<double> tau) {
  if (reference.size() < 2) throw DataError("SHD calibration needs at least two reference values");
  for (double v : reference)
    if (!std::isfinite(v)) throw DataError("SHD calibration: non-finite reference value");
  ShdCalibration c;
  c.mu_fid = mean(reference);
  c.sigma_fid = sample_sd(reference);
  if (!(c.sigma_fid > 0.0)) throw DataError("zero dispersion in SHD reference values");
  c.tau_d = tau.value_or(0.0);
  std::string key;
  for (double v : reference) key += exact(v) + ",";
  c.fingerprint = fnv1a(key);
  return c;
}

ShdCalibration shd_calibrate(std::span<const double> reference, std::span<const double> tuning_values,
                             const std::vector<bool>& tuning_labels) {
  auto c = shd_calibrate(reference);
  std::vector<double> z;
  for (double v : tuning_values) z.push_back(shd_z(v, c));
  const auto fit = tune_threshold(z, tuning_labels);
  c.tau_d = fit.tau;
  c.balanced_accuracy = fit.balanced_accuracy;
  return c;
}

double shd_z(double f_last, const ShdCalibration& calib) {
  if (!(calib.sigma_fid > 0.0)) throw DataError("invalid SHD calibration: sigma_fid must be positive");
  return (f_last - calib.mu_fid) / calib.sigma_fid;
}

int shd_detect(double f_last, const ShdCalibration& calib) { return shd_z(f_last, calib) > calib.tau_d ? 1 : 0; }

void write_calibration(const std::filesystem::path& path, const ShdCalibration& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write calibration file " + path.string());
  out << "# spectraprobe shd calibration v1\n";
  out << "mu_fid=" << exact(c.mu_fid) << "\n";
  out << "sigma_fid=" << exact(c.sigma_fid) << "\n";
  out << "tau_d=" << exact(c.tau_d) << "\n";
  out << "fingerprint=" << c.fingerprint << "\n";
  if (c.config_fingerprint) out << "config_fingerprint=" << *c.config_fingerprint << "\n";
  if (c.balanced_accuracy) out << "balanced_accuracy=" << exact(*c.balanced_accuracy) << "\n";
  if (!out) throw IoError("failed writing calibration file " + path.string());
}

ShdCalibration read_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read calibration file " + path.string());
  ShdCalibration c;
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("calibration: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* key : {"mu_fid", "sigma_fid", "tau_d"})
    if (!kv.contains(key)) throw DataError(std::string("calibration: missing '") + key + "'");
  c.mu_fid = parse_double(kv["mu_fid"], "mu_fid");
  c.sigma_fid = parse_double(kv["sigma_fid"], "sigma_fid");
  c.tau_d = parse_double(kv["tau_d"], "tau_d");
  if (kv.contains("fingerprint")) c.fingerprint = std::stoull(kv["fingerprint"]);
  if (kv.contains("config_fingerprint")) c.config_fingerprint = std::stoull(kv["config_fingerprint"]);
  if (kv.contains("balanced_accuracy")) c.balanced_accuracy = parse_double(kv["balanced_accuracy"], "balanced_accuracy");
  if (!(c.sigma_fid > 0.0)) throw DataError("calibration: sigma_fid must be positive");
  return c;
}

}  // namespace spectraprobe
