#include "spectraprobe/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "spectraprobe/error.hpp"

namespace spectraprobe {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Substreams of a group's generator.
constexpr std::uint32_t kBootstrapStream = 0;
constexpr std::uint32_t kPermutationStream = 1;

void require_finite(std::span<const double> x, const char* what) {
  for (double v : x)
    if (!std::isfinite(v)) throw DataError(std::string(what) + ": non-finite value");
}

// Tolerance for "ties" in |sum|, relative to the data scale.
double tie_tolerance(std::span<const double> d) {
  double scale = 0.0;
  for (double v : d) scale += std::abs(v);
  return 1e-12 * scale;
}

double exact_signflip(std::span<const double> d) {
  const std::size_t n = d.size();
  const double obs = std::abs(std::accumulate(d.begin(), d.end(), 0.0));
  const double tol = tie_tolerance(d);
  const std::uint64_t patterns = 1ULL << n;
  std::uint64_t count = 0;
  for (std::uint64_t mask = 0; mask < patterns; ++mask) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += ((mask >> i) & 1U) ? -d[i] : d[i];
    if (std::abs(s) >= obs - tol) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(patterns);
}

double monte_carlo_signflip(std::span<const double> d, int shuffles, Philox4x32& rng) {
  const double obs = std::abs(std::accumulate(d.begin(), d.end(), 0.0));
  const double tol = tie_tolerance(d);
  std::int64_t count = 0;
  for (int s = 0; s < shuffles; ++s) {
    double sum = 0.0;
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (i % 64 == 0) bits = rng();
      sum += (bits & 1U) ? -d[i] : d[i];
      bits >>= 1;
    }
    if (std::abs(sum) >= obs - tol) ++count;
  }
  return static_cast<double>(1 + count) / static_cast<double>(1 + shuffles);
}

double normal_cdf(double z) { return boost::math::cdf(boost::math::normal(), z); }
double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }

Interval bca_interval(std::span<const double> values, std::vector<double> stats, double level) {
  const double theta = mean(values);
  const auto b = static_cast<double>(stats.size());
  const double below = static_cast<double>(std::count_if(stats.begin(), stats.end(), [&](double s) { return s < theta; }));
  const double frac = std::clamp(below / b, 0.5 / b, 1.0 - 0.5 / b);
  const double z0 = normal_quantile(frac);

  // Jackknife acceleration.
  const std::size_t n = values.size();
  const double total = std::accumulate(values.begin(), values.end(), 0.0);
  std::vector<double> jack(n);
  for (std::size_t i = 0; i < n; ++i) jack[i] = (total - values[i]) / static_cast<double>(n - 1);
  const double jbar = mean(jack);
  double num = 0.0;
  double den = 0.0;
  for (double j : jack) {
    const double d = jbar - j;
    num += d * d * d;
    den += d * d;
  }
  const double accel = den > 0.0 ? num / (6.0 * std::pow(den, 1.5)) : 0.0;

  auto adjusted = [&](double alpha) {
    const double z = normal_quantile(alpha);
    return normal_cdf(z0 + (z0 + z) / (1.0 - accel * (z0 + z)));
  };
  const double tail = 0.5 * (1.0 - level);
  std::sort(stats.begin(), stats.end());
  Interval out;
  out.lo = quantile_sorted(stats, adjusted(tail));
  out.hi = quantile_sorted(stats, adjusted(1.0 - tail));
  return out;
}

}  // namespace

std::string to_string(BootstrapKind kind) { return kind == BootstrapKind::bca ? "bca" : "percentile"; }

BootstrapKind bootstrap_kind_from_string(const std::string& name) {
  if (name == "percentile") return BootstrapKind::percentile;
  if (name == "bca" || name == "BCa") return BootstrapKind::bca;
  throw UsageError("unknown bootstrap kind '" + name + "'");
}

void StatsConfig::validate() const {
  if (bootstrap_resamples < 1) throw UsageError("bootstrap resamples must be >= 1");
  if (permutation_shuffles < 1) throw UsageError("permutation shuffles must be >= 1");
  if (!(fdr_q > 0.0 && fdr_q <= 1.0)) throw UsageError("fdr q must lie in (0, 1]");
  if (!(winsor_fraction >= 0.0 && winsor_fraction < 0.5)) throw UsageError("winsor fraction must lie in [0, 0.5)");
  if (!(trim_fraction >= 0.0 && trim_fraction < 0.5)) throw UsageError("trim fraction must lie in [0, 0.5)");
  if (!(confidence > 0.0 && confidence < 1.0)) throw UsageError("confidence level must lie in (0, 1)");
}

double mean(std::span<const double> x) {
  if (x.empty()) throw DataError("mean of an empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_sd(std::span<const double> x) {
  if (x.size() < 2) throw DataError("standard deviation needs at least two values");
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw DataError("quantile of an empty sample");
  p = std::clamp(p, 0.0, 1.0);
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto j = static_cast<std::size_t>(std::floor(h));
  if (j + 1 >= sorted.size()) return sorted.back();
  return sorted[j] + (h - static_cast<double>(j)) * (sorted[j + 1] - sorted[j]);
}

double quantile(std::vector<double> x, double p) {
  std::sort(x.begin(), x.end());
  return quantile_sorted(x, p);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::vector<double> standardize(std::span<const double> x) {
  const double m = mean(x);
  const double sd = sample_sd(x);
  if (!(sd > 0.0)) throw DataError("zero dispersion: cannot standardize a constant column");
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - m) / sd;
  return z;
}

std::vector<double> bootstrap_means(std::span<const double> values, int resamples, Philox4x32& rng) {
  const auto n = values.size();
  std::vector<double> out(static_cast<std::size_t>(resamples));
  for (auto& m : out) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += values[rng.below(n)];
    m = s / static_cast<double>(n);
  }
  return out;
}

Interval percentile_interval(std::vector<double> stats, double level) {
  std::sort(stats.begin(), stats.end());
  const double tail = 0.5 * (1.0 - level);
  return {quantile_sorted(stats, tail), quantile_sorted(stats, 1.0 - tail), false};
}

Interval bootstrap_ci(std::span<const double> values, const StatsConfig& config, std::uint64_t group) {
  if (values.empty()) throw DataError("bootstrap of an empty sample");
  require_finite(values, "bootstrap");
  if (values.size() == 1) return {values[0], values[0], true};
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values[0]; }))
    return {values[0], values[0], false};
  auto rng = Philox4x32::for_group(config.seed, group, kBootstrapStream);
  auto stats = bootstrap_means(values, config.bootstrap_resamples, rng);
  if (config.bootstrap_kind == BootstrapKind::bca) return bca_interval(values, std::move(stats), config.confidence);
  return percentile_interval(std::move(stats), config.confidence);
}

double paired_permutation_test(std::span<const double> deltas, int shuffles, std::uint64_t seed,
                               PermutationMethod method, std::uint64_t group) {
  if (deltas.empty()) throw DataError("permutation test of an empty sample");
  if (shuffles < 1) throw UsageError("permutation shuffles must be >= 1");
  require_finite(deltas, "permutation test");
  const std::size_t n = deltas.size();
  const bool enumerable = n < 63 && (1ULL << n) <= static_cast<std::uint64_t>(shuffles);
  if (method == PermutationMethod::exact) {
    if (n > 30) throw UsageError("exact enumeration limited to n <= 30");
    return exact_signflip(deltas);
  }
  if (method == PermutationMethod::automatic && enumerable) return exact_signflip(deltas);
  auto rng = Philox4x32::for_group(seed, group, kPermutationStream);
  return monte_carlo_signflip(deltas, shuffles, rng);
}

double signflip_group_test(std::span<const double> contrasts, int shuffles, std::uint64_t seed,
                           std::uint64_t group) {
  return paired_permutation_test(contrasts, shuffles, seed, PermutationMethod::automatic, group);
}

FdrResult bh_fdr(std::span<const double> p, double q) {
  const std::size_t m = p.size();
  FdrResult out{std::vector<bool>(m, false), std::vector<double>(m, 1.0)};
  if (m == 0) return out;
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("p-value outside [0, 1]");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });

  std::size_t last = 0;  // number of rejections
  for (std::size_t i = 0; i < m; ++i)
    if (p[order[i]] <= static_cast<double>(i + 1) * q / static_cast<double>(m)) last = i + 1;
  for (std::size_t i = 0; i < last; ++i) out.reject[order[i]] = true;

  double running = 1.0;
  for (std::size_t i = m; i-- > 0;) {
    const double adj = p[order[i]] * (static_cast<double>(m) / static_cast<double>(i + 1));  // ratio >= 1 keeps q >= p
    running = std::min(running, adj);
    out.q_values[order[i]] = std::min(1.0, running);
  }
  return out;
}

double trimmed_hedges_g(std::span<const double> deltas, double winsor_fraction, double trim_fraction) {
  const std::size_t n = deltas.size();
  if (n < 3) throw DataError("trimmed Hedges' g needs at least three values");
  require_finite(deltas, "trimmed Hedges' g");
  std::vector<double> sorted(deltas.begin(), deltas.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = quantile_sorted(sorted, winsor_fraction);
  const double hi = quantile_sorted(sorted, 1.0 - winsor_fraction);
  for (double& v : sorted) v = std::clamp(v, lo, hi);

  const double sd = sample_sd(sorted);
  if (!(sd > 0.0)) throw DataError("degenerate dispersion: winsorized deltas have zero spread");

  const auto cut = static_cast<std::size_t>(std::floor(trim_fraction * static_cast<double>(n)));
  const std::span<const double> kept(sorted.data() + cut, n - 2 * cut);
  const double j = 1.0 - 3.0 / (4.0 * static_cast<double>(n - 1) - 1.0);
  return j * mean(kept) / sd;
}

double delta_sym(double mean_b, double mean_a, double eps) {
  if (!(eps > 0.0)) throw UsageError("delta_sym epsilon floor must be positive");
  return 200.0 * (mean_b - mean_a) / std::max(mean_b + mean_a, eps);
}

double epsilon_floor(std::span<const double> sums) {
  constexpr double kAbsolute = 1e-6;
  if (sums.size() < 3) return kAbsolute;
  return std::max(quantile(std::vector<double>(sums.begin(), sums.end()), 0.05), kAbsolute);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("correlation inputs differ in length");
  if (x.size() < 2) throw DataError("correlation needs at least two points");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw DataError("zero variance in correlation input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

Correlation correlations(std::span<const double> x, std::span<const double> y, const StatsConfig& config) {
  if (x.size() != y.size()) throw DataError("correlation inputs differ in length");
  if (x.size() < 3) throw DataError("correlations need at least three points");
  require_finite(x, "correlation");
  require_finite(y, "correlation");
  Correlation out;
  out.n = static_cast<int>(x.size());
  out.pearson = pearson(x, y);
  out.spearman = spearman(x, y);

  auto rng = Philox4x32::for_group(config.seed, fnv1a("correlation"), kBootstrapStream);
  const auto n = x.size();
  std::vector<double> rs;
  std::vector<double> bx(n);
  std::vector<double> by(n);
  rs.reserve(static_cast<std::size_t>(config.bootstrap_resamples));
  for (int b = 0; b < config.bootstrap_resamples; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = rng.below(n);
      bx[i] = x[k];
      by[i] = y[k];
    }
    try {
      rs.push_back(pearson(bx, by));
    } catch (const DataError&) {
      ++out.skipped_resamples;
    }
  }
  if (rs.empty()) {
    out.pearson_ci = {kNaN, kNaN, true};
  } else {
    out.pearson_ci = percentile_interval(std::move(rs), config.confidence);
  }
  return out;
}

std::uint64_t fnv1a(std::string_view text, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<StatsSummary> summarize_groups(const std::vector<GroupSample>& groups, const StatsConfig& config,
                                           TestKind kind) {
  config.validate();
  std::vector<double> sums;
  for (const auto& g : groups) sums.push_back(g.mean_a + g.mean_b);
  const double eps = epsilon_floor(sums);

  std::vector<StatsSummary> out;
  std::vector<double> p;
  for (const auto& g : groups) {
    if (g.values.empty()) throw DataError("empty group '" + g.group + "'");
    StatsSummary s;
    s.group = g.group;
    s.n = static_cast<int>(g.values.size());
    s.mean = mean(g.values);
    s.epsilon = eps;
    const auto key = fnv1a(g.group);

    const auto ci = bootstrap_ci(g.values, config, key);
    s.ci_lo = ci.lo;
    s.ci_hi = ci.hi;
    if (ci.degenerate) s.notes.push_back("degenerate interval (n = 1)");

    s.p_perm = kind == TestKind::paired
                   ? paired_permutation_test(g.values, config.permutation_shuffles, config.seed,
                                             PermutationMethod::automatic, key)
                   : signflip_group_test(g.values, config.permutation_shuffles, config.seed, key);
    try {
      s.g_trim = trimmed_hedges_g(g.values, config.winsor_fraction, config.trim_fraction);
    } catch (const DataError& e) {
      s.g_trim = kNaN;
      s.notes.push_back(e.what());
    }
    s.delta_sym_pct = delta_sym(g.mean_b, g.mean_a, eps);
    p.push_back(s.p_perm);
    out.push_back(std::move(s));
  }
  const auto fdr = bh_fdr(p, config.fdr_q);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].q_fdr = fdr.q_values[i];
    out[i].reject = fdr.reject[i];
  }
  return out;
}

}  // namespace spectraprobe
