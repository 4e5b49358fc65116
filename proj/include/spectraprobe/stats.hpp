#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spectraprobe/rng.hpp"

namespace spectraprobe {

enum class BootstrapKind { percentile, bca };

std::string to_string(BootstrapKind kind);
BootstrapKind bootstrap_kind_from_string(const std::string& name);

struct StatsConfig {
  int bootstrap_resamples = 2000;
  BootstrapKind bootstrap_kind = BootstrapKind::percentile;
  int permutation_shuffles = 10000;
  double fdr_q = 0.05;
  double winsor_fraction = 0.01;
  double trim_fraction = 0.20;
  double confidence = 0.95;
  std::uint64_t seed = 0;

  /// Throws UsageError on out-of-range fields.
  void validate() const;
};

// Basic moments. sample_sd uses the n-1 denominator.
double mean(std::span<const double> x);
double sample_sd(std::span<const double> x);

/// Type-7 (linear interpolation) quantile of already sorted data.
double quantile_sorted(std::span<const double> sorted, double p);
double quantile(std::vector<double> x, double p);

/// Average ranks (1-based), ties share the mean rank.
std::vector<double> average_ranks(std::span<const double> x);

/// (x - mean) / sd with the n-1 SD. Throws DataError on zero dispersion.
std::vector<double> standardize(std::span<const double> x);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool degenerate = false;
};

/// Means of `resamples` bootstrap resamples drawn with replacement.
std::vector<double> bootstrap_means(std::span<const double> values, int resamples, Philox4x32& rng);

/// Percentile interval at `level` from a set of resample statistics.
Interval percentile_interval(std::vector<double> stats, double level);

/// Bootstrap CI of the mean. The stream is derived from (config.seed, group).
Interval bootstrap_ci(std::span<const double> values, const StatsConfig& config, std::uint64_t group = 0);

enum class PermutationMethod { automatic, exact, monte_carlo };

/// Two-sided sign-flip test of the paired deltas, statistic |mean|.
/// automatic enumerates all 2^n patterns when 2^n <= shuffles (p = ties / 2^n),
/// otherwise p = (1 + #{|mean*| >= |mean|}) / (1 + shuffles).
double paired_permutation_test(std::span<const double> deltas, int shuffles, std::uint64_t seed,
                               PermutationMethod method = PermutationMethod::automatic,
                               std::uint64_t group = 0);

/// Same randomization over language-level contrasts.
double signflip_group_test(std::span<const double> contrasts, int shuffles, std::uint64_t seed,
                           std::uint64_t group = 0);

struct FdrResult {
  std::vector<bool> reject;
  std::vector<double> q_values;
};

/// Benjamini-Hochberg step-up. Output is in input order.
FdrResult bh_fdr(std::span<const double> p_values, double q);

/// Winsorize at the (w, 1-w) quantiles, take the t-trimmed mean of the
/// winsorized sample, divide by its SD (n-1), multiply by
/// J = 1 - 3 / (4(n-1) - 1). Throws DataError("degenerate dispersion ...").
double trimmed_hedges_g(std::span<const double> deltas, double winsor_fraction, double trim_fraction);

/// 200 (b - a) / max(b + a, eps).
double delta_sym(double mean_b, double mean_a, double epsilon_floor);

/// 5th percentile of the (mean_b + mean_a) sums, at least 1e-6; 1e-6 when
/// fewer than three sums are available.
double epsilon_floor(std::span<const double> sums);

double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

struct Correlation {
  double pearson = 0.0;
  double spearman = 0.0;
  Interval pearson_ci;
  int n = 0;
  int skipped_resamples = 0;
};

/// Pearson and Spearman plus a paired-bootstrap CI for Pearson r.
Correlation correlations(std::span<const double> x, std::span<const double> y, const StatsConfig& config);

struct StatsSummary {
  std::string group;
  int n = 0;
  double mean = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double p_perm = 1.0;
  double q_fdr = 1.0;
  bool reject = false;
  double g_trim = 0.0;
  double delta_sym_pct = 0.0;
  double epsilon = 0.0;
  std::vector<std::string> notes;  // degeneracies; g_trim / CI are NaN when listed
};

struct GroupSample {
  std::string group;
  std::vector<double> values;  // paraphrase-level (or language-level) endpoints
  double mean_a = 0.0;         // condition means, for delta_sym
  double mean_b = 0.0;
};

enum class TestKind { paired, signflip };

/// Full per-group pipeline: bootstrap CI, permutation p, effect size,
/// delta_sym with a shared epsilon, then BH across the batch. Each group's
/// random stream is keyed by a hash of its name, so results do not depend
/// on group order.
std::vector<StatsSummary> summarize_groups(const std::vector<GroupSample>& groups, const StatsConfig& config,
                                           TestKind kind = TestKind::paired);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view text, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace spectraprobe
