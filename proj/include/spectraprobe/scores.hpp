#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spectraprobe/spectral.hpp"

namespace spectraprobe {

struct ZScoredDiagnostics {
  double z_energy = 0.0;
  double z_entropy = 0.0;
  double z_hfer = 0.0;
  double z_fiedler = 0.0;
};

/// Reconfiguration Change Index: (z_entropy + z_fiedler) - (z_energy + z_hfer).
double rci(const ZScoredDiagnostics& z);

/// Standardizes each diagnostic column over the whole cohort (n-1 SD).
/// Throws DataError when a column is constant.
std::vector<ZScoredDiagnostics> zscore_cohort(std::span<const LayerDiagnostics> rows);

struct RciRow {
  std::string group;
  int n = 0;
  ZScoredDiagnostics z;  // mean of the group's cohort z-rows
  double rci = 0.0;
};

/// Standardizes jointly over all rows, then averages z per group (groups in
/// order of first appearance).
std::vector<RciRow> rci_by_group(std::span<const std::string> groups, std::span<const LayerDiagnostics> rows);

struct ShdCalibration {
  double mu_fid = 0.0;
  double sigma_fid = 1.0;
  double tau_d = 0.0;
  std::uint64_t fingerprint = 0;                  // hash of the reference cohort
  std::optional<std::uint64_t> config_fingerprint;  // diagnostic settings used to fit
  std::optional<double> balanced_accuracy;  // set when tau_d was tuned
};

struct ThresholdFit {
  double tau = 0.0;
  double balanced_accuracy = 0.0;
};

/// Threshold over the observed z-values maximizing balanced accuracy of
/// 1[z > tau] against `positive`; ties go to the larger threshold.
ThresholdFit tune_threshold(std::span<const double> z, const std::vector<bool>& positive);

/// Mean and n-1 SD of reference final-layer Fiedler values. tau_d is taken
/// from `tau` when given, else 0.
ShdCalibration shd_calibrate(std::span<const double> reference, std::optional<double> tau = std::nullopt);

/// Calibrates on `reference`, then tunes tau_d on a labeled set.
ShdCalibration shd_calibrate(std::span<const double> reference, std::span<const double> tuning_values,
                             const std::vector<bool>& tuning_labels);

double shd_z(double f_last, const ShdCalibration& calib);

/// 1 = flagged (z strictly above tau_d).
int shd_detect(double f_last, const ShdCalibration& calib);

void write_calibration(const std::filesystem::path& path, const ShdCalibration& calib);
ShdCalibration read_calibration(const std::filesystem::path& path);

}  // namespace spectraprobe
