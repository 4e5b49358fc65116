#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "spectraprobe/pipeline.hpp"

namespace spectraprobe {

/// Ordered key/value settings. Keys use the long flag names with '_' for
/// '-' (laplacian, agg, exclude_special, theta, hfer_c, hfer_k, window, boot,
/// boot_kind, perm, fdr_q, winsor, trim, seed, max_token_delta, out,
/// condition_a, condition_b, chars, threads). `window` may repeat.
using Settings = std::vector<std::pair<std::string, std::string>>;

/// Reads a plain "key = value" file ('#' comments). Throws IoError when
/// unreadable, UsageError on syntax errors or unknown keys.
Settings read_config_file(const std::filesystem::path& path);

/// Applies one setting. Throws UsageError on unknown keys or bad values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Defaults, then `file`, then `flags`. A key given in `flags` replaces every
/// file value for that key; a flag-level HFER cutoff of either mode replaces
/// the file's cutoff of the other mode.
RunConfig build_config(const Settings& file, const Settings& flags);

const std::vector<std::string>& known_settings();

}  // namespace spectraprobe
