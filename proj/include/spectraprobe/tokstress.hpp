#pragma once

#include <string>
#include <vector>

#include "spectraprobe/bundle_io.hpp"

namespace spectraprobe {

/// How |s| is measured for phi.
enum class CharCount {
  scalar_values,  // Unicode scalar values of the raw text, spaces included
  bytes,          // UTF-8 bytes of the raw text
  manifest,       // the manifest's char_len field
};

std::string to_string(CharCount mode);
CharCount char_count_from_string(const std::string& name);

/// Number of Unicode scalar values in UTF-8 text. Throws DataError on
/// malformed UTF-8.
std::size_t count_scalar_values(std::string_view utf8);

struct TokenizerMetrics {
  double phi = 0.0;          // tokens per character
  double h_frag = 0.0;       // natural-log entropy of the piece distribution
  double h_frag_norm = 0.0;  // h_frag / token_count
  int token_count = 0;
  std::int64_t char_count = 0;
  int specials_excluded = 0;
};

struct TokstressOptions {
  CharCount char_count = CharCount::scalar_values;
  bool exclude_special = true;
};

/// Per-sentence covariates. Falls back to char_len when the item carries
/// no text.
TokenizerMetrics tokenizer_metrics(const ItemRecord& item, const TokstressOptions& options = {});

struct ItemStress {
  std::string language;
  TokenizerMetrics metrics;
};

struct LanguageEndpoint {
  std::string language;
  double endpoint = 0.0;  // |mean windowed delta|
  double token_count_delta = 0.0;
};

struct StressRow {
  std::string language;
  int n_items = 0;
  double mean_phi = 0.0;
  double mean_h_frag_norm = 0.0;
  double endpoint = 0.0;
  double token_count_delta = 0.0;
  double z_phi = 0.0;  // within-family standardized covariates
  double z_h_frag_norm = 0.0;
};

/// One row per language of `endpoints`, in that order. Languages present
/// on one side only raise DataError naming every unmatched language.
std::vector<StressRow> stress_join(const std::vector<ItemStress>& items,
                                   const std::vector<LanguageEndpoint>& endpoints);

/// Fills z_phi / z_h_frag_norm (n-1 SD). Needs at least two rows with
/// nonzero spread; otherwise the z columns are left NaN.
void standardize_covariates(std::vector<StressRow>& rows);

}  // namespace spectraprobe
