#include "spectraprobe/tokstress.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "spectraprobe/error.hpp"
#include "spectraprobe/stats.hpp"

namespace spectraprobe {

std::string to_string(CharCount mode) {
  switch (mode) {
    case CharCount::scalar_values: return "scalar_values";
    case CharCount::bytes: return "bytes";
    case CharCount::manifest: return "manifest";
  }
  return "unknown";
}

CharCount char_count_from_string(const std::string& name) {
  if (name == "scalar_values" || name == "scalars" || name == "chars") return CharCount::scalar_values;
  if (name == "bytes") return CharCount::bytes;
  if (name == "manifest" || name == "char_len") return CharCount::manifest;
  throw UsageError("unknown character count mode '" + name + "'");
}

std::size_t count_scalar_values(std::string_view s) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < s.size(); ++count) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    if (c < 0x80) len = 1;
    else if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    else throw DataError("malformed UTF-8 at byte " + std::to_string(i));
    if (i + len > s.size()) throw DataError("truncated UTF-8 sequence at byte " + std::to_string(i));
    std::uint32_t cp = len == 1 ? c : (c & (0xFF >> (len + 1)));
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) throw DataError("malformed UTF-8 at byte " + std::to_string(i + k));
      cp = (cp << 6) | (cc & 0x3F);
    }
    static constexpr std::uint32_t kMinForLength[] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMinForLength[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))
      throw DataError("invalid UTF-8 scalar value at byte " + std::to_string(i));
    i += len;
  }
  return count;
}

TokenizerMetrics tokenizer_metrics(const ItemRecord& item, const TokstressOptions& options) {
  TokenizerMetrics m;
  std::map<std::string, int> freq;
  for (const auto& t : item.tokens) {
    if (options.exclude_special && t.special) {
      ++m.specials_excluded;
      continue;
    }
    ++freq[t.piece];
    ++m.token_count;
  }
  if (m.token_count == 0) throw DataError("item '" + item.item_id + "': empty token list");

  if (options.char_count == CharCount::manifest || item.text.empty())
    m.char_count = item.char_len;
  else if (options.char_count == CharCount::bytes)
    m.char_count = static_cast<std::int64_t>(item.text.size());
  else
    m.char_count = static_cast<std::int64_t>(count_scalar_values(item.text));
  if (m.char_count <= 0) throw DataError("item '" + item.item_id + "': character count not positive");

  const auto n = static_cast<double>(m.token_count);
  m.phi = n / static_cast<double>(m.char_count);
  for (const auto& [piece, count] : freq) {
    const double p = count / n;
    m.h_frag -= p * std::log(p);
  }
  m.h_frag = std::max(0.0, m.h_frag);
  m.h_frag_norm = m.h_frag / n;
  return m;
}

std::vector<StressRow> stress_join(const std::vector<ItemStress>& items,
                                   const std::vector<LanguageEndpoint>& endpoints) {
  struct Acc {
    int n = 0;
    double phi = 0.0;
    double h = 0.0;
  };
  std::map<std::string, Acc> acc;
  for (const auto& it : items) {
    auto& a = acc[it.language];
    ++a.n;
    a.phi += it.metrics.phi;
    a.h += it.metrics.h_frag_norm;
  }

  std::string unmatched;
  std::map<std::string, bool> seen;
  for (const auto& e : endpoints) {
    if (seen[e.language]) throw DataError("language '" + e.language + "' listed twice in the endpoint table");
    seen[e.language] = true;
    if (!acc.contains(e.language)) unmatched += (unmatched.empty() ? "" : ", ") + e.language + " (no items)";
  }
  for (const auto& [lang, a] : acc)
    if (!seen.contains(lang)) unmatched += (unmatched.empty() ? "" : ", ") + lang + " (no endpoint)";
  if (!unmatched.empty()) throw DataError("stress join: unmatched languages: " + unmatched);

  std::vector<StressRow> rows;
  for (const auto& e : endpoints) {
    const auto& a = acc.at(e.language);
    StressRow r;
    r.language = e.language;
    r.n_items = a.n;
    r.mean_phi = a.phi / a.n;
    r.mean_h_frag_norm = a.h / a.n;
    r.endpoint = e.endpoint;
    r.token_count_delta = e.token_count_delta;
    rows.push_back(r);
  }
  return rows;
}

void standardize_covariates(std::vector<StressRow>& rows) {
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> phi;
  std::vector<double> h;
  for (const auto& r : rows) {
    phi.push_back(r.mean_phi);
    h.push_back(r.mean_h_frag_norm);
  }
  auto fill = [&](const std::vector<double>& x, double StressRow::*field) {
    std::vector<double> z(x.size(), kNaN);
    try {
      if (x.size() >= 2) z = standardize(x);
    } catch (const DataError&) {
    }
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].*field = z[i];
  };
  fill(phi, &StressRow::z_phi);
  fill(h, &StressRow::z_h_frag_norm);
}

}  // namespace spectraprobe
