#pragma once

// Capture-bundle format: a directory holding manifest.json and one binary
// tensor file per (item, layer, kind) under tensors/<item>/.
//
// Tensor file layout (little-endian, no padding):
//   "SPCT" | u32 version | u32 dtype | u32 ndim | ndim x u64 dims | payload
// dtype 0 is 32-bit IEEE float; payload is row-major.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace spectraprobe {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kTensorFormatVersion = 1;
inline constexpr std::uint32_t kDtypeFloat32 = 0;
inline constexpr int kManifestVersion = 1;

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> data;

  std::uint64_t element_count() const;
  bool operator==(const Tensor&) const = default;
};

std::vector<std::byte> encode_tensor(const Tensor& tensor);
Tensor decode_tensor(std::span<const std::byte> bytes);
void write_tensor_file(const fs::path& path, const Tensor& tensor);
Tensor read_tensor_file(const fs::path& path);

enum class VoiceType { analytic, periphrastic, affixal, particle, non_concatenative, other };

std::string to_string(VoiceType type);
VoiceType voice_type_from_string(const std::string& name);

struct Token {
  std::string piece;
  std::int64_t id = 0;
  bool special = false;  // BOS/EOS and similar tokenizer constants

  bool operator==(const Token&) const = default;
};

struct ItemRecord {
  std::string item_id;
  std::string language;
  VoiceType voice_type = VoiceType::other;
  std::string condition;
  std::int64_t paraphrase_id = 0;
  std::string text;
  std::int64_t char_len = 0;
  std::vector<Token> tokens;
  std::optional<double> behavioral_nll;
  // Paths relative to the bundle root; entry i holds transformer block i+1.
  std::vector<std::string> attention_files;
  std::vector<std::string> hidden_files;
  std::optional<std::string> embedding_file;

  std::size_t token_count() const { return tokens.size(); }
  bool operator==(const ItemRecord&) const = default;
};

struct BundleManifest {
  std::string model_id;
  std::optional<std::string> family;
  std::optional<std::string> ablation_label;
  int num_layers = 0;
  int num_heads = 0;
  int hidden_size = 0;
  int layer_index_base = 1;
  std::vector<ItemRecord> items;

  /// Family label used for grouping; falls back to model_id.
  const std::string& family_name() const { return family ? *family : model_id; }

  /// Layer label as written in file names for block ordinal 1..num_layers.
  int layer_label(int ordinal) const { return layer_index_base + ordinal - 1; }

  std::optional<std::size_t> find_item(const std::string& item_id) const;

  bool operator==(const BundleManifest&) const = default;
};

nlohmann::json manifest_to_json(const BundleManifest& manifest);
BundleManifest manifest_from_json(const nlohmann::json& json);

/// Per-item tensors for write_bundle: one attention [H,N,N] and one hidden
/// [N,d] tensor per transformer block, plus an optional embedding output.
struct ItemTensors {
  std::vector<Tensor> attention;
  std::vector<Tensor> hidden;
  std::optional<Tensor> embedding;
};

using TensorMap = std::map<std::string, ItemTensors>;

/// Writes manifest.json and all tensor files. Every shape is checked against
/// the manifest before anything touches the filesystem. The file-path fields
/// of the manifest are filled in by the writer.
void write_bundle(const fs::path& dir, BundleManifest manifest, const TensorMap& tensors);

/// Read-side handle. Only the manifest is parsed eagerly; tensors are read
/// from disk on each access and checked against the manifest.
class Bundle {
 public:
  static Bundle open(const fs::path& dir);

  const BundleManifest& manifest() const { return manifest_; }
  const fs::path& root() const { return root_; }

  /// ordinal is the transformer block number, 1..num_layers.
  Tensor attention(std::size_t item, int ordinal) const;
  Tensor hidden(std::size_t item, int ordinal) const;
  std::optional<Tensor> embedding(std::size_t item) const;

 private:
  Bundle(fs::path root, BundleManifest manifest)
      : root_(std::move(root)), manifest_(std::move(manifest)) {}

  fs::path root_;
  BundleManifest manifest_;
};

struct Violation {
  std::string item;          // item_id, or "*" for manifest-level rules
  std::optional<int> layer;  // block ordinal when the rule is per layer
  std::string rule;
  std::string detail;
};

std::string format_violation(const Violation& violation);

struct ValidationOptions {
  double row_sum_tolerance = 1e-4;
  double entry_upper_slack = 1e-6;
};

/// Checks every manifest and tensor invariant plus attention
/// row-stochasticity. Never throws on bad data; an unreadable manifest is
/// reported as a violation too.
std::vector<Violation> validate_bundle(const fs::path& dir, const ValidationOptions& options = {});

}  // namespace spectraprobe
