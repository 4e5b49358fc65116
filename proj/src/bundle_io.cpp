#include "spectraprobe/bundle_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "spectraprobe/error.hpp"

namespace spectraprobe {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'P', 'C', 'T'};
constexpr std::size_t kFixedHeaderBytes = 4 + 4 + 4 + 4;

void put_u32(std::vector<std::byte>& out, std::uint32_t value) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((value >> (8 * i)) & 0xFFu));
}

void put_u64(std::vector<std::byte>& out, std::uint64_t value) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((value >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::span<const std::byte> bytes, std::size_t offset) {
  std::uint32_t value = 0;
  for (int i = 0; i < 4; ++i)
    value |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return value;
}

std::uint64_t get_u64(std::span<const std::byte> bytes, std::size_t offset) {
  std::uint64_t value = 0;
  for (int i = 0; i < 8; ++i)
    value |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
  return value;
}

std::uint64_t product(const std::vector<std::uint64_t>& dims) {
  std::uint64_t count = 1;
  for (auto d : dims) count *= d;
  return count;
}

std::string dims_string(const std::vector<std::uint64_t>& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

const std::array<std::pair<VoiceType, const char*>, 6> kVoiceNames{{
    {VoiceType::analytic, "analytic"},
    {VoiceType::periphrastic, "periphrastic"},
    {VoiceType::affixal, "affixal"},
    {VoiceType::particle, "particle"},
    {VoiceType::non_concatenative, "non-concatenative"},
    {VoiceType::other, "other"},
}};

std::string attention_path(const std::string& item_id, int label) {
  return "tensors/" + item_id + "/" + std::to_string(label) + ".attn.spct";
}

std::string hidden_path(const std::string& item_id, int label) {
  return "tensors/" + item_id + "/" + std::to_string(label) + ".hidden.spct";
}

// item_ids become directory names.
void check_item_id(const std::string& id) {
  if (id.empty() || id == "." || id == ".." ||
      id.find_first_of("/\\") != std::string::npos)
    throw DataError("item_id '" + id + "' is not usable as a directory name");
}

void check_shapes(const BundleManifest& manifest, const TensorMap& tensors) {
  std::set<std::string> seen;
  for (const auto& item : manifest.items) {
    check_item_id(item.item_id);
    if (!seen.insert(item.item_id).second)
      throw DataError("duplicate item_id '" + item.item_id + "'");
    auto it = tensors.find(item.item_id);
    if (it == tensors.end())
      throw DataError("no tensors supplied for item '" + item.item_id + "'");
    const auto& t = it->second;
    const auto n = static_cast<std::uint64_t>(item.tokens.size());
    const auto layers = static_cast<std::size_t>(manifest.num_layers);
    if (t.attention.size() != layers || t.hidden.size() != layers)
      throw DataError("item '" + item.item_id + "': expected " + std::to_string(layers) +
                      " attention and hidden tensors");
    const std::vector<std::uint64_t> attn_dims{static_cast<std::uint64_t>(manifest.num_heads), n, n};
    const std::vector<std::uint64_t> hid_dims{n, static_cast<std::uint64_t>(manifest.hidden_size)};
    for (std::size_t l = 0; l < layers; ++l) {
      if (t.attention[l].dims != attn_dims)
        throw DataError("item '" + item.item_id + "' layer " + std::to_string(l + 1) +
                        ": attention dims " + dims_string(t.attention[l].dims) + " != " +
                        dims_string(attn_dims));
      if (t.hidden[l].dims != hid_dims)
        throw DataError("item '" + item.item_id + "' layer " + std::to_string(l + 1) +
                        ": hidden dims " + dims_string(t.hidden[l].dims) + " != " +
                        dims_string(hid_dims));
    }
    if (t.embedding && t.embedding->dims != hid_dims)
      throw DataError("item '" + item.item_id + "': embedding dims " +
                      dims_string(t.embedding->dims) + " != " + dims_string(hid_dims));
    for (const auto* group : {&t.attention, &t.hidden})
      for (const auto& tensor : *group)
        if (tensor.data.size() != tensor.element_count())
          throw DataError("item '" + item.item_id + "': tensor payload does not match dims");
  }
}

}  // namespace

std::uint64_t Tensor::element_count() const { return product(dims); }

std::vector<std::byte> encode_tensor(const Tensor& tensor) {
  if (tensor.data.size() != tensor.element_count())
    throw DataError("tensor payload has " + std::to_string(tensor.data.size()) +
                    " values but dims " + dims_string(tensor.dims) + " require " +
                    std::to_string(tensor.element_count()));
  std::vector<std::byte> out;
  out.reserve(kFixedHeaderBytes + 8 * tensor.dims.size() + 4 * tensor.data.size());
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  put_u32(out, kTensorFormatVersion);
  put_u32(out, kDtypeFloat32);
  put_u32(out, static_cast<std::uint32_t>(tensor.dims.size()));
  for (auto d : tensor.dims) put_u64(out, d);
  for (float v : tensor.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_tensor(std::span<const std::byte> bytes) {
  if (bytes.size() < kFixedHeaderBytes) throw DataError("truncated tensor header");
  for (std::size_t i = 0; i < 4; ++i)
    if (static_cast<char>(bytes[i]) != kMagic[i]) throw DataError("bad magic (expected SPCT)");
  const auto version = get_u32(bytes, 4);
  if (version != kTensorFormatVersion)
    throw DataError("unsupported version " + std::to_string(version));
  const auto dtype = get_u32(bytes, 8);
  if (dtype != kDtypeFloat32) throw DataError("unsupported dtype " + std::to_string(dtype));
  const auto ndim = get_u32(bytes, 12);
  const std::size_t header = kFixedHeaderBytes + 8ull * ndim;
  if (bytes.size() < header) throw DataError("truncated tensor header");
  Tensor tensor;
  tensor.dims.reserve(ndim);
  for (std::uint32_t i = 0; i < ndim; ++i) tensor.dims.push_back(get_u64(bytes, kFixedHeaderBytes + 8 * i));
  const std::uint64_t count = tensor.element_count();
  if (bytes.size() - header != 4 * count)
    throw DataError("payload length mismatch: dims " + dims_string(tensor.dims) + " need " +
                    std::to_string(4 * count) + " bytes, found " +
                    std::to_string(bytes.size() - header));
  tensor.data.resize(count);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(tensor.data.data(), bytes.data() + header, 4 * count);
  } else {
    for (std::uint64_t i = 0; i < count; ++i)
      tensor.data[i] = std::bit_cast<float>(get_u32(bytes, header + 4 * i));
  }
  return tensor;
}

void write_tensor_file(const fs::path& path, const Tensor& tensor) {
  const auto bytes = encode_tensor(tensor);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Tensor read_tensor_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing file: " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(std::as_bytes(std::span(raw)));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string to_string(VoiceType type) {
  for (const auto& [value, name] : kVoiceNames)
    if (value == type) return name;
  return "other";
}

VoiceType voice_type_from_string(const std::string& name) {
  for (const auto& [value, label] : kVoiceNames)
    if (name == label) return value;
  if (name == "non_concatenative") return VoiceType::non_concatenative;
  throw DataError("unknown voice_type '" + name + "'");
}

std::optional<std::size_t> BundleManifest::find_item(const std::string& item_id) const {
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].item_id == item_id) return i;
  return std::nullopt;
}

nlohmann::json manifest_to_json(const BundleManifest& manifest) {
  using nlohmann::json;
  json root;
  root["format"] = "spectraprobe-bundle";
  root["version"] = kManifestVersion;
  root["model_id"] = manifest.model_id;
  if (manifest.family) root["family"] = *manifest.family;
  if (manifest.ablation_label) root["ablation_label"] = *manifest.ablation_label;
  root["num_layers"] = manifest.num_layers;
  root["num_heads"] = manifest.num_heads;
  root["hidden_size"] = manifest.hidden_size;
  root["layer_index_base"] = manifest.layer_index_base;
  json items = json::array();
  for (const auto& item : manifest.items) {
    json j;
    j["item_id"] = item.item_id;
    j["language"] = item.language;
    j["voice_type"] = to_string(item.voice_type);
    j["condition"] = item.condition;
    j["paraphrase_id"] = item.paraphrase_id;
    j["text"] = item.text;
    j["char_len"] = item.char_len;
    json tokens = json::array();
    for (const auto& t : item.tokens) {
      json tj{{"piece", t.piece}, {"id", t.id}};
      if (t.special) tj["special"] = true;
      tokens.push_back(std::move(tj));
    }
    j["tokens"] = std::move(tokens);
    j["behavioral_nll"] = item.behavioral_nll ? json(*item.behavioral_nll) : json(nullptr);
    j["attention_files"] = item.attention_files;
    j["hidden_files"] = item.hidden_files;
    if (item.embedding_file) j["embedding_file"] = *item.embedding_file;
    items.push_back(std::move(j));
  }
  root["items"] = std::move(items);
  return root;
}

BundleManifest manifest_from_json(const nlohmann::json& root) {
  try {
    if (root.contains("version") && root.at("version").get<int>() != kManifestVersion)
      throw DataError("unsupported manifest version " + root.at("version").dump());
    BundleManifest m;
    m.model_id = root.at("model_id").get<std::string>();
    if (root.contains("family") && !root["family"].is_null()) m.family = root["family"].get<std::string>();
    if (root.contains("ablation_label") && !root["ablation_label"].is_null())
      m.ablation_label = root["ablation_label"].get<std::string>();
    m.num_layers = root.at("num_layers").get<int>();
    m.num_heads = root.at("num_heads").get<int>();
    m.hidden_size = root.at("hidden_size").get<int>();
    m.layer_index_base = root.value("layer_index_base", 1);
    for (const auto& j : root.at("items")) {
      ItemRecord item;
      item.item_id = j.at("item_id").get<std::string>();
      item.language = j.at("language").get<std::string>();
      item.voice_type = voice_type_from_string(j.at("voice_type").get<std::string>());
      item.condition = j.at("condition").get<std::string>();
      item.paraphrase_id = j.at("paraphrase_id").get<std::int64_t>();
      item.text = j.value("text", std::string{});
      item.char_len = j.at("char_len").get<std::int64_t>();
      for (const auto& tj : j.at("tokens")) {
        Token t;
        if (tj.is_array()) {
          t.piece = tj.at(0).get<std::string>();
          t.id = tj.at(1).get<std::int64_t>();
        } else {
          t.piece = tj.at("piece").get<std::string>();
          t.id = tj.at("id").get<std::int64_t>();
          t.special = tj.value("special", false);
        }
        item.tokens.push_back(std::move(t));
      }
      if (j.contains("behavioral_nll") && !j["behavioral_nll"].is_null())
        item.behavioral_nll = j["behavioral_nll"].get<double>();
      item.attention_files = j.at("attention_files").get<std::vector<std::string>>();
      item.hidden_files = j.at("hidden_files").get<std::vector<std::string>>();
      if (j.contains("embedding_file") && !j["embedding_file"].is_null())
        item.embedding_file = j["embedding_file"].get<std::string>();
      m.items.push_back(std::move(item));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
}

void write_bundle(const fs::path& dir, BundleManifest manifest, const TensorMap& tensors) {
  if (manifest.num_layers < 0 || manifest.num_heads < 0 || manifest.hidden_size < 0)
    throw DataError("negative manifest dimension");
  check_shapes(manifest, tensors);

  std::error_code ec;
  fs::create_directories(dir / "tensors", ec);
  if (ec) throw IoError("cannot create " + (dir / "tensors").string() + ": " + ec.message());

  for (auto& item : manifest.items) {
    const auto& t = tensors.at(item.item_id);
    fs::create_directories(dir / "tensors" / item.item_id, ec);
    if (ec) throw IoError("cannot create directory for item '" + item.item_id + "'");
    item.attention_files.clear();
    item.hidden_files.clear();
    for (int ordinal = 1; ordinal <= manifest.num_layers; ++ordinal) {
      const int label = manifest.layer_label(ordinal);
      item.attention_files.push_back(attention_path(item.item_id, label));
      item.hidden_files.push_back(hidden_path(item.item_id, label));
      write_tensor_file(dir / item.attention_files.back(), t.attention[ordinal - 1]);
      write_tensor_file(dir / item.hidden_files.back(), t.hidden[ordinal - 1]);
    }
    item.embedding_file.reset();
    if (t.embedding) {
      item.embedding_file = "tensors/" + item.item_id + "/embedding.hidden.spct";
      write_tensor_file(dir / *item.embedding_file, *t.embedding);
    }
  }

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest_to_json(manifest).dump(2) << '\n';
  if (!out) throw IoError("write failed: " + (dir / "manifest.json").string());
}

Bundle Bundle::open(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return Bundle(dir, manifest_from_json(root));
}

namespace {

void check_ordinal(const BundleManifest& m, std::size_t item, int ordinal) {
  if (item >= m.items.size()) throw DataError("item index out of range");
  if (ordinal < 1 || ordinal > m.num_layers)
    throw DataError("layer " + std::to_string(ordinal) + " out of range 1.." + std::to_string(m.num_layers));
}

void expect_dims(const Tensor& t, const std::vector<std::uint64_t>& dims, const ItemRecord& item,
                 int ordinal, const char* kind) {
  if (t.dims != dims)
    throw DataError("item '" + item.item_id + "' layer " + std::to_string(ordinal) + ": " + kind +
                    " dims " + dims_string(t.dims) + " != expected " + dims_string(dims));
}

}  // namespace

Tensor Bundle::attention(std::size_t item, int ordinal) const {
  check_ordinal(manifest_, item, ordinal);
  const auto& rec = manifest_.items[item];
  if (rec.attention_files.size() != static_cast<std::size_t>(manifest_.num_layers))
    throw DataError("item '" + rec.item_id + "': attention_files count != num_layers");
  Tensor t = read_tensor_file(root_ / rec.attention_files[ordinal - 1]);
  const auto n = static_cast<std::uint64_t>(rec.tokens.size());
  expect_dims(t, {static_cast<std::uint64_t>(manifest_.num_heads), n, n}, rec, ordinal, "attention");
  return t;
}

Tensor Bundle::hidden(std::size_t item, int ordinal) const {
  check_ordinal(manifest_, item, ordinal);
  const auto& rec = manifest_.items[item];
  if (rec.hidden_files.size() != static_cast<std::size_t>(manifest_.num_layers))
    throw DataError("item '" + rec.item_id + "': hidden_files count != num_layers");
  Tensor t = read_tensor_file(root_ / rec.hidden_files[ordinal - 1]);
  expect_dims(t, {rec.tokens.size(), static_cast<std::uint64_t>(manifest_.hidden_size)}, rec,
              ordinal, "hidden");
  return t;
}

std::optional<Tensor> Bundle::embedding(std::size_t item) const {
  if (item >= manifest_.items.size()) throw DataError("item index out of range");
  const auto& rec = manifest_.items[item];
  if (!rec.embedding_file) return std::nullopt;
  Tensor t = read_tensor_file(root_ / *rec.embedding_file);
  expect_dims(t, {rec.tokens.size(), static_cast<std::uint64_t>(manifest_.hidden_size)}, rec, 0,
              "embedding");
  return t;
}

std::string format_violation(const Violation& v) {
  std::ostringstream os;
  os << v.item << '\t' << (v.layer ? std::to_string(*v.layer) : std::string("-")) << '\t' << v.rule
     << '\t' << v.detail;
  return os.str();
}

std::vector<Violation> validate_bundle(const fs::path& dir, const ValidationOptions& options) {
  std::vector<Violation> report;
  auto add = [&](std::string item, std::optional<int> layer, std::string rule, std::string detail) {
    report.push_back({std::move(item), layer, std::move(rule), std::move(detail)});
  };

  BundleManifest m;
  try {
    m = Bundle::open(dir).manifest();
  } catch (const std::exception& e) {
    add("*", std::nullopt, "manifest unreadable", e.what());
    return report;
  }

  if (m.num_layers < 1) add("*", std::nullopt, "bad manifest dimension", "num_layers < 1");
  if (m.num_heads < 1) add("*", std::nullopt, "bad manifest dimension", "num_heads < 1");
  if (m.hidden_size < 1) add("*", std::nullopt, "bad manifest dimension", "hidden_size < 1");

  std::set<std::string> ids;
  for (const auto& item : m.items)
    if (!ids.insert(item.item_id).second)
      add(item.item_id, std::nullopt, "duplicate item_id", "item_id appears more than once");

  for (const auto& item : m.items) {
    const auto n = item.tokens.size();
    if (item.char_len <= 0) add(item.item_id, std::nullopt, "char_len not positive", std::to_string(item.char_len));
    if (n < 2) add(item.item_id, std::nullopt, "too few tokens", "N = " + std::to_string(n) + " < 2");
    if (item.behavioral_nll && !std::isfinite(*item.behavioral_nll))
      add(item.item_id, std::nullopt, "behavioral_nll not finite", "");
    const auto layers = static_cast<std::size_t>(std::max(m.num_layers, 0));
    if (item.attention_files.size() != layers || item.hidden_files.size() != layers) {
      add(item.item_id, std::nullopt, "file count mismatch",
          "expected " + std::to_string(layers) + " attention and hidden files");
      continue;
    }
    const std::vector<std::uint64_t> attn_dims{static_cast<std::uint64_t>(m.num_heads), n, n};
    const std::vector<std::uint64_t> hid_dims{n, static_cast<std::uint64_t>(m.hidden_size)};
    for (int ordinal = 1; ordinal <= m.num_layers; ++ordinal) {
      Tensor attn;
      bool attn_ok = true;
      try {
        attn = read_tensor_file(dir / item.attention_files[ordinal - 1]);
      } catch (const std::exception& e) {
        add(item.item_id, ordinal, "attention file unreadable", e.what());
        attn_ok = false;
      }
      if (attn_ok) {
        if (attn.dims != attn_dims) {
          add(item.item_id, ordinal, "attention shape mismatch",
              dims_string(attn.dims) + " != " + dims_string(attn_dims));
        } else {
          bool range_reported = false;
          std::size_t bad_rows = 0;
          std::string first_bad;
          for (std::uint64_t h = 0; h < attn_dims[0]; ++h) {
            for (std::uint64_t i = 0; i < n; ++i) {
              double sum = 0.0;
              for (std::uint64_t j = 0; j < n; ++j) {
                const double v = attn.data[(h * n + i) * n + j];
                sum += v;
                if (!range_reported && !(v >= 0.0 && v <= 1.0 + options.entry_upper_slack)) {
                  add(item.item_id, ordinal, "entry out of range",
                      "head " + std::to_string(h) + " row " + std::to_string(i) + " col " +
                          std::to_string(j) + " value " + std::to_string(v));
                  range_reported = true;
                }
              }
              if (!(std::abs(sum - 1.0) <= options.row_sum_tolerance)) {
                if (bad_rows++ == 0)
                  first_bad = "head " + std::to_string(h) + " row " + std::to_string(i) +
                              " sums to " + std::to_string(sum);
              }
            }
          }
          if (bad_rows > 0)
            add(item.item_id, ordinal, "row not stochastic",
                first_bad + " (" + std::to_string(bad_rows) + " rows total)");
        }
      }
      try {
        Tensor hid = read_tensor_file(dir / item.hidden_files[ordinal - 1]);
        if (hid.dims != hid_dims)
          add(item.item_id, ordinal, "hidden shape mismatch",
              dims_string(hid.dims) + " != " + dims_string(hid_dims));
        else if (!std::all_of(hid.data.begin(), hid.data.end(), [](float v) { return std::isfinite(v); }))
          add(item.item_id, ordinal, "hidden not finite", "");
      } catch (const std::exception& e) {
        add(item.item_id, ordinal, "hidden file unreadable", e.what());
      }
    }
    if (item.embedding_file) {
      try {
        Tensor emb = read_tensor_file(dir / *item.embedding_file);
        if (emb.dims != hid_dims)
          add(item.item_id, std::nullopt, "embedding shape mismatch",
              dims_string(emb.dims) + " != " + dims_string(hid_dims));
      } catch (const std::exception& e) {
        add(item.item_id, std::nullopt, "embedding file unreadable", e.what());
      }
    }
  }
  return report;
}

}  // namespace spectraprobe
