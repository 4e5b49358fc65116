#include <doctest.h>

#include <fstream>

#include "spectraprobe/bundle_io.hpp"
#include "spectraprobe/error.hpp"
#include "synth.hpp"

using namespace spectraprobe;

namespace {

Tensor iota_tensor(std::vector<std::uint64_t> dims, float start = 0.0f) {
  Tensor t;
  t.dims = std::move(dims);
  for (std::uint64_t i = 0; i < t.element_count(); ++i) t.data.push_back(start + static_cast<float>(i) * 0.25f);
  return t;
}

Tensor uniform_attention(int h, int n) {
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(h), static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(n)};
  t.data.assign(static_cast<std::size_t>(h * n * n), 1.0f / static_cast<float>(n));
  return t;
}

// 1 item, 2 layers, H=2, N=3, d=4.
synth::PlantedBundle small_bundle() {
  synth::PlantedBundle b;
  b.manifest.model_id = "tiny";
  b.manifest.num_layers = 2;
  b.manifest.num_heads = 2;
  b.manifest.hidden_size = 4;
  ItemRecord r;
  r.item_id = "en-001";
  r.language = "EN";
  r.voice_type = VoiceType::periphrastic;
  r.condition = "active";
  r.text = "the cat sat";
  r.char_len = 11;
  r.tokens = {{"<s>", 1, true}, {"▁the", 5, false}, {"▁cat", 9, false}};
  r.behavioral_nll = 3.25;
  b.manifest.items.push_back(r);
  ItemTensors t;
  for (int l = 0; l < 2; ++l) {
    t.attention.push_back(uniform_attention(2, 3));
    t.hidden.push_back(iota_tensor({3, 4}, static_cast<float>(l)));
  }
  b.tensors["en-001"] = t;
  return b;
}

std::size_t count_files(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) ++n;
  return n;
}

}  // namespace

TEST_CASE("tensor encode/decode round trip") {
  const Tensor t = iota_tensor({2, 3, 5});
  const auto bytes = encode_tensor(t);
  CHECK(bytes.size() == 16 + 3 * 8 + 30 * 4);
  CHECK(decode_tensor(bytes) == t);
}

TEST_CASE("header layout is little-endian with magic") {
  const auto bytes = encode_tensor(iota_tensor({1, 2}));
  CHECK(static_cast<char>(bytes[0]) == 'S');
  CHECK(static_cast<char>(bytes[3]) == 'T');
  CHECK(static_cast<int>(bytes[4]) == 1);   // version
  CHECK(static_cast<int>(bytes[8]) == 0);   // dtype
  CHECK(static_cast<int>(bytes[12]) == 2);  // ndim
  CHECK(static_cast<int>(bytes[16]) == 1);
  CHECK(static_cast<int>(bytes[24]) == 2);
}

TEST_CASE("truncated payload is rejected") {
  auto bytes = encode_tensor(iota_tensor({2, 2}));
  bytes.pop_back();
  CHECK_THROWS_WITH_AS(decode_tensor(bytes), doctest::Contains("payload length mismatch"), DataError);
}

TEST_CASE("unknown dtype is rejected") {
  auto bytes = encode_tensor(iota_tensor({2, 2}));
  bytes[8] = std::byte{7};
  CHECK_THROWS_WITH_AS(decode_tensor(bytes), doctest::Contains("unsupported dtype"), DataError);
}

TEST_CASE("bad magic is rejected") {
  auto bytes = encode_tensor(iota_tensor({1}));
  bytes[0] = std::byte{'X'};
  CHECK_THROWS_AS(decode_tensor(bytes), DataError);
}

TEST_CASE("write_bundle writes manifest plus one file per layer and kind") {
  const auto dir = synth::temp_dir("bundle-small");
  auto b = small_bundle();
  write_bundle(dir, b.manifest, b.tensors);
  CHECK(count_files(dir) == 5);

  const auto back = Bundle::open(dir);
  const auto& m = back.manifest();
  REQUIRE(m.items.size() == 1);
  CHECK(m.items[0].tokens == b.manifest.items[0].tokens);
  CHECK(m.items[0].behavioral_nll == doctest::Approx(3.25));
  CHECK(m.items[0].attention_files.size() == 2);
  for (int l = 1; l <= 2; ++l) {
    CHECK(back.attention(0, l) == b.tensors["en-001"].attention[static_cast<std::size_t>(l - 1)]);
    CHECK(back.hidden(0, l) == b.tensors["en-001"].hidden[static_cast<std::size_t>(l - 1)]);
  }
  CHECK_FALSE(back.embedding(0).has_value());
  CHECK(validate_bundle(dir).empty());
}

TEST_CASE("manifest json round trip is lossless") {
  const auto dir = synth::temp_dir("bundle-json");
  auto b = small_bundle();
  b.manifest.family = "tinyfam";
  b.manifest.ablation_label = "L2 H0-1";
  b.manifest.layer_index_base = 0;
  write_bundle(dir, b.manifest, b.tensors);
  const auto m = Bundle::open(dir).manifest();
  CHECK(manifest_from_json(manifest_to_json(m)) == m);
  CHECK(m.family_name() == "tinyfam");
  CHECK(m.layer_label(1) == 0);
  CHECK(*m.ablation_label == "L2 H0-1");
}

TEST_CASE("embedding output is optional and round trips") {
  const auto dir = synth::temp_dir("bundle-emb");
  auto b = small_bundle();
  b.tensors["en-001"].embedding = iota_tensor({3, 4}, -1.0f);
  write_bundle(dir, b.manifest, b.tensors);
  const auto back = Bundle::open(dir);
  REQUIRE(back.embedding(0).has_value());
  CHECK(*back.embedding(0) == *b.tensors["en-001"].embedding);
  CHECK(validate_bundle(dir).empty());
}

TEST_CASE("empty item list is a valid bundle") {
  const auto dir = synth::temp_dir("bundle-empty");
  BundleManifest m;
  m.model_id = "empty";
  m.num_layers = 2;
  m.num_heads = 1;
  m.hidden_size = 3;
  write_bundle(dir, m, {});
  CHECK(Bundle::open(dir).manifest().items.empty());
  CHECK(validate_bundle(dir).empty());
}

TEST_CASE("shape mismatch fails before anything is written") {
  const auto dir = synth::temp_dir("bundle-shape") / "out";
  auto b = small_bundle();
  auto& rec = b.manifest.items[0];
  rec.tokens.push_back({"▁sat", 11, false});
  rec.tokens.push_back({".", 12, false});  // N = 5, attention still [2,3,3]
  CHECK_THROWS_AS(write_bundle(dir, b.manifest, b.tensors), DataError);
  CHECK_FALSE(fs::exists(dir));
}

TEST_CASE("validate reports non-stochastic rows and negative entries") {
  const auto dir = synth::temp_dir("bundle-bad");
  auto b = small_bundle();
  auto& a = b.tensors["en-001"].attention[1];
  for (int j = 0; j < 3; ++j) a.data[static_cast<std::size_t>(j)] = 0.3f;  // row sums to 0.90
  auto& a0 = b.tensors["en-001"].attention[0];
  a0.data[3] = -0.01f;
  a0.data[4] = 2.0f / 3.0f + 0.01f;  // row still sums to 1
  write_bundle(dir, b.manifest, b.tensors);
  const auto v = validate_bundle(dir);
  REQUIRE(v.size() == 2);
  CHECK(v[0].rule == "entry out of range");
  CHECK(v[0].layer == 1);
  CHECK(v[1].rule == "row not stochastic");
  CHECK(v[1].layer == 2);
  CHECK(format_violation(v[1]).find("en-001") != std::string::npos);
}

TEST_CASE("validate reports a missing manifest without throwing") {
  const auto dir = synth::temp_dir("bundle-nomanifest");
  const auto v = validate_bundle(dir);
  REQUIRE(v.size() == 1);
  CHECK(v[0].rule == "manifest unreadable");
}

TEST_CASE("validate catches truncated tensor files") {
  const auto dir = synth::temp_dir("bundle-trunc");
  auto b = small_bundle();
  write_bundle(dir, b.manifest, b.tensors);
  const auto victim = dir / Bundle::open(dir).manifest().items[0].hidden_files[0];
  fs::resize_file(victim, fs::file_size(victim) - 1);
  auto v = validate_bundle(dir);
  REQUIRE(v.size() == 1);
  CHECK(v[0].rule == "hidden file unreadable");
  CHECK_THROWS_AS(Bundle::open(dir).hidden(0, 1), DataError);
}

TEST_CASE("planted generator output validates") {
  synth::PlantedSpec spec;
  spec.languages = 2;
  spec.pairs = 3;
  spec.layers = 4;
  const auto dir = synth::temp_dir("bundle-planted");
  synth::write_planted(dir, spec);
  CHECK(validate_bundle(dir).empty());
  CHECK(Bundle::open(dir).manifest().items.size() == 12);
}

TEST_CASE("voice type names round trip") {
  for (auto t : {VoiceType::analytic, VoiceType::periphrastic, VoiceType::affixal, VoiceType::particle,
                 VoiceType::non_concatenative, VoiceType::other})
    CHECK(voice_type_from_string(to_string(t)) == t);
  CHECK_THROWS(voice_type_from_string("middle"));
}
