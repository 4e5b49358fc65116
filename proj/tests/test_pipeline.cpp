#include <doctest.h>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "spectraprobe/config.hpp"
#include "spectraprobe/error.hpp"
#include "spectraprobe/pipeline.hpp"
#include "spectraprobe/report.hpp"
#include "synth.hpp"

using namespace spectraprobe;

namespace {

synth::PlantedSpec small_spec() {
  synth::PlantedSpec s;
  s.languages = 4;
  s.pairs = 8;
  s.layers = 6;
  return s;
}

const fs::path& planted_dir() {
  static const fs::path dir = [] {
    auto d = synth::temp_dir("pipeline-planted");
    synth::write_planted(d, small_spec());
    return d;
  }();
  return dir;
}

RunConfig fast_config() {
  RunConfig c;
  c.stats.bootstrap_resamples = 400;
  c.stats.permutation_shuffles = 2000;
  c.windows = {{"early", 2, 5}, {"late", 6, 6}};
  return c;
}

}  // namespace

TEST_CASE("planted attention has the requested lambda_2") {
  for (int n_tokens : {5, 9, 12})
    for (double lambda : {0.3, 0.75, 1.0}) {
      const auto t = synth::planted_attention(2, n_tokens, lambda, 0.3, 0.05);
      std::vector<bool> sp(static_cast<std::size_t>(n_tokens), false);
      sp[0] = true;
      std::unique_ptr<bool[]> mask(new bool[static_cast<std::size_t>(n_tokens)]());
      mask[0] = true;
      const auto g = build_token_graph(t, std::span<const bool>(mask.get(), static_cast<std::size_t>(n_tokens)),
                                       {}, {LaplacianKind::random_walk});
      CHECK(smallest_eigenpair_2(g.graph).value == doctest::Approx(lambda).epsilon(1e-5));
    }
}

TEST_CASE("diagnose: one row per item and layer, byte-stable") {
  const auto dir = synth::temp_dir("diag-small");
  auto b = synth::make_random(2, 4, 2, 6, 5, 3);
  write_bundle(dir, b.manifest, b.tensors);
  const auto bundle = Bundle::open(dir);
  auto c = fast_config();
  c.windows.clear();
  const auto r1 = diagnose_bundle(bundle, c);
  CHECK(r1.rows.size() == 8);
  c.threads = 1;
  const auto r2 = diagnose_bundle(bundle, c);
  c.threads = 4;
  const auto r3 = diagnose_bundle(bundle, c);
  const auto csv1 = to_csv(diagnostics_table(r1, bundle.manifest(), c));
  CHECK(csv1 == to_csv(diagnostics_table(r2, bundle.manifest(), c)));
  CHECK(csv1 == to_csv(diagnostics_table(r3, bundle.manifest(), c)));
  CHECK(csv1.rfind("# schema=spectraprobe.diagnostics/1", 0) == 0);
  for (const auto& row : r1.rows) CHECK(row.excluded_special == 1);
}

TEST_CASE("config validation rejects K and c together") {
  RunConfig c;
  c.hfer_k = 3;
  c.hfer_c = 0.2;
  CHECK_THROWS_AS(c.validate(), UsageError);
  CHECK_THROWS_AS(build_config({}, {{"hfer_k", "3"}, {"hfer_c", "0.2"}}), UsageError);
  CHECK_THROWS_AS(diagnose_bundle(Bundle::open(planted_dir()), c), UsageError);
}

TEST_CASE("fingerprint tracks diagnostic settings only") {
  RunConfig a, b;
  b.stats.seed = 99;
  CHECK(diagnostic_fingerprint(a, 12) == diagnostic_fingerprint(b, 12));
  CHECK(config_fingerprint(a) != config_fingerprint(b));
  b.laplacian.kind = LaplacianKind::symmetric;
  CHECK(diagnostic_fingerprint(a, 12) != diagnostic_fingerprint(b, 12));
  CHECK(diagnostic_config_text(a, 12).find("laplacian=random_walk") != std::string::npos);
}

TEST_CASE("planted contrast recovers the effect") {
  const auto bundle = Bundle::open(planted_dir());
  const auto r = run_contrast(bundle, fast_config());
  CHECK(r.pairing.pairs.size() == 32);
  const auto* en = r.find("EN", "early", Metric::fiedler);
  REQUIRE(en != nullptr);
  CHECK(en->stats.mean == doctest::Approx(-0.4).epsilon(0.1));
  CHECK(en->stats.reject);
  CHECK(en->stats.p_perm == doctest::Approx(2.0 / 256.0));
  CHECK(en->stats.ci_hi < 0.0);
  for (const std::string lang : {"DE", "FR", "ES"}) {
    const auto* row = r.find(lang, "early", Metric::fiedler);
    REQUIRE(row != nullptr);
    CHECK(std::abs(row->stats.mean) < 0.1);
  }
  const auto* late = r.find("EN", "late", Metric::fiedler);
  CHECK(std::abs(late->stats.mean) < 0.1);
  CHECK(r.curves.size() == 4 * 4 * 6);
  CHECK_FALSE(r.degenerate());
  CHECK(r.voice_types.size() >= 2);
}

TEST_CASE("swapping conditions negates endpoints and keeps p") {
  const auto bundle = Bundle::open(planted_dir());
  auto c = fast_config();
  const auto fwd = run_contrast(bundle, c);
  std::swap(c.condition_a, c.condition_b);
  const auto rev = run_contrast(bundle, c);
  REQUIRE(fwd.languages.size() == rev.languages.size());
  for (std::size_t i = 0; i < fwd.languages.size(); ++i) {
    CHECK(rev.languages[i].stats.mean == doctest::Approx(-fwd.languages[i].stats.mean).epsilon(1e-12));
    CHECK(rev.languages[i].stats.p_perm == fwd.languages[i].stats.p_perm);
    CHECK(rev.languages[i].stats.q_fdr == fwd.languages[i].stats.q_fdr);
  }
}

TEST_CASE("self-contrast gives zero endpoints and p = 1") {
  auto b = synth::make_planted(small_spec());
  auto& items = b.manifest.items;
  const auto count = items.size();
  for (std::size_t i = 0; i < count; ++i) {
    if (items[i].condition != "active") continue;
    auto copy = items[i];
    copy.item_id += "-copy";
    copy.condition = "active_copy";
    b.tensors[copy.item_id] = b.tensors.at(items[i].item_id);
    items.push_back(copy);
  }
  const auto dir = synth::temp_dir("self-contrast");
  write_bundle(dir, b.manifest, b.tensors);
  auto c = fast_config();
  c.condition_b = "active_copy";
  const auto r = run_contrast(Bundle::open(dir), c);
  for (const auto& row : r.languages) {
    CHECK(row.stats.mean == 0.0);
    CHECK(row.stats.p_perm == 1.0);
    CHECK(std::isnan(row.stats.g_trim));
  }
  CHECK(r.degenerate());
}

TEST_CASE("length control excludes pairs and can empty a language") {
  auto b = synth::make_planted(small_spec());
  auto c = fast_config();
  c.max_token_delta = 0;  // odd paraphrases differ by one token
  const auto dir = synth::temp_dir("length-ctl");
  write_bundle(dir, b.manifest, b.tensors);
  const auto r = run_contrast(Bundle::open(dir), c);
  CHECK(r.contrasts.size() == 16);
  REQUIRE(r.filter.excluded_per_language.size() == 4);
  CHECK(r.filter.excluded_per_language[0].second == 4);
}

TEST_CASE("random_walk and symmetric sweeps agree on lambda_2") {
  const auto bundle = Bundle::open(planted_dir());
  const auto s = run_sweep(bundle, fast_config(), SweepAxis::laplacian, {"random_walk", "symmetric"});
  std::map<std::string, double> rw;
  for (const auto& r : s.rows)
    if (r.metric == Metric::fiedler && r.value == "random_walk") rw[r.language] = r.mean;
  int compared = 0;
  for (const auto& r : s.rows)
    if (r.metric == Metric::fiedler && r.value == "symmetric") {
      CHECK(std::abs(r.mean - rw.at(r.language)) < 1e-8);
      ++compared;
    }
  CHECK(compared == 4);
}

TEST_CASE("window and hfer sweeps") {
  const auto bundle = Bundle::open(planted_dir());
  const auto w = run_sweep(bundle, fast_config(), SweepAxis::window, {"1:4", "3:6"});
  for (const auto& r : w.rows)
    if (r.language == "EN" && r.metric == Metric::fiedler) {
      CHECK(r.mean < 0.0);
      CHECK(r.sign_agrees);
    }

  // HFER per item is non-increasing in K.
  RunConfig c = fast_config();
  std::vector<std::vector<double>> per_k;
  for (int k = 1; k <= 6; ++k) {
    auto ck = apply_sweep_value(c, SweepAxis::hfer_cutoff, "k=" + std::to_string(k));
    CHECK(ck.hfer_k == k);
    const auto d = diagnose_bundle(bundle, ck, {0, 1, 2});
    std::vector<double> h;
    for (const auto& row : d.rows) h.push_back(row.d.hfer);
    per_k.push_back(h);
  }
  for (std::size_t k = 1; k < per_k.size(); ++k)
    for (std::size_t i = 0; i < per_k[k].size(); ++i) CHECK(per_k[k][i] <= per_k[k - 1][i] + 1e-12);

  CHECK(apply_sweep_value(c, SweepAxis::theta, "0.5").laplacian.kind == LaplacianKind::magnetic);
  CHECK(apply_sweep_value(c, SweepAxis::hfer_cutoff, "0.1").hfer_c == 0.1);
  CHECK_THROWS_AS(apply_sweep_value(c, SweepAxis::laplacian, "hodge"), UsageError);
}

TEST_CASE("ablation summary") {
  const auto bundle = Bundle::open(planted_dir());
  auto c = fast_config();
  c.windows.clear();
  const auto same = run_ablation_summary(bundle, bundle, c);
  for (const auto& [label, v] : same.windows) CHECK(v == 0.0);

  auto spec = small_spec();
  spec.layers = 12;
  const auto base_dir = synth::temp_dir("ablation-base");
  synth::write_planted(base_dir, spec);
  spec.passive_shift = 0.1;
  spec.ablation_label = "L2 H0-1";
  const auto abl_dir = synth::temp_dir("ablation-shift");
  synth::write_planted(abl_dir, spec);
  const auto row = run_ablation_summary(Bundle::open(base_dir), Bundle::open(abl_dir), c);
  CHECK(row.label == "L2 H0-1");
  REQUIRE(row.windows.size() == 4);
  CHECK(row.windows[0].first == "early");
  CHECK(row.windows[0].second == doctest::Approx(0.1).epsilon(1e-4));
  CHECK(std::abs(row.windows[1].second) < 1e-5);
  CHECK(std::abs(row.windows[2].second) < 1e-5);
  CHECK(row.windows[3].second == doctest::Approx(0.1 * 4 / 12).epsilon(1e-3));

  auto other = synth::make_planted(small_spec());
  other.manifest.items.pop_back();
  const auto dir = synth::temp_dir("ablation-mismatch");
  write_bundle(dir, other.manifest, other.tensors);
  CHECK_THROWS_WITH_AS(run_ablation_summary(bundle, Bundle::open(dir), c), doctest::Contains("item mismatch"),
                       DataError);
}

TEST_CASE("table formats") {
  Table t;
  t.schema = "demo";
  t.meta = {{"seed", "0"}};
  t.columns = {"name", "x", "n", "ok", "missing"};
  t.add({std::string("a,b"), 0.1, std::int64_t{3}, true, std::monostate{}});
  t.add({std::string("q\"t"), std::nan(""), std::int64_t{-1}, false, -0.0});
  CHECK_THROWS_AS(t.add({1.0}), std::logic_error);
  const auto csv = to_csv(t);
  CHECK(csv ==
        "# schema=spectraprobe.demo/1 seed=0\n"
        "name,x,n,ok,missing\n"
        "\"a,b\",0.1,3,true,\n"
        "\"q\"\"t\",NaN,-1,false,0\n");
  const auto j = nlohmann::json::parse(to_json(t));
  CHECK(j["schema"] == "spectraprobe.demo");
  CHECK(j["version"] == 1);
  CHECK(j["rows"][1]["x"].is_null());
  CHECK(j["rows"][0]["name"] == "a,b");
  CHECK(format_number(1e-7) == "1e-07");
  CHECK(format_number(0.30000000000000004) == "0.30000000000000004");

  const auto dir = synth::temp_dir("table-io");
  write_table(dir, "demo", t);
  const auto back = read_csv(dir / "demo.csv");
  CHECK(back.columns == t.columns);
  CHECK(back.rows[0][0] == "a,b");
  CHECK(back.rows[1][0] == "q\"t");
  CHECK(std::isnan(parse_number(back.rows[1][1])));
  CHECK(back.column("ok") == 3);
  CHECK_THROWS(back.column("nope"));
}

TEST_CASE("svg bar chart") {
  const auto one = svg_bar_chart("t", "y", {{"EN", -0.4, -0.45, -0.35, -1.2, 0.01}});
  CHECK(one.find("class=\"whisker\"") != std::string::npos);
  CHECK(one.find("class=\"star\"") != std::string::npos);
  CHECK(one.find("g=-1.2") != std::string::npos);
  const auto at = svg_bar_chart("t", "y", {{"EN", -0.4, -0.45, -0.35, -1.2, 0.05}});
  CHECK(at.find("class=\"star\"") == std::string::npos);  // q = 0.05 is not < 0.05
  CHECK(svg_bar_chart("t", "y", {{"EN", -0.4, -0.45, -0.35, -1.2, 0.05}}) == at);
  CHECK(svg_bar_chart("a<b", "y", {}).find("a&lt;b") != std::string::npos);
}

TEST_CASE("contrast outputs and report are reproducible") {
  const auto bundle = Bundle::open(planted_dir());
  auto c = fast_config();
  const auto d1 = synth::temp_dir("outputs-1");
  const auto d2 = synth::temp_dir("outputs-2");
  write_contrast_outputs(d1, run_contrast(bundle, c), bundle.manifest(), c);
  c.threads = 3;
  write_contrast_outputs(d2, run_contrast(bundle, c), bundle.manifest(), c);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(d1)) {
    ++files;
    CHECK(synth::slurp(e.path()) == synth::slurp(d2 / e.path().filename()));
  }
  CHECK(files >= 12);
  CHECK(fs::exists(d1 / "languages_early_fiedler.svg"));
  CHECK(fs::exists(d1 / "summary.txt"));
  const auto svg = synth::slurp(d1 / "languages_early_fiedler.svg");
  CHECK(svg.find("class=\"star\"") != std::string::npos);

  // Re-rendering from the tables reproduces the same bytes.
  const auto before = synth::slurp(d1 / "languages_early_fiedler.svg");
  render_report(d1, c.stats.fdr_q);
  CHECK(synth::slurp(d1 / "languages_early_fiedler.svg") == before);
  CHECK_THROWS_AS(render_report(synth::temp_dir("report-empty")), IoError);

  const auto csv = read_csv(d1 / "contrast_languages.csv");
  CHECK(csv.columns.front() == "family");
  CHECK(csv.rows.size() == 4 * 4 * 2);
}

TEST_CASE("config file with flag overrides") {
  const auto dir = synth::temp_dir("config");
  {
    std::ofstream f(dir / "run.conf");
    f << "# sweep settings\nlaplacian = symmetric\nboot = 500\nhfer-k = 3\nwindow = 2:5\nwindow = late=6:8\n"
         "max_token_delta = inf\n";
  }
  const auto file = read_config_file(dir / "run.conf");
  auto c = build_config(file, {});
  CHECK(c.laplacian.kind == LaplacianKind::symmetric);
  CHECK(c.stats.bootstrap_resamples == 500);
  CHECK(c.hfer_k == 3);
  CHECK(c.windows.size() == 2);
  CHECK(c.windows[1] == LayerWindow{"late", 6, 8});
  CHECK(c.max_token_delta == kNoTokenLimit);

  c = build_config(file, {{"laplacian", "combinatorial"}, {"hfer_c", "0.1"}, {"window", "1:4"}});
  CHECK(c.laplacian.kind == LaplacianKind::combinatorial);
  CHECK_FALSE(c.hfer_k.has_value());
  CHECK(c.hfer_c == 0.1);
  CHECK(c.windows == std::vector<LayerWindow>{{"1-4", 1, 4}});
  CHECK(c.stats.bootstrap_resamples == 500);

  {
    std::ofstream f(dir / "bad.conf");
    f << "lapalcian = symmetric\n";
  }
  CHECK_THROWS_WITH_AS(read_config_file(dir / "bad.conf"), doctest::Contains("lapalcian"), UsageError);
  CHECK_THROWS_AS(read_config_file(dir / "absent.conf"), IoError);
  CHECK_THROWS_AS(build_config({}, {{"boot", "many"}}), UsageError);
  CHECK_THROWS_AS(build_config({}, {{"theta", "4"}}), UsageError);
}

TEST_CASE("worker count") {
  CHECK(worker_count(3) == 3);
  CHECK(worker_count(0) >= 1);
}
