#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <filesystem>

#include "outfit/synth.hpp"

using namespace outfit;

namespace {

// Bottom length that puts the proportion ratio at `r` for a given spec.
double length_for_ratio(OutfitSpec s, double r) {
  const auto l = doll_layout(s);
  const double upper = l.upper_hem - l.shoulder_y;
  const double exposed = upper * (1.0 - r) / r;
  return (l.upper_hem + exposed - l.waist_y) / l.leg_length;
}

OutfitSpec base_spec() {
  OutfitSpec s;
  s.body = {55.0, 0.5};
  s.top = {30.0, 0.7, 0.8, Pattern::solid, 0.5, Tuck::in};
  s.bottom = {210.0, 0.7, 0.7, Pattern::solid, 0.8, 0.5};
  return s;
}

int row_extent(const RegionMap& m, int label) {
  int rows = 0;
  for (int y = 0; y < m.height(); ++y) {
    bool any = false;
    for (int x = 0; x < m.width(); ++x) any |= m.at(y, x) == label;
    rows += any;
  }
  return rows;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("outfit_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("sample_outfit_spec is deterministic and in range") {
  Rng a(7), b(7);
  auto s1 = sample_outfit_spec(a);
  auto s2 = sample_outfit_spec(b);
  CHECK(spec_to_json(s1) == spec_to_json(s2));
  Rng rng(8);
  for (int i = 0; i < 500; ++i) {
    CHECK_NOTHROW(check_spec(sample_outfit_spec(rng)));
    CHECK_NOTHROW(check_spec(sample_outfit_spec(rng, StylePrior::positive)));
  }
}

TEST_CASE("positive style prior averages at least 0.7 oracle total") {
  Rng rng(123);
  double sum = 0.0;
  for (int i = 0; i < 1000; ++i) sum += oracle_score(sample_outfit_spec(rng, StylePrior::positive)).total;
  MESSAGE("mean oracle total under positive prior: " << sum / 1000.0);
  CHECK(sum / 1000.0 >= 0.7);
}

TEST_CASE("unbiased hue marginal passes a chi-square uniformity test") {
  Rng rng(99);
  constexpr int kBins = 36;
  constexpr int kDraws = 10000;
  std::vector<int> counts(kBins, 0);
  for (int i = 0; i < kDraws; ++i) {
    const double h = sample_outfit_spec(rng).top.hue;
    counts[static_cast<int>(h / 10.0)]++;
  }
  const double expected = static_cast<double>(kDraws) / kBins;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  boost::math::chi_squared dist(kBins - 1);
  const double p = 1.0 - boost::math::cdf(dist, chi2);
  MESSAGE("chi2=" << chi2 << " p=" << p);
  CHECK(p > 0.01);
}

TEST_CASE("render_outfit geometry") {
  SUBCASE("absent outer leaves no outer label") {
    auto s = base_spec();
    s.outer.present = false;
    auto r = render_outfit(s);
    CHECK(r.map.histogram(8)[labels::outer] == 0);
    s.outer = {true, 100.0, 0.5};
    CHECK(render_outfit(s).map.histogram(8)[labels::outer] > 0);
  }
  SUBCASE("bottom length 1.0 vs 0.5 doubles the row extent") {
    auto s = base_spec();
    s.bottom.length = 1.0;
    const int full = row_extent(render_outfit(s).map, labels::bottom);
    s.bottom.length = 0.5;
    const int half = row_extent(render_outfit(s).map, labels::bottom);
    MESSAGE("extents " << full << " vs " << half);
    CHECK(std::abs(full - 2 * half) <= 1);
  }
  SUBCASE("areas scale by four from 64 to 128") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
      auto s = sample_outfit_spec(rng);
      auto small = render_outfit(s, 64, 64).map.histogram(8);
      auto large = render_outfit(s, 128, 128).map.histogram(8);
      for (int i = 0; i < 8; ++i) {
        if (small[i] == 0) {
          CHECK(large[i] == 0);
          continue;
        }
        CHECK(std::abs(static_cast<double>(large[i]) / (4.0 * small[i]) - 1.0) <= 0.02);
      }
    }
  }
  SUBCASE("tuck in shortens the top to the waistline") {
    auto s = base_spec();
    s.top.tuck = Tuck::out;
    const int out_rows = row_extent(render_outfit(s).map, labels::top);
    s.top.tuck = Tuck::in;
    const int in_rows = row_extent(render_outfit(s).map, labels::top);
    CHECK(in_rows < out_rows);
  }
  SUBCASE("too small a canvas is rejected") { CHECK_THROWS_AS(render_outfit(base_spec(), 31, 64), std::invalid_argument); }
}

TEST_CASE("rendering is deterministic and colour-consistent with the map") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = sample_outfit_spec(rng);
    auto a = render_outfit(s);
    auto b = render_outfit(s);
    REQUIRE(encode_png(a.image) == encode_png(b.image));
    REQUIRE(encode_png(a.map) == encode_png(b.map));
    CHECK(a.map.presence(8)[labels::outer] == s.outer.present);
    CHECK(a.map.presence(8)[labels::bag] == s.bag.present);

    auto expect_hue = [&](int label, double hue) {
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          if (a.map.at(y, x) != label) continue;
          auto px = a.image.at(y, x);
          auto hsv = rgb_to_hsv(px[0] / 255.0, px[1] / 255.0, px[2] / 255.0);
          REQUIRE(hue_distance(hsv.h, hue) <= 5.0);
        }
    };
    if (s.top.pattern == Pattern::solid) expect_hue(labels::top, s.top.hue);
    if (s.bottom.pattern == Pattern::solid) expect_hue(labels::bottom, s.bottom.hue);
    if (s.outer.present) expect_hue(labels::outer, s.outer.hue);
    if (s.bag.present) expect_hue(labels::bag, s.bag.hue);
  }
}

TEST_CASE("oracle_score closed form") {
  SUBCASE("optimum") {
    auto s = base_spec();
    s.top.hue = 20.0;
    s.bottom.hue = 200.0;
    s.top.pattern = Pattern::stripes;
    s.bottom.length = length_for_ratio(s, 0.382);
    REQUIRE(proportion_ratio(s) == doctest::Approx(0.382).epsilon(1e-9));
    auto o = oracle_score(s);
    CHECK(o.total == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("quarter-turn hues with two patterns") {
    auto s = base_spec();
    s.top.hue = 0.0;
    s.bottom.hue = 90.0;
    s.top.pattern = Pattern::stripes;
    s.bottom.pattern = Pattern::stripes;
    s.bottom.length = length_for_ratio(s, 0.382);
    auto o = oracle_score(s);
    CHECK(o.total == doctest::Approx((std::exp(-4.5) + 1.0 + 0.3) / 3.0).epsilon(1e-9));
    CHECK(o.total == doctest::Approx(0.4370).epsilon(1e-4));
  }
  SUBCASE("components stay in [0,1] and total is their mean") {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
      auto o = oracle_score(sample_outfit_spec(rng));
      for (double c : {o.harmony, o.proportion, o.pattern}) {
        CHECK(c >= 0.0);
        CHECK(c <= 1.0);
      }
      CHECK(o.total == (o.harmony + o.proportion + o.pattern) / 3.0);
    }
  }
}

TEST_CASE("tuck moves the rendered proportion monotonically") {
  Rng rng(404);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = sample_outfit_spec(rng);
    s.outer.present = false;
    s.top.tuck = Tuck::in;
    auto in = s;
    s.top.tuck = Tuck::out;
    auto out = s;
    // Rendered version of the ratio, measured down the body's centre column
    // (sleeves hang beside the torso and do not count).
    auto rendered_ratio = [](const OutfitSpec& spec) {
      auto m = render_outfit(spec).map;
      int upper = 0, lower = 0;
      for (int y = 0; y < 64; ++y) {
        upper += m.at(y, 32) == labels::top;
        lower += m.at(y, 32) == labels::bottom;
      }
      return static_cast<double>(upper) / (upper + lower);
    };
    const double r_in = rendered_ratio(in), r_out = rendered_ratio(out);
    CHECK(r_out > r_in);
    CHECK(proportion_ratio(out) > proportion_ratio(in));
    // Oracle proportion follows the distance of r to the golden section.
    const auto p_in = oracle_score(in).proportion, p_out = oracle_score(out).proportion;
    if (std::abs(proportion_ratio(in) - 0.382) < std::abs(proportion_ratio(out) - 0.382)) {
      CHECK(p_in > p_out);
    } else {
      CHECK(p_in <= p_out);
    }
  }
}

TEST_CASE("spec JSON round trip and garment transplant") {
  Rng rng(6);
  auto a = sample_outfit_spec(rng);
  auto b = sample_outfit_spec(rng);
  CHECK(spec_to_json(spec_from_json(spec_to_json(a))) == spec_to_json(a));
  auto c = transplant_garment(a, b, labels::bottom);
  CHECK(spec_to_json(c)["bottom"] == spec_to_json(b)["bottom"]);
  CHECK(spec_to_json(c)["top"] == spec_to_json(a)["top"]);
  CHECK_THROWS(transplant_garment(a, b, labels::face));
  auto j = spec_to_json(a);
  j["top"]["hue"] = 400.0;
  CHECK_THROWS(spec_from_json(j));
}

TEST_CASE("build_dataset") {
  DatasetConfig cfg;
  cfg.gen_train = 1200;
  cfg.cls_train = 500;
  cfg.val = 150;
  cfg.test = 150;
  cfg.seed = 3;
  auto dir = temp_dir("dataset_a");
  auto built = build_dataset(cfg, dir);
  REQUIRE(built.manifest.records.size() == 2000);
  for (const auto& r : built.manifest.records) {
    const auto o = oracle_score(r.spec);
    CHECK(o.total == r.oracle.total);
    CHECK(r.positive == (o.total >= 0.75));
  }
  MESSAGE("positive rate " << built.positive_rate);
  CHECK(built.positive_rate > 0.25);
  CHECK(built.positive_rate < 0.45);
  CHECK(built.manifest.split(Split::val).size() == 150);

  auto reread = read_manifest(dir / "manifest.jsonl");
  CHECK(reread.records.size() == 2000);
  CHECK(reread.find("000010").spec.seed == built.manifest.find("000010").spec.seed);
  const auto& rec = reread.records[17];
  auto rendered = render_outfit(rec.spec);
  CHECK(read_png_map(reread.map_path(rec)) == rendered.map);
  CHECK(read_png_rgb(reread.image_path(rec)) == rendered.image);

  auto dir_b = temp_dir("dataset_b");
  build_dataset(cfg, dir_b);
  CHECK(read_file(dir / "manifest.jsonl") == read_file(dir_b / "manifest.jsonl"));

  DatasetConfig none = cfg;
  none.gen_train = 100;
  none.cls_train = none.val = none.test = 0;
  none.tau_pos = 1.01;
  auto dir_c = temp_dir("dataset_c");
  auto empty = build_dataset(none, dir_c);
  CHECK(empty.positive_rate == 0.0);
  REQUIRE_FALSE(empty.warnings.empty());
  CHECK(empty.warnings[0].find("zero positives") != std::string::npos);

  DatasetConfig tiny = cfg;
  tiny.gen_train = 10;
  tiny.cls_train = tiny.val = tiny.test = 0;
  CHECK_THROWS_AS(build_dataset(tiny, dir_c), std::invalid_argument);
  CHECK_THROWS(build_dataset(cfg, "/proc/forbidden_dataset_dir"));

  for (auto& d : {dir, dir_b, dir_c}) std::filesystem::remove_all(d);
}
