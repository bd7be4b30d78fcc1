#include <doctest.h>

#include <cmath>

#include "outfit/eval.hpp"

using namespace outfit;

namespace {

constexpr int kDt = 2, kDs = 2, kG = kDt + kDs;

OutfitCode random_code(Rng& rng) {
  OutfitCode z{TextureCode(8, kDt), ShapeCode(8, kDs)};
  for (int r = 0; r <= labels::bottom; ++r) {
    z.set_present(r, true);
    std::vector<double> g(kG);
    for (auto& v : g) v = rng.normal();
    z.set_garment(r, g);
  }
  return z;
}

FashionClassifier random_mlp(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> r(8 * kG);
    for (auto& v : r) v = rng.normal();
    rows.push_back(r);
  }
  return FashionClassifier(Standardizer::fit(rows, 1e-3), {16, 8}, seed);
}

double dist(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0;
  for (std::size_t k = 0; k < a.size(); ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(d);
}

}  // namespace

TEST_CASE("improvement and change arithmetic") {
  GTSet gt;
  gt.garments = {{0.0, 0.0}};
  CHECK(fashion_improvement(std::vector<double>{2.0, 0.0}, std::vector<double>{1.0, 0.0}, gt).ratio == 2.0);
  CHECK(fashion_improvement(std::vector<double>{2.0, 0.0}, std::vector<double>{2.0, 0.0}, gt).ratio == 1.0);
  const auto deg = fashion_improvement(std::vector<double>{2.0, 0.0}, std::vector<double>{0.0, 0.0}, gt);
  CHECK(deg.degenerate);
  CHECK(deg.ratio == kImprovementCap);

  const std::vector<double> o = {1.0, 1.0}, e = {4.0, 5.0};
  CHECK(amount_of_change(o, o, 0.7) == -0.7);
  CHECK(amount_of_change(o, e, 0.0) == 5.0);

  gt.garments = {{0.0, 0.0}, {3.0, 0.0}, {10.0, 0.0}};
  const std::vector<double> q = {1.0, 0.0};
  CHECK(distance_to_gt(q, gt, Aggregation::min) == 1.0);
  CHECK(distance_to_gt(q, gt, Aggregation::median) == 2.0);
  CHECK(distance_to_gt(q, gt, Aggregation::mean) == doctest::Approx(4.0));
  CHECK_THROWS_AS(distance_to_gt(q, GTSet{}), std::invalid_argument);
}

TEST_CASE("GT set matches a brute-force neighbour scan and excludes the swapped piece") {
  Rng rng(3);
  std::vector<OutfitCode> corpus;
  std::vector<std::string> ids;
  for (int i = 0; i < 300; ++i) {
    corpus.push_back(random_code(rng));
    ids.push_back(std::to_string(i));
  }
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t pos = rng.below(corpus.size());
    const std::size_t donor = (pos + 1 + rng.below(corpus.size() - 1)) % corpus.size();
    auto neg = corpus[pos];
    const int region = trial % 2 ? labels::top : labels::bottom;
    const auto swapped = corpus[donor].garment(region);
    neg.set_garment(region, swapped);

    const auto gt = build_gt_set("n", neg, region, swapped, corpus, ids, 10);
    REQUIRE(gt.garments.size() == 10);
    // The positive itself is the nearest neighbour once region i is ignored.
    CHECK(gt.neighbor_ids[0] == ids[pos]);
    for (const auto& g : gt.garments) CHECK(g != swapped);

    std::vector<std::pair<double, std::size_t>> scan;
    for (std::size_t j = 0; j < corpus.size(); ++j) {
      if (corpus[j].garment(region) == swapped) continue;
      double d = 0;
      for (int r = 0; r < 8; ++r)
        if (r != region) {
          const auto a = neg.garment(r), b = corpus[j].garment(r);
          for (int k = 0; k < kG; ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
        }
      scan.emplace_back(d, j);
    }
    std::stable_sort(scan.begin(), scan.end(), [](auto& a, auto& b) { return a.first < b.first; });
    for (int k = 0; k < 10; ++k) CHECK(gt.neighbor_ids[k] == ids[scan[k].second]);

    const auto m1 = build_gt_set("n", neg, region, swapped, corpus, ids, 1);
    CHECK(m1.garments[0] == corpus[pos].garment(region));
  }
  CHECK_THROWS_AS(build_gt_set("n", corpus[0], labels::top, corpus[1].garment(labels::top),
                               std::span<const OutfitCode>(corpus).first(5), std::span<const std::string>(ids).first(5), 10),
                  std::invalid_argument);
}

TEST_CASE("baselines agree with exhaustive scans") {
  const auto schema = LabelSchema::outfit_default();
  Rng rng(8);
  std::vector<OutfitCode> codes;
  std::vector<std::string> ids;
  for (int i = 0; i < 80; ++i) {
    codes.push_back(random_code(rng));
    ids.push_back(std::to_string(1000 + i));
  }
  const auto inv = build_inventory(ids, codes, schema);
  const auto clf = random_mlp(4);
  const auto neg = codes[5];

  Rng r1(1);
  const auto sim = run_baseline(Baseline::similarity_only, neg, labels::top, inv, clf, r1);
  CHECK(inv.records[sim].id == "1005-top");

  const auto fo = run_baseline(Baseline::fashion_only, neg, labels::bottom, inv, clf, r1);
  double best = -1;
  std::string best_id;
  for (const auto& g : inv.records) {
    if (g.region != labels::bottom) continue;
    auto z = neg;
    z.set_garment(labels::bottom, g.code);
    const double p = clf.score(z.flatten()).p;
    if (p > best) {
      best = p;
      best_id = g.id;
    }
  }
  CHECK(inv.records[fo].id == best_id);

  Rng a(77), b(77);
  CHECK(run_baseline(Baseline::random, neg, labels::top, inv, clf, a) ==
        run_baseline(Baseline::random, neg, labels::top, inv, clf, b));
  CHECK_THROWS_AS(run_baseline(Baseline::random, neg, labels::outer, inv, clf, a), EmptyInventorySlice);
}

TEST_CASE("suite metrics equal brute-force recomputation and are reproducible") {
  const auto schema = LabelSchema::outfit_default();
  Rng rng(11);
  std::vector<OutfitCode> inv_codes, corpus;
  std::vector<std::string> inv_ids, corpus_ids;
  std::map<std::string, OutfitSpec> specs;
  for (int i = 0; i < 60; ++i) {
    inv_codes.push_back(random_code(rng));
    inv_ids.push_back("i" + std::to_string(i));
    specs[inv_ids.back()] = sample_outfit_spec(rng);
  }
  for (int i = 0; i < 40; ++i) {
    corpus.push_back(random_code(rng));
    corpus_ids.push_back("c" + std::to_string(i));
  }
  const auto inv = build_inventory(inv_ids, inv_codes, schema);
  const auto clf = random_mlp(9);

  std::vector<EvalCase> cases;
  for (int i = 0; i < 6; ++i) {
    EvalCase c;
    c.id = "n" + std::to_string(i);
    c.code = corpus[i];
    const int region = i % 2 ? labels::top : labels::bottom;
    c.swap = {corpus_ids[i], region, corpus_ids[20 + i], corpus[i].garment(region), corpus[20 + i].garment(region)};
    c.code.set_garment(region, c.swap.donor);
    c.spec = sample_outfit_spec(rng);
    cases.push_back(c);
  }
  EvalConfig cfg;
  cfg.max_steps = 4;
  cfg.report_steps = 3;
  cfg.neighbors = 5;
  const auto report = evaluate_suite(cases, corpus, corpus_ids, inv, specs, clf, schema, cfg);

  CHECK(report.summary("similarity_only").mean_change == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(report.mean_p_by_step.size() == 5);
  CHECK(report.summary("minimal_edit@0").mean_change == doctest::Approx(0.0).epsilon(1e-12));

  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < inv.records.size(); ++i) by_id[inv.records[i].id] = i;
  for (const auto& r : report.records) {
    const auto& ec = *std::find_if(cases.begin(), cases.end(), [&](const EvalCase& c) { return c.id == r.case_id; });
    const int region = ec.swap.region;
    const auto& g = inv.records[by_id.at(r.garment_id)];
    const auto original = ec.code.garment(region);
    const auto edited = r.region == region ? g.code : original;
    CHECK(r.raw_change == doctest::Approx(dist(original, edited)));
    const auto gt = build_gt_set(ec.id, ec.code, region, ec.swap.donor, corpus, corpus_ids, 5);
    double d_o = 1e300, d_e = 1e300;
    for (const auto& m : gt.garments) {
      d_o = std::min(d_o, dist(original, m));
      d_e = std::min(d_e, dist(edited, m));
    }
    CHECK(r.improvement.ratio == doctest::Approx(d_o / d_e));
    CHECK(r.oracle_after == doctest::Approx(oracle_score(transplant_garment(ec.spec, specs.at(g.source_id), r.region)).total));
  }

  const auto again = evaluate_suite(cases, corpus, corpus_ids, inv, specs, clf, schema, cfg);
  CHECK(eval_report_to_json(again).dump() == eval_report_to_json(report).dump());
  CHECK(eval_report_csv(report).rfind("method,case_id,change,improvement,oracle_delta\n", 0) == 0);
  CHECK(eval_report_svg(report).find("<svg") == 0);

  EvalConfig only_sim = cfg;
  only_sim.methods = {"similarity_only"};
  const auto sim_report = evaluate_suite(cases, corpus, corpus_ids, inv, specs, clf, schema, only_sim);
  CHECK(sim_report.summaries.size() == 1);
  CHECK(sim_report.summaries[0].mean_change == doctest::Approx(0.0).epsilon(1e-12));

  EvalConfig bad = cfg;
  bad.methods = {"nope"};
  CHECK_THROWS_AS(evaluate_suite(cases, corpus, corpus_ids, inv, specs, clf, schema, bad), std::invalid_argument);
}

TEST_CASE("code slicing widths and ablation null control") {
  std::vector<double> z(8 * 16);
  std::iota(z.begin(), z.end(), 0.0);
  CHECK(slice_code(z, 8, 8, 8, FeatureSubset::texture).size() == 64);
  CHECK(slice_code(z, 8, 8, 8, FeatureSubset::shape).size() == 64);
  CHECK(slice_code(z, 8, 8, 8, FeatureSubset::both).size() == 128);
  CHECK(slice_code(z, 8, 8, 8, FeatureSubset::shape)[0] == 8.0);
  CHECK(slice_code(z, 8, 8, 8, FeatureSubset::texture)[8] == 16.0);

  Rng rng(6);
  std::vector<std::vector<double>> tr, va;
  std::vector<int> ytr, yva;
  for (int i = 0; i < 400; ++i) {
    std::vector<double> r(8 * 4);
    for (auto& v : r) v = rng.normal();
    tr.push_back(r);
    ytr.push_back(static_cast<int>(rng.below(2)));
  }
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> r(8 * 4);
    for (auto& v : r) v = rng.normal();
    va.push_back(r);
    yva.push_back(static_cast<int>(rng.below(2)));
  }
  ClassifierConfig cfg;
  cfg.epochs = 10;
  cfg.hidden = {32, 32};
  const auto rows = ablation_study(tr, ytr, va, yva, 8, 2, 2, cfg);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) CHECK(r.accuracy == doctest::Approx(0.5).epsilon(0.12));
  CHECK(rows[0].width == 16);
  CHECK(rows[2].width == 32);
}
