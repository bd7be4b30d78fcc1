#include "outfit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace outfit {

Aggregation aggregation_from_name(const std::string& s) {
  if (s == "min") return Aggregation::min;
  if (s == "mean") return Aggregation::mean;
  if (s == "median") return Aggregation::median;
  throw std::invalid_argument("unknown aggregation '" + s + "'");
}

std::string aggregation_name(Aggregation a) {
  switch (a) {
    case Aggregation::min: return "min";
    case Aggregation::mean: return "mean";
    case Aggregation::median: return "median";
  }
  return "min";
}

namespace {

double euclidean(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("garment codes have different lengths");
  double d2 = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d2 += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(d2);
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

GTSet build_gt_set(const std::string& negative_id, const OutfitCode& negative, int region,
                   std::span<const double> swapped_in, std::span<const OutfitCode> corpus,
                   std::span<const std::string> ids, int m) {
  if (m <= 0) throw std::invalid_argument("GT set size must be positive");
  if (corpus.size() != ids.size()) throw std::invalid_argument("corpus and id counts differ");
  if (corpus.size() < static_cast<std::size_t>(m) + 1)
    throw std::invalid_argument("GT corpus has " + std::to_string(corpus.size()) + " outfits, needs at least " +
                                std::to_string(m + 1));
  const auto zn = negative.flatten();
  const auto g = static_cast<std::size_t>(negative.garment_dim());
  const std::size_t lo = static_cast<std::size_t>(region) * g, hi = lo + g;

  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t j = 0; j < corpus.size(); ++j) {
    if (!corpus[j].present(region)) continue;
    const auto gj = corpus[j].garment(region);
    if (std::equal(gj.begin(), gj.end(), swapped_in.begin(), swapped_in.end())) continue;
    const auto zj = corpus[j].flatten();
    if (zj.size() != zn.size()) throw std::invalid_argument("corpus codes have different widths");
    double d2 = 0.0;
    for (std::size_t k = 0; k < zn.size(); ++k)
      if (k < lo || k >= hi) d2 += (zj[k] - zn[k]) * (zj[k] - zn[k]);
    ranked.emplace_back(d2, j);
  }
  if (ranked.size() < static_cast<std::size_t>(m))
    throw std::invalid_argument("only " + std::to_string(ranked.size()) + " corpus outfits can serve as neighbours");
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  GTSet gt;
  gt.negative_id = negative_id;
  gt.region = region;
  for (int k = 0; k < m; ++k) {
    gt.garments.push_back(corpus[ranked[k].second].garment(region));
    gt.neighbor_ids.push_back(ids[ranked[k].second]);
  }
  return gt;
}

double distance_to_gt(std::span<const double> garment, const GTSet& gt, Aggregation agg) {
  if (gt.garments.empty()) throw std::invalid_argument("GT set is empty");
  std::vector<double> d;
  for (const auto& g : gt.garments) d.push_back(euclidean(garment, g));
  switch (agg) {
    case Aggregation::min: return *std::min_element(d.begin(), d.end());
    case Aggregation::mean: return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    case Aggregation::median: return median_of(d);
  }
  return 0.0;
}

Improvement fashion_improvement(std::span<const double> original, std::span<const double> edited, const GTSet& gt,
                                Aggregation agg) {
  const double d_orig = distance_to_gt(original, gt, agg);
  const double d_edit = distance_to_gt(edited, gt, agg);
  if (d_edit < kImprovementEpsilon) return {kImprovementCap, true};
  return {d_orig / d_edit, false};
}

double amount_of_change(std::span<const double> original, std::span<const double> edited, double similarity_baseline) {
  return euclidean(original, edited) - similarity_baseline;
}

std::size_t run_baseline(Baseline method, const OutfitCode& negative, int region, const Inventory& inv,
                         const FashionClassifier& clf, Rng& rng) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < inv.records.size(); ++i)
    if (inv.records[i].region == region) candidates.push_back(i);
  if (candidates.empty()) throw EmptyInventorySlice("inventory has no garment for region " + std::to_string(region));

  switch (method) {
    case Baseline::similarity_only:
      return retrieve_garment(negative.garment(region), region, inv, 1).front().index;
    case Baseline::random:
      return candidates[rng.below(candidates.size())];
    case Baseline::fashion_only: {
      OutfitCode z = negative;
      std::size_t best = candidates.front();
      double best_p = -1.0;
      for (std::size_t i : candidates) {
        z.set_garment(region, inv.records[i].code);
        const double p = clf.score(z.flatten()).p;
        if (p > best_p || (p == best_p && inv.records[i].id < inv.records[best].id)) {
          best_p = p;
          best = i;
        }
      }
      return best;
    }
  }
  return candidates.front();
}

nlohmann::json eval_config_to_json(const EvalConfig& c) {
  return {{"neighbors", c.neighbors},     {"max_steps", c.max_steps},
          {"report_steps", c.report_steps}, {"step", c.step},
          {"log_prob", c.log_prob},         {"aggregation", aggregation_name(c.aggregation)},
          {"seed", c.seed},                 {"methods", c.methods}};
}

EvalConfig eval_config_from_json(const nlohmann::json& j) {
  EvalConfig c;
  c.neighbors = j.value("neighbors", c.neighbors);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.report_steps = j.value("report_steps", c.report_steps);
  c.step = j.value("step", c.step);
  c.log_prob = j.value("log_prob", c.log_prob);
  c.aggregation = aggregation_from_name(j.value("aggregation", std::string("min")));
  c.seed = j.value("seed", c.seed);
  c.methods = j.value("methods", c.methods);
  return c;
}

const MethodSummary& EvalReport::summary(const std::string& method) const {
  for (const auto& s : summaries)
    if (s.method == method) return s;
  throw std::out_of_range("no summary for method " + method);
}

namespace {

const std::vector<std::string> kKnownMethods = {"similarity_only", "fashion_only", "random", "minimal_edit",
                                                "auto_minimal_edit"};

std::string step_method(int k) { return "minimal_edit@" + std::to_string(k); }

}  // namespace

EvalReport evaluate_suite(std::span<const EvalCase> cases, std::span<const OutfitCode> gt_corpus,
                          std::span<const std::string> gt_ids, const Inventory& inventory,
                          const std::map<std::string, OutfitSpec>& inventory_specs, const FashionClassifier& clf,
                          const LabelSchema& schema, const EvalConfig& config) {
  if (cases.empty()) throw std::invalid_argument("no evaluation cases");
  if (config.max_steps < 0 || config.report_steps < 0 || config.report_steps > config.max_steps)
    throw std::invalid_argument("report_steps must lie in 0..max_steps");
  for (const auto& m : config.methods)
    if (std::find(kKnownMethods.begin(), kKnownMethods.end(), m) == kKnownMethods.end())
      throw std::invalid_argument("unknown evaluation method '" + m + "'");
  auto wants = [&](const std::string& m) {
    return std::find(config.methods.begin(), config.methods.end(), m) != config.methods.end();
  };
  auto spec_of = [&](const GarmentRecord& g) -> const OutfitSpec& {
    const auto it = inventory_specs.find(g.source_id);
    if (it == inventory_specs.end()) throw std::invalid_argument("no spec for inventory outfit " + g.source_id);
    return it->second;
  };

  EvalReport report;
  report.config = config;
  report.mean_p_by_step.assign(static_cast<std::size_t>(config.max_steps) + 1, 0.0);
  std::vector<double> sim_changes;

  EditConfig edit_cfg;
  edit_cfg.step = config.step;
  edit_cfg.steps = config.max_steps;
  edit_cfg.log_prob = config.log_prob;

  for (std::size_t c = 0; c < cases.size(); ++c) {
    const auto& ec = cases[c];
    const int region = ec.swap.region;
    const auto original = ec.code.garment(region);
    const auto gt = build_gt_set(ec.id, ec.code, region, ec.swap.donor, gt_corpus, gt_ids, config.neighbors);
    const double before = oracle_score(ec.spec).total;

    auto record = [&](const std::string& method, int changed_region, std::size_t garment,
                      std::vector<double> p) -> EvalRecord {
      const auto& g = inventory.records[garment];
      EvalRecord r;
      r.method = method;
      r.case_id = ec.id;
      r.region = changed_region;
      r.garment_id = g.id;
      // Metrics are taken on the swapped region; a method that changed some
      // other garment leaves it as it was.
      const auto edited = changed_region == region ? g.code : original;
      r.raw_change = euclidean(original, edited);
      r.improvement = fashion_improvement(original, edited, gt, config.aggregation);
      r.oracle_before = before;
      r.oracle_after = oracle_score(transplant_garment(ec.spec, spec_of(g), changed_region)).total;
      r.p = std::move(p);
      return r;
    };

    Rng rng(derive_seed(config.seed, c));
    const auto sim = record("similarity_only", region,
                            run_baseline(Baseline::similarity_only, ec.code, region, inventory, clf, rng), {});
    sim_changes.push_back(sim.raw_change);
    if (wants("similarity_only")) report.records.push_back(sim);
    if (wants("fashion_only"))
      report.records.push_back(
          record("fashion_only", region, run_baseline(Baseline::fashion_only, ec.code, region, inventory, clf, rng), {}));
    if (wants("random"))
      report.records.push_back(
          record("random", region, run_baseline(Baseline::random, ec.code, region, inventory, clf, rng), {}));

    const auto traj = edit_codes(ec.code, {EditMode::region, region, Aspect::both}, edit_cfg, clf, schema);
    for (int k = 0; k <= config.max_steps; ++k) report.mean_p_by_step[k] += traj.p[k];
    if (wants("minimal_edit")) {
      for (int k = 0; k <= config.max_steps; ++k) {
        const auto hit = retrieve_garment(traj.codes[k].garment(region), region, inventory, 1).front().index;
        std::vector<double> p(traj.p.begin(), traj.p.begin() + k + 1);
        report.records.push_back(record(step_method(k), region, hit, p));
        if (k == config.report_steps) report.records.push_back(record("minimal_edit", region, hit, p));
      }
    }
    if (wants("auto_minimal_edit")) {
      EditConfig auto_cfg = edit_cfg;
      auto_cfg.steps = config.report_steps;
      const auto at = edit_codes(ec.code, {EditMode::automatic, -1, Aspect::both}, auto_cfg, clf, schema);
      const auto hit = retrieve_garment(at.codes.back().garment(at.region), at.region, inventory, 1).front().index;
      report.records.push_back(record("auto_minimal_edit", at.region, hit, at.p));
    }
  }
  for (auto& v : report.mean_p_by_step) v /= static_cast<double>(cases.size());

  const double sim_mean = std::accumulate(sim_changes.begin(), sim_changes.end(), 0.0) / static_cast<double>(sim_changes.size());
  for (auto& r : report.records) r.change = r.raw_change - sim_mean;

  std::vector<std::string> order;
  for (const auto& r : report.records)
    if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
  for (const auto& method : order) {
    MethodSummary s;
    s.method = method;
    std::vector<double> ratios;
    std::size_t improved = 0;
    for (const auto& r : report.records) {
      if (r.method != method) continue;
      ++s.cases;
      s.mean_change += r.change;
      s.mean_oracle_delta += r.oracle_after - r.oracle_before;
      improved += r.oracle_after > r.oracle_before;
      if (r.improvement.degenerate)
        ++s.degenerate;
      else
        ratios.push_back(r.improvement.ratio);
    }
    s.mean_change /= static_cast<double>(s.cases);
    s.mean_oracle_delta /= static_cast<double>(s.cases);
    s.oracle_improved_fraction = static_cast<double>(improved) / static_cast<double>(s.cases);
    if (!ratios.empty()) s.mean_improvement = std::accumulate(ratios.begin(), ratios.end(), 0.0) / static_cast<double>(ratios.size());
    s.median_improvement = median_of(ratios);
    report.summaries.push_back(s);
  }
  report.provenance["classifier"] = clf.hash();
  return report;
}

nlohmann::json eval_report_to_json(const EvalReport& report) {
  nlohmann::json summaries = nlohmann::json::array();
  for (const auto& s : report.summaries)
    summaries.push_back({{"method", s.method},
                         {"cases", s.cases},
                         {"mean_change", s.mean_change},
                         {"mean_improvement", s.mean_improvement},
                         {"median_improvement", s.median_improvement},
                         {"degenerate", s.degenerate},
                         {"oracle_improved_fraction", s.oracle_improved_fraction},
                         {"mean_oracle_delta", s.mean_oracle_delta}});
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : report.records)
    records.push_back({{"method", r.method},
                       {"case_id", r.case_id},
                       {"region", r.region},
                       {"garment_id", r.garment_id},
                       {"raw_change", r.raw_change},
                       {"change", r.change},
                       {"improvement", r.improvement.ratio},
                       {"degenerate", r.improvement.degenerate},
                       {"oracle_before", r.oracle_before},
                       {"oracle_after", r.oracle_after},
                       {"p", r.p}});
  return {{"config", eval_config_to_json(report.config)},
          {"summaries", summaries},
          {"mean_p_by_step", report.mean_p_by_step},
          {"provenance", report.provenance},
          {"records", records}};
}

std::string eval_report_csv(const EvalReport& report) {
  std::string out = "method,case_id,change,improvement,oracle_delta\n";
  char buf[256];
  for (const auto& r : report.records) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.9g,%.9g,%.9g\n", r.method.c_str(), r.case_id.c_str(), r.change,
                  r.improvement.ratio, r.oracle_after - r.oracle_before);
    out += buf;
  }
  return out;
}

std::string eval_report_svg(const EvalReport& report) {
  std::vector<const MethodSummary*> pts;
  for (const auto& s : report.summaries)
    if (s.method.find('@') == std::string::npos) pts.push_back(&s);
  double x0 = 0, x1 = 0, y0 = 1, y1 = 1;
  for (const auto* s : pts) {
    x0 = std::min(x0, s->mean_change);
    x1 = std::max(x1, s->mean_change);
    y0 = std::min(y0, s->mean_improvement);
    y1 = std::max(y1, s->mean_improvement);
  }
  const double padx = std::max(1e-6, 0.1 * (x1 - x0)), pady = std::max(1e-6, 0.1 * (y1 - y0));
  x0 -= padx;
  x1 += padx;
  y0 -= pady;
  y1 += pady;
  const double w = 480, h = 360, m = 50;
  auto sx = [&](double v) { return m + (v - x0) / (x1 - x0) * (w - 2 * m); };
  auto sy = [&](double v) { return h - m - (v - y0) / (y1 - y0) * (h - 2 * m); };
  std::ostringstream o;
  o.precision(6);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<line x1=\"" << m << "\" y1=\"" << h - m << "\" x2=\"" << w - m << "\" y2=\"" << h - m << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << m << "\" y1=\"" << m << "\" x2=\"" << m << "\" y2=\"" << h - m << "\" stroke=\"black\"/>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\">amount of change</text>\n";
  o << "<text x=\"14\" y=\"" << h / 2 << "\" transform=\"rotate(-90 14 " << h / 2
    << ")\" text-anchor=\"middle\">fashion improvement</text>\n";
  for (const auto* s : pts) {
    o << "<circle cx=\"" << sx(s->mean_change) << "\" cy=\"" << sy(s->mean_improvement) << "\" r=\"5\" fill=\"#3465a4\"/>\n";
    o << "<text x=\"" << sx(s->mean_change) + 8 << "\" y=\"" << sy(s->mean_improvement) - 6
      << "\" font-size=\"11\">" << s->method << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string feature_subset_name(FeatureSubset s) {
  switch (s) {
    case FeatureSubset::texture: return "texture";
    case FeatureSubset::shape: return "shape";
    case FeatureSubset::both: return "both";
  }
  return "both";
}

std::vector<double> slice_code(std::span<const double> z, int regions, int d_t, int d_s, FeatureSubset subset) {
  const int g = d_t + d_s;
  if (z.size() != static_cast<std::size_t>(regions) * g) throw std::invalid_argument("code width does not match");
  if (subset == FeatureSubset::both) return {z.begin(), z.end()};
  std::vector<double> out;
  for (int r = 0; r < regions; ++r) {
    const auto base = z.begin() + static_cast<std::ptrdiff_t>(r) * g;
    if (subset == FeatureSubset::texture)
      out.insert(out.end(), base, base + d_t);
    else
      out.insert(out.end(), base + d_t, base + g);
  }
  return out;
}

std::vector<AblationRow> ablation_study(std::span<const std::vector<double>> train, std::span<const int> train_labels,
                                        std::span<const std::vector<double>> val, std::span<const int> val_labels,
                                        int regions, int d_t, int d_s, const ClassifierConfig& config) {
  std::vector<AblationRow> rows;
  for (auto subset : {FeatureSubset::texture, FeatureSubset::shape, FeatureSubset::both}) {
    std::vector<std::vector<double>> tr, va;
    for (const auto& z : train) tr.push_back(slice_code(z, regions, d_t, d_s, subset));
    for (const auto& z : val) va.push_back(slice_code(z, regions, d_t, d_s, subset));
    const auto clf = train_classifier(tr, train_labels, config);
    rows.push_back({subset, tr.empty() ? 0 : tr[0].size(), classification_accuracy(clf, va, val_labels)});
  }
  return rows;
}

}  // namespace outfit
