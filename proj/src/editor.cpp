#include "outfit/editor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "outfit/serialize.hpp"

namespace outfit {

std::string aspect_name(Aspect a) {
  switch (a) {
    case Aspect::shape_only: return "shape_only";
    case Aspect::texture_only: return "texture_only";
    case Aspect::both: return "both";
  }
  return "both";
}

Aspect aspect_from_name(const std::string& s) {
  if (s == "shape_only" || s == "shape") return Aspect::shape_only;
  if (s == "texture_only" || s == "texture") return Aspect::texture_only;
  if (s == "both") return Aspect::both;
  throw std::invalid_argument("unknown aspect '" + s + "'");
}

std::string edit_mode_name(EditMode m) {
  switch (m) {
    case EditMode::region: return "region";
    case EditMode::automatic: return "auto";
    case EditMode::all: return "all";
  }
  return "auto";
}

EditMode edit_mode_from_name(const std::string& s) {
  if (s == "region") return EditMode::region;
  if (s == "auto") return EditMode::automatic;
  if (s == "all") return EditMode::all;
  throw std::invalid_argument("unknown edit mode '" + s + "'");
}

void EditConfig::check() const {
  if (!(step > 0.0) || !std::isfinite(step)) throw std::invalid_argument("step size must be positive");
  if (steps < 0) throw std::invalid_argument("step count must be non-negative");
}

nlohmann::json edit_target_to_json(const EditTarget& t) {
  return {{"mode", edit_mode_name(t.mode)}, {"region", t.region}, {"aspect", aspect_name(t.aspect)}};
}

EditTarget edit_target_from_json(const nlohmann::json& j) {
  EditTarget t;
  t.mode = edit_mode_from_name(j.value("mode", std::string("auto")));
  t.region = j.value("region", -1);
  t.aspect = aspect_from_name(j.value("aspect", std::string("both")));
  return t;
}

nlohmann::json edit_config_to_json(const EditConfig& c) {
  return {{"step", c.step}, {"steps", c.steps}, {"add_garment", c.add_garment}, {"log_prob", c.log_prob}};
}

EditConfig edit_config_from_json(const nlohmann::json& j) {
  EditConfig c;
  c.step = j.value("step", c.step);
  c.steps = j.value("steps", c.steps);
  c.add_garment = j.value("add_garment", c.add_garment);
  c.log_prob = j.value("log_prob", c.log_prob);
  c.check();
  return c;
}

std::vector<double> Inventory::mean_code(int region) const {
  std::vector<double> mean(static_cast<std::size_t>(d_t + d_s), 0.0);
  std::size_t n = 0;
  for (const auto& r : records) {
    if (r.region != region) continue;
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += r.code[k];
    ++n;
  }
  if (n == 0) throw EmptyInventorySlice("inventory has no garment for region " + std::to_string(region));
  for (auto& v : mean) v /= static_cast<double>(n);
  return mean;
}

std::size_t Inventory::count(int region) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [&](const GarmentRecord& r) { return r.region == region; }));
}

Inventory build_inventory(std::span<const std::string> ids, std::span<const OutfitCode> codes,
                          const LabelSchema& schema) {
  if (ids.size() != codes.size()) throw std::invalid_argument("id and code counts differ");
  Inventory inv;
  if (!codes.empty()) {
    inv.d_t = codes[0].texture_dim();
    inv.d_s = codes[0].shape_dim();
  }
  for (std::size_t i = 0; i < codes.size(); ++i)
    for (int label : schema.editable)
      if (codes[i].present(label)) {
        GarmentRecord g;
        g.id = ids[i] + "-" + schema.names[label];
        g.source_id = ids[i];
        g.region = label;
        g.code = codes[i].garment(label);
        g.thumbnail = "thumbs/" + g.id + ".png";
        inv.records.push_back(std::move(g));
      }
  return inv;
}

nlohmann::json garment_to_json(const GarmentRecord& g) {
  return {{"id", g.id}, {"source_id", g.source_id}, {"region", g.region}, {"code", g.code}, {"thumbnail", g.thumbnail}};
}

GarmentRecord garment_from_json(const nlohmann::json& j) {
  GarmentRecord g;
  g.id = j.at("id").get<std::string>();
  g.source_id = j.at("source_id").get<std::string>();
  g.region = j.at("region").get<int>();
  g.code = j.at("code").get<std::vector<double>>();
  g.thumbnail = j.value("thumbnail", "");
  return g;
}

std::string inventory_to_jsonl(const Inventory& inv) {
  std::string out = canonical_dump({{"d_t", inv.d_t}, {"d_s", inv.d_s}, {"count", inv.records.size()}}) + "\n";
  for (const auto& g : inv.records) out += canonical_dump(garment_to_json(g)) + "\n";
  return out;
}

Inventory inventory_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("inventory file is empty");
  const auto header = nlohmann::json::parse(line);
  Inventory inv;
  inv.d_t = header.at("d_t").get<int>();
  inv.d_s = header.at("d_s").get<int>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    inv.records.push_back(garment_from_json(nlohmann::json::parse(line)));
    if (inv.records.back().code.size() != static_cast<std::size_t>(inv.d_t + inv.d_s))
      throw std::runtime_error("inventory garment " + inv.records.back().id + " has the wrong code length");
  }
  if (inv.records.size() != header.at("count").get<std::size_t>())
    throw std::runtime_error("inventory record count does not match its header");
  return inv;
}

std::vector<RetrievalHit> retrieve_garment(std::span<const double> code, int region, const Inventory& inv, int top_k) {
  std::vector<RetrievalHit> hits;
  for (std::size_t i = 0; i < inv.records.size(); ++i) {
    const auto& g = inv.records[i];
    if (g.region != region) continue;
    if (g.code.size() != code.size()) throw std::invalid_argument("query code length does not match the inventory");
    double d2 = 0.0;
    for (std::size_t k = 0; k < code.size(); ++k) d2 += (g.code[k] - code[k]) * (g.code[k] - code[k]);
    hits.push_back({i, std::sqrt(d2)});
  }
  if (hits.empty()) throw EmptyInventorySlice("inventory has no garment for region " + std::to_string(region));
  std::sort(hits.begin(), hits.end(), [&](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return inv.records[a.index].id < inv.records[b.index].id;
  });
  if (top_k > 0 && hits.size() > static_cast<std::size_t>(top_k)) hits.resize(top_k);
  return hits;
}

std::vector<bool> target_mask(const OutfitCode& z, int region, Aspect aspect) {
  std::vector<bool> mask(z.width(), false);
  const int g = z.garment_dim(), dt = z.texture_dim();
  for (int r = 0; r < z.regions(); ++r) {
    if (region >= 0 && r != region) continue;
    for (int k = 0; k < g; ++k) {
      const bool texture = k < dt;
      if (aspect == Aspect::both || (texture && aspect == Aspect::texture_only) ||
          (!texture && aspect == Aspect::shape_only))
        mask[static_cast<std::size_t>(r) * g + k] = true;
    }
  }
  return mask;
}

int select_edit_region(const OutfitCode& z, const FashionClassifier& clf, const LabelSchema& schema, bool log_prob) {
  const auto grad = clf.standardized_gradient(z.flatten(), log_prob);
  const int g = z.garment_dim();
  int best = -1;
  double best_norm = -1.0;
  for (int label = 0; label < z.regions(); ++label) {
    if (!schema.is_editable(label) || !z.present(label)) continue;
    double n2 = 0.0;
    for (int k = 0; k < g; ++k) n2 += grad[static_cast<std::size_t>(label) * g + k] * grad[static_cast<std::size_t>(label) * g + k];
    if (n2 > best_norm) {
      best_norm = n2;
      best = label;
    }
  }
  if (best < 0) throw TargetAbsentError("outfit has no editable garment to change");
  return best;
}

EditTrajectory edit_codes(const OutfitCode& z0, const EditTarget& target, const EditConfig& config,
                          const FashionClassifier& clf, const LabelSchema& schema, const Inventory* inventory) {
  config.check();
  if (z0.regions() != schema.size()) throw std::invalid_argument("code and schema disagree on region count");
  if (z0.width() != clf.input_width()) throw std::invalid_argument("code width does not match the classifier");

  EditTrajectory traj;
  traj.target = target;
  traj.config = config;
  OutfitCode start = z0;

  std::vector<bool> mask;
  switch (target.mode) {
    case EditMode::automatic:
      traj.region = select_edit_region(z0, clf, schema, config.log_prob);
      break;
    case EditMode::region: {
      const int r = target.region;
      if (r < 0 || r >= schema.size() || !schema.is_editable(r))
        throw std::invalid_argument("region " + std::to_string(r) + " is not editable");
      if (!z0.present(r)) {
        if (!config.add_garment)
          throw TargetAbsentError("outfit has no " + schema.names[r] + " and garment addition is off");
        if (!inventory) throw std::invalid_argument("adding a garment needs an inventory");
        start.set_garment(r, inventory->mean_code(r));
        start.set_present(r, true);
      }
      traj.region = r;
      break;
    }
    case EditMode::all:
      traj.region = -1;
      break;
  }
  if (traj.region >= 0) {
    mask = target_mask(start, traj.region, target.aspect);
  } else {
    mask.assign(start.width(), false);
    for (int r : schema.editable)
      if (start.present(r)) {
        const auto m = target_mask(start, r, target.aspect);
        for (std::size_t k = 0; k < m.size(); ++k) mask[k] = mask[k] || m[k];
      }
  }

  const auto& sd = clf.standardizer().std;
  auto z = start.flatten();
  const auto presence = start.texture.presence();
  traj.codes.push_back(start);
  traj.p.push_back(clf.score(z).p);
  for (int k = 0; k < config.steps; ++k) {
    const auto g = clf.standardized_gradient(z, config.log_prob);
    for (std::size_t i = 0; i < z.size(); ++i)
      if (mask[i]) z[i] += sd[i] * config.step * g[i];
    traj.codes.push_back(OutfitCode::unflatten(z, start.regions(), start.texture_dim(), start.shape_dim(), presence));
    traj.p.push_back(clf.score(z).p);
  }
  return traj;
}

nlohmann::json trajectory_to_json(const EditTrajectory& t) {
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t k = 0; k < t.codes.size(); ++k) steps.push_back({{"k", k}, {"p", t.p[k]}, {"code", code_to_json(t.codes[k])}});
  return {{"target", edit_target_to_json(t.target)},
          {"region", t.region},
          {"config", edit_config_to_json(t.config)},
          {"steps", steps}};
}

EditTrajectory trajectory_from_json(const nlohmann::json& j) {
  EditTrajectory t;
  t.target = edit_target_from_json(j.at("target"));
  t.region = j.at("region").get<int>();
  t.config = edit_config_from_json(j.at("config"));
  for (const auto& s : j.at("steps")) {
    t.p.push_back(s.at("p").get<double>());
    t.codes.push_back(code_from_json(s.at("code")));
  }
  return t;
}

}  // namespace outfit
