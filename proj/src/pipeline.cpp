#include "outfit/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "outfit/image.hpp"
#include "outfit/serialize.hpp"
#include "outfit/util.hpp"

namespace outfit {

namespace fs = std::filesystem;

PipelineConfig PipelineConfig::desk() {
  PipelineConfig c;
  c.vae.epochs_constant = 15;
  c.vae.epochs_decay = 10;
  c.gan.epochs_constant = 25;
  c.gan.epochs_decay = 15;
  return c;
}

nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
  return {{"work_dir", c.work_dir.string()},
          {"dataset", dataset_config_to_json(c.dataset)},
          {"vae", vae_config_to_json(c.vae)},
          {"gan", gan_config_to_json(c.gan)},
          {"classifier", classifier_config_to_json(c.classifier)},
          {"edit", edit_config_to_json(c.edit)},
          {"eval", eval_config_to_json(c.eval)},
          {"eval_cases", c.eval_cases},
          {"use_cache", c.use_cache}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const PipelineConfig& base) {
  auto merged = pipeline_config_to_json(base);
  for (const auto& key : {"dataset", "vae", "gan", "classifier", "edit", "eval"})
    if (j.contains(key)) merged[key].update(j.at(key));
  for (const auto& key : {"work_dir", "eval_cases", "use_cache"})
    if (j.contains(key)) merged[key] = j.at(key);
  for (const auto& [key, _] : j.items())
    if (!merged.contains(key)) throw std::invalid_argument("unknown pipeline config field '" + key + "'");

  PipelineConfig c;
  c.work_dir = merged.at("work_dir").get<std::string>();
  c.dataset = dataset_config_from_json(merged.at("dataset"));
  c.vae = vae_config_from_json(merged.at("vae"));
  c.gan = gan_config_from_json(merged.at("gan"));
  c.classifier = classifier_config_from_json(merged.at("classifier"));
  c.edit = edit_config_from_json(merged.at("edit"));
  c.eval = eval_config_from_json(merged.at("eval"));
  c.eval_cases = merged.at("eval_cases").get<int>();
  c.use_cache = merged.at("use_cache").get<bool>();
  if (c.eval_cases <= 0) throw std::invalid_argument("eval_cases must be positive");
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  try {
    return pipeline_config_from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("cannot parse config " + path.string() + ": " + e.what());
  }
}

std::string PipelineConfig::hash() const {
  auto j = pipeline_config_to_json(*this);
  j.erase("work_dir");
  j.erase("use_cache");
  return sha256_hex(canonical_dump(j));
}

ModelBundle load_models(const fs::path& shape_ck, const fs::path& texture_ck, const fs::path& classifier_ck,
                        const fs::path& inventory_jsonl) {
  ModelBundle b;
  b.shape = std::make_unique<ShapeCodec>(ShapeCodec::load(shape_ck));
  b.texture = std::make_unique<TextureCodec>(TextureCodec::load(texture_ck));
  b.classifier = FashionClassifier::load(classifier_ck);
  b.inventory = inventory_from_jsonl(read_text_file(inventory_jsonl));
  if (!(b.shape->schema() == b.texture->schema())) throw std::runtime_error("shape and texture checkpoints disagree on schema");
  const auto width = static_cast<std::size_t>(b.shape->schema().size()) * (b.shape->code_dim() + b.texture->code_dim());
  if (b.classifier.input_width() != width) throw std::runtime_error("classifier input width does not match the codecs");
  b.hashes["shape"] = sha256_file(shape_ck);
  b.hashes["texture"] = sha256_file(texture_ck);
  b.hashes["classifier"] = sha256_file(classifier_ck);
  b.hashes["inventory"] = sha256_file(inventory_jsonl);
  return b;
}

EditResult run_edit(const ModelBundle& models, const Image& x, const RegionMap& m, const EditTarget& target,
                    const EditConfig& config, int top_k) {
  const auto& schema = models.shape->schema();
  const auto report = validate_region_map(m, schema, x.height(), x.width());
  if (!report.ok()) throw std::invalid_argument("invalid region map: " + report.issues.front().message);
  EditResult r;
  const auto z0 = encode_outfit(x, m, *models.texture, *models.shape);
  r.trajectory = edit_codes(z0, target, config, models.classifier, schema, &models.inventory);
  for (const auto& z : r.trajectory.codes) {
    r.frames.push_back(render_edit(z, *models.texture, *models.shape, x, m).image);
    if (r.trajectory.region >= 0 && models.inventory.count(r.trajectory.region) > 0)
      r.hits.push_back(retrieve_garment(z.garment(r.trajectory.region), r.trajectory.region, models.inventory, top_k));
    else
      r.hits.emplace_back();
  }
  return r;
}

void write_edit_result(const EditResult& result, const ModelBundle& models, const fs::path& out_dir) {
  fs::create_directories(out_dir / "frames");
  for (std::size_t k = 0; k < result.frames.size(); ++k)
    write_png(out_dir / "frames" / (std::to_string(k) + ".png"), result.frames[k]);
  auto j = trajectory_to_json(result.trajectory);
  j["checkpoint_hashes"] = models.hashes;
  nlohmann::json retrieval = nlohmann::json::array();
  for (const auto& hits : result.hits) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& h : hits) row.push_back({{"id", models.inventory.records[h.index].id}, {"distance", h.distance}});
    retrieval.push_back(row);
  }
  j["retrieval"] = retrieval;
  write_file_atomic(out_dir / "trajectory.json", j.dump(1));
}

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) {
  fs::create_directories(config_.work_dir / "logs");
  fs::create_directories(config_.work_dir / "stamps");
}

void Pipeline::log(const std::string& stage, nlohmann::json fields) const {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char ts[32];
  std::strftime(ts, sizeof ts, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  fields["time"] = ts;
  fields["stage"] = stage;
  fields["config_hash"] = config_.hash();
  const auto line = fields.dump();
  std::ofstream(config_.work_dir / "logs" / "run.jsonl", std::ios::app) << line << "\n";
  std::cerr << line << "\n";
}

std::string Pipeline::file_hash(const std::string& rel) const {
  const auto p = path(rel);
  return fs::exists(p) ? sha256_file(p) : std::string();
}

bool Pipeline::fresh(const std::string& stage, const std::string& key) const {
  if (!config_.use_cache) return false;
  const auto p = path("stamps/" + stage + ".json");
  if (!fs::exists(p)) return false;
  const auto j = nlohmann::json::parse(read_text_file(p), nullptr, false);
  if (j.is_discarded() || j.value("key", "") != key) return false;
  for (const auto& [rel, sha] : j.at("outputs").items())
    if (file_hash(rel) != sha.get<std::string>()) return false;
  return true;
}

void Pipeline::stamp(const std::string& stage, const std::string& key, const std::vector<std::string>& outputs) const {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& rel : outputs) out[rel] = file_hash(rel);
  write_file_atomic(path("stamps/" + stage + ".json"), canonical_dump({{"key", key}, {"outputs", out}}));
}

namespace {

std::string key_of(const nlohmann::json& j) { return sha256_hex(canonical_dump(j)); }

struct SplitData {
  std::vector<std::string> ids;
  std::vector<Image> images;
  std::vector<RegionMap> maps;
  std::vector<std::vector<int>> solid;
};

SplitData load_split(const DatasetManifest& manifest, Split s) {
  SplitData d;
  for (const auto* r : manifest.split(s)) {
    d.ids.push_back(r->id);
    d.images.push_back(read_png_rgb(manifest.image_path(*r)));
    d.maps.push_back(read_png_map(manifest.map_path(*r)));
    d.solid.push_back(solid_garment_labels(r->spec));
  }
  return d;
}

}  // namespace

DatasetManifest Pipeline::manifest() const { return read_manifest(path("data/manifest.jsonl")); }

DatasetManifest Pipeline::synth() {
  const auto key = key_of({{"dataset", dataset_config_to_json(config_.dataset)}});
  if (fresh("synth", key)) return manifest();
  log("synth", {{"event", "start"}, {"total", config_.dataset.total()}});
  auto result = build_dataset(config_.dataset, path("data"));
  for (const auto& w : result.warnings) log("synth", {{"event", "warning"}, {"message", w}});
  stamp("synth", key, {"data/manifest.jsonl"});
  log("synth", {{"event", "done"}, {"positive_rate", result.positive_rate}, {"manifest", file_hash("data/manifest.jsonl")}});
  return std::move(result.manifest);
}

void Pipeline::train_shape() {
  const auto key = key_of({{"vae", vae_config_to_json(config_.vae)}, {"manifest", file_hash("data/manifest.jsonl")}});
  if (fresh("train-shape", key)) return;
  const auto m = manifest();
  const auto train = load_split(m, Split::gen_train);
  const auto held = load_split(m, Split::val);
  const int size = config_.dataset.image_size;
  ShapeCodec codec(LabelSchema::outfit_default(), size, size, config_.vae);
  log("train-shape", {{"event", "start"}, {"train", train.maps.size()}, {"heldout", held.maps.size()}});
  const auto history = train_shape_vae(codec, train.maps, held.maps, [&](const ShapeEpochLog& e) {
    log("train-shape", {{"epoch", e.epoch}, {"kl", e.kl}, {"l1", e.l1}, {"heldout_accuracy", e.heldout_accuracy}});
  });
  fs::create_directories(path("models"));
  fs::create_directories(path("metrics"));
  codec.save(path("models/shape.ck"));
  write_file_atomic(path("models/shape_loss.csv"), shape_log_csv(history));
  const double acc = reconstruction_accuracy(codec, held.maps);
  write_file_atomic(path("metrics/shape.json"), canonical_dump({{"heldout_accuracy", acc}, {"epochs", history.size()}}));
  stamp("train-shape", key, {"models/shape.ck", "models/shape_loss.csv", "metrics/shape.json"});
  log("train-shape", {{"event", "done"}, {"heldout_accuracy", acc}, {"checkpoint", file_hash("models/shape.ck")}});
}

void Pipeline::train_texture() {
  const auto key = key_of({{"gan", gan_config_to_json(config_.gan)}, {"manifest", file_hash("data/manifest.jsonl")}});
  if (fresh("train-texture", key)) return;
  const auto m = manifest();
  const auto train = load_split(m, Split::gen_train);
  const auto held = load_split(m, Split::val);
  const int size = config_.dataset.image_size;
  TextureCodec codec(LabelSchema::outfit_default(), size, size, config_.gan);
  log("train-texture", {{"event", "start"}, {"train", train.images.size()}});
  const auto history = train_texture_gan(codec, train.images, train.maps, [&](const TextureEpochLog& e) {
    log("train-texture", {{"epoch", e.epoch}, {"g_adv", e.g_adv}, {"d_real", e.d_real}, {"d_fake", e.d_fake},
                          {"fm", e.fm}, {"l1", e.l1}});
  });
  fs::create_directories(path("models"));
  fs::create_directories(path("metrics"));
  codec.save(path("models/texture.ck"));
  write_file_atomic(path("models/texture_loss.csv"), texture_log_csv(history));
  const auto q = reconstruction_quality(codec, held.images, held.maps, held.solid);
  const nlohmann::json metrics = {{"mae", q.mae},
                                  {"max_hue_error", q.max_hue_error},
                                  {"mean_hue_error", q.mean_hue_error},
                                  {"hue_samples", q.hue_samples}};
  write_file_atomic(path("metrics/texture.json"), canonical_dump(metrics));
  stamp("train-texture", key, {"models/texture.ck", "models/texture_loss.csv", "metrics/texture.json"});
  log("train-texture", {{"event", "done"}, {"quality", metrics}, {"checkpoint", file_hash("models/texture.ck")}});
}

void Pipeline::encode() {
  const auto key = key_of({{"shape", file_hash("models/shape.ck")},
                           {"texture", file_hash("models/texture.ck")},
                           {"manifest", file_hash("data/manifest.jsonl")}});
  if (fresh("encode", key)) return;
  const auto m = manifest();
  const auto shape = ShapeCodec::load(path("models/shape.ck"));
  const auto texture = TextureCodec::load(path("models/texture.ck"));
  log("encode", {{"event", "start"}, {"outfits", m.records.size()}});
  std::string out;
  for (const auto& r : m.records) {
    const auto code = encode_outfit(read_png_rgb(m.image_path(r)), read_png_map(m.map_path(r)), texture, shape);
    out += canonical_dump({{"id", r.id}, {"code", code_to_json(code)}}) + "\n";
  }
  fs::create_directories(path("codes"));
  write_file_atomic(path("codes/codes.jsonl"), out);
  stamp("encode", key, {"codes/codes.jsonl"});
  log("encode", {{"event", "done"}, {"codes", file_hash("codes/codes.jsonl")}});
}

std::map<std::string, OutfitCode> Pipeline::codes() const {
  std::map<std::string, OutfitCode> out;
  std::istringstream in(read_text_file(path("codes/codes.jsonl")));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) {
      const auto j = nlohmann::json::parse(line);
      out.emplace(j.at("id").get<std::string>(), code_from_json(j.at("code")));
    }
  return out;
}

void Pipeline::mine_negatives() {
  const auto key = key_of({{"codes", file_hash("codes/codes.jsonl")},
                           {"manifest", file_hash("data/manifest.jsonl")},
                           {"seed", config_.dataset.seed}});
  if (fresh("mine-negatives", key)) return;
  const auto m = manifest();
  const auto all = codes();
  const auto schema = LabelSchema::outfit_default();
  std::string out;
  std::map<std::string, int> counts;
  for (Split s : {Split::cls_train, Split::val, Split::test}) {
    std::vector<OutfitCode> corpus;
    std::vector<std::string> ids;
    std::vector<bool> positive;
    for (const auto* r : m.split(s)) {
      corpus.push_back(all.at(r->id));
      ids.push_back(r->id);
      positive.push_back(r->positive);
    }
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (!positive[i]) continue;
      Rng rng(derive_seed(config_.dataset.seed, 0x6e656700ULL + static_cast<std::uint64_t>(std::stoull(ids[i]))));
      const auto neg = make_negative(i, corpus, ids, schema, rng);
      out += canonical_dump({{"split", split_name(s)}, {"code", code_to_json(neg.code)}, {"swap", swap_record_to_json(neg.swap)}}) + "\n";
      ++counts[split_name(s)];
    }
  }
  fs::create_directories(path("negatives"));
  write_file_atomic(path("negatives/negatives.jsonl"), out);
  stamp("mine-negatives", key, {"negatives/negatives.jsonl"});
  if (counts["test"] < config_.eval_cases)
    log("mine-negatives", {{"event", "warning"},
                           {"message", "only " + std::to_string(counts["test"]) + " test negatives for " +
                                           std::to_string(config_.eval_cases) + " evaluation cases"}});
  log("mine-negatives", {{"event", "done"}, {"counts", counts}, {"negatives", file_hash("negatives/negatives.jsonl")}});
}

std::vector<NegativeRecord> Pipeline::negatives() const {
  std::vector<NegativeRecord> out;
  std::istringstream in(read_text_file(path("negatives/negatives.jsonl")));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) {
      const auto j = nlohmann::json::parse(line);
      out.push_back({split_from_name(j.at("split").get<std::string>()), code_from_json(j.at("code")),
                     swap_record_from_json(j.at("swap"))});
    }
  return out;
}

namespace {

struct LabelledRows {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
};

// Positives of a split plus the negatives mined from them.
LabelledRows labelled_rows(const DatasetManifest& m, const std::map<std::string, OutfitCode>& codes,
                           const std::vector<NegativeRecord>& negs, Split s) {
  LabelledRows out;
  for (const auto* r : m.split(s))
    if (r->positive) {
      out.rows.push_back(codes.at(r->id).flatten());
      out.labels.push_back(1);
    }
  for (const auto& n : negs)
    if (n.split == s) {
      out.rows.push_back(n.code.flatten());
      out.labels.push_back(0);
    }
  return out;
}

}  // namespace

void Pipeline::train_classifier() {
  const auto key = key_of({{"classifier", classifier_config_to_json(config_.classifier)},
                           {"codes", file_hash("codes/codes.jsonl")},
                           {"negatives", file_hash("negatives/negatives.jsonl")}});
  if (fresh("train-classifier", key)) return;
  const auto m = manifest();
  const auto all = codes();
  const auto negs = negatives();
  const auto train = labelled_rows(m, all, negs, Split::cls_train);
  const auto val = labelled_rows(m, all, negs, Split::val);
  log("train-classifier", {{"event", "start"}, {"train", train.rows.size()}, {"val", val.rows.size()}});
  const auto clf = outfit::train_classifier(train.rows, train.labels, config_.classifier, [&](const ClassifierEpochLog& e) {
    if (e.epoch % 10 == 0 || e.epoch + 1 == config_.classifier.epochs)
      log("train-classifier", {{"epoch", e.epoch}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy}, {"lr", e.learning_rate}});
  });
  fs::create_directories(path("models"));
  fs::create_directories(path("metrics"));
  clf.save(path("models/classifier.ck"));
  const double acc = classification_accuracy(clf, val.rows, val.labels);
  const nlohmann::json metrics = {{"val_accuracy", acc},
                                  {"train_accuracy", classification_accuracy(clf, train.rows, train.labels)},
                                  {"train_rows", train.rows.size()},
                                  {"val_rows", val.rows.size()}};
  write_file_atomic(path("metrics/classifier.json"), canonical_dump(metrics));
  stamp("train-classifier", key, {"models/classifier.ck", "metrics/classifier.json"});
  log("train-classifier", {{"event", "done"}, {"metrics", metrics}});
}

void Pipeline::build_inventory() {
  const auto key = key_of({{"codes", file_hash("codes/codes.jsonl")}, {"manifest", file_hash("data/manifest.jsonl")}});
  if (fresh("build-inventory", key)) return;
  const auto m = manifest();
  const auto all = codes();
  const auto schema = LabelSchema::outfit_default();
  std::vector<std::string> ids;
  std::vector<OutfitCode> codes;
  for (const auto* r : m.split(Split::gen_train)) {
    ids.push_back(r->id);
    codes.push_back(all.at(r->id));
  }
  const auto inv = outfit::build_inventory(ids, codes, schema);
  fs::create_directories(path("inventory/thumbs"));
  // Thumbnails: the garment's own pixels on a plain canvas.
  for (const auto& g : inv.records) {
    const auto& rec = m.find(g.source_id);
    auto img = read_png_rgb(m.image_path(rec));
    const auto map = read_png_map(m.map_path(rec));
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x)
        if (map.at(y, x) != g.region) img.set(y, x, {240, 240, 240});
    write_png(path("inventory/" + g.thumbnail), img);
  }
  write_file_atomic(path("inventory/inventory.jsonl"), inventory_to_jsonl(inv));
  stamp("build-inventory", key, {"inventory/inventory.jsonl"});
  log("build-inventory", {{"event", "done"}, {"garments", inv.records.size()}, {"inventory", file_hash("inventory/inventory.jsonl")}});
}

ModelBundle Pipeline::models() const {
  return load_models(path("models/shape.ck"), path("models/texture.ck"), path("models/classifier.ck"),
                     path("inventory/inventory.jsonl"));
}

EvalReport Pipeline::evaluate() {
  const auto m = manifest();
  const auto all = codes();
  const auto negs = negatives();
  const auto clf = FashionClassifier::load(path("models/classifier.ck"));
  const auto inv = inventory_from_jsonl(read_text_file(path("inventory/inventory.jsonl")));

  std::vector<EvalCase> cases;
  for (const auto& n : negs) {
    if (n.split != Split::test) continue;
    if (static_cast<int>(cases.size()) >= config_.eval_cases) break;
    EvalCase c;
    c.id = n.swap.positive_id;
    c.code = n.code;
    c.swap = n.swap;
    c.spec = transplant_garment(m.find(n.swap.positive_id).spec, m.find(n.swap.donor_id).spec, n.swap.region);
    cases.push_back(std::move(c));
  }
  std::vector<OutfitCode> corpus;
  std::vector<std::string> corpus_ids;
  for (Split s : {Split::cls_train, Split::val, Split::test})
    for (const auto* r : m.split(s))
      if (r->positive) {
        corpus.push_back(all.at(r->id));
        corpus_ids.push_back(r->id);
      }
  std::map<std::string, OutfitSpec> specs;
  for (const auto* r : m.split(Split::gen_train)) specs[r->id] = r->spec;

  log("evaluate", {{"event", "start"}, {"cases", cases.size()}, {"gt_corpus", corpus.size()}});
  auto report = evaluate_suite(cases, corpus, corpus_ids, inv, specs, clf, LabelSchema::outfit_default(), config_.eval);
  report.provenance["inventory"] = file_hash("inventory/inventory.jsonl");
  report.provenance["codes"] = file_hash("codes/codes.jsonl");
  report.provenance["manifest"] = file_hash("data/manifest.jsonl");
  report.provenance["config"] = config_.hash();
  fs::create_directories(path("eval"));
  write_file_atomic(path("eval/report.json"), eval_report_to_json(report).dump(1));
  write_file_atomic(path("eval/report.csv"), eval_report_csv(report));
  write_file_atomic(path("eval/report.svg"), eval_report_svg(report));
  nlohmann::json brief = nlohmann::json::object();
  for (const auto& s : report.summaries)
    if (s.method.find('@') == std::string::npos)
      brief[s.method] = {{"change", s.mean_change}, {"improvement", s.mean_improvement},
                         {"oracle_improved", s.oracle_improved_fraction}};
  log("evaluate", {{"event", "done"}, {"summary", brief}, {"mean_p_by_step", report.mean_p_by_step}});
  return report;
}

std::vector<AblationRow> Pipeline::ablate() {
  const auto m = manifest();
  const auto all = codes();
  const auto negs = negatives();
  const auto train = labelled_rows(m, all, negs, Split::cls_train);
  const auto val = labelled_rows(m, all, negs, Split::val);
  const auto& any = all.begin()->second;
  const auto rows = ablation_study(train.rows, train.labels, val.rows, val.labels, any.regions(), any.texture_dim(),
                                   any.shape_dim(), config_.classifier);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) j.push_back({{"features", feature_subset_name(r.subset)}, {"width", r.width}, {"accuracy", r.accuracy}});
  fs::create_directories(path("eval"));
  write_file_atomic(path("eval/ablation.json"), canonical_dump(j));
  log("ablate", {{"event", "done"}, {"rows", j}});
  return rows;
}

void Pipeline::run_all() {
  synth();
  train_shape();
  train_texture();
  encode();
  mine_negatives();
  train_classifier();
  build_inventory();
  evaluate();
  ablate();
}

std::map<std::string, std::string> Pipeline::artifact_hashes() const {
  std::map<std::string, std::string> out;
  if (!fs::exists(config_.work_dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(config_.work_dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), config_.work_dir).generic_string();
    if (rel.rfind("logs/", 0) == 0 || rel.rfind("stamps/", 0) == 0) continue;
    out[rel] = sha256_file(e.path());
  }
  return out;
}

}  // namespace outfit
