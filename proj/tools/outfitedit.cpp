// Command-line driver for the whole pipeline.
#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "outfit/image.hpp"
#include "outfit/pipeline.hpp"
#include "outfit/service.hpp"
#include "outfit/util.hpp"

using namespace outfit;
namespace fs = std::filesystem;

namespace {

// "a.b.c=value": value is read as JSON when it parses, else as a string.
void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw CLI::ValidationError("--set", "expected key=value, got '" + assignment + "'");
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  auto value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  std::string pointer = "/" + key;
  std::replace(pointer.begin(), pointer.end(), '.', '/');
  const nlohmann::json::json_pointer ptr(pointer);
  if (!j.contains(ptr)) throw CLI::ValidationError("--set", "unknown config field '" + key + "'");
  j[ptr] = value;
}

// Splits the default sizes in proportion so that they sum to `count`.
void scale_dataset(DatasetConfig& d, int count) {
  const DatasetConfig def;
  const double f = static_cast<double>(count) / def.total();
  d.cls_train = static_cast<int>(def.cls_train * f);
  d.val = static_cast<int>(def.val * f);
  d.test = static_cast<int>(def.test * f);
  d.gen_train = count - d.cls_train - d.val - d.test;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Minimal outfit editing on synthetic paper-doll outfits"};
  app.require_subcommand(1);

  std::string config_path, work_dir;
  std::vector<std::string> sets;
  bool no_cache = false;
  app.add_option("--config", config_path, "pipeline config JSON")->check(CLI::ExistingFile);
  app.add_option("--work-dir", work_dir, "artifact directory (overrides config)");
  app.add_option("--set", sets, "override a config field, e.g. --set vae.epochs_constant=5");
  app.add_flag("--no-cache", no_cache, "rerun stages even when their stamps are current");

  auto* synth = app.add_subcommand("synth", "render the synthetic dataset");
  int count = 0;
  std::optional<std::uint64_t> seed;
  std::string synth_out;
  synth->add_option("--count", count, "total outfits, split in the default proportions")->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "dataset seed");
  synth->add_option("--out", synth_out, "write the dataset here instead of <work>/data (no stamps)");

  auto* train_shape = app.add_subcommand("train-shape", "train the shape codec");
  auto* train_texture = app.add_subcommand("train-texture", "train the texture codec");
  auto* mine = app.add_subcommand("mine-negatives", "encode outfits and build swapped negatives");
  auto* train_clf = app.add_subcommand("train-classifier", "train the fashionability classifier");
  auto* build_inv = app.add_subcommand("build-inventory", "collect garment codes for retrieval");
  auto* all = app.add_subcommand("all", "run every stage");

  auto* edit = app.add_subcommand("edit", "edit one outfit and render the trajectory");
  std::string outfit_ref, image_path, map_path, edit_out, mode = "auto", aspect = "both", region_name;
  int k = -1, top_k = 3;
  double step = -1;
  bool add_garment = false, log_prob = false;
  edit->add_option("--outfit", outfit_ref, "dataset outfit id or path ending in the id");
  edit->add_option("--image", image_path, "outfit image PNG")->check(CLI::ExistingFile);
  edit->add_option("--map", map_path, "region map PNG")->check(CLI::ExistingFile);
  edit->add_option("--mode", mode, "auto | region | all")->check(CLI::IsMember({"auto", "region", "all"}));
  edit->add_option("--region", region_name, "garment label for --mode region");
  edit->add_option("--aspect", aspect, "both | shape | texture")->check(CLI::IsMember({"both", "shape", "texture"}));
  edit->add_option("--k", k, "update steps")->check(CLI::NonNegativeNumber);
  edit->add_option("--step", step, "step size")->check(CLI::PositiveNumber);
  edit->add_option("--top-k", top_k, "garments retrieved per frame")->check(CLI::PositiveNumber);
  edit->add_flag("--add-garment", add_garment, "start an absent region from the inventory mean");
  edit->add_flag("--log-prob", log_prob, "ascend log p instead of p");
  edit->add_option("--out", edit_out, "output directory (default <work>/edits/<id>)");

  auto* evaluate = app.add_subcommand("evaluate", "score all methods on the test negatives");
  std::string methods;
  int cases = 0;
  evaluate->add_option("--methods", methods, "'all' or a comma list");
  evaluate->add_option("--cases", cases, "number of test negatives")->check(CLI::PositiveNumber);

  auto* ablate = app.add_subcommand("ablate", "classifier accuracy for texture / shape / both inputs");

  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP service");
  std::string service_config;
  int port = -1;
  std::string store_dir;
  serve_cmd->add_option("--service-config", service_config, "service config JSON")->check(CLI::ExistingFile);
  serve_cmd->add_option("--port", port, "listen port");
  serve_cmd->add_option("--store", store_dir, "store directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  PipelineConfig cfg;
  try {
    auto j = pipeline_config_to_json(config_path.empty() ? PipelineConfig::desk() : load_pipeline_config(config_path));
    for (const auto& s : sets) apply_override(j, s);
    if (!work_dir.empty()) j["work_dir"] = work_dir;
    if (no_cache) j["use_cache"] = false;
    cfg = pipeline_config_from_json(j);
    if (count > 0) scale_dataset(cfg.dataset, count);
    if (seed) cfg.dataset.seed = *seed;
    if (cases > 0) cfg.eval_cases = cases;
    if (!methods.empty() && methods != "all") {
      cfg.eval.methods.clear();
      std::stringstream ss(methods);
      for (std::string m; std::getline(ss, m, ',');)
        if (!m.empty()) cfg.eval.methods.push_back(m);
    }
    if (k >= 0) cfg.edit.steps = k;
    if (step > 0) cfg.edit.step = step;
    if (log_prob) cfg.edit.log_prob = true;
    if (add_garment) cfg.edit.add_garment = true;
    cfg.edit.check();
  } catch (const CLI::ValidationError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*serve_cmd) {
      auto sc = load_service_config(service_config, [](const char* n) { return std::getenv(n); });
      if (service_config.empty()) {
        sc.shape_checkpoint = cfg.work_dir / "models/shape.ck";
        sc.texture_checkpoint = cfg.work_dir / "models/texture.ck";
        sc.classifier_checkpoint = cfg.work_dir / "models/classifier.ck";
        sc.inventory = cfg.work_dir / "inventory/inventory.jsonl";
        sc = apply_env_overrides(sc, [](const char* n) { return std::getenv(n); });
      }
      if (port >= 0) sc.port = port;
      if (!store_dir.empty()) sc.store_dir = store_dir;
      return serve(sc);
    }

    if (*synth && !synth_out.empty()) {
      const auto r = build_dataset(cfg.dataset, synth_out);
      std::cout << nlohmann::json{{"manifest", (fs::path(synth_out) / "manifest.jsonl").string()},
                                  {"outfits", r.manifest.records.size()},
                                  {"positive_rate", r.positive_rate},
                                  {"warnings", r.warnings}}
                       .dump()
                << "\n";
      return 0;
    }

    Pipeline p(cfg);
    p.log("cli", {{"command", app.get_subcommands().front()->get_name()}, {"config", pipeline_config_to_json(cfg)}});

    if (*synth) {
      p.synth();
    } else if (*train_shape) {
      p.train_shape();
    } else if (*train_texture) {
      p.train_texture();
    } else if (*mine) {
      p.encode();
      p.mine_negatives();
    } else if (*train_clf) {
      p.train_classifier();
    } else if (*build_inv) {
      p.encode();
      p.build_inventory();
    } else if (*all) {
      p.run_all();
    } else if (*evaluate) {
      const auto report = p.evaluate();
      for (const auto& s : report.summaries)
        if (s.method.find('@') == std::string::npos)
          std::cout << s.method << " change=" << s.mean_change << " improvement=" << s.mean_improvement
                    << " oracle_improved=" << s.oracle_improved_fraction << "\n";
    } else if (*ablate) {
      for (const auto& r : p.ablate())
        std::cout << feature_subset_name(r.subset) << " width=" << r.width << " accuracy=" << r.accuracy << "\n";
    } else if (*edit) {
      const auto schema = LabelSchema::outfit_default();
      Image x;
      RegionMap m;
      std::string id;
      if (!image_path.empty() || !map_path.empty()) {
        if (image_path.empty() || map_path.empty()) {
          std::cerr << "error: --image and --map go together\n";
          return 2;
        }
        x = read_png_rgb(image_path);
        m = read_png_map(map_path);
        id = fs::path(image_path).stem().string();
      } else if (!outfit_ref.empty()) {
        id = fs::path(outfit_ref).filename().string();
        const auto manifest = p.manifest();
        const auto& rec = manifest.find(id);
        x = read_png_rgb(manifest.image_path(rec));
        m = read_png_map(manifest.map_path(rec));
      } else {
        std::cerr << "error: edit needs --outfit or --image/--map\n";
        return 2;
      }
      EditTarget target;
      target.mode = edit_mode_from_name(mode);
      target.aspect = aspect_from_name(aspect);
      if (target.mode == EditMode::region) {
        target.region = schema.label_of(region_name);
        if (target.region <= 0) {
          std::cerr << "error: --mode region needs --region with a garment label\n";
          return 2;
        }
      }
      const auto models = p.models();
      const auto result = run_edit(models, x, m, target, cfg.edit, top_k);
      const fs::path out = edit_out.empty() ? p.path("edits/" + id) : fs::path(edit_out);
      write_edit_result(result, models, out);
      p.log("edit", {{"outfit", id}, {"region", result.trajectory.region}, {"p", result.trajectory.p}, {"out", out.string()}});
      std::cout << out.string() << "\n";
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
