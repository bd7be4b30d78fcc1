#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "outfit/editor.hpp"
#include "outfit/encode.hpp"
#include "outfit/eval.hpp"
#include "outfit/fashionability.hpp"
#include "outfit/shape_codec.hpp"
#include "outfit/synth.hpp"
#include "outfit/texture_codec.hpp"

namespace outfit {

/// Every knob of a full run. Serialised as one JSON document whose canonical
/// hash tags all run logs.
struct PipelineConfig {
  std::filesystem::path work_dir = "work";
  DatasetConfig dataset;
  VAEConfig vae;
  GANConfig gan;
  ClassifierConfig classifier;
  EditConfig edit;
  EvalConfig eval;
  int eval_cases = 200;  // test negatives used by evaluate
  bool use_cache = true;

  /// Schedules sized for a single CPU.
  static PipelineConfig desk();
  std::string hash() const;
};

nlohmann::json pipeline_config_to_json(const PipelineConfig& c);
/// Fields absent from `j` keep the values of `base`.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const PipelineConfig& base = PipelineConfig::desk());
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

struct NegativeRecord {
  Split split = Split::cls_train;
  OutfitCode code;
  SwapRecord swap;
};

/// Trained models loaded together, as used by editing and the service.
struct ModelBundle {
  std::unique_ptr<ShapeCodec> shape;
  std::unique_ptr<TextureCodec> texture;
  FashionClassifier classifier;
  Inventory inventory;
  std::map<std::string, std::string> hashes;  // artifact name -> sha256
};

ModelBundle load_models(const std::filesystem::path& shape_ck, const std::filesystem::path& texture_ck,
                        const std::filesystem::path& classifier_ck, const std::filesystem::path& inventory_jsonl);

struct EditResult {
  EditTrajectory trajectory;
  std::vector<Image> frames;                   // rendered z^(0..K)
  std::vector<std::vector<RetrievalHit>> hits;  // nearest garments per frame (edited region)
};

/// Encode, edit and render one outfit.
EditResult run_edit(const ModelBundle& models, const Image& x, const RegionMap& m, const EditTarget& target,
                    const EditConfig& config, int top_k = 3);

/// Writes frames/k.png and trajectory.json under out_dir.
void write_edit_result(const EditResult& result, const ModelBundle& models, const std::filesystem::path& out_dir);

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  const PipelineConfig& config() const { return config_; }
  std::filesystem::path path(const std::string& rel) const { return config_.work_dir / rel; }

  DatasetManifest synth();
  void train_shape();
  void train_texture();
  void encode();
  void mine_negatives();
  void train_classifier();
  void build_inventory();
  EvalReport evaluate();
  std::vector<AblationRow> ablate();

  /// All stages in order, each skipped when its stamp is current.
  void run_all();

  DatasetManifest manifest() const;
  std::map<std::string, OutfitCode> codes() const;
  std::vector<NegativeRecord> negatives() const;
  ModelBundle models() const;

  /// sha256 of every artifact file produced so far, keyed by path relative to
  /// the work directory. Logs are excluded.
  std::map<std::string, std::string> artifact_hashes() const;

  /// Appends one JSON line to logs/run.jsonl (and echoes to stderr).
  void log(const std::string& stage, nlohmann::json fields) const;

 private:
  bool fresh(const std::string& stage, const std::string& key) const;
  void stamp(const std::string& stage, const std::string& key, const std::vector<std::string>& outputs) const;
  std::string file_hash(const std::string& rel) const;

  PipelineConfig config_;
};

}  // namespace outfit
