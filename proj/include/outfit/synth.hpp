#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "outfit/image.hpp"
#include "outfit/region.hpp"
#include "outfit/util.hpp"

namespace outfit {

enum class Pattern { solid, stripes };
enum class Tuck { in, out };

struct TopSpec {
  double hue = 0.0;  // degrees [0,360)
  double saturation = 0.0;
  double value = 0.0;
  Pattern pattern = Pattern::solid;
  double sleeve_length = 0.0;
  Tuck tuck = Tuck::out;
};

struct BottomSpec {
  double hue = 0.0;
  double saturation = 0.0;
  double value = 0.0;
  Pattern pattern = Pattern::solid;
  double length = 0.0;
  double width = 0.0;
};

struct OuterSpec {
  bool present = false;
  double hue = 0.0;
  double length = 0.0;
};

struct BagSpec {
  bool present = false;
  double hue = 0.0;
};

struct BodySpec {
  double height_px = 55.0;  // on the 64-pixel reference canvas
  double torso_ratio = 0.5;
};

/// Ground-truth parameterisation of one paper-doll outfit.
struct OutfitSpec {
  TopSpec top;
  BottomSpec bottom;
  OuterSpec outer;
  BagSpec bag;
  BodySpec body;
  std::uint64_t seed = 0;
};

struct OracleScore {
  double total = 0.0;
  double harmony = 0.0;
  double proportion = 0.0;
  double pattern = 0.0;
};

enum class StylePrior { none, positive };

/// Garment geometry in reference-canvas rows/columns (64x64 canvas). Shared by
/// the renderer and the oracle so both agree on proportions.
struct DollLayout {
  double feet_y, head_top, head_height, shoulder_y, waist_y, torso_length, leg_length, shoe_height;
  double torso_half_width, top_hem, bottom_hem, outer_hem, upper_hem;
};

DollLayout doll_layout(const OutfitSpec& spec);

/// Throws std::invalid_argument when a field is out of range.
void check_spec(const OutfitSpec& spec);

OutfitSpec sample_outfit_spec(Rng& rng, StylePrior prior = StylePrior::none);

struct RenderedOutfit {
  Image image;
  RegionMap map;
};

/// Deterministic rasterisation. Throws std::invalid_argument when height or
/// width is below 32.
RenderedOutfit render_outfit(const OutfitSpec& spec, int height = 64, int width = 64);

/// Proportion ratio r = upper-garment rows / (upper-garment rows + exposed bottom rows).
double proportion_ratio(const OutfitSpec& spec);

OracleScore oracle_score(const OutfitSpec& spec);

/// Replaces the garment for `label` (top, bottom, outer or bag) in `target`
/// with the one worn in `donor`. Body and other garments are kept.
OutfitSpec transplant_garment(const OutfitSpec& target, const OutfitSpec& donor, int label);

/// Garment labels painted in a single colour (no stripes).
std::vector<int> solid_garment_labels(const OutfitSpec& spec);

nlohmann::json spec_to_json(const OutfitSpec& spec);
OutfitSpec spec_from_json(const nlohmann::json& j);
nlohmann::json oracle_to_json(const OracleScore& s);
OracleScore oracle_from_json(const nlohmann::json& j);

enum class Split { gen_train, cls_train, val, test };
std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct ManifestRecord {
  std::string id;
  std::string image_path;  // relative to the manifest directory
  std::string map_path;
  Split split = Split::gen_train;
  OracleScore oracle;
  bool positive = false;
  OutfitSpec spec;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory holding manifest.jsonl
  std::vector<ManifestRecord> records;

  std::vector<const ManifestRecord*> split(Split s) const;
  const ManifestRecord& find(const std::string& id) const;
  std::filesystem::path image_path(const ManifestRecord& r) const { return root / r.image_path; }
  std::filesystem::path map_path(const ManifestRecord& r) const { return root / r.map_path; }
};

struct DatasetConfig {
  int gen_train = 2000;
  int cls_train = 1600;
  int val = 200;
  int test = 700;
  double tau_pos = 0.75;
  int image_size = 64;
  std::uint64_t seed = 1;

  int total() const { return gen_train + cls_train + val + test; }
};

nlohmann::json dataset_config_to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

struct DatasetBuildResult {
  DatasetManifest manifest;
  double positive_rate = 0.0;
  std::vector<std::string> warnings;
};

/// Renders every outfit, writes images/, maps/ and manifest.jsonl under
/// out_dir. Outfit k uses seed derive_seed(seed, k).
DatasetBuildResult build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

void write_manifest(const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& manifest_path);

}  // namespace outfit
