#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "outfit/fashionability.hpp"
#include "outfit/region.hpp"

namespace outfit {

enum class Aspect { shape_only, texture_only, both };
enum class EditMode { region, automatic, all };

std::string aspect_name(Aspect a);
Aspect aspect_from_name(const std::string& s);
std::string edit_mode_name(EditMode m);
EditMode edit_mode_from_name(const std::string& s);

struct EditTarget {
  EditMode mode = EditMode::automatic;
  int region = -1;  // used when mode == region
  Aspect aspect = Aspect::both;
};

struct EditConfig {
  double step = 0.1;
  int steps = 10;
  bool add_garment = false;
  // Ascend log p instead of p; keeps steps useful when p is saturated near 0.
  bool log_prob = false;

  void check() const;
};

nlohmann::json edit_target_to_json(const EditTarget& t);
EditTarget edit_target_from_json(const nlohmann::json& j);
nlohmann::json edit_config_to_json(const EditConfig& c);
EditConfig edit_config_from_json(const nlohmann::json& j);

/// Requested region is not worn and garment addition is off.
struct TargetAbsentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// No inventory garment carries the requested label.
struct EmptyInventorySlice : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct GarmentRecord {
  std::string id;
  std::string source_id;
  int region = 0;
  std::vector<double> code;  // [t_i; s_i]
  std::string thumbnail;
};

struct Inventory {
  int d_t = 0;
  int d_s = 0;
  std::vector<GarmentRecord> records;

  /// Mean code of all garments with `region`; throws EmptyInventorySlice.
  std::vector<double> mean_code(int region) const;
  std::size_t count(int region) const;
};

/// One record per (outfit, worn editable region), in input order. Garment ids
/// are "<source id>-<label name>".
Inventory build_inventory(std::span<const std::string> ids, std::span<const OutfitCode> codes,
                          const LabelSchema& schema);

nlohmann::json garment_to_json(const GarmentRecord& g);
GarmentRecord garment_from_json(const nlohmann::json& j);
/// JSON lines, one garment per line, preceded by a header line with d_t/d_s.
std::string inventory_to_jsonl(const Inventory& inv);
Inventory inventory_from_jsonl(const std::string& text);

struct RetrievalHit {
  std::size_t index = 0;  // into Inventory::records
  double distance = 0.0;
};

/// Garments of `region` ranked by Euclidean distance to `code`, ties by lower
/// garment id. top_k <= 0 returns all.
std::vector<RetrievalHit> retrieve_garment(std::span<const double> code, int region, const Inventory& inv,
                                           int top_k = 1);

/// Entries of the flattened code that the edit may change.
std::vector<bool> target_mask(const OutfitCode& z, int region, Aspect aspect);

/// Editable worn region with the largest per-garment gradient norm, measured
/// in the classifier's standardised space. Ties go to the lowest label.
int select_edit_region(const OutfitCode& z, const FashionClassifier& clf, const LabelSchema& schema,
                       bool log_prob = false);

struct EditTrajectory {
  std::vector<OutfitCode> codes;  // z^(0) .. z^(K)
  std::vector<double> p;          // p_f at each step
  EditTarget target;              // as requested
  int region = -1;                // edited region, -1 for mode all
  EditConfig config;
};

/// Gradient ascent on p_f over the target entries. The step is taken on the
/// standardised input x = (z - mean) / std and mapped back, so
/// z_k <- z_k + std_k * step * dp/dx_k. Other entries are never written.
/// `inventory` supplies the starting code when a garment is added.
EditTrajectory edit_codes(const OutfitCode& z0, const EditTarget& target, const EditConfig& config,
                          const FashionClassifier& clf, const LabelSchema& schema,
                          const Inventory* inventory = nullptr);

nlohmann::json trajectory_to_json(const EditTrajectory& t);
EditTrajectory trajectory_from_json(const nlohmann::json& j);

}  // namespace outfit
