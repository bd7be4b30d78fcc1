#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "outfit/editor.hpp"
#include "outfit/fashionability.hpp"
#include "outfit/synth.hpp"

namespace outfit {

enum class Aggregation { min, mean, median };
Aggregation aggregation_from_name(const std::string& s);
std::string aggregation_name(Aggregation a);

/// Reference garments for one test negative: region-i codes of the M corpus
/// outfits closest to the negative on every region except i.
struct GTSet {
  std::string negative_id;
  int region = 0;
  std::vector<std::vector<double>> garments;
  std::vector<std::string> neighbor_ids;
};

/// Neighbours must wear region i with a garment different from `swapped_in`.
/// Distance ties go to the lower corpus index. Throws std::invalid_argument
/// when fewer than M eligible outfits exist or the corpus has fewer than M+1.
GTSet build_gt_set(const std::string& negative_id, const OutfitCode& negative, int region,
                   std::span<const double> swapped_in, std::span<const OutfitCode> corpus,
                   std::span<const std::string> ids, int m);

double distance_to_gt(std::span<const double> garment, const GTSet& gt, Aggregation agg = Aggregation::min);

struct Improvement {
  double ratio = 1.0;
  bool degenerate = false;
};

inline constexpr double kImprovementEpsilon = 1e-9;
inline constexpr double kImprovementCap = 1e9;

/// dist(original, GT) / dist(edited, GT); capped and flagged when the edited
/// garment sits on the GT set.
Improvement fashion_improvement(std::span<const double> original, std::span<const double> edited, const GTSet& gt,
                                Aggregation agg = Aggregation::min);

/// ||edited - original|| - similarity_baseline.
double amount_of_change(std::span<const double> original, std::span<const double> edited, double similarity_baseline);

enum class Baseline { similarity_only, fashion_only, random };

/// Index into inv.records of the garment the baseline swaps into region i.
std::size_t run_baseline(Baseline method, const OutfitCode& negative, int region, const Inventory& inv,
                         const FashionClassifier& clf, Rng& rng);

/// One test negative with everything the suite needs.
struct EvalCase {
  std::string id;
  OutfitCode code;
  SwapRecord swap;
  OutfitSpec spec;  // generating spec of the negative (oracle input)
};

struct EvalConfig {
  int neighbors = 10;          // M
  int max_steps = 10;          // spectrum evaluated for K = 0..max_steps
  int report_steps = 6;        // K used for the headline minimal-edit method
  double step = 0.1;
  bool log_prob = false;
  Aggregation aggregation = Aggregation::min;
  std::uint64_t seed = 1;
  std::vector<std::string> methods = {"similarity_only", "fashion_only", "random", "minimal_edit",
                                      "auto_minimal_edit"};
};

nlohmann::json eval_config_to_json(const EvalConfig& c);
EvalConfig eval_config_from_json(const nlohmann::json& j);

struct EvalRecord {
  std::string method;
  std::string case_id;
  int region = 0;              // region the method changed
  std::string garment_id;      // retrieved inventory garment
  double raw_change = 0.0;     // ||edited_i - original_i||
  double change = 0.0;         // raw_change minus the similarity-only mean
  Improvement improvement;
  double oracle_before = 0.0;
  double oracle_after = 0.0;
  std::vector<double> p;       // score trajectory (edit methods only)
};

struct MethodSummary {
  std::string method;
  std::size_t cases = 0;
  double mean_change = 0.0;
  double mean_improvement = 0.0;  // over non-degenerate records
  double median_improvement = 0.0;
  std::size_t degenerate = 0;
  double oracle_improved_fraction = 0.0;
  double mean_oracle_delta = 0.0;
};

struct EvalReport {
  EvalConfig config;
  std::vector<EvalRecord> records;
  std::vector<MethodSummary> summaries;
  std::vector<double> mean_p_by_step;  // minimal edit, K = 0..max_steps
  std::map<std::string, std::string> provenance;

  const MethodSummary& summary(const std::string& method) const;
};

/// Runs every configured method on every case. Minimal-edit methods edit the
/// swapped region (or the automatically chosen one) and are realised as the
/// nearest inventory garment; "minimal_edit@K" entries are produced for each
/// K in 0..max_steps and "minimal_edit" aliases K = report_steps.
/// `inventory_specs` maps an inventory garment's source id to its spec.
EvalReport evaluate_suite(std::span<const EvalCase> cases, std::span<const OutfitCode> gt_corpus,
                          std::span<const std::string> gt_ids, const Inventory& inventory,
                          const std::map<std::string, OutfitSpec>& inventory_specs, const FashionClassifier& clf,
                          const LabelSchema& schema, const EvalConfig& config);

nlohmann::json eval_report_to_json(const EvalReport& report);
/// method,case_id,change,improvement,oracle_delta
std::string eval_report_csv(const EvalReport& report);
/// Change (x) against improvement (y) scatter of per-method means.
std::string eval_report_svg(const EvalReport& report);

enum class FeatureSubset { texture, shape, both };
std::string feature_subset_name(FeatureSubset s);

/// Columns of the flattened code kept by a subset.
std::vector<double> slice_code(std::span<const double> z, int regions, int d_t, int d_s, FeatureSubset subset);

struct AblationRow {
  FeatureSubset subset;
  std::size_t width = 0;
  double accuracy = 0.0;
};

/// Trains one classifier per subset on the training rows and reports
/// validation accuracy.
std::vector<AblationRow> ablation_study(std::span<const std::vector<double>> train, std::span<const int> train_labels,
                                        std::span<const std::vector<double>> val, std::span<const int> val_labels,
                                        int regions, int d_t, int d_s, const ClassifierConfig& config);

}  // namespace outfit
