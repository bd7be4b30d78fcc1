#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "outfit/region.hpp"
#include "outfit/util.hpp"

namespace outfit {

/// Per-dimension affine standardisation x = (z - mean) / std.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;

  /// std is floored at `std_floor` so constant dimensions stay finite.
  static Standardizer fit(std::span<const std::vector<double>> rows, double std_floor);
  std::vector<double> apply(std::span<const double> z) const;
  std::size_t width() const { return mean.size(); }
};

struct ClassifierConfig {
  std::vector<int> hidden = {256, 256, 128};
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  int epochs = 120;
  int decay_start = 60;  // lr divided by 10 every `decay_every` epochs from here
  int decay_every = 20;
  int batch_size = 32;
  double std_floor = 1e-3;
  std::uint64_t seed = 1;

  void check() const;
};

nlohmann::json classifier_config_to_json(const ClassifierConfig& c);
ClassifierConfig classifier_config_from_json(const nlohmann::json& j);

struct FashionScore {
  double p = 0.5;  // softmax(logits)[1]
  std::array<double, 2> logits{};
};

/// MLP fashionability scorer over standardised outfit codes.
class FashionClassifier {
 public:
  FashionClassifier() = default;
  FashionClassifier(Standardizer standardizer, const std::vector<int>& hidden, std::uint64_t seed);

  std::size_t input_width() const { return standardizer_.width(); }
  const Standardizer& standardizer() const { return standardizer_; }

  FashionScore score(std::span<const double> z) const;

  /// d p / d x at the standardised input x, or d log p / d x when `log_prob`.
  std::vector<double> standardized_gradient(std::span<const double> z, bool log_prob = false) const;
  /// d p / d z in raw code space.
  std::vector<double> gradient(std::span<const double> z, bool log_prob = false) const;

  // Layer parameters, row-major out x in.
  struct Layer {
    int in = 0;
    int out = 0;
    std::vector<double> weight;
    std::vector<double> bias;
  };
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  void save(const std::filesystem::path& path) const;
  static FashionClassifier load(const std::filesystem::path& path);
  std::vector<std::uint8_t> serialize() const;
  std::string hash() const;

 private:
  Standardizer standardizer_;
  std::vector<Layer> layers_;
};

struct ClassifierEpochLog {
  int epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double learning_rate = 0.0;
};

/// Cross-entropy training on labelled rows (1 = fashionable). Throws
/// std::invalid_argument when only one class is present or widths differ.
FashionClassifier train_classifier(std::span<const std::vector<double>> rows, std::span<const int> labels,
                                   const ClassifierConfig& config,
                                   const std::function<void(const ClassifierEpochLog&)>& on_epoch = {});

double classification_accuracy(const FashionClassifier& clf, std::span<const std::vector<double>> rows,
                               std::span<const int> labels);

struct SwapRecord {
  std::string positive_id;
  int region = 0;
  std::string donor_id;
  std::vector<double> original;  // z_i before the swap
  std::vector<double> donor;     // donor's z_i
};

nlohmann::json swap_record_to_json(const SwapRecord& r);
SwapRecord swap_record_from_json(const nlohmann::json& j);

struct NegativeSample {
  OutfitCode code;
  SwapRecord swap;
};

/// Builds an unfashionable variant of corpus[positive]: a uniformly drawn
/// editable present region is overwritten with the same region of the corpus
/// outfit farthest from it. When that outfit lacks the region, the next
/// farthest one that has it is used. Distance ties go to the lower index.
NegativeSample make_negative(std::size_t positive, std::span<const OutfitCode> corpus,
                             std::span<const std::string> ids, const LabelSchema& schema, Rng& rng);

}  // namespace outfit
