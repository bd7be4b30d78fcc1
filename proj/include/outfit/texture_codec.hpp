#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "outfit/image.hpp"
#include "outfit/region.hpp"

namespace outfit {

struct GANConfig {
  int d_t = 8;
  int epochs_constant = 100;
  int epochs_decay = 100;
  double learning_rate = 2e-4;
  double lambda_fm = 10.0;
  double lambda_l1 = 0.0;  // optional pixel reconstruction term
  bool least_squares = false;
  // Encode each region from its own masked crop so t_i depends only on pixels
  // inside region i. Used for both training and inference when set.
  bool masked_encoding = false;
  int batch_size = 8;
  std::uint64_t seed = 1;
  bool double_precision = false;
  double divergence_threshold = 1e-4;
  int divergence_patience = 5;

  int epochs() const { return epochs_constant + epochs_decay; }
  void check() const;
};

nlohmann::json gan_config_to_json(const GANConfig& c);
GANConfig gan_config_from_json(const nlohmann::json& j);

struct TextureEpochLog {
  int epoch = 0;
  double g_adv = 0.0;
  double d_real = 0.0;
  double d_fake = 0.0;
  double fm = 0.0;
  double l1 = 0.0;
};

enum class EncodeMode { configured, global, masked };

/// Texture encoder, conditional generator and patch discriminator.
class TextureCodec {
 public:
  TextureCodec(LabelSchema schema, int height, int width, const GANConfig& config);
  ~TextureCodec();
  TextureCodec(TextureCodec&&) noexcept;
  TextureCodec& operator=(TextureCodec&&) noexcept;

  const LabelSchema& schema() const;
  int height() const;
  int width() const;
  int code_dim() const;
  const GANConfig& config() const;
  std::string config_hash() const;

  /// Dense encoder output v = E_t(x).
  FeatureMap features(const Image& x) const;

  /// Region-pooled texture code; absent regions are zero.
  TextureCode encode(const Image& x, const RegionMap& m, EncodeMode mode = EncodeMode::configured) const;

  /// G_t applied to (m, u). u is normally region_broadcast(t, m).
  Image generate(const RegionMap& m, const FeatureMap& u) const;
  Image generate(const RegionMap& m, const TextureCode& t) const;

  /// generate(m, broadcast(encode(x, m), m)).
  Image reconstruct(const Image& x, const RegionMap& m) const;

  void save(const std::filesystem::path& path) const;
  static TextureCodec load(const std::filesystem::path& path);
  std::vector<std::uint8_t> serialize() const;
  std::string hash() const;

  struct Impl;
  Impl& impl() const { return *impl_; }

 private:
  explicit TextureCodec(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

using TextureEpochCallback = std::function<void(const TextureEpochLog&)>;

/// Alternating D and G/E updates. Throws std::invalid_argument on an empty or
/// mismatched training set and std::runtime_error on non-finite losses or when
/// the discriminator loss stays below the divergence threshold for
/// `divergence_patience` consecutive epochs.
std::vector<TextureEpochLog> train_texture_gan(TextureCodec& codec, std::span<const Image> images,
                                               std::span<const RegionMap> maps,
                                               const TextureEpochCallback& on_epoch = {});

/// CSV with columns epoch,g_adv,d_real,d_fake,fm.
std::string texture_log_csv(std::span<const TextureEpochLog> log);

struct ReconstructionQuality {
  double mae = 0.0;              // mean absolute error over pixels and channels, [0,1] scale
  double max_hue_error = 0.0;    // worst solid-garment hue error in degrees
  double mean_hue_error = 0.0;
  int hue_samples = 0;
};

/// `solid` lists, per outfit, the labels painted in a single colour. Hue
/// errors compare circular mean hues of the region in the original and the
/// reconstruction.
ReconstructionQuality reconstruction_quality(const TextureCodec& codec, std::span<const Image> images,
                                             std::span<const RegionMap> maps,
                                             std::span<const std::vector<int>> solid);

/// Circular mean hue of the pixels of `label` in `x` (degrees), NaN when absent.
double region_mean_hue(const Image& x, const RegionMap& m, int label);

}  // namespace outfit
