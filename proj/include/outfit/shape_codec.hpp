#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "outfit/region.hpp"

namespace outfit {

struct VAEConfig {
  int d_s = 8;
  // Adam at a constant rate, then a linear decay to zero.
  int epochs_constant = 100;
  int epochs_decay = 200;
  double learning_rate = 2e-4;
  double kl_weight = 1.0;
  int kl_warmup_epochs = 10;
  int batch_size = 16;
  int base_channels = 8;
  std::uint64_t seed = 1;
  bool double_precision = false;

  int epochs() const { return epochs_constant + epochs_decay; }
  void check() const;
};

nlohmann::json vae_config_to_json(const VAEConfig& c);
VAEConfig vae_config_from_json(const nlohmann::json& j);

struct ShapeEpochLog {
  int epoch = 0;
  double kl = 0.0;
  double l1 = 0.0;
  double heldout_accuracy = -1.0;  // -1 when no held-out maps were given
};

/// Region-wise shape VAE: a shared encoder maps each binary region mask to a
/// d_s-dimensional Gaussian posterior, and the generator decodes the
/// concatenated outfit code into an n-channel map whose argmax is the region
/// map. Instances are immutable once trained and safe to share across threads.
class ShapeCodec {
 public:
  ShapeCodec(LabelSchema schema, int height, int width, const VAEConfig& config);
  ~ShapeCodec();
  ShapeCodec(ShapeCodec&&) noexcept;
  ShapeCodec& operator=(ShapeCodec&&) noexcept;

  const LabelSchema& schema() const;
  int height() const;
  int width() const;
  int code_dim() const;
  const VAEConfig& config() const;
  std::string config_hash() const;

  struct Posterior {
    std::vector<double> mean;
    std::vector<double> log_var;
  };
  Posterior posterior(const BinaryMask& mask) const;

  /// Posterior means per region; absent regions get zeros and presence=false.
  ShapeCode encode(const RegionMap& m) const;

  /// Per-pixel argmax of the generator output.
  RegionMap generate(const ShapeCode& s) const;

  void save(const std::filesystem::path& path) const;
  static ShapeCodec load(const std::filesystem::path& path);
  std::vector<std::uint8_t> serialize() const;
  std::string hash() const;

  struct Impl;
  Impl& impl() const { return *impl_; }

 private:
  explicit ShapeCodec(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

/// Closed-form KL(N(mu, diag(exp(log_var))) || N(0, I)).
double gaussian_kl(std::span<const double> mean, std::span<const double> log_var);

/// Training objective evaluated at explicit posterior parameters with fixed
/// noise, plus its gradient with respect to those parameters. Uses the same
/// code path as training; present regions follow the target map.
struct ShapeLossProbe {
  double loss = 0.0;
  double kl = 0.0;
  double l1 = 0.0;
  std::vector<double> d_mean;
  std::vector<double> d_log_var;
};
ShapeLossProbe shape_loss_probe(const ShapeCodec& codec, const RegionMap& target, std::span<const double> mean,
                                std::span<const double> log_var, std::span<const double> noise, double kl_weight);

using ShapeEpochCallback = std::function<void(const ShapeEpochLog&)>;

/// Minimises l1(onehot(m), softmax(G_s(s))) + w * KL per outfit. Throws
/// std::invalid_argument on an empty training set and std::runtime_error when
/// a loss becomes non-finite.
std::vector<ShapeEpochLog> train_shape_vae(ShapeCodec& codec, std::span<const RegionMap> train,
                                           std::span<const RegionMap> heldout, const ShapeEpochCallback& on_epoch = {});

/// Fraction of pixels whose label survives generate(encode(m)).
double reconstruction_accuracy(const ShapeCodec& codec, std::span<const RegionMap> maps);

std::string shape_log_csv(std::span<const ShapeEpochLog> log);

}  // namespace outfit
