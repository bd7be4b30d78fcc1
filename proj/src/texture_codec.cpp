#include "outfit/texture_codec.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "outfit/serialize.hpp"
#include "outfit/util.hpp"
#include "torch_util.hpp"

namespace outfit {

namespace nn = torch::nn;

void GANConfig::check() const {
  if (d_t <= 0) throw std::invalid_argument("d_t must be positive");
  if (epochs_constant < 0 || epochs_decay < 0) throw std::invalid_argument("epoch counts must be non-negative");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (lambda_fm < 0.0 || lambda_l1 < 0.0) throw std::invalid_argument("loss weights must be non-negative");
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (divergence_patience <= 0) throw std::invalid_argument("divergence_patience must be positive");
}

nlohmann::json gan_config_to_json(const GANConfig& c) {
  return {{"d_t", c.d_t},
          {"epochs_constant", c.epochs_constant},
          {"epochs_decay", c.epochs_decay},
          {"learning_rate", c.learning_rate},
          {"lambda_fm", c.lambda_fm},
          {"lambda_l1", c.lambda_l1},
          {"least_squares", c.least_squares},
          {"masked_encoding", c.masked_encoding},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"double_precision", c.double_precision},
          {"divergence_threshold", c.divergence_threshold},
          {"divergence_patience", c.divergence_patience}};
}

GANConfig gan_config_from_json(const nlohmann::json& j) {
  GANConfig c;
  c.d_t = j.value("d_t", c.d_t);
  c.epochs_constant = j.value("epochs_constant", c.epochs_constant);
  c.epochs_decay = j.value("epochs_decay", c.epochs_decay);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lambda_fm = j.value("lambda_fm", c.lambda_fm);
  c.lambda_l1 = j.value("lambda_l1", c.lambda_l1);
  c.least_squares = j.value("least_squares", c.least_squares);
  c.masked_encoding = j.value("masked_encoding", c.masked_encoding);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.double_precision = j.value("double_precision", c.double_precision);
  c.divergence_threshold = j.value("divergence_threshold", c.divergence_threshold);
  c.divergence_patience = j.value("divergence_patience", c.divergence_patience);
  c.check();
  return c;
}

namespace {

nn::Conv2d conv(int in, int out, int k, int stride = 1, int pad = 0) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad));
}

struct TextureEncoderImpl : nn::Module {
  TextureEncoderImpl(int d_t) {
    c1 = register_module("c1", conv(3, 16, 3, 1, 1));
    c2 = register_module("c2", conv(16, 16, 3, 1, 1));
    c3 = register_module("c3", conv(16, 16, 3, 1, 1));
    out = register_module("out", conv(16, d_t, 1));
  }
  torch::Tensor forward(torch::Tensor x) {
    x = torch::relu(c1(x));
    x = torch::relu(c2(x));
    x = torch::relu(c3(x));
    return out(x);
  }
  nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr}, out{nullptr};
};
TORCH_MODULE(TextureEncoder);

struct TextureGeneratorImpl : nn::Module {
  TextureGeneratorImpl(int in) {
    c1 = register_module("c1", conv(in, 24, 3, 1, 1));
    down = register_module("down", conv(24, 48, 3, 2, 1));
    mid = register_module("mid", conv(48, 48, 3, 1, 1));
    up = register_module("up", conv(48, 24, 3, 1, 1));
    merge = register_module("merge", conv(48, 24, 3, 1, 1));
    out = register_module("out", conv(24, 3, 1));
  }
  torch::Tensor forward(torch::Tensor x) {
    auto a = torch::relu(c1(x));
    auto b = torch::relu(mid(torch::relu(down(a))));
    b = nn::functional::interpolate(
        b, nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    b = torch::relu(up(b));
    auto c = torch::relu(merge(torch::cat({b, a}, 1)));
    return torch::tanh(out(c));
  }
  nn::Conv2d c1{nullptr}, down{nullptr}, mid{nullptr}, up{nullptr}, merge{nullptr}, out{nullptr};
};
TORCH_MODULE(TextureGenerator);

struct PatchDiscriminatorImpl : nn::Module {
  PatchDiscriminatorImpl(int in) {
    c1 = register_module("c1", conv(in, 32, 4, 2, 1));
    c2 = register_module("c2", conv(32, 64, 4, 2, 1));
    c3 = register_module("c3", conv(64, 64, 4, 2, 1));
    out = register_module("out", conv(64, 1, 3, 1, 1));
  }
  // Intermediate activations followed by the patch logits.
  std::vector<torch::Tensor> forward(torch::Tensor x) {
    std::vector<torch::Tensor> f;
    x = torch::leaky_relu(c1(x), 0.2);
    f.push_back(x);
    x = torch::leaky_relu(c2(x), 0.2);
    f.push_back(x);
    x = torch::leaky_relu(c3(x), 0.2);
    f.push_back(x);
    f.push_back(out(x));
    return f;
  }
  nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr}, out{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

}  // namespace

struct TextureCodec::Impl {
  LabelSchema schema;
  int height;
  int width;
  GANConfig config;
  torch::Dtype dtype;
  TextureEncoder encoder{nullptr};
  TextureGenerator generator{nullptr};
  PatchDiscriminator discriminator{nullptr};

  Impl(LabelSchema s, int h, int w, const GANConfig& c)
      : schema(std::move(s)), height(h), width(w), config(c), dtype(detail::dtype_for(c.double_precision)) {
    schema.check();
    config.check();
    if (h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("texture codec needs even image sizes");
    detail::configure_torch_determinism();
    torch::manual_seed(config.seed);
    encoder = TextureEncoder(config.d_t);
    generator = TextureGenerator(schema.size() + config.d_t);
    discriminator = PatchDiscriminator(schema.size() + 3);
    encoder->to(dtype);
    generator->to(dtype);
    discriminator->to(dtype);
  }

  int n() const { return schema.size(); }

  void check_pair(int h, int w, const char* what) const {
    if (h != height || w != width)
      throw std::invalid_argument(std::string(what) + " is " + std::to_string(h) + "x" + std::to_string(w) +
                                  ", codec expects " + std::to_string(height) + "x" + std::to_string(width));
  }

  bool masked(EncodeMode mode) const {
    return mode == EncodeMode::masked || (mode == EncodeMode::configured && config.masked_encoding);
  }

  // x [B,3,H,W], oh [B,n,H,W] -> codes [B,n,d_t].
  torch::Tensor encode_batch(const torch::Tensor& x, const torch::Tensor& oh, bool masked_mode) {
    if (!masked_mode) return detail::pool_regions(oh, encoder->forward(x));
    const auto b = x.size(0);
    auto present = (oh.sum({2, 3}) > 0).nonzero();
    auto bi = present.select(1, 0), ri = present.select(1, 1);
    auto m = oh.index({bi, ri}).unsqueeze(1);  // [P,1,H,W]
    auto v = encoder->forward(x.index_select(0, bi) * m);
    auto pooled = (v * m).sum({2, 3}) / m.sum({2, 3}).clamp_min(1.0);  // [P,d_t]
    auto zeros = torch::zeros({b, n(), config.d_t}, x.options());
    return zeros.index_put({bi, ri}, pooled);
  }

  torch::Tensor generate_batch(const torch::Tensor& oh, const torch::Tensor& u) {
    return generator->forward(torch::cat({oh, u}, 1));
  }

  CheckpointFile checkpoint() const {
    CheckpointFile f;
    f.header = {{"kind", "texture_codec"},
                {"schema", schema_to_json(schema)},
                {"height", height},
                {"width", width},
                {"config", gan_config_to_json(config)}};
    detail::export_module(*encoder, "encoder.", f);
    detail::export_module(*generator, "generator.", f);
    detail::export_module(*discriminator, "discriminator.", f);
    return f;
  }
};

TextureCodec::TextureCodec(LabelSchema schema, int height, int width, const GANConfig& config)
    : impl_(std::make_unique<Impl>(std::move(schema), height, width, config)) {}
TextureCodec::TextureCodec(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
TextureCodec::~TextureCodec() = default;
TextureCodec::TextureCodec(TextureCodec&&) noexcept = default;
TextureCodec& TextureCodec::operator=(TextureCodec&&) noexcept = default;

const LabelSchema& TextureCodec::schema() const { return impl_->schema; }
int TextureCodec::height() const { return impl_->height; }
int TextureCodec::width() const { return impl_->width; }
int TextureCodec::code_dim() const { return impl_->config.d_t; }
const GANConfig& TextureCodec::config() const { return impl_->config; }

std::string TextureCodec::config_hash() const {
  nlohmann::json j = {{"schema", schema_to_json(impl_->schema)},
                      {"height", impl_->height},
                      {"width", impl_->width},
                      {"config", gan_config_to_json(impl_->config)}};
  return sha256_hex(canonical_dump(j));
}

FeatureMap TextureCodec::features(const Image& x) const {
  impl_->check_pair(x.height(), x.width(), "image");
  torch::NoGradGuard guard;
  auto v = impl_->encoder->forward(detail::image_tensor(x, impl_->dtype).unsqueeze(0))
               .squeeze(0)
               .permute({1, 2, 0})
               .to(torch::kFloat32)
               .contiguous();
  FeatureMap out(x.height(), x.width(), impl_->config.d_t);
  std::copy(v.data_ptr<float>(), v.data_ptr<float>() + v.numel(), out.data().begin());
  return out;
}

TextureCode TextureCodec::encode(const Image& x, const RegionMap& m, EncodeMode mode) const {
  impl_->check_pair(x.height(), x.width(), "image");
  impl_->check_pair(m.height(), m.width(), "region map");
  torch::NoGradGuard guard;
  auto oh = detail::onehot(m, impl_->n(), impl_->dtype).unsqueeze(0);
  auto codes = impl_->encode_batch(detail::image_tensor(x, impl_->dtype).unsqueeze(0), oh, impl_->masked(mode))
                   .squeeze(0)
                   .to(torch::kFloat64)
                   .contiguous();
  TextureCode t(impl_->n(), impl_->config.d_t);
  std::copy(codes.data_ptr<double>(), codes.data_ptr<double>() + codes.numel(), t.flat().begin());
  const auto presence = m.presence(impl_->n());
  for (int r = 0; r < impl_->n(); ++r) t.set_present(r, presence[r]);
  return t;
}

Image TextureCodec::generate(const RegionMap& m, const FeatureMap& u) const {
  impl_->check_pair(m.height(), m.width(), "region map");
  impl_->check_pair(u.height(), u.width(), "feature map");
  if (u.depth() != impl_->config.d_t) throw std::invalid_argument("feature map depth does not match d_t");
  torch::NoGradGuard guard;
  auto ut = torch::from_blob(const_cast<float*>(u.data().data()), {u.height(), u.width(), u.depth()}, torch::kFloat32)
                .permute({2, 0, 1})
                .to(impl_->dtype)
                .unsqueeze(0);
  auto oh = detail::onehot(m, impl_->n(), impl_->dtype).unsqueeze(0);
  return detail::tensor_image(impl_->generate_batch(oh, ut).squeeze(0));
}

Image TextureCodec::generate(const RegionMap& m, const TextureCode& t) const {
  if (t.regions() != impl_->n() || t.dim() != impl_->config.d_t)
    throw std::invalid_argument("texture code shape does not match the codec");
  return generate(m, region_broadcast(t, m));
}

Image TextureCodec::reconstruct(const Image& x, const RegionMap& m) const { return generate(m, encode(x, m)); }

std::vector<std::uint8_t> TextureCodec::serialize() const { return encode_checkpoint(impl_->checkpoint()); }

void TextureCodec::save(const std::filesystem::path& path) const { save_checkpoint(path, impl_->checkpoint()); }

TextureCodec TextureCodec::load(const std::filesystem::path& path) {
  auto f = load_checkpoint(path);
  if (f.header.value("kind", "") != "texture_codec") throw std::runtime_error(path.string() + " is not a texture codec");
  auto impl = std::make_unique<Impl>(schema_from_json(f.header.at("schema")), f.header.at("height").get<int>(),
                                     f.header.at("width").get<int>(), gan_config_from_json(f.header.at("config")));
  detail::import_module(*impl->encoder, "encoder.", f);
  detail::import_module(*impl->generator, "generator.", f);
  detail::import_module(*impl->discriminator, "discriminator.", f);
  return TextureCodec(std::move(impl));
}

std::string TextureCodec::hash() const { return sha256_hex(serialize()); }

namespace {

torch::Tensor adversarial(const torch::Tensor& logits, bool real, bool least_squares) {
  if (least_squares) return (logits - (real ? 1.0 : 0.0)).square().mean();
  auto target = real ? torch::ones_like(logits) : torch::zeros_like(logits);
  return torch::binary_cross_entropy_with_logits(logits, target);
}

}  // namespace

std::vector<TextureEpochLog> train_texture_gan(TextureCodec& codec, std::span<const Image> images,
                                               std::span<const RegionMap> maps, const TextureEpochCallback& on_epoch) {
  if (images.empty()) throw std::invalid_argument("texture GAN training set is empty");
  if (images.size() != maps.size()) throw std::invalid_argument("image and map counts differ");
  auto& im = codec.impl();
  const auto& cfg = im.config;

  std::vector<torch::Tensor> xs, ohs;
  for (std::size_t i = 0; i < images.size(); ++i) {
    im.check_pair(images[i].height(), images[i].width(), "image");
    im.check_pair(maps[i].height(), maps[i].width(), "region map");
    xs.push_back(detail::image_tensor(images[i], im.dtype));
    ohs.push_back(detail::onehot(maps[i], im.n(), im.dtype));
  }
  auto all_x = torch::stack(xs), all_oh = torch::stack(ohs);
  xs.clear();
  ohs.clear();

  std::vector<torch::Tensor> g_params = im.encoder->parameters();
  for (auto& p : im.generator->parameters()) g_params.push_back(p);
  const auto betas = std::make_tuple(0.5, 0.999);
  torch::optim::Adam opt_g(g_params, torch::optim::AdamOptions(cfg.learning_rate).betas(betas));
  torch::optim::Adam opt_d(im.discriminator->parameters(), torch::optim::AdamOptions(cfg.learning_rate).betas(betas));

  torch::manual_seed(derive_seed(cfg.seed, 0x7e47));
  std::vector<std::int64_t> order(images.size());
  std::vector<TextureEpochLog> log;
  int quiet_epochs = 0;
  for (int epoch = 0; epoch < cfg.epochs(); ++epoch) {
    const double lr = detail::scheduled_rate(cfg.learning_rate, epoch, cfg.epochs_constant, cfg.epochs_decay);
    detail::set_learning_rate(opt_g, lr);
    detail::set_learning_rate(opt_d, lr);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    TextureEpochLog entry;
    entry.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      auto idx = torch::tensor(std::vector<std::int64_t>(order.begin() + start, order.begin() + stop), torch::kInt64);
      auto x = all_x.index_select(0, idx), oh = all_oh.index_select(0, idx);

      auto t = im.encode_batch(x, oh, cfg.masked_encoding);
      auto fake = im.generate_batch(oh, detail::broadcast_regions(t, oh));

      // Discriminator step on (m, x) pairs.
      auto d_real = adversarial(im.discriminator->forward(torch::cat({oh, x}, 1)).back(), true, cfg.least_squares);
      auto d_fake =
          adversarial(im.discriminator->forward(torch::cat({oh, fake.detach()}, 1)).back(), false, cfg.least_squares);
      auto d_loss = 0.5 * (d_real + d_fake);
      opt_d.zero_grad();
      d_loss.backward();
      opt_d.step();

      // Generator/encoder step. D acts as a fixed feature extractor for FM.
      auto fake_feats = im.discriminator->forward(torch::cat({oh, fake}, 1));
      auto g_adv = adversarial(fake_feats.back(), true, cfg.least_squares);
      auto fm = torch::zeros({}, x.options());
      if (cfg.lambda_fm > 0.0) {
        std::vector<torch::Tensor> real_feats;
        {
          torch::NoGradGuard guard;
          real_feats = im.discriminator->forward(torch::cat({oh, x}, 1));
        }
        for (std::size_t k = 0; k + 1 < fake_feats.size(); ++k) fm = fm + (fake_feats[k] - real_feats[k]).abs().mean();
      }
      auto pixel = (fake - x).abs().mean();
      auto g_loss = g_adv + cfg.lambda_fm * fm;
      if (cfg.lambda_l1 > 0.0) g_loss = g_loss + cfg.lambda_l1 * pixel;
      if (!std::isfinite(g_loss.item<double>()) || !std::isfinite(d_loss.item<double>()))
        throw std::runtime_error("texture GAN loss became non-finite at epoch " + std::to_string(epoch));
      opt_g.zero_grad();
      g_loss.backward();
      opt_g.step();

      const double b = static_cast<double>(stop - start);
      entry.g_adv += g_adv.item<double>() * b;
      entry.d_real += d_real.item<double>() * b;
      entry.d_fake += d_fake.item<double>() * b;
      entry.fm += fm.item<double>() * b;
      entry.l1 += pixel.item<double>() * b;
    }
    const double count = static_cast<double>(images.size());
    entry.g_adv /= count;
    entry.d_real /= count;
    entry.d_fake /= count;
    entry.fm /= count;
    entry.l1 /= count;
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);

    const double d_mean = 0.5 * (entry.d_real + entry.d_fake);
    quiet_epochs = d_mean < cfg.divergence_threshold ? quiet_epochs + 1 : 0;
    if (quiet_epochs >= cfg.divergence_patience)
      throw std::runtime_error("texture GAN diverged: discriminator loss " + std::to_string(d_mean) + " below " +
                               std::to_string(cfg.divergence_threshold) + " for " + std::to_string(quiet_epochs) +
                               " epochs (last epoch " + std::to_string(epoch) + ", g_adv " +
                               std::to_string(entry.g_adv) + ")");
  }
  return log;
}

std::string texture_log_csv(std::span<const TextureEpochLog> log) {
  std::string out = "epoch,g_adv,d_real,d_fake,fm\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.g_adv, e.d_real, e.d_fake, e.fm);
    out += buf;
  }
  return out;
}

double region_mean_hue(const Image& x, const RegionMap& m, int label) {
  std::vector<double> hues;
  for (int y = 0; y < m.height(); ++y)
    for (int c = 0; c < m.width(); ++c)
      if (m.at(y, c) == label) hues.push_back(rgb_to_hsv(x.value(y, c, 0), x.value(y, c, 1), x.value(y, c, 2)).h);
  if (hues.empty()) return std::numeric_limits<double>::quiet_NaN();
  return circular_mean_hue(hues);
}

ReconstructionQuality reconstruction_quality(const TextureCodec& codec, std::span<const Image> images,
                                             std::span<const RegionMap> maps,
                                             std::span<const std::vector<int>> solid) {
  if (images.empty()) throw std::invalid_argument("no images to evaluate");
  if (images.size() != maps.size() || images.size() != solid.size())
    throw std::invalid_argument("image, map and solid-label counts differ");
  ReconstructionQuality q;
  double err_sum = 0.0, hue_sum = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto rec = codec.reconstruct(images[i], maps[i]);
    err_sum += mean_absolute_error(images[i], rec);
    for (int label : solid[i]) {
      const double a = region_mean_hue(images[i], maps[i], label);
      const double b = region_mean_hue(rec, maps[i], label);
      if (std::isnan(a) || std::isnan(b)) continue;
      const double e = hue_distance(a, b);
      q.max_hue_error = std::max(q.max_hue_error, e);
      hue_sum += e;
      ++q.hue_samples;
    }
  }
  q.mae = err_sum / static_cast<double>(images.size());
  q.mean_hue_error = q.hue_samples > 0 ? hue_sum / q.hue_samples : 0.0;
  return q;
}

}  // namespace outfit
