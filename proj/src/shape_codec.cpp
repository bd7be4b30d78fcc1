#include "outfit/shape_codec.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "outfit/serialize.hpp"
#include "outfit/util.hpp"
#include "torch_util.hpp"

namespace outfit {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

void VAEConfig::check() const {
  if (d_s <= 0) throw std::invalid_argument("d_s must be positive");
  if (epochs_constant < 0 || epochs_decay < 0) throw std::invalid_argument("epoch counts must be non-negative");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (kl_weight < 0.0) throw std::invalid_argument("kl_weight must be non-negative");
  if (kl_warmup_epochs < 0) throw std::invalid_argument("kl_warmup_epochs must be non-negative");
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (base_channels <= 0) throw std::invalid_argument("base_channels must be positive");
}

nlohmann::json vae_config_to_json(const VAEConfig& c) {
  return {{"d_s", c.d_s},
          {"epochs_constant", c.epochs_constant},
          {"epochs_decay", c.epochs_decay},
          {"learning_rate", c.learning_rate},
          {"kl_weight", c.kl_weight},
          {"kl_warmup_epochs", c.kl_warmup_epochs},
          {"batch_size", c.batch_size},
          {"base_channels", c.base_channels},
          {"seed", c.seed},
          {"double_precision", c.double_precision}};
}

VAEConfig vae_config_from_json(const nlohmann::json& j) {
  VAEConfig c;
  c.d_s = j.value("d_s", c.d_s);
  c.epochs_constant = j.value("epochs_constant", c.epochs_constant);
  c.epochs_decay = j.value("epochs_decay", c.epochs_decay);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.kl_weight = j.value("kl_weight", c.kl_weight);
  c.kl_warmup_epochs = j.value("kl_warmup_epochs", c.kl_warmup_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.seed = j.value("seed", c.seed);
  c.double_precision = j.value("double_precision", c.double_precision);
  c.check();
  return c;
}

namespace {

nn::Conv2d conv(int in, int out, int k, int stride = 1, int pad = 0) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad));
}

nn::InstanceNorm2d inorm(int c) { return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(c).affine(true)); }

torch::Tensor reflect(const torch::Tensor& x, int p) {
  return F::pad(x, F::PadFuncOptions({p, p, p, p}).mode(torch::kReflect));
}

struct ShapeEncoderImpl : nn::Module {
  ShapeEncoderImpl(int c, int d_s, int h, int w) {
    stem = register_module("stem", conv(1, c, 7));
    stem_norm = register_module("stem_norm", inorm(c));
    const int widths[5] = {c, 2 * c, 4 * c, 8 * c, 8 * c};
    for (int i = 0; i < 4; ++i) {
      down->push_back(conv(widths[i], widths[i + 1], 3, 2, 1));
      down->push_back(inorm(widths[i + 1]));
      down->push_back(nn::ReLU());
    }
    register_module("down", down);
    res1 = register_module("res1", conv(8 * c, 8 * c, 3, 1, 1));
    res1_norm = register_module("res1_norm", inorm(8 * c));
    res2 = register_module("res2", conv(8 * c, 8 * c, 3, 1, 1));
    res2_norm = register_module("res2_norm", inorm(8 * c));
    fc = register_module("fc", nn::Linear(8 * c * (h / 16) * (w / 16), 2 * d_s));
  }

  torch::Tensor forward(torch::Tensor x) {
    x = torch::relu(stem_norm(stem(reflect(x, 3))));
    x = down->forward(x);
    auto r = torch::relu(res1_norm(res1(x)));
    x = x + res2_norm(res2(r));
    return fc(x.flatten(1));
  }

  nn::Conv2d stem{nullptr}, res1{nullptr}, res2{nullptr};
  nn::InstanceNorm2d stem_norm{nullptr}, res1_norm{nullptr}, res2_norm{nullptr};
  nn::Sequential down;
  nn::Linear fc{nullptr};
};
TORCH_MODULE(ShapeEncoder);

struct ShapeDecoderImpl : nn::Module {
  ShapeDecoderImpl(int c, int code_width, int n, int h, int w) : h0(h / 16), w0(w / 16), top(8 * c) {
    fc = register_module("fc", nn::Linear(code_width, top * h0 * w0));
    const int widths[5] = {8 * c, 8 * c, 4 * c, 2 * c, c};
    for (int i = 0; i < 4; ++i) {
      up->push_back(nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
      up->push_back(conv(widths[i], widths[i + 1], 3, 1, 1));
      up->push_back(inorm(widths[i + 1]));
      up->push_back(nn::ReLU());
    }
    register_module("up", up);
    head = register_module("head", conv(c, n, 7));
  }

  torch::Tensor forward(torch::Tensor z) {
    auto x = torch::relu(fc(z)).view({z.size(0), top, h0, w0});
    x = up->forward(x);
    return head(reflect(x, 3));
  }

  int h0, w0, top;
  nn::Linear fc{nullptr};
  nn::Sequential up;
  nn::Conv2d head{nullptr};
};
TORCH_MODULE(ShapeDecoder);

}  // namespace

struct ShapeCodec::Impl {
  LabelSchema schema;
  int height;
  int width;
  VAEConfig config;
  torch::Dtype dtype;
  ShapeEncoder encoder{nullptr};
  ShapeDecoder decoder{nullptr};

  Impl(LabelSchema s, int h, int w, const VAEConfig& c)
      : schema(std::move(s)), height(h), width(w), config(c), dtype(detail::dtype_for(c.double_precision)) {
    schema.check();
    config.check();
    if (h < 16 || w < 16 || h % 16 != 0 || w % 16 != 0)
      throw std::invalid_argument("shape codec needs height and width divisible by 16");
    detail::configure_torch_determinism();
    torch::manual_seed(config.seed);
    encoder = ShapeEncoder(config.base_channels, config.d_s, h, w);
    decoder = ShapeDecoder(config.base_channels, schema.size() * config.d_s, schema.size(), h, w);
    encoder->to(dtype);
    decoder->to(dtype);
  }

  int n() const { return schema.size(); }

  void check_map(const RegionMap& m) const {
    if (m.height() != height || m.width() != width)
      throw std::invalid_argument("region map is " + std::to_string(m.height()) + "x" + std::to_string(m.width()) +
                                  ", codec expects " + std::to_string(height) + "x" + std::to_string(width));
  }

  // onehot [B, n, H, W] -> (mean, log_var) each [B, n, d_s], zero for absent regions,
  // and a [B, n] presence tensor.
  std::tuple<torch::Tensor, torch::Tensor, torch::Tensor> encode_batch(const torch::Tensor& oh) {
    const auto b = oh.size(0);
    auto present = oh.sum({2, 3}) > 0;
    auto idx = present.nonzero();
    auto bi = idx.select(1, 0), ri = idx.select(1, 1);
    auto masks = oh.index({bi, ri}).unsqueeze(1);
    auto out = encoder->forward(masks);
    auto mu = out.narrow(1, 0, config.d_s), lv = out.narrow(1, config.d_s, config.d_s);
    auto zeros = torch::zeros({b, n(), config.d_s}, oh.options());
    return {zeros.index_put({bi, ri}, mu), zeros.index_put({bi, ri}, lv), present.to(oh.scalar_type())};
  }

  // Per-outfit mean of summed l1 and summed KL over present regions.
  std::pair<torch::Tensor, torch::Tensor> objective(const torch::Tensor& target, const torch::Tensor& mu,
                                                    const torch::Tensor& lv, const torch::Tensor& eps,
                                                    const torch::Tensor& present) {
    auto pm = present.unsqueeze(2);
    auto z = (mu + torch::exp(0.5 * lv) * eps) * pm;
    auto probs = torch::softmax(decoder->forward(z.flatten(1)), 1);
    auto l1 = (probs - target).abs().sum({1, 2, 3}).mean();
    auto kl = (0.5 * (mu.square() + lv.exp() - 1.0 - lv) * pm).sum({1, 2}).mean();
    return {l1, kl};
  }

  CheckpointFile checkpoint() const {
    CheckpointFile f;
    f.header = {{"kind", "shape_codec"},
                {"schema", schema_to_json(schema)},
                {"height", height},
                {"width", width},
                {"config", vae_config_to_json(config)}};
    detail::export_module(*encoder, "encoder.", f);
    detail::export_module(*decoder, "decoder.", f);
    return f;
  }
};

ShapeCodec::ShapeCodec(LabelSchema schema, int height, int width, const VAEConfig& config)
    : impl_(std::make_unique<Impl>(std::move(schema), height, width, config)) {}
ShapeCodec::ShapeCodec(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
ShapeCodec::~ShapeCodec() = default;
ShapeCodec::ShapeCodec(ShapeCodec&&) noexcept = default;
ShapeCodec& ShapeCodec::operator=(ShapeCodec&&) noexcept = default;

const LabelSchema& ShapeCodec::schema() const { return impl_->schema; }
int ShapeCodec::height() const { return impl_->height; }
int ShapeCodec::width() const { return impl_->width; }
int ShapeCodec::code_dim() const { return impl_->config.d_s; }
const VAEConfig& ShapeCodec::config() const { return impl_->config; }

std::string ShapeCodec::config_hash() const {
  nlohmann::json j = {{"schema", schema_to_json(impl_->schema)},
                      {"height", impl_->height},
                      {"width", impl_->width},
                      {"config", vae_config_to_json(impl_->config)}};
  return sha256_hex(canonical_dump(j));
}

ShapeCodec::Posterior ShapeCodec::posterior(const BinaryMask& mask) const {
  if (mask.height != impl_->height || mask.width != impl_->width)
    throw std::invalid_argument("mask size does not match the codec");
  torch::NoGradGuard guard;
  auto out = impl_->encoder->forward(detail::mask_tensor(mask, impl_->dtype).unsqueeze(0)).to(torch::kFloat64);
  auto acc = out.accessor<double, 2>();
  Posterior p;
  for (int k = 0; k < impl_->config.d_s; ++k) {
    p.mean.push_back(acc[0][k]);
    p.log_var.push_back(acc[0][impl_->config.d_s + k]);
  }
  return p;
}

ShapeCode ShapeCodec::encode(const RegionMap& m) const {
  impl_->check_map(m);
  auto presence = m.presence(impl_->n());
  ShapeCode code(impl_->n(), impl_->config.d_s);
  for (int r = 0; r < impl_->n(); ++r) {
    code.set_present(r, presence[r]);
    if (!presence[r]) continue;
    auto p = posterior(binarize_region(m, r, impl_->n()));
    std::copy(p.mean.begin(), p.mean.end(), code.region(r).begin());
  }
  return code;
}

RegionMap ShapeCodec::generate(const ShapeCode& s) const {
  if (s.regions() != impl_->n() || s.dim() != impl_->config.d_s)
    throw std::invalid_argument("shape code has " + std::to_string(s.regions()) + "x" + std::to_string(s.dim()) +
                                " entries, codec expects " + std::to_string(impl_->n()) + "x" +
                                std::to_string(impl_->config.d_s));
  torch::NoGradGuard guard;
  auto z = torch::tensor(std::vector<double>(s.flat().begin(), s.flat().end()), torch::kFloat64)
               .to(impl_->dtype)
               .unsqueeze(0);
  auto labels = impl_->decoder->forward(z).argmax(1).squeeze(0).to(torch::kUInt8).contiguous();
  const auto* p = labels.data_ptr<std::uint8_t>();
  return RegionMap(impl_->height, impl_->width, std::vector<std::uint8_t>(p, p + labels.numel()));
}

std::vector<std::uint8_t> ShapeCodec::serialize() const { return encode_checkpoint(impl_->checkpoint()); }

void ShapeCodec::save(const std::filesystem::path& path) const { save_checkpoint(path, impl_->checkpoint()); }

ShapeCodec ShapeCodec::load(const std::filesystem::path& path) {
  auto f = load_checkpoint(path);
  if (f.header.value("kind", "") != "shape_codec") throw std::runtime_error(path.string() + " is not a shape codec");
  auto impl = std::make_unique<Impl>(schema_from_json(f.header.at("schema")), f.header.at("height").get<int>(),
                                     f.header.at("width").get<int>(), vae_config_from_json(f.header.at("config")));
  detail::import_module(*impl->encoder, "encoder.", f);
  detail::import_module(*impl->decoder, "decoder.", f);
  return ShapeCodec(std::move(impl));
}

std::string ShapeCodec::hash() const { return sha256_hex(serialize()); }

double gaussian_kl(std::span<const double> mean, std::span<const double> log_var) {
  if (mean.size() != log_var.size()) throw std::invalid_argument("mean and log_var lengths differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i)
    kl += 0.5 * (mean[i] * mean[i] + std::exp(log_var[i]) - 1.0 - log_var[i]);
  return kl;
}

ShapeLossProbe shape_loss_probe(const ShapeCodec& codec, const RegionMap& target, std::span<const double> mean,
                                std::span<const double> log_var, std::span<const double> noise, double kl_weight) {
  auto& im = codec.impl();
  im.check_map(target);
  const std::size_t width = static_cast<std::size_t>(im.n()) * im.config.d_s;
  if (mean.size() != width || log_var.size() != width || noise.size() != width)
    throw std::invalid_argument("probe vectors must have n*d_s entries");
  auto as_tensor = [&](std::span<const double> v) {
    return torch::tensor(std::vector<double>(v.begin(), v.end()), torch::kFloat64)
        .to(im.dtype)
        .view({1, im.n(), im.config.d_s});
  };
  auto mu = as_tensor(mean).requires_grad_(true);
  auto lv = as_tensor(log_var).requires_grad_(true);
  auto oh = detail::onehot(target, im.n(), im.dtype).unsqueeze(0);
  auto present = (oh.sum({2, 3}) > 0).to(im.dtype);
  auto [l1, kl] = im.objective(oh, mu, lv, as_tensor(noise), present);
  auto loss = l1 + kl_weight * kl;
  loss.backward();
  auto to_vec = [](const torch::Tensor& t) {
    auto c = t.to(torch::kFloat64).contiguous();
    return std::vector<double>(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
  };
  for (auto& p : im.encoder->parameters()) p.mutable_grad() = torch::Tensor();
  for (auto& p : im.decoder->parameters()) p.mutable_grad() = torch::Tensor();
  return {loss.item<double>(), kl.item<double>(), l1.item<double>(), to_vec(mu.grad()), to_vec(lv.grad())};
}

double reconstruction_accuracy(const ShapeCodec& codec, std::span<const RegionMap> maps) {
  if (maps.empty()) throw std::invalid_argument("no maps to evaluate");
  std::size_t hit = 0, total = 0;
  for (const auto& m : maps) {
    auto r = codec.generate(codec.encode(m));
    for (std::size_t i = 0; i < m.pixel_count(); ++i) hit += r.labels()[i] == m.labels()[i];
    total += m.pixel_count();
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

std::vector<ShapeEpochLog> train_shape_vae(ShapeCodec& codec, std::span<const RegionMap> train,
                                           std::span<const RegionMap> heldout, const ShapeEpochCallback& on_epoch) {
  if (train.empty()) throw std::invalid_argument("shape VAE training set is empty");
  auto& im = codec.impl();
  const auto& cfg = im.config;
  for (const auto& m : train) im.check_map(m);
  for (const auto& m : heldout) im.check_map(m);

  std::vector<torch::Tensor> planes;
  planes.reserve(train.size());
  for (const auto& m : train) planes.push_back(detail::onehot(m, im.n(), im.dtype));
  auto all = torch::stack(planes);
  planes.clear();

  std::vector<torch::Tensor> params = im.encoder->parameters();
  for (auto& p : im.decoder->parameters()) params.push_back(p);
  torch::optim::Adam opt(params, torch::optim::AdamOptions(cfg.learning_rate).betas({0.5, 0.999}));

  torch::manual_seed(derive_seed(cfg.seed, 0x5a5e));
  std::vector<std::int64_t> order(train.size());
  std::vector<ShapeEpochLog> log;
  for (int epoch = 0; epoch < cfg.epochs(); ++epoch) {
    detail::set_learning_rate(opt, detail::scheduled_rate(cfg.learning_rate, epoch, cfg.epochs_constant, cfg.epochs_decay));
    const double warm =
        cfg.kl_warmup_epochs == 0 ? 1.0 : std::min(1.0, static_cast<double>(epoch + 1) / cfg.kl_warmup_epochs);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    double sum_l1 = 0.0, sum_kl = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      auto idx = torch::tensor(std::vector<std::int64_t>(order.begin() + start, order.begin() + stop), torch::kInt64);
      auto target = all.index_select(0, idx);
      auto [mu, lv, present] = im.encode_batch(target);
      auto eps = torch::randn_like(mu);
      auto [l1, kl] = im.objective(target, mu, lv, eps, present);
      auto loss = l1 + cfg.kl_weight * warm * kl;
      if (!std::isfinite(loss.item<double>()))
        throw std::runtime_error("shape VAE loss became non-finite at epoch " + std::to_string(epoch));
      opt.zero_grad();
      loss.backward();
      opt.step();
      const double b = static_cast<double>(stop - start);
      sum_l1 += l1.item<double>() * b;
      sum_kl += kl.item<double>() * b;
    }
    ShapeEpochLog entry{epoch, sum_kl / static_cast<double>(train.size()), sum_l1 / static_cast<double>(train.size())};
    if (!heldout.empty()) entry.heldout_accuracy = reconstruction_accuracy(codec, heldout);
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return log;
}

std::string shape_log_csv(std::span<const ShapeEpochLog> log) {
  std::string out = "epoch,kl,l1\n";
  char buf[128];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", e.epoch, e.kl, e.l1);
    out += buf;
  }
  return out;
}

}  // namespace outfit
