#include "outfit/fashionability.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "outfit/serialize.hpp"

namespace outfit {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

Standardizer Standardizer::fit(std::span<const std::vector<double>> rows, double std_floor) {
  if (rows.empty()) throw std::invalid_argument("cannot standardise an empty set");
  const std::size_t d = rows[0].size();
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.std.assign(d, 0.0);
  for (const auto& r : rows) {
    if (r.size() != d) throw std::invalid_argument("rows have different widths");
    for (std::size_t k = 0; k < d; ++k) s.mean[k] += r[k];
  }
  for (auto& m : s.mean) m /= static_cast<double>(rows.size());
  for (const auto& r : rows)
    for (std::size_t k = 0; k < d; ++k) s.std[k] += (r[k] - s.mean[k]) * (r[k] - s.mean[k]);
  for (auto& v : s.std) v = std::max(std::sqrt(v / static_cast<double>(rows.size())), std_floor);
  return s;
}

std::vector<double> Standardizer::apply(std::span<const double> z) const {
  if (z.size() != mean.size())
    throw std::invalid_argument("code width " + std::to_string(z.size()) + " does not match classifier input " +
                                std::to_string(mean.size()));
  std::vector<double> x(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) x[k] = (z[k] - mean[k]) / std[k];
  return x;
}

void ClassifierConfig::check() const {
  if (hidden.empty()) throw std::invalid_argument("classifier needs at least one hidden layer");
  for (int h : hidden)
    if (h <= 0) throw std::invalid_argument("hidden widths must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
  if (epochs < 0 || decay_start < 0 || decay_every <= 0) throw std::invalid_argument("invalid epoch schedule");
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (!(std_floor > 0.0)) throw std::invalid_argument("std_floor must be positive");
}

nlohmann::json classifier_config_to_json(const ClassifierConfig& c) {
  return {{"hidden", c.hidden},           {"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},           {"decay_start", c.decay_start},     {"decay_every", c.decay_every},
          {"batch_size", c.batch_size},   {"std_floor", c.std_floor},         {"seed", c.seed}};
}

ClassifierConfig classifier_config_from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.epochs = j.value("epochs", c.epochs);
  c.decay_start = j.value("decay_start", c.decay_start);
  c.decay_every = j.value("decay_every", c.decay_every);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.std_floor = j.value("std_floor", c.std_floor);
  c.seed = j.value("seed", c.seed);
  c.check();
  return c;
}

FashionClassifier::FashionClassifier(Standardizer standardizer, const std::vector<int>& hidden, std::uint64_t seed)
    : standardizer_(std::move(standardizer)) {
  Rng rng(derive_seed(seed, 0xc1a5));
  int in = static_cast<int>(standardizer_.width());
  std::vector<int> widths = hidden;
  widths.push_back(2);
  for (int out : widths) {
    Layer l;
    l.in = in;
    l.out = out;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    l.weight.resize(static_cast<std::size_t>(in) * out);
    l.bias.resize(out);
    for (auto& w : l.weight) w = rng.uniform(-bound, bound);
    for (auto& b : l.bias) b = rng.uniform(-bound, bound);
    layers_.push_back(std::move(l));
    in = out;
  }
}

namespace {

// Forward pass over a batch (rows = samples). Returns every layer's
// post-activation output; the last entry holds the logits.
std::vector<RowMatrix> forward(const std::vector<FashionClassifier::Layer>& layers, const RowMatrix& x) {
  std::vector<RowMatrix> acts;
  acts.reserve(layers.size());
  const RowMatrix* cur = &x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    ConstMatMap w(l.weight.data(), l.out, l.in);
    RowMatrix h = (*cur) * w.transpose();
    h.rowwise() += ConstVecMap(l.bias.data(), l.out).transpose();
    if (i + 1 < layers.size()) h = h.cwiseMax(0.0);
    acts.push_back(std::move(h));
    cur = &acts.back();
  }
  return acts;
}

// Backward pass given d loss / d logits. Fills parameter gradients when
// `grads` is non-null and returns d loss / d input.
RowMatrix backward(const std::vector<FashionClassifier::Layer>& layers, const RowMatrix& x,
                   const std::vector<RowMatrix>& acts, RowMatrix delta,
                   std::vector<FashionClassifier::Layer>* grads) {
  for (std::size_t i = layers.size(); i-- > 0;) {
    const auto& l = layers[i];
    if (i + 1 < layers.size()) delta = delta.cwiseProduct((acts[i].array() > 0.0).cast<double>().matrix());
    const RowMatrix& input = i == 0 ? x : acts[i - 1];
    if (grads) {
      MatMap gw((*grads)[i].weight.data(), l.out, l.in);
      gw = delta.transpose() * input;
      Eigen::Map<Eigen::VectorXd> gb((*grads)[i].bias.data(), l.out);
      gb = delta.colwise().sum().transpose();
    }
    delta = delta * ConstMatMap(l.weight.data(), l.out, l.in);
  }
  return delta;
}

std::array<double, 2> softmax2(double a, double b) {
  const double m = std::max(a, b);
  const double ea = std::exp(a - m), eb = std::exp(b - m);
  return {ea / (ea + eb), eb / (ea + eb)};
}

}  // namespace

FashionScore FashionClassifier::score(std::span<const double> z) const {
  const auto x = standardizer_.apply(z);
  RowMatrix in = Eigen::Map<const RowMatrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  const auto acts = forward(layers_, in);
  FashionScore s;
  s.logits = {acts.back()(0, 0), acts.back()(0, 1)};
  s.p = softmax2(s.logits[0], s.logits[1])[1];
  return s;
}

std::vector<double> FashionClassifier::standardized_gradient(std::span<const double> z, bool log_prob) const {
  const auto x = standardizer_.apply(z);
  RowMatrix in = Eigen::Map<const RowMatrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  const auto acts = forward(layers_, in);
  const auto p = softmax2(acts.back()(0, 0), acts.back()(0, 1));
  // d p1 / d logits = p1 * p0 * (-1, 1); d log p1 / d logits = p0 * (-1, 1).
  const double scale = log_prob ? p[0] : p[0] * p[1];
  RowMatrix delta(1, 2);
  delta << -scale, scale;
  const RowMatrix g = backward(layers_, in, acts, delta, nullptr);
  return std::vector<double>(g.data(), g.data() + g.size());
}

std::vector<double> FashionClassifier::gradient(std::span<const double> z, bool log_prob) const {
  auto g = standardized_gradient(z, log_prob);
  for (std::size_t k = 0; k < g.size(); ++k) g[k] /= standardizer_.std[k];
  return g;
}

namespace {

CheckpointFile classifier_checkpoint(const FashionClassifier& clf) {
  CheckpointFile f;
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& l : clf.layers()) shapes.push_back({l.in, l.out});
  f.header = {{"kind", "fashion_classifier"}, {"version", 1}, {"layers", shapes}};
  const auto w = static_cast<std::int64_t>(clf.input_width());
  f.tensors.push_back(make_tensor_f64("mean", {w}, clf.standardizer().mean));
  f.tensors.push_back(make_tensor_f64("std", {w}, clf.standardizer().std));
  for (std::size_t i = 0; i < clf.layers().size(); ++i) {
    const auto& l = clf.layers()[i];
    f.tensors.push_back(make_tensor_f64("W" + std::to_string(i), {l.out, l.in}, l.weight));
    f.tensors.push_back(make_tensor_f64("b" + std::to_string(i), {l.out}, l.bias));
  }
  return f;
}

}  // namespace

std::vector<std::uint8_t> FashionClassifier::serialize() const { return encode_checkpoint(classifier_checkpoint(*this)); }

void FashionClassifier::save(const std::filesystem::path& path) const {
  save_checkpoint(path, classifier_checkpoint(*this));
}

FashionClassifier FashionClassifier::load(const std::filesystem::path& path) {
  const auto f = load_checkpoint(path);
  if (f.header.value("kind", "") != "fashion_classifier")
    throw std::runtime_error(path.string() + " is not a fashion classifier");
  FashionClassifier clf;
  clf.standardizer_.mean = tensor_as_f64(f.tensor("mean"));
  clf.standardizer_.std = tensor_as_f64(f.tensor("std"));
  const auto& shapes = f.header.at("layers");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    Layer l;
    l.in = shapes[i][0].get<int>();
    l.out = shapes[i][1].get<int>();
    l.weight = tensor_as_f64(f.tensor("W" + std::to_string(i)));
    l.bias = tensor_as_f64(f.tensor("b" + std::to_string(i)));
    if (l.weight.size() != static_cast<std::size_t>(l.in) * l.out || l.bias.size() != static_cast<std::size_t>(l.out))
      throw std::runtime_error("classifier layer " + std::to_string(i) + " has inconsistent sizes");
    clf.layers_.push_back(std::move(l));
  }
  return clf;
}

std::string FashionClassifier::hash() const { return sha256_hex(serialize()); }

FashionClassifier train_classifier(std::span<const std::vector<double>> rows, std::span<const int> labels,
                                   const ClassifierConfig& config,
                                   const std::function<void(const ClassifierEpochLog&)>& on_epoch) {
  config.check();
  if (rows.size() != labels.size()) throw std::invalid_argument("row and label counts differ");
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  const auto negatives = std::count(labels.begin(), labels.end(), 0);
  if (positives == 0 || negatives == 0) throw std::invalid_argument("classifier training needs both classes");
  if (positives + negatives != static_cast<std::ptrdiff_t>(labels.size()))
    throw std::invalid_argument("labels must be 0 or 1");

  FashionClassifier clf(Standardizer::fit(rows, config.std_floor), config.hidden, config.seed);
  const auto d = static_cast<Eigen::Index>(clf.input_width());
  RowMatrix all(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto x = clf.standardizer().apply(rows[i]);
    all.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(x.data(), d);
  }

  auto& layers = clf.layers();
  auto grads = layers, m1 = layers, m2 = layers;
  for (auto* set : {&m1, &m2})
    for (auto& l : *set) {
      std::fill(l.weight.begin(), l.weight.end(), 0.0);
      std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;

  std::vector<std::size_t> order(rows.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double lr = config.learning_rate;
    if (epoch >= config.decay_start) lr /= std::pow(10.0, 1 + (epoch - config.decay_start) / config.decay_every);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const auto b = static_cast<Eigen::Index>(stop - start);
      RowMatrix x(b, d);
      std::vector<int> y(b);
      for (Eigen::Index r = 0; r < b; ++r) {
        x.row(r) = all.row(static_cast<Eigen::Index>(order[start + r]));
        y[r] = labels[order[start + r]];
      }
      const auto acts = forward(layers, x);
      RowMatrix delta(b, 2);
      for (Eigen::Index r = 0; r < b; ++r) {
        const auto p = softmax2(acts.back()(r, 0), acts.back()(r, 1));
        loss_sum -= std::log(std::max(p[y[r]], std::numeric_limits<double>::min()));
        correct += (p[1] > 0.5) == (y[r] == 1);
        delta(r, 0) = (p[0] - (y[r] == 0)) / static_cast<double>(b);
        delta(r, 1) = (p[1] - (y[r] == 1)) / static_cast<double>(b);
      }
      backward(layers, x, acts, delta, &grads);

      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      auto adam = [&](std::vector<double>& w, const std::vector<double>& g, std::vector<double>& m,
                      std::vector<double>& v) {
        for (std::size_t k = 0; k < w.size(); ++k) {
          const double gk = g[k] + config.weight_decay * w[k];
          m[k] = beta1 * m[k] + (1 - beta1) * gk;
          v[k] = beta2 * v[k] + (1 - beta2) * gk * gk;
          w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
        }
      };
      for (std::size_t i = 0; i < layers.size(); ++i) {
        adam(layers[i].weight, grads[i].weight, m1[i].weight, m2[i].weight);
        adam(layers[i].bias, grads[i].bias, m1[i].bias, m2[i].bias);
      }
    }
    if (!std::isfinite(loss_sum)) throw std::runtime_error("classifier loss became non-finite at epoch " + std::to_string(epoch));
    if (on_epoch)
      on_epoch({epoch, loss_sum / static_cast<double>(rows.size()),
                static_cast<double>(correct) / static_cast<double>(rows.size()), lr});
  }
  return clf;
}

double classification_accuracy(const FashionClassifier& clf, std::span<const std::vector<double>> rows,
                               std::span<const int> labels) {
  if (rows.empty() || rows.size() != labels.size()) throw std::invalid_argument("need matching non-empty rows and labels");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) correct += (clf.score(rows[i]).p > 0.5) == (labels[i] == 1);
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

nlohmann::json swap_record_to_json(const SwapRecord& r) {
  return {{"positive_id", r.positive_id},
          {"region", r.region},
          {"donor_id", r.donor_id},
          {"original", r.original},
          {"donor", r.donor}};
}

SwapRecord swap_record_from_json(const nlohmann::json& j) {
  SwapRecord r;
  r.positive_id = j.at("positive_id").get<std::string>();
  r.region = j.at("region").get<int>();
  r.donor_id = j.at("donor_id").get<std::string>();
  r.original = j.at("original").get<std::vector<double>>();
  r.donor = j.at("donor").get<std::vector<double>>();
  return r;
}

NegativeSample make_negative(std::size_t positive, std::span<const OutfitCode> corpus,
                             std::span<const std::string> ids, const LabelSchema& schema, Rng& rng) {
  if (corpus.size() < 2) throw std::invalid_argument("negative mining needs at least two outfits");
  if (ids.size() != corpus.size()) throw std::invalid_argument("corpus and id counts differ");
  if (positive >= corpus.size()) throw std::out_of_range("positive index outside corpus");
  const auto& pos = corpus[positive];

  std::vector<int> candidates;
  for (int label : schema.editable)
    if (label < pos.regions() && pos.present(label)) candidates.push_back(label);
  if (candidates.empty()) throw std::invalid_argument("outfit " + ids[positive] + " has no editable garment to swap");
  const int region = candidates[rng.below(candidates.size())];

  const auto zp = pos.flatten();
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t j = 0; j < corpus.size(); ++j) {
    if (j == positive) continue;
    const auto zj = corpus[j].flatten();
    if (zj.size() != zp.size()) throw std::invalid_argument("corpus codes have different widths");
    double d2 = 0.0;
    for (std::size_t k = 0; k < zp.size(); ++k) d2 += (zj[k] - zp[k]) * (zj[k] - zp[k]);
    ranked.emplace_back(d2, j);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  for (const auto& [d2, j] : ranked) {
    if (!corpus[j].present(region)) continue;
    NegativeSample out{pos, {ids[positive], region, ids[j], pos.garment(region), corpus[j].garment(region)}};
    out.code.set_garment(region, out.swap.donor);
    return out;
  }
  throw std::invalid_argument("no corpus outfit has a " + schema.names[region] + " to donate");
}

}  // namespace outfit
