#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "outfit/shape_codec.hpp"
#include "outfit/synth.hpp"
#include "outfit/util.hpp"

using namespace outfit;

namespace {

std::vector<RegionMap> sample_maps(int count, int size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<RegionMap> out;
  for (int i = 0; i < count; ++i) out.push_back(render_outfit(sample_outfit_spec(rng), size, size).map);
  return out;
}

VAEConfig small_config(bool dbl = false) {
  VAEConfig c;
  c.epochs_constant = 1;
  c.epochs_decay = 0;
  c.batch_size = 4;
  c.double_precision = dbl;
  return c;
}

RegionMap shift_right(const RegionMap& m) {
  RegionMap out(m.height(), m.width(), 0);
  for (int y = 0; y < m.height(); ++y)
    for (int x = 1; x < m.width(); ++x) out.set(y, x, m.at(y, x - 1));
  return out;
}

}  // namespace

TEST_CASE("KL closed form is zero at the prior and matches quadrature") {
  const std::vector<double> zero(4, 0.0);
  CHECK(gaussian_kl(zero, zero) == 0.0);

  const double mu[2] = {0.7, -0.4};
  const double lv[2] = {-0.5, 0.3};
  // Riemann sum of q log(q/p) over a 2-D grid.
  const double step = 0.01;
  double kl = 0.0;
  for (double a = -10; a < 10; a += step)
    for (double b = -10; b < 10; b += step) {
      const double x[2] = {a, b};
      double log_q = 0.0, log_p = 0.0;
      for (int k = 0; k < 2; ++k) {
        const double v = std::exp(lv[k]);
        log_q += -0.5 * std::log(2 * M_PI * v) - (x[k] - mu[k]) * (x[k] - mu[k]) / (2 * v);
        log_p += -0.5 * std::log(2 * M_PI) - x[k] * x[k] / 2;
      }
      kl += std::exp(log_q) * (log_q - log_p) * step * step;
    }
  CHECK(gaussian_kl(mu, lv) == doctest::Approx(kl).epsilon(1e-3));
  CHECK_THROWS_AS(gaussian_kl(std::vector<double>(2), std::vector<double>(3)), std::invalid_argument);
}

TEST_CASE("encoding is deterministic and sensitive to a one pixel shift") {
  ShapeCodec a(LabelSchema::outfit_default(), 64, 64, small_config());
  ShapeCodec b(LabelSchema::outfit_default(), 64, 64, small_config());
  const auto maps = sample_maps(3, 64, 7);
  for (const auto& m : maps) {
    const auto ca = a.encode(m);
    CHECK(ca == b.encode(m));
    CHECK(ca == a.encode(m));
    const auto cs = a.encode(shift_right(m));
    bool differs = false;
    for (int r = 0; r < ca.regions(); ++r)
      if (ca.present(r) && cs.present(r))
        for (int k = 0; k < ca.dim(); ++k) differs |= ca.region(r)[k] != cs.region(r)[k];
    CHECK(differs);
  }
  CHECK(a.hash() == b.hash());
  CHECK(a.config_hash() == b.config_hash());
}

TEST_CASE("absent regions encode to zero and decoding is total") {
  ShapeCodec codec(LabelSchema::outfit_default(), 32, 32, small_config());
  const auto code = codec.encode(RegionMap(32, 32, 0));
  CHECK(code.present(0));
  for (int r = 1; r < code.regions(); ++r) {
    CHECK_FALSE(code.present(r));
    for (double v : code.region(r)) CHECK(v == 0.0);
  }
  const auto out = codec.generate(ShapeCode(8, 8));
  CHECK(out.height() == 32);
  CHECK(validate_region_map(out, codec.schema()).ok());
  CHECK_THROWS_AS(codec.generate(ShapeCode(8, 7)), std::invalid_argument);
  CHECK_THROWS_AS(codec.encode(RegionMap(64, 64, 0)), std::invalid_argument);
  CHECK_THROWS_AS(ShapeCodec(LabelSchema::outfit_default(), 40, 40, small_config()), std::invalid_argument);
}

TEST_CASE("loss gradient with respect to the posterior matches finite differences") {
  ShapeCodec codec(LabelSchema::outfit_default(), 32, 32, small_config(true));
  const auto target = sample_maps(1, 32, 3).front();
  const auto presence = target.presence(8);
  const int d = codec.code_dim();
  Rng rng(11);
  std::vector<double> mean(8 * d), log_var(8 * d), noise(8 * d);
  for (auto& v : mean) v = rng.normal();
  for (auto& v : log_var) v = 0.5 * rng.normal();
  for (auto& v : noise) v = rng.normal();

  const auto probe = shape_loss_probe(codec, target, mean, log_var, noise, 0.7);
  CHECK(probe.loss == doctest::Approx(probe.l1 + 0.7 * probe.kl));

  std::vector<std::size_t> coords;
  for (int r = 0; r < 8; ++r)
    if (presence[r])
      for (int k = 0; k < d; ++k) coords.push_back(static_cast<std::size_t>(r) * d + k);
  REQUIRE(coords.size() >= 20);

  const double h = 1e-6;
  int checked = 0;
  for (std::size_t i = 0; i < coords.size() && checked < 24; i += std::max<std::size_t>(1, coords.size() / 24)) {
    const auto c = coords[i];
    for (int which = 0; which < 2; ++which) {
      auto& vec = which == 0 ? mean : log_var;
      const double saved = vec[c];
      vec[c] = saved + h;
      const double up = shape_loss_probe(codec, target, mean, log_var, noise, 0.7).loss;
      vec[c] = saved - h;
      const double down = shape_loss_probe(codec, target, mean, log_var, noise, 0.7).loss;
      vec[c] = saved;
      const double fd = (up - down) / (2 * h);
      const double an = which == 0 ? probe.d_mean[c] : probe.d_log_var[c];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      CHECK_MESSAGE(rel < 1e-4, "coordinate " << c << " analytic " << an << " numeric " << fd);
    }
    ++checked;
  }
  CHECK(checked >= 20);

  // Absent regions take no part in the objective.
  for (int r = 0; r < 8; ++r)
    if (!presence[r])
      for (int k = 0; k < d; ++k) CHECK(probe.d_mean[r * d + k] == 0.0);
}

TEST_CASE("one epoch of training runs, logs, and round-trips through a checkpoint") {
  const auto train = sample_maps(8, 32, 21);
  const auto held = sample_maps(2, 32, 22);
  ShapeCodec codec(LabelSchema::outfit_default(), 32, 32, small_config());
  int calls = 0;
  const auto log = train_shape_vae(codec, train, held, [&](const ShapeEpochLog&) { ++calls; });
  REQUIRE(log.size() == 1);
  CHECK(calls == 1);
  CHECK(std::isfinite(log[0].l1));
  CHECK(log[0].kl >= 0.0);
  CHECK(log[0].heldout_accuracy >= 0.0);
  CHECK(log[0].heldout_accuracy <= 1.0);
  CHECK(shape_log_csv(log).rfind("epoch,kl,l1\n0,", 0) == 0);

  const auto path = std::filesystem::temp_directory_path() / "outfit_shape_test.ck";
  codec.save(path);
  const auto loaded = ShapeCodec::load(path);
  CHECK(loaded.hash() == codec.hash());
  CHECK(loaded.encode(train[0]) == codec.encode(train[0]));
  std::filesystem::remove(path);

  CHECK_THROWS_AS(train_shape_vae(codec, std::span<const RegionMap>{}, held), std::invalid_argument);
}

TEST_CASE("config validation and JSON round trip") {
  VAEConfig c;
  c.kl_weight = 0.5;
  c.seed = 9;
  const auto back = vae_config_from_json(vae_config_to_json(c));
  CHECK(back.kl_weight == 0.5);
  CHECK(back.seed == 9);
  c.batch_size = 0;
  CHECK_THROWS_AS(c.check(), std::invalid_argument);
}
