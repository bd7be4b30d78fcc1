#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "outfit/synth.hpp"
#include "outfit/texture_codec.hpp"
#include "outfit/util.hpp"

using namespace outfit;

namespace {

struct Sample {
  std::vector<Image> images;
  std::vector<RegionMap> maps;
  std::vector<std::vector<int>> solid;
};

Sample sample(int count, int size, std::uint64_t seed) {
  Rng rng(seed);
  Sample s;
  for (int i = 0; i < count; ++i) {
    const auto spec = sample_outfit_spec(rng);
    auto r = render_outfit(spec, size, size);
    s.images.push_back(std::move(r.image));
    s.maps.push_back(std::move(r.map));
    s.solid.push_back(solid_garment_labels(spec));
  }
  return s;
}

GANConfig tiny(bool dbl = false) {
  GANConfig c;
  c.epochs_constant = 1;
  c.epochs_decay = 0;
  c.batch_size = 4;
  c.double_precision = dbl;
  return c;
}

// Same image inside `label`, scrambled colours elsewhere.
Image scramble_outside(const Image& x, const RegionMap& m, int label) {
  Image out = x;
  for (int y = 0; y < x.height(); ++y)
    for (int c = 0; c < x.width(); ++c)
      if (m.at(y, c) != label)
        out.set(y, c, {static_cast<std::uint8_t>((y * 37 + c * 11) % 256), static_cast<std::uint8_t>((c * 53) % 256),
                       static_cast<std::uint8_t>((y * 91) % 256)});
  return out;
}

}  // namespace

TEST_CASE("encoder pooling agrees with region_pool and is deterministic") {
  TextureCodec codec(LabelSchema::outfit_default(), 32, 32, tiny());
  const auto s = sample(3, 32, 4);
  for (std::size_t i = 0; i < s.images.size(); ++i) {
    const auto t = codec.encode(s.images[i], s.maps[i]);
    CHECK(t == codec.encode(s.images[i], s.maps[i]));
    const auto ref = region_pool(codec.features(s.images[i]), s.maps[i], 8);
    CHECK(t.presence() == ref.presence());
    for (std::size_t k = 0; k < t.flat().size(); ++k) CHECK(t.flat()[k] == doctest::Approx(ref.flat()[k]).epsilon(1e-5));
    for (double v : t.flat()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("masked encoding makes each region code depend only on its own pixels") {
  TextureCodec codec(LabelSchema::outfit_default(), 32, 32, tiny());
  const auto s = sample(1, 32, 9);
  const auto& x = s.images[0];
  const auto& m = s.maps[0];
  const auto other = scramble_outside(x, m, labels::top);
  const auto a = codec.encode(x, m, EncodeMode::masked);
  const auto b = codec.encode(other, m, EncodeMode::masked);
  for (int k = 0; k < a.dim(); ++k) CHECK(a.region(labels::top)[k] == b.region(labels::top)[k]);

  // The global mode sees across the region boundary.
  const auto ga = codec.encode(x, m, EncodeMode::global);
  const auto gb = codec.encode(other, m, EncodeMode::global);
  bool bleed = false;
  for (int k = 0; k < ga.dim(); ++k) bleed |= ga.region(labels::top)[k] != gb.region(labels::top)[k];
  CHECK(bleed);
}

TEST_CASE("generation is deterministic and checks sizes") {
  TextureCodec codec(LabelSchema::outfit_default(), 32, 32, tiny());
  const auto s = sample(1, 32, 2);
  const auto a = codec.reconstruct(s.images[0], s.maps[0]);
  CHECK(a == codec.reconstruct(s.images[0], s.maps[0]));
  CHECK(a.height() == 32);
  CHECK_THROWS_AS(codec.encode(Image(16, 16), s.maps[0]), std::invalid_argument);
  CHECK_THROWS_AS(codec.generate(s.maps[0], FeatureMap(32, 32, 3)), std::invalid_argument);
  CHECK_THROWS_AS(codec.generate(RegionMap(16, 16), FeatureMap(16, 16, 8)), std::invalid_argument);
}

TEST_CASE("one epoch smoke run logs finite losses and round-trips a checkpoint") {
  const auto s = sample(10, 32, 13);
  TextureCodec codec(LabelSchema::outfit_default(), 32, 32, tiny());
  const auto log = train_texture_gan(codec, s.images, s.maps);
  REQUIRE(log.size() == 1);
  CHECK(std::isfinite(log[0].g_adv));
  CHECK(std::isfinite(log[0].d_real));
  CHECK(std::isfinite(log[0].d_fake));
  CHECK(log[0].fm > 0.0);
  CHECK(texture_log_csv(log).rfind("epoch,g_adv,d_real,d_fake,fm\n0,", 0) == 0);

  const auto q = reconstruction_quality(codec, s.images, s.maps, s.solid);
  CHECK(q.mae >= 0.0);
  CHECK(q.mae <= 1.0);

  const auto path = std::filesystem::temp_directory_path() / "outfit_texture_test.ck";
  codec.save(path);
  const auto loaded = TextureCodec::load(path);
  CHECK(loaded.hash() == codec.hash());
  CHECK(loaded.reconstruct(s.images[0], s.maps[0]) == codec.reconstruct(s.images[0], s.maps[0]));
  std::filesystem::remove(path);
}

TEST_CASE("feature matching weight zero reports exactly zero") {
  const auto s = sample(4, 32, 5);
  auto cfg = tiny();
  cfg.lambda_fm = 0.0;
  TextureCodec codec(LabelSchema::outfit_default(), 32, 32, cfg);
  const auto log = train_texture_gan(codec, s.images, s.maps);
  CHECK(log[0].fm == 0.0);
}

TEST_CASE("double precision training gives identical loss curves") {
  const auto s = sample(4, 32, 6);
  auto cfg = tiny(true);
  cfg.epochs_constant = 2;
  TextureCodec a(LabelSchema::outfit_default(), 32, 32, cfg);
  TextureCodec b(LabelSchema::outfit_default(), 32, 32, cfg);
  CHECK(texture_log_csv(train_texture_gan(a, s.images, s.maps)) == texture_log_csv(train_texture_gan(b, s.images, s.maps)));
  CHECK(a.hash() == b.hash());
}

TEST_CASE("training errors: empty split, mismatched inputs, divergence") {
  TextureCodec codec(LabelSchema::outfit_default(), 32, 32, tiny());
  const auto s = sample(2, 32, 8);
  CHECK_THROWS_AS(train_texture_gan(codec, std::span<const Image>{}, std::span<const RegionMap>{}), std::invalid_argument);
  CHECK_THROWS_AS(train_texture_gan(codec, s.images, std::span<const RegionMap>(s.maps).first(1)), std::invalid_argument);

  auto cfg = tiny();
  cfg.divergence_threshold = 1e9;  // every epoch counts as collapsed
  cfg.divergence_patience = 1;
  TextureCodec collapsing(LabelSchema::outfit_default(), 32, 32, cfg);
  CHECK_THROWS_AS(train_texture_gan(collapsing, s.images, s.maps), std::runtime_error);
}

TEST_CASE("LSGAN flag and config round trip") {
  GANConfig c;
  c.least_squares = true;
  c.lambda_l1 = 2.5;
  const auto back = gan_config_from_json(gan_config_to_json(c));
  CHECK(back.least_squares);
  CHECK(back.lambda_l1 == 2.5);
  c.lambda_fm = -1;
  CHECK_THROWS_AS(c.check(), std::invalid_argument);
}
