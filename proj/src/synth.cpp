#include "outfit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace outfit {

namespace {

constexpr double kCanvas = 64.0;
constexpr double kCenterX = 32.0;
constexpr double kStripeDim = 0.55;
constexpr double kGoldenSection = 0.382;

double wrap_hue(double h) {
  h = std::fmod(h, 360.0);
  return h < 0.0 ? h + 360.0 : h;
}

void check_unit(double v, const char* field) {
  if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(field) + " must lie in [0,1]");
}

void check_hue(double v, const char* field) {
  if (!(v >= 0.0 && v < 360.0)) throw std::invalid_argument(std::string(field) + " must lie in [0,360)");
}

std::array<std::uint8_t, 3> hsv_bytes(double h, double s, double v) {
  auto rgb = hsv_to_rgb({h, s, v});
  return {quantize_unit(rgb[0]), quantize_unit(rgb[1]), quantize_unit(rgb[2])};
}

class Canvas {
 public:
  Canvas(int height, int width) : image(height, width), map(height, width, labels::background) {
    const auto bg = hsv_bytes(0.0, 0.0, 0.94);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) image.set(y, x, bg);
  }

  // Edges are snapped to whole reference pixels so every output size is an
  // exact integer rescaling of the 64-pixel layout (up to size rounding).
  template <typename ColorFn>
  void fill(double y0, double y1, double x0, double x1, int label, ColorFn color) {
    const int r0 = to_row(y0), r1 = to_row(y1);
    const int c0 = to_col(x0), c1 = to_col(x1);
    for (int y = std::max(r0, 0); y < std::min(r1, image.height()); ++y) {
      const auto rgb = color(y);
      for (int x = std::max(c0, 0); x < std::min(c1, image.width()); ++x) {
        image.set(y, x, rgb);
        map.set(y, x, static_cast<std::uint8_t>(label));
      }
    }
  }

  void fill_solid(double y0, double y1, double x0, double x1, int label, std::array<std::uint8_t, 3> rgb) {
    fill(y0, y1, x0, x1, label, [&](int) { return rgb; });
  }

  Image image;
  RegionMap map;

 private:
  int to_row(double y) const {
    return static_cast<int>(std::lround(static_cast<double>(std::lround(y)) * image.height() / kCanvas));
  }
  int to_col(double x) const {
    return static_cast<int>(std::lround(static_cast<double>(std::lround(x)) * image.width() / kCanvas));
  }
};

// Stripes alternate full and dimmed value in bands of height H/16.
auto garment_color(double hue, double sat, double val, Pattern pattern, int height) {
  const auto full = hsv_bytes(hue, sat, val);
  const auto dim = hsv_bytes(hue, sat, val * kStripeDim);
  return [=](int y) {
    if (pattern == Pattern::solid) return full;
    return (y * 16 / height) % 2 == 0 ? full : dim;
  };
}

}  // namespace

DollLayout doll_layout(const OutfitSpec& spec) {
  const double hp = spec.body.height_px;
  DollLayout l{};
  l.feet_y = 62.0;
  l.head_top = l.feet_y - hp;
  l.head_height = 0.17 * hp;
  l.shoulder_y = l.head_top + l.head_height + 0.02 * hp;
  l.torso_length = (0.17 + 0.08 * spec.body.torso_ratio) * hp;
  l.waist_y = l.shoulder_y + l.torso_length;
  l.shoe_height = 0.05 * hp;
  l.leg_length = l.feet_y - l.shoe_height - l.waist_y;
  l.torso_half_width = 0.12 * hp;
  l.top_hem = spec.top.tuck == Tuck::in ? l.waist_y : l.waist_y + 0.07 * hp;
  l.bottom_hem = l.waist_y + spec.bottom.length * l.leg_length;
  l.outer_hem = spec.outer.present
                    ? std::min(l.shoulder_y + (0.6 + 1.2 * spec.outer.length) * l.torso_length, l.feet_y - l.shoe_height)
                    : l.shoulder_y;
  l.upper_hem = std::max(l.top_hem, l.outer_hem);
  return l;
}

void check_spec(const OutfitSpec& s) {
  check_hue(s.top.hue, "top.hue");
  check_unit(s.top.saturation, "top.saturation");
  check_unit(s.top.value, "top.value");
  check_unit(s.top.sleeve_length, "top.sleeve_length");
  check_hue(s.bottom.hue, "bottom.hue");
  check_unit(s.bottom.saturation, "bottom.saturation");
  check_unit(s.bottom.value, "bottom.value");
  check_unit(s.bottom.length, "bottom.length");
  check_unit(s.bottom.width, "bottom.width");
  check_hue(s.outer.hue, "outer.hue");
  check_unit(s.outer.length, "outer.length");
  check_hue(s.bag.hue, "bag.hue");
  check_unit(s.body.torso_ratio, "body.torso_ratio");
  if (!(s.body.height_px >= 40.0 && s.body.height_px <= 60.0)) {
    throw std::invalid_argument("body.height_px must lie in [40,60]");
  }
}

OutfitSpec sample_outfit_spec(Rng& rng, StylePrior prior) {
  OutfitSpec s;
  s.seed = rng.next();
  s.body.height_px = rng.uniform(50.0, 60.0);
  s.body.torso_ratio = rng.uniform();

  s.top.hue = rng.uniform(0.0, 360.0);
  s.top.saturation = rng.uniform(0.45, 1.0);
  s.top.value = rng.uniform(0.5, 1.0);
  s.top.pattern = rng.bernoulli(0.3) ? Pattern::stripes : Pattern::solid;
  s.top.sleeve_length = rng.uniform();
  s.top.tuck = rng.bernoulli(0.5) ? Tuck::in : Tuck::out;

  s.bottom.hue = rng.uniform(0.0, 360.0);
  s.bottom.saturation = rng.uniform(0.45, 1.0);
  s.bottom.value = rng.uniform(0.5, 1.0);
  s.bottom.pattern = rng.bernoulli(0.3) ? Pattern::stripes : Pattern::solid;
  s.bottom.length = rng.uniform(0.4, 1.0);
  s.bottom.width = rng.uniform();

  s.outer.present = rng.bernoulli(0.25);
  s.outer.hue = rng.uniform(0.0, 360.0);
  s.outer.length = rng.uniform();
  s.bag.present = rng.bernoulli(0.3);
  s.bag.hue = rng.uniform(0.0, 360.0);

  if (prior == StylePrior::positive) {
    // Matching or complementary bottom hue, at most one patterned garment,
    // short outer layers, and a bottom length placing r near the golden section.
    const double offset = rng.bernoulli(0.5) ? 0.0 : 180.0;
    s.bottom.hue = wrap_hue(s.top.hue + offset + 12.0 * rng.normal());
    const double u = rng.uniform();
    s.top.pattern = u < 0.2 ? Pattern::stripes : Pattern::solid;
    s.bottom.pattern = (u >= 0.2 && u < 0.4) ? Pattern::stripes : Pattern::solid;
    s.outer.length = rng.uniform(0.0, 0.3);
    const auto l = doll_layout(s);
    const double target = std::clamp(kGoldenSection + 0.04 * rng.normal(), 0.25, 0.55);
    const double upper = l.upper_hem - l.shoulder_y;
    const double exposed = upper * (1.0 - target) / target;
    s.bottom.length = std::clamp((l.upper_hem + exposed - l.waist_y) / l.leg_length, 0.4, 1.0);
  }
  return s;
}

RenderedOutfit render_outfit(const OutfitSpec& spec, int height, int width) {
  if (height < 32 || width < 32) throw std::invalid_argument("render size must be at least 32x32");
  check_spec(spec);
  const auto l = doll_layout(spec);
  const double hp = spec.body.height_px;
  Canvas c(height, width);

  c.fill_solid(l.head_top, l.head_top + 0.08 * hp, kCenterX - 0.085 * hp, kCenterX + 0.085 * hp, labels::hair,
               hsv_bytes(25.0, 0.6, 0.25));
  c.fill_solid(l.head_top + 0.05 * hp, l.head_top + l.head_height, kCenterX - 0.07 * hp, kCenterX + 0.07 * hp,
               labels::face, hsv_bytes(25.0, 0.35, 0.92));

  const auto shoe = hsv_bytes(0.0, 0.0, 0.15);
  c.fill_solid(l.feet_y - l.shoe_height, l.feet_y, kCenterX - 0.10 * hp, kCenterX - 0.02 * hp, labels::shoes, shoe);
  c.fill_solid(l.feet_y - l.shoe_height, l.feet_y, kCenterX + 0.02 * hp, kCenterX + 0.10 * hp, labels::shoes, shoe);

  const double bw = (0.09 + 0.07 * spec.bottom.width) * hp;
  c.fill(l.waist_y, l.bottom_hem, kCenterX - bw, kCenterX + bw, labels::bottom,
         garment_color(spec.bottom.hue, spec.bottom.saturation, spec.bottom.value, spec.bottom.pattern, height));

  const auto top_color = garment_color(spec.top.hue, spec.top.saturation, spec.top.value, spec.top.pattern, height);
  const double tw = l.torso_half_width;
  c.fill(l.shoulder_y, l.top_hem, kCenterX - tw, kCenterX + tw, labels::top, top_color);
  if (spec.top.sleeve_length > 0.0) {
    const double sleeve_end = l.shoulder_y + spec.top.sleeve_length * 0.36 * hp;
    c.fill(l.shoulder_y, sleeve_end, kCenterX - tw - 0.045 * hp, kCenterX - tw, labels::top, top_color);
    c.fill(l.shoulder_y, sleeve_end, kCenterX + tw, kCenterX + tw + 0.045 * hp, labels::top, top_color);
  }

  if (spec.outer.present) {
    const auto rgb = hsv_bytes(spec.outer.hue, 0.55, 0.55);
    c.fill_solid(l.shoulder_y, l.outer_hem, kCenterX - tw - 0.055 * hp, kCenterX - 0.04 * hp, labels::outer, rgb);
    c.fill_solid(l.shoulder_y, l.outer_hem, kCenterX + 0.04 * hp, kCenterX + tw + 0.055 * hp, labels::outer, rgb);
  }
  if (spec.bag.present) {
    c.fill_solid(l.waist_y - 0.02 * hp, l.waist_y + 0.09 * hp, kCenterX + tw + 0.07 * hp, kCenterX + tw + 0.17 * hp,
                 labels::bag, hsv_bytes(spec.bag.hue, 0.7, 0.65));
  }
  return {std::move(c.image), std::move(c.map)};
}

double proportion_ratio(const OutfitSpec& spec) {
  const auto l = doll_layout(spec);
  const double upper = l.upper_hem - l.shoulder_y;
  const double exposed = std::max(0.0, l.bottom_hem - l.upper_hem);
  return upper / (upper + exposed);
}

OracleScore oracle_score(const OutfitSpec& spec) {
  OracleScore o;
  const double dh = hue_distance(spec.top.hue, spec.bottom.hue);
  const double two_var_h = 2.0 * 30.0 * 30.0;
  o.harmony = std::max(std::exp(-dh * dh / two_var_h), std::exp(-(dh - 180.0) * (dh - 180.0) / two_var_h));
  const double r = proportion_ratio(spec);
  o.proportion = std::exp(-(r - kGoldenSection) * (r - kGoldenSection) / (2.0 * 0.1 * 0.1));
  const int patterned = (spec.top.pattern == Pattern::stripes) + (spec.bottom.pattern == Pattern::stripes);
  o.pattern = patterned <= 1 ? 1.0 : 0.3;
  o.total = (o.harmony + o.proportion + o.pattern) / 3.0;
  return o;
}

OutfitSpec transplant_garment(const OutfitSpec& target, const OutfitSpec& donor, int label) {
  OutfitSpec out = target;
  switch (label) {
    case labels::top: out.top = donor.top; break;
    case labels::bottom: out.bottom = donor.bottom; break;
    case labels::outer: out.outer = donor.outer; break;
    case labels::bag: out.bag = donor.bag; break;
    default: throw std::invalid_argument("transplant_garment: label " + std::to_string(label) + " is not a garment");
  }
  return out;
}

nlohmann::json spec_to_json(const OutfitSpec& s) {
  auto pattern = [](Pattern p) { return p == Pattern::solid ? "solid" : "stripes"; };
  return {
      {"top",
       {{"hue", s.top.hue},
        {"saturation", s.top.saturation},
        {"value", s.top.value},
        {"pattern", pattern(s.top.pattern)},
        {"sleeve_length", s.top.sleeve_length},
        {"tuck", s.top.tuck == Tuck::in ? "in" : "out"}}},
      {"bottom",
       {{"hue", s.bottom.hue},
        {"saturation", s.bottom.saturation},
        {"value", s.bottom.value},
        {"pattern", pattern(s.bottom.pattern)},
        {"length", s.bottom.length},
        {"width", s.bottom.width}}},
      {"outer", {{"present", s.outer.present}, {"hue", s.outer.hue}, {"length", s.outer.length}}},
      {"bag", {{"present", s.bag.present}, {"hue", s.bag.hue}}},
      {"body", {{"height_px", s.body.height_px}, {"torso_ratio", s.body.torso_ratio}}},
      {"seed", s.seed},
  };
}

OutfitSpec spec_from_json(const nlohmann::json& j) {
  auto pattern = [](const nlohmann::json& v) {
    const auto p = v.get<std::string>();
    if (p == "solid") return Pattern::solid;
    if (p == "stripes") return Pattern::stripes;
    throw std::invalid_argument("unknown pattern " + p);
  };
  OutfitSpec s;
  const auto& t = j.at("top");
  s.top = {t.at("hue"), t.at("saturation"), t.at("value"), pattern(t.at("pattern")), t.at("sleeve_length"),
           t.at("tuck").get<std::string>() == "in" ? Tuck::in : Tuck::out};
  const auto& b = j.at("bottom");
  s.bottom = {b.at("hue"), b.at("saturation"), b.at("value"), pattern(b.at("pattern")), b.at("length"), b.at("width")};
  const auto& o = j.at("outer");
  s.outer = {o.at("present"), o.at("hue"), o.at("length")};
  const auto& g = j.at("bag");
  s.bag = {g.at("present"), g.at("hue")};
  const auto& body = j.at("body");
  s.body = {body.at("height_px"), body.at("torso_ratio")};
  s.seed = j.at("seed").get<std::uint64_t>();
  check_spec(s);
  return s;
}

nlohmann::json oracle_to_json(const OracleScore& s) {
  return {{"total", s.total}, {"harmony", s.harmony}, {"proportion", s.proportion}, {"pattern", s.pattern}};
}

OracleScore oracle_from_json(const nlohmann::json& j) {
  return {j.at("total"), j.at("harmony"), j.at("proportion"), j.at("pattern")};
}

std::string split_name(Split s) {
  switch (s) {
    case Split::gen_train: return "gen-train";
    case Split::cls_train: return "cls-train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "gen-train") return Split::gen_train;
  if (name == "cls-train") return Split::cls_train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split " + name);
}

std::vector<const ManifestRecord*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

const ManifestRecord& DatasetManifest::find(const std::string& id) const {
  for (const auto& r : records) {
    if (r.id == id) return r;
  }
  throw std::out_of_range("no outfit with id " + id);
}

nlohmann::json dataset_config_to_json(const DatasetConfig& c) {
  return {{"gen_train", c.gen_train}, {"cls_train", c.cls_train}, {"val", c.val},         {"test", c.test},
          {"tau_pos", c.tau_pos},     {"image_size", c.image_size}, {"seed", c.seed}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.gen_train = j.value("gen_train", c.gen_train);
  c.cls_train = j.value("cls_train", c.cls_train);
  c.val = j.value("val", c.val);
  c.test = j.value("test", c.test);
  c.tau_pos = j.value("tau_pos", c.tau_pos);
  c.image_size = j.value("image_size", c.image_size);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

std::string outfit_id(int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", k);
  return buf;
}

nlohmann::json record_to_json(const ManifestRecord& r) {
  return {{"id", r.id},
          {"image_path", r.image_path},
          {"map_path", r.map_path},
          {"split", split_name(r.split)},
          {"oracle", oracle_to_json(r.oracle)},
          {"positive", r.positive},
          {"spec", spec_to_json(r.spec)}};
}

ManifestRecord record_from_json(const nlohmann::json& j) {
  ManifestRecord r;
  r.id = j.at("id").get<std::string>();
  r.image_path = j.at("image_path").get<std::string>();
  r.map_path = j.at("map_path").get<std::string>();
  r.split = split_from_name(j.at("split").get<std::string>());
  r.oracle = oracle_from_json(j.at("oracle"));
  r.positive = j.at("positive").get<bool>();
  r.spec = spec_from_json(j.at("spec"));
  return r;
}

}  // namespace

DatasetBuildResult build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir) {
  if (config.total() < 100) throw std::invalid_argument("dataset needs at least 100 outfits");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  std::filesystem::create_directories(out_dir / "maps", ec);
  if (ec || !std::filesystem::is_directory(out_dir / "images")) {
    throw std::runtime_error("cannot create dataset directory " + out_dir.string());
  }

  DatasetBuildResult result;
  result.manifest.root = out_dir;
  const int bounds[4] = {config.gen_train, config.gen_train + config.cls_train,
                         config.gen_train + config.cls_train + config.val, config.total()};
  std::size_t positives = 0;
  for (int k = 0; k < config.total(); ++k) {
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(k)));
    ManifestRecord r;
    r.id = outfit_id(k);
    r.spec = sample_outfit_spec(rng);
    r.split = k < bounds[0] ? Split::gen_train : k < bounds[1] ? Split::cls_train : k < bounds[2] ? Split::val : Split::test;
    r.oracle = oracle_score(r.spec);
    r.positive = r.oracle.total >= config.tau_pos;
    positives += r.positive;
    r.image_path = "images/" + r.id + ".png";
    r.map_path = "maps/" + r.id + ".png";
    const auto rendered = render_outfit(r.spec, config.image_size, config.image_size);
    write_png(out_dir / r.image_path, rendered.image);
    write_png(out_dir / r.map_path, rendered.map);
    result.manifest.records.push_back(std::move(r));
  }
  result.positive_rate = static_cast<double>(positives) / config.total();
  if (positives == 0) {
    result.warnings.push_back("no outfit reaches tau_pos=" + std::to_string(config.tau_pos) + "; dataset has zero positives");
  } else if (result.positive_rate < 0.3 || result.positive_rate > 0.4) {
    result.warnings.push_back("positive rate " + std::to_string(result.positive_rate) + " outside the expected 30-40% band");
  }
  write_manifest(result.manifest);
  return result;
}

void write_manifest(const DatasetManifest& manifest) {
  std::string text;
  for (const auto& r : manifest.records) text += record_to_json(r).dump() + "\n";
  write_file_atomic(manifest.root / "manifest.jsonl", text);
}

DatasetManifest read_manifest(const std::filesystem::path& manifest_path) {
  DatasetManifest m;
  auto path = manifest_path;
  if (std::filesystem::is_directory(path)) path /= "manifest.jsonl";
  m.root = path.parent_path();
  const std::string text = read_text_file(path);
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    if (end > start) m.records.push_back(record_from_json(nlohmann::json::parse(text.substr(start, end - start))));
    start = end + 1;
  }
  return m;
}

std::vector<int> solid_garment_labels(const OutfitSpec& spec) {
  std::vector<int> out;
  if (spec.top.pattern == Pattern::solid) out.push_back(labels::top);
  if (spec.bottom.pattern == Pattern::solid) out.push_back(labels::bottom);
  if (spec.outer.present) out.push_back(labels::outer);
  if (spec.bag.present) out.push_back(labels::bag);
  return out;
}

}  // namespace outfit
