#include "outfit/serialize.hpp"

#include <cstring>
#include <stdexcept>

#include "outfit/util.hpp"

namespace outfit {

nlohmann::json code_to_json(const OutfitCode& code) {
  nlohmann::json texture = nlohmann::json::array();
  nlohmann::json shape = nlohmann::json::array();
  nlohmann::json presence = nlohmann::json::array();
  for (int i = 0; i < code.regions(); ++i) {
    auto t = code.texture.region(i);
    auto s = code.shape.region(i);
    texture.push_back(std::vector<double>(t.begin(), t.end()));
    shape.push_back(std::vector<double>(s.begin(), s.end()));
    presence.push_back(static_cast<bool>(code.present(i)));
  }
  return {{"schema_version", kCodeSchemaVersion},
          {"n", code.regions()},
          {"d_t", code.texture_dim()},
          {"d_s", code.shape_dim()},
          {"texture", texture},
          {"shape", shape},
          {"presence", presence}};
}

OutfitCode code_from_json(const nlohmann::json& j) {
  if (j.at("schema_version").get<int>() != kCodeSchemaVersion) {
    throw std::invalid_argument("unsupported code schema_version " + j.at("schema_version").dump());
  }
  const int n = j.at("n").get<int>();
  const int dt = j.at("d_t").get<int>();
  const int ds = j.at("d_s").get<int>();
  const auto& tex = j.at("texture");
  const auto& shp = j.at("shape");
  const auto& pres = j.at("presence");
  if (static_cast<int>(tex.size()) != n || static_cast<int>(shp.size()) != n || static_cast<int>(pres.size()) != n) {
    throw std::invalid_argument("code record arrays do not have n entries");
  }
  OutfitCode code(TextureCode(n, dt), ShapeCode(n, ds));
  for (int i = 0; i < n; ++i) {
    auto t = tex[i].get<std::vector<double>>();
    auto s = shp[i].get<std::vector<double>>();
    if (static_cast<int>(t.size()) != dt || static_cast<int>(s.size()) != ds) {
      throw std::invalid_argument("code record region " + std::to_string(i) + " has wrong width");
    }
    std::copy(t.begin(), t.end(), code.texture.region(i).begin());
    std::copy(s.begin(), s.end(), code.shape.region(i).begin());
    code.set_present(i, pres[i].get<bool>());
  }
  return code;
}

nlohmann::json schema_to_json(const LabelSchema& schema) {
  return {{"names", schema.names}, {"editable", schema.editable}};
}

LabelSchema schema_from_json(const nlohmann::json& j) {
  LabelSchema s{j.at("names").get<std::vector<std::string>>(), j.at("editable").get<std::vector<int>>()};
  s.check();
  return s;
}

std::string canonical_dump(const nlohmann::json& j) {
  // nlohmann objects are std::map backed, so keys already serialize sorted.
  return j.dump();
}

std::int64_t TensorEntry::numel() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

const TensorEntry& CheckpointFile::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw std::out_of_range("checkpoint has no tensor '" + name + "'");
}

namespace {

constexpr char kMagic[8] = {'O', 'U', 'T', 'F', 'I', 'T', 'C', 'K'};

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  throw std::invalid_argument("unknown tensor dtype " + dtype);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file) {
  nlohmann::json header = file.header;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& t : file.tensors) {
    if (t.bytes.size() != static_cast<std::size_t>(t.numel()) * dtype_size(t.dtype)) {
      throw std::invalid_argument("tensor '" + t.name + "' payload size does not match its shape");
    }
    table.push_back({{"name", t.name}, {"dtype", t.dtype}, {"shape", t.shape}});
  }
  header["tensors"] = table;
  const std::string text = canonical_dump(header);
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(len >> (8 * b)));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : file.tensors) out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  return out;
}

CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw std::invalid_argument("not a checkpoint file (bad magic)");
  }
  std::uint32_t len = 0;
  for (int b = 0; b < 4; ++b) len |= static_cast<std::uint32_t>(bytes[8 + b]) << (8 * b);
  if (12 + static_cast<std::size_t>(len) > bytes.size()) throw std::invalid_argument("truncated checkpoint header");
  CheckpointFile file;
  file.header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
  std::size_t offset = 12 + len;
  for (const auto& row : file.header.at("tensors")) {
    TensorEntry t;
    t.name = row.at("name").get<std::string>();
    t.dtype = row.at("dtype").get<std::string>();
    t.shape = row.at("shape").get<std::vector<std::int64_t>>();
    const std::size_t size = static_cast<std::size_t>(t.numel()) * dtype_size(t.dtype);
    if (offset + size > bytes.size()) throw std::invalid_argument("truncated checkpoint payload for " + t.name);
    t.bytes.assign(bytes.begin() + offset, bytes.begin() + offset + size);
    offset += size;
    file.tensors.push_back(std::move(t));
  }
  if (offset != bytes.size()) throw std::invalid_argument("trailing bytes after checkpoint payload");
  file.header.erase("tensors");
  return file;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  write_file_atomic(path, encode_checkpoint(file));
}

CheckpointFile load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

TensorEntry make_tensor_f64(std::string name, std::vector<std::int64_t> shape, std::span<const double> values) {
  TensorEntry t{std::move(name), "f64", std::move(shape), {}};
  if (static_cast<std::size_t>(t.numel()) != values.size()) throw std::invalid_argument("tensor shape/value mismatch");
  t.bytes.resize(values.size() * sizeof(double));
  std::memcpy(t.bytes.data(), values.data(), t.bytes.size());
  return t;
}

std::vector<double> tensor_as_f64(const TensorEntry& entry) {
  std::vector<double> out(static_cast<std::size_t>(entry.numel()));
  if (entry.dtype == "f64") {
    std::memcpy(out.data(), entry.bytes.data(), entry.bytes.size());
  } else {
    std::vector<float> f(out.size());
    std::memcpy(f.data(), entry.bytes.data(), entry.bytes.size());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i];
  }
  return out;
}

}  // namespace outfit
