#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "outfit/region.hpp"

namespace outfit {

inline constexpr int kCodeSchemaVersion = 1;

/// {schema_version, n, d_t, d_s, texture: [[..]], shape: [[..]], presence: [..]}
nlohmann::json code_to_json(const OutfitCode& code);
OutfitCode code_from_json(const nlohmann::json& j);

nlohmann::json schema_to_json(const LabelSchema& schema);
LabelSchema schema_from_json(const nlohmann::json& j);

/// Canonical text form used for hashing: sorted keys, no whitespace.
std::string canonical_dump(const nlohmann::json& j);

/// Named tensor blob stored in a checkpoint.
struct TensorEntry {
  std::string name;
  std::string dtype;  // "f32" | "f64"
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> bytes;

  std::int64_t numel() const;
};

/// Versioned binary container: magic "OUTFITCK", u32 header length, JSON
/// header (module metadata plus the tensor table), then raw little-endian
/// tensor payloads in table order.
struct CheckpointFile {
  nlohmann::json header;
  std::vector<TensorEntry> tensors;

  const TensorEntry& tensor(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file);
CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile load_checkpoint(const std::filesystem::path& path);

TensorEntry make_tensor_f64(std::string name, std::vector<std::int64_t> shape, std::span<const double> values);
std::vector<double> tensor_as_f64(const TensorEntry& entry);

}  // namespace outfit
