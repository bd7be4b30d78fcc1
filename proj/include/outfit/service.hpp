#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "outfit/pipeline.hpp"

namespace httplib {
class Server;
}

namespace outfit {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path store_dir = "store";
  std::filesystem::path shape_checkpoint = "work/models/shape.ck";
  std::filesystem::path texture_checkpoint = "work/models/texture.ck";
  std::filesystem::path classifier_checkpoint = "work/models/classifier.ck";
  std::filesystem::path inventory = "work/inventory/inventory.jsonl";
  std::size_t max_upload_bytes = 1 << 20;  // per PNG
  int threads = 4;
};

nlohmann::json service_config_to_json(const ServiceConfig& c);
ServiceConfig service_config_from_json(const nlohmann::json& j);

using EnvLookup = std::function<const char*(const char*)>;

/// OUTFIT_PORT, OUTFIT_HOST, OUTFIT_STORE_DIR, OUTFIT_SHAPE_CK, OUTFIT_TEXTURE_CK,
/// OUTFIT_CLASSIFIER_CK, OUTFIT_INVENTORY.
ServiceConfig apply_env_overrides(ServiceConfig c, const EnvLookup& env);

/// Reads a JSON config file (empty path = defaults) and applies the
/// environment.
ServiceConfig load_service_config(const std::filesystem::path& path, const EnvLookup& env);

/// Every non-2xx response body is {"error": {"code", "message", "field"?}}.
struct ApiError : std::runtime_error {
  ApiError(int status, std::string code, const std::string& message, std::string field = "")
      : std::runtime_error(message), status(status), code(std::move(code)), field(std::move(field)) {}
  int status;
  std::string code;
  std::string field;
};

nlohmann::json api_error_json(const ApiError& e);

/// Content-addressed files under a root directory. Outfits live in
/// outfits/<id>/, trajectories in edits/<tid>/. A trajectory directory is
/// assembled under tmp/ and renamed into place, so it is either fully present
/// or absent.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  bool has_outfit(const std::string& id) const;
  /// Writes image.png, map.png and outfit.json; a no-op when present.
  void put_outfit(const std::string& id, std::span<const std::uint8_t> image_png,
                  std::span<const std::uint8_t> map_png, const nlohmann::json& meta);
  nlohmann::json outfit_meta(const std::string& id) const;
  Image outfit_image(const std::string& id) const;
  RegionMap outfit_map(const std::string& id) const;

  bool has_trajectory(const std::string& tid) const;
  void put_trajectory(const std::string& tid, const nlohmann::json& meta, const std::vector<Image>& frames);
  nlohmann::json trajectory_meta(const std::string& tid) const;
  std::vector<std::uint8_t> frame_png(const std::string& tid, int k) const;

  /// Serialises writes that touch the same key.
  std::mutex& lock_for(const std::string& key);

 private:
  std::filesystem::path root_;
  std::array<std::mutex, 16> locks_;
};

/// Request handlers independent of the transport. Each returns the JSON body
/// of a 2xx response or throws ApiError.
class OutfitService {
 public:
  OutfitService(ServiceConfig config, ModelBundle models);

  const ServiceConfig& config() const { return config_; }
  const ModelBundle& models() const { return models_; }

  nlohmann::json upload(std::span<const std::uint8_t> image_png, std::span<const std::uint8_t> map_png);
  nlohmann::json get_outfit(const std::string& id);
  nlohmann::json edit(const std::string& id, const nlohmann::json& body);
  nlohmann::json get_edit(const std::string& tid);
  std::vector<std::uint8_t> frame(const std::string& tid, int k);
  /// Missing k / region default to the last step / edited region.
  nlohmann::json retrieve(const std::string& tid, std::optional<int> k, std::optional<int> region, int top_k);
  /// `near` is a stored outfit id or an inventory garment id; empty lists the
  /// slice in inventory order.
  nlohmann::json search(int region, const std::string& near, int top_k);
  std::vector<std::uint8_t> thumbnail(const std::string& garment_id);
  nlohmann::json health() const;

  /// Registers the HTTP routes.
  void mount(httplib::Server& server);

 private:
  nlohmann::json hits_json(const std::vector<RetrievalHit>& hits) const;
  int parse_region(const std::string& text) const;

  ServiceConfig config_;
  ModelBundle models_;
  SessionStore store_;
  std::mutex compute_;  // the torch modules are not used concurrently
};

/// Loads checkpoints and blocks serving HTTP until the process is stopped.
int serve(const ServiceConfig& config);

}  // namespace outfit
