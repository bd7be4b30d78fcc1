#include "outfit/service.hpp"

#include <httplib.h>

#include <fstream>
#include <iostream>

#include "outfit/image.hpp"
#include "outfit/serialize.hpp"
#include "outfit/util.hpp"

namespace outfit {

namespace fs = std::filesystem;

nlohmann::json service_config_to_json(const ServiceConfig& c) {
  return {{"host", c.host},
          {"port", c.port},
          {"store_dir", c.store_dir.string()},
          {"shape_checkpoint", c.shape_checkpoint.string()},
          {"texture_checkpoint", c.texture_checkpoint.string()},
          {"classifier_checkpoint", c.classifier_checkpoint.string()},
          {"inventory", c.inventory.string()},
          {"max_upload_bytes", c.max_upload_bytes},
          {"threads", c.threads}};
}

ServiceConfig service_config_from_json(const nlohmann::json& j) {
  ServiceConfig c;
  auto merged = service_config_to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!merged.contains(key)) throw std::invalid_argument("unknown service config field '" + key + "'");
    merged[key] = value;
  }
  c.host = merged.at("host").get<std::string>();
  c.port = merged.at("port").get<int>();
  c.store_dir = merged.at("store_dir").get<std::string>();
  c.shape_checkpoint = merged.at("shape_checkpoint").get<std::string>();
  c.texture_checkpoint = merged.at("texture_checkpoint").get<std::string>();
  c.classifier_checkpoint = merged.at("classifier_checkpoint").get<std::string>();
  c.inventory = merged.at("inventory").get<std::string>();
  c.max_upload_bytes = merged.at("max_upload_bytes").get<std::size_t>();
  c.threads = merged.at("threads").get<int>();
  if (c.port < 0 || c.port > 65535) throw std::invalid_argument("port out of range");
  if (c.threads < 1) throw std::invalid_argument("threads must be >= 1");
  return c;
}

ServiceConfig apply_env_overrides(ServiceConfig c, const EnvLookup& env) {
  auto get = [&](const char* name) -> std::optional<std::string> {
    const char* v = env(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
  };
  if (auto v = get("OUTFIT_HOST")) c.host = *v;
  if (auto v = get("OUTFIT_PORT")) {
    try {
      c.port = std::stoi(*v);
    } catch (const std::exception&) {
      throw std::invalid_argument("OUTFIT_PORT is not a number: " + *v);
    }
  }
  if (auto v = get("OUTFIT_STORE_DIR")) c.store_dir = *v;
  if (auto v = get("OUTFIT_SHAPE_CK")) c.shape_checkpoint = *v;
  if (auto v = get("OUTFIT_TEXTURE_CK")) c.texture_checkpoint = *v;
  if (auto v = get("OUTFIT_CLASSIFIER_CK")) c.classifier_checkpoint = *v;
  if (auto v = get("OUTFIT_INVENTORY")) c.inventory = *v;
  return c;
}

ServiceConfig load_service_config(const fs::path& path, const EnvLookup& env) {
  ServiceConfig c;
  if (!path.empty()) {
    const auto j = nlohmann::json::parse(read_text_file(path), nullptr, false);
    if (j.is_discarded()) throw std::invalid_argument("cannot parse service config " + path.string());
    c = service_config_from_json(j);
  }
  return apply_env_overrides(std::move(c), env);
}

nlohmann::json api_error_json(const ApiError& e) {
  nlohmann::json err = {{"code", e.code}, {"message", e.what()}};
  if (!e.field.empty()) err["field"] = e.field;
  return {{"error", err}};
}

// ---------------------------------------------------------------------------

SessionStore::SessionStore(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_ / "outfits");
  fs::create_directories(root_ / "edits");
  fs::create_directories(root_ / "tmp");
}

std::mutex& SessionStore::lock_for(const std::string& key) {
  return locks_[std::hash<std::string>{}(key) % locks_.size()];
}

bool SessionStore::has_outfit(const std::string& id) const {
  return fs::exists(root_ / "outfits" / id / "outfit.json");
}

void SessionStore::put_outfit(const std::string& id, std::span<const std::uint8_t> image_png,
                              std::span<const std::uint8_t> map_png, const nlohmann::json& meta) {
  std::lock_guard lock(lock_for(id));
  if (has_outfit(id)) return;
  const auto dir = root_ / "outfits" / id;
  fs::create_directories(dir);
  write_file_atomic(dir / "image.png", image_png);
  write_file_atomic(dir / "map.png", map_png);
  // outfit.json last: its presence marks the entry complete.
  write_file_atomic(dir / "outfit.json", meta.dump(1));
}

nlohmann::json SessionStore::outfit_meta(const std::string& id) const {
  return nlohmann::json::parse(read_text_file(root_ / "outfits" / id / "outfit.json"));
}

Image SessionStore::outfit_image(const std::string& id) const { return read_png_rgb(root_ / "outfits" / id / "image.png"); }

RegionMap SessionStore::outfit_map(const std::string& id) const { return read_png_map(root_ / "outfits" / id / "map.png"); }

bool SessionStore::has_trajectory(const std::string& tid) const {
  return fs::exists(root_ / "edits" / tid / "trajectory.json");
}

void SessionStore::put_trajectory(const std::string& tid, const nlohmann::json& meta, const std::vector<Image>& frames) {
  std::lock_guard lock(lock_for(tid));
  if (has_trajectory(tid)) return;
  const auto staging = root_ / "tmp" / tid;
  fs::remove_all(staging);
  fs::create_directories(staging / "frames");
  for (std::size_t k = 0; k < frames.size(); ++k)
    write_file_atomic(staging / "frames" / (std::to_string(k) + ".png"), encode_png(frames[k]));
  write_file_atomic(staging / "trajectory.json", meta.dump(1));
  const auto final_dir = root_ / "edits" / tid;
  fs::remove_all(final_dir);  // leftover without trajectory.json cannot exist, but be safe
  fs::rename(staging, final_dir);
}

nlohmann::json SessionStore::trajectory_meta(const std::string& tid) const {
  return nlohmann::json::parse(read_text_file(root_ / "edits" / tid / "trajectory.json"));
}

std::vector<std::uint8_t> SessionStore::frame_png(const std::string& tid, int k) const {
  return read_file(root_ / "edits" / tid / "frames" / (std::to_string(k) + ".png"));
}

// ---------------------------------------------------------------------------

namespace {

// Ids are hex digests; anything else cannot name a stored entry and must not
// reach the filesystem.
bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

nlohmann::json presence_json(const OutfitCode& z) {
  nlohmann::json p = nlohmann::json::array();
  for (int r = 0; r < z.regions(); ++r) p.push_back(z.present(r));
  return p;
}

}  // namespace

OutfitService::OutfitService(ServiceConfig config, ModelBundle models)
    : config_(std::move(config)), models_(std::move(models)), store_(config_.store_dir) {}

int OutfitService::parse_region(const std::string& text) const {
  const auto& schema = models_.shape->schema();
  int r = schema.label_of(text);
  if (r < 0) {
    try {
      std::size_t used = 0;
      r = std::stoi(text, &used);
      if (used != text.size()) r = -1;
    } catch (const std::exception&) {
      r = -1;
    }
  }
  if (r <= 0 || r >= schema.size()) throw ApiError(422, "bad_region", "unknown region '" + text + "'", "region");
  return r;
}

nlohmann::json OutfitService::upload(std::span<const std::uint8_t> image_png, std::span<const std::uint8_t> map_png) {
  if (image_png.size() > config_.max_upload_bytes)
    throw ApiError(413, "payload_too_large", "image exceeds " + std::to_string(config_.max_upload_bytes) + " bytes", "image");
  if (map_png.size() > config_.max_upload_bytes)
    throw ApiError(413, "payload_too_large", "region map exceeds " + std::to_string(config_.max_upload_bytes) + " bytes",
                   "region_map");
  Image x;
  RegionMap m;
  try {
    x = decode_png_rgb(image_png);
  } catch (const std::exception& e) {
    throw ApiError(400, "invalid_png", e.what(), "image");
  }
  try {
    m = decode_png_map(map_png);
  } catch (const std::exception& e) {
    throw ApiError(400, "invalid_png", e.what(), "region_map");
  }
  const auto& schema = models_.shape->schema();
  const auto report = validate_region_map(m, schema);
  if (!report.ok()) throw ApiError(400, report.issues.front().kind, report.issues.front().message, "region_map");
  if (m.height() != x.height() || m.width() != x.width())
    throw ApiError(400, "dimension_mismatch", "image and region map sizes differ", "region_map");
  if (x.height() != models_.shape->height() || x.width() != models_.shape->width())
    throw ApiError(422, "schema_mismatch",
                   "models expect " + std::to_string(models_.shape->height()) + "x" +
                       std::to_string(models_.shape->width()) + " inputs",
                   "image");

  // Hash the decoded content so re-encoded but identical PNGs share an id.
  const auto img_png = encode_png(x);
  const auto lab_png = encode_png(m);
  std::vector<std::uint8_t> both(img_png);
  both.insert(both.end(), lab_png.begin(), lab_png.end());
  const auto id = sha256_hex(both).substr(0, 32);

  if (!store_.has_outfit(id)) {
    OutfitCode z;
    {
      std::lock_guard lock(compute_);
      z = encode_outfit(x, m, *models_.texture, *models_.shape);
    }
    const nlohmann::json meta = {{"id", id},
                                 {"code", code_to_json(z)},
                                 {"presence", presence_json(z)},
                                 {"p_f", models_.classifier.score(z.flatten()).p},
                                 {"checkpoint_hashes", models_.hashes}};
    store_.put_outfit(id, img_png, lab_png, meta);
  }
  const auto meta = store_.outfit_meta(id);
  return {{"id", id}, {"presence", meta.at("presence")}, {"p_f", meta.at("p_f")}};
}

nlohmann::json OutfitService::get_outfit(const std::string& id) {
  if (!valid_id(id) || !store_.has_outfit(id)) throw ApiError(404, "not_found", "no outfit '" + id + "'");
  return store_.outfit_meta(id);
}

nlohmann::json OutfitService::edit(const std::string& id, const nlohmann::json& body) {
  if (!valid_id(id) || !store_.has_outfit(id)) throw ApiError(404, "not_found", "no outfit '" + id + "'");
  if (!body.is_object()) throw ApiError(422, "bad_request", "body must be a JSON object");
  EditTarget target;
  EditConfig cfg;
  int top_k = 3;
  try {
    auto tj = body.value("target", nlohmann::json::object());
    if (tj.contains("region") && tj.at("region").is_string())
      tj["region"] = parse_region(tj.at("region").get<std::string>());
    target = edit_target_from_json(tj);
    cfg = edit_config_from_json(body.value("config", nlohmann::json::object()));
    cfg.check();
    top_k = body.value("top_k", 3);
    if (top_k < 1) throw std::invalid_argument("top_k must be >= 1");
  } catch (const ApiError&) {
    throw;
  } catch (const std::exception& e) {
    throw ApiError(422, "bad_config", e.what());
  }

  const nlohmann::json request = {{"outfit", id},
                                  {"target", edit_target_to_json(target)},
                                  {"config", edit_config_to_json(cfg)},
                                  {"top_k", top_k},
                                  {"checkpoints", models_.hashes}};
  const auto tid = sha256_hex(canonical_dump(request)).substr(0, 32);

  if (!store_.has_trajectory(tid)) {
    EditResult result;
    try {
      std::lock_guard lock(compute_);
      result = run_edit(models_, store_.outfit_image(id), store_.outfit_map(id), target, cfg, top_k);
    } catch (const TargetAbsentError& e) {
      throw ApiError(409, "target_absent", e.what(), "target.region");
    } catch (const EmptyInventorySlice& e) {
      throw ApiError(409, "empty_inventory_slice", e.what(), "target.region");
    } catch (const std::invalid_argument& e) {
      throw ApiError(422, "bad_config", e.what());
    }
    auto meta = trajectory_to_json(result.trajectory);
    meta["id"] = tid;
    meta["outfit"] = id;
    meta["top_k"] = top_k;
    meta["checkpoint_hashes"] = models_.hashes;
    nlohmann::json retrieval = nlohmann::json::array();
    for (const auto& hits : result.hits) retrieval.push_back(hits_json(hits));
    meta["retrieval"] = retrieval;
    store_.put_trajectory(tid, meta, result.frames);
  }
  return get_edit(tid);
}

nlohmann::json OutfitService::get_edit(const std::string& tid) {
  if (!valid_id(tid) || !store_.has_trajectory(tid)) throw ApiError(404, "not_found", "no trajectory '" + tid + "'");
  const auto meta = store_.trajectory_meta(tid);
  nlohmann::json frames = nlohmann::json::array();
  nlohmann::json p = nlohmann::json::array();
  for (const auto& s : meta.at("steps")) {
    frames.push_back("/edits/" + tid + "/frames/" + std::to_string(s.at("k").get<int>()) + ".png");
    p.push_back(s.at("p"));
  }
  return {{"id", tid},
          {"outfit", meta.at("outfit")},
          {"region", meta.at("region")},
          {"target", meta.at("target")},
          {"config", meta.at("config")},
          {"p", p},
          {"frames", frames},
          {"retrieval", meta.at("retrieval")},
          {"checkpoint_hashes", meta.at("checkpoint_hashes")}};
}

std::vector<std::uint8_t> OutfitService::frame(const std::string& tid, int k) {
  if (!valid_id(tid) || !store_.has_trajectory(tid)) throw ApiError(404, "not_found", "no trajectory '" + tid + "'");
  const auto steps = static_cast<int>(store_.trajectory_meta(tid).at("steps").size());
  if (k < 0 || k >= steps) throw ApiError(404, "not_found", "no frame " + std::to_string(k));
  return store_.frame_png(tid, k);
}

nlohmann::json OutfitService::hits_json(const std::vector<RetrievalHit>& hits) const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& h : hits) {
    const auto& g = models_.inventory.records[h.index];
    out.push_back({{"id", g.id},
                   {"source_id", g.source_id},
                   {"region", g.region},
                   {"distance", h.distance},
                   {"thumbnail", "/inventory/thumbs/" + g.id + ".png"}});
  }
  return out;
}

nlohmann::json OutfitService::retrieve(const std::string& tid, std::optional<int> k, std::optional<int> region,
                                       int top_k) {
  if (!valid_id(tid) || !store_.has_trajectory(tid)) throw ApiError(404, "not_found", "no trajectory '" + tid + "'");
  const auto traj = trajectory_from_json(store_.trajectory_meta(tid));
  const int steps = static_cast<int>(traj.codes.size());
  const int kk = k.value_or(steps - 1);
  if (kk < 0 || kk >= steps)
    throw ApiError(422, "step_out_of_range", "k must be in [0," + std::to_string(steps - 1) + "]", "k");
  const int r = region.value_or(traj.region);
  if (r <= 0 || r >= traj.codes[kk].regions()) throw ApiError(422, "bad_region", "a region is required", "region");
  if (top_k < 1) throw ApiError(422, "bad_request", "top_k must be >= 1", "top_k");
  if (models_.inventory.count(r) == 0)
    throw ApiError(409, "empty_inventory_slice", "inventory holds no garment with label " + std::to_string(r), "region");
  const auto hits = retrieve_garment(traj.codes[kk].garment(r), r, models_.inventory, top_k);
  return {{"trajectory", tid}, {"k", kk}, {"region", r}, {"hits", hits_json(hits)}};
}

nlohmann::json OutfitService::search(int region, const std::string& near, int top_k) {
  if (top_k < 1) throw ApiError(422, "bad_request", "top_k must be >= 1", "top_k");
  if (models_.inventory.count(region) == 0)
    throw ApiError(409, "empty_inventory_slice", "inventory holds no garment with label " + std::to_string(region),
                   "region");
  if (near.empty()) {
    std::vector<RetrievalHit> hits;
    for (std::size_t i = 0; i < models_.inventory.records.size() && static_cast<int>(hits.size()) < top_k; ++i)
      if (models_.inventory.records[i].region == region) hits.push_back({i, 0.0});
    return {{"region", region}, {"hits", hits_json(hits)}};
  }
  std::vector<double> query;
  if (valid_id(near) && store_.has_outfit(near)) {
    const auto z = code_from_json(store_.outfit_meta(near).at("code"));
    if (!z.present(region)) throw ApiError(409, "target_absent", "outfit does not wear that region", "region");
    query = z.garment(region);
  } else {
    for (const auto& g : models_.inventory.records)
      if (g.id == near) {
        if (g.region != region) throw ApiError(422, "bad_region", "garment '" + near + "' is another region", "region");
        query = g.code;
      }
    if (query.empty()) throw ApiError(404, "not_found", "no outfit or garment '" + near + "'", "near");
  }
  return {{"region", region}, {"near", near}, {"hits", hits_json(retrieve_garment(query, region, models_.inventory, top_k))}};
}

std::vector<std::uint8_t> OutfitService::thumbnail(const std::string& garment_id) {
  for (const auto& g : models_.inventory.records)
    if (g.id == garment_id) {
      const auto p = config_.inventory.parent_path() / g.thumbnail;
      if (fs::exists(p)) return read_file(p);
      break;
    }
  throw ApiError(404, "not_found", "no thumbnail for '" + garment_id + "'");
}

nlohmann::json OutfitService::health() const {
  return {{"status", "ok"}, {"checkpoint_hashes", models_.hashes}, {"garments", models_.inventory.records.size()}};
}

namespace {

void send_error(httplib::Response& res, const ApiError& e) {
  res.status = e.status;
  res.set_content(api_error_json(e).dump(), "application/json");
}

void send_json(httplib::Response& res, const nlohmann::json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

int int_param(const httplib::Request& req, const std::string& name, int fallback) {
  if (!req.has_param(name)) return fallback;
  const auto v = req.get_param_value(name);
  try {
    std::size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ApiError(422, "bad_request", "'" + name + "' must be an integer", name);
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ApiError& e) {
      send_error(res, e);
    } catch (const std::exception& e) {
      send_error(res, ApiError(500, "internal", e.what()));
    }
  };
}

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

}  // namespace

void OutfitService::mount(httplib::Server& server) {
  // Upload caps are enforced by upload(); the transport limit only stops
  // absurd bodies.
  server.set_payload_max_length(config_.max_upload_bytes * 4 + (1 << 16));
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const std::string code = res.status == 413 ? "payload_too_large" : res.status == 404 ? "not_found" : "http_error";
    send_error(res, ApiError(res.status, code, httplib::status_message(res.status)));
  });

  server.Get("/healthz", guarded([this](const httplib::Request&, httplib::Response& res) { send_json(res, health()); }));

  server.Post("/outfits", guarded([this](const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data())
      throw ApiError(400, "bad_request", "expected multipart/form-data with 'image' and 'region_map'");
    if (!req.has_file("image")) throw ApiError(400, "missing_field", "missing 'image'", "image");
    if (!req.has_file("region_map")) throw ApiError(400, "missing_field", "missing 'region_map'", "region_map");
    const auto img = req.get_file_value("image").content;
    const auto map = req.get_file_value("region_map").content;
    send_json(res, upload(as_bytes(img), as_bytes(map)), 201);
  }));

  server.Get(R"(/outfits/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, get_outfit(req.matches[1]));
  }));

  server.Post(R"(/outfits/([^/]+)/edits)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto body = req.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded()) throw ApiError(422, "bad_request", "body is not valid JSON");
    send_json(res, edit(req.matches[1], body), 201);
  }));

  server.Get(R"(/edits/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, get_edit(req.matches[1]));
  }));

  server.Get(R"(/edits/([^/]+)/frames/(\d+)\.png)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto png = frame(req.matches[1], std::stoi(req.matches[2]));
    res.set_content(std::string(png.begin(), png.end()), "image/png");
  }));

  server.Get(R"(/edits/([^/]+)/retrieve)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    std::optional<int> k, region;
    if (req.has_param("k")) k = int_param(req, "k", 0);
    if (req.has_param("region")) region = parse_region(req.get_param_value("region"));
    send_json(res, retrieve(req.matches[1], k, region, int_param(req, "top_k", 5)));
  }));

  server.Get("/inventory/search", guarded([this](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("region")) throw ApiError(422, "bad_region", "a region is required", "region");
    const int region = parse_region(req.get_param_value("region"));
    send_json(res, search(region, req.has_param("near") ? req.get_param_value("near") : "", int_param(req, "top_k", 10)));
  }));

  server.Get(R"(/inventory/thumbs/([^/]+)\.png)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto png = thumbnail(req.matches[1]);
    res.set_content(std::string(png.begin(), png.end()), "image/png");
  }));
}

int serve(const ServiceConfig& config) {
  auto models = load_models(config.shape_checkpoint, config.texture_checkpoint, config.classifier_checkpoint,
                            config.inventory);
  OutfitService service(config, std::move(models));
  httplib::Server server;
  server.new_task_queue = [n = config.threads] { return new httplib::ThreadPool(static_cast<std::size_t>(n)); };
  service.mount(server);
  std::cerr << nlohmann::json{{"event", "listening"}, {"host", config.host}, {"port", config.port},
                              {"checkpoint_hashes", service.health().at("checkpoint_hashes")}}
                   .dump()
            << "\n";
  if (!server.listen(config.host, config.port)) {
    std::cerr << "cannot listen on " << config.host << ":" << config.port << "\n";
    return 1;
  }
  return 0;
}

}  // namespace outfit
