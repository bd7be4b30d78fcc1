#include <doctest.h>

#include <httplib.h>

#include <map>
#include <thread>

#include "outfit/image.hpp"
#include "outfit/serialize.hpp"
#include "outfit/service.hpp"
#include "outfit/util.hpp"
#include "tiny_pipeline.hpp"

using namespace outfit;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  PipelineConfig pipe;
  ServiceConfig svc;
  std::vector<std::uint8_t> image_png, map_png;
  RegionMap map;

  Fixture() {
    pipe = tiny_pipeline_config("service");
    if (!fs::exists(pipe.work_dir / "inventory/inventory.jsonl")) pipe = run_tiny_pipeline("service");
    svc.store_dir = pipe.work_dir / "store";
    fs::remove_all(svc.store_dir);
    svc.shape_checkpoint = pipe.work_dir / "models/shape.ck";
    svc.texture_checkpoint = pipe.work_dir / "models/texture.ck";
    svc.classifier_checkpoint = pipe.work_dir / "models/classifier.ck";
    svc.inventory = pipe.work_dir / "inventory/inventory.jsonl";
    Pipeline p(pipe);
    const auto m = p.manifest();
    // A test outfit without an outer layer, so region edits on it are absent.
    for (const auto* r : m.split(Split::test))
      if (!r->spec.outer.present) {
        image_png = read_file(m.image_path(*r));
        map_png = read_file(m.map_path(*r));
        map = read_png_map(m.map_path(*r));
        break;
      }
    REQUIRE(!image_png.empty());
  }

  ModelBundle models() const {
    return load_models(svc.shape_checkpoint, svc.texture_checkpoint, svc.classifier_checkpoint, svc.inventory);
  }
};

int status_of(const std::function<void()>& f, std::string* code = nullptr, std::string* field = nullptr) {
  try {
    f();
  } catch (const ApiError& e) {
    if (code) *code = e.code;
    if (field) *field = e.field;
    return e.status;
  }
  return 200;
}

}  // namespace

TEST_CASE("service config merges file values and environment overrides") {
  const auto c = service_config_from_json({{"port", 9000}, {"store_dir", "/tmp/s"}});
  CHECK(c.port == 9000);
  CHECK(c.store_dir == "/tmp/s");
  CHECK(c.host == "127.0.0.1");
  CHECK_THROWS_AS(service_config_from_json({{"prot", 1}}), std::invalid_argument);
  CHECK_THROWS_AS(service_config_from_json({{"port", 70000}}), std::invalid_argument);

  std::map<std::string, std::string> env = {{"OUTFIT_PORT", "7001"}, {"OUTFIT_SHAPE_CK", "/x/shape.ck"}};
  const auto lookup = [&](const char* n) -> const char* {
    const auto it = env.find(n);
    return it == env.end() ? nullptr : it->second.c_str();
  };
  const auto o = apply_env_overrides(c, lookup);
  CHECK(o.port == 7001);
  CHECK(o.shape_checkpoint == "/x/shape.ck");
  CHECK(o.store_dir == "/tmp/s");
  env["OUTFIT_PORT"] = "abc";
  CHECK_THROWS_AS(apply_env_overrides(c, lookup), std::invalid_argument);

  const auto e = api_error_json(ApiError(400, "label_out_of_range", "bad", "region_map"));
  CHECK(e.at("error").at("code") == "label_out_of_range");
  CHECK(e.at("error").at("field") == "region_map");
  CHECK_FALSE(api_error_json(ApiError(404, "not_found", "x")).at("error").contains("field"));
}

TEST_CASE("upload validates, encodes and content-addresses outfits") {
  Fixture fx;
  OutfitService s(fx.svc, fx.models());

  const auto r1 = s.upload(fx.image_png, fx.map_png);
  CHECK(r1.at("presence").size() == 8);
  CHECK(r1.at("presence")[labels::outer] == false);
  CHECK(r1.at("p_f").get<double>() >= 0.0);
  CHECK(s.upload(fx.image_png, fx.map_png).at("id") == r1.at("id"));
  CHECK(s.get_outfit(r1.at("id")).at("code").at("presence") == r1.at("presence"));

  RegionMap bad = fx.map;
  bad.set(3, 3, 12);
  std::string code, field;
  CHECK(status_of([&] { s.upload(fx.image_png, encode_png(bad)); }, &code, &field) == 400);
  CHECK(field == "region_map");
  CHECK(code == "label_out_of_range");

  const std::vector<std::uint8_t> junk = {1, 2, 3};
  CHECK(status_of([&] { s.upload(junk, fx.map_png); }, &code, &field) == 400);
  CHECK(field == "image");

  CHECK(status_of([&] { s.upload(encode_png(Image(32, 32)), encode_png(RegionMap(32, 32))); }, &code) == 422);
  CHECK(code == "schema_mismatch");
  CHECK(status_of([&] { s.upload(fx.image_png, encode_png(RegionMap(32, 32))); }) == 400);

  auto small = fx.svc;
  small.max_upload_bytes = 16;
  OutfitService tight(small, fx.models());
  CHECK(status_of([&] { tight.upload(fx.image_png, fx.map_png); }, &code) == 413);
  CHECK(code == "payload_too_large");

  CHECK(status_of([&] { s.get_outfit("0123abcd"); }) == 404);
  CHECK(status_of([&] { s.get_outfit("../../etc"); }) == 404);
}

TEST_CASE("edits are idempotent and agree with the editor") {
  Fixture fx;
  const auto models = fx.models();
  OutfitService s(fx.svc, fx.models());
  const std::string id = s.upload(fx.image_png, fx.map_png).at("id");

  const nlohmann::json body = {{"target", {{"mode", "auto"}}}, {"config", {{"steps", 6}}}};
  const auto e1 = s.edit(id, body);
  CHECK(e1.at("frames").size() == 7);
  CHECK(e1.at("p").size() == 7);
  const int chosen = e1.at("region");
  CHECK(LabelSchema::outfit_default().is_editable(chosen));
  CHECK(s.edit(id, body).at("id") == e1.at("id"));
  CHECK(s.get_edit(e1.at("id")) == e1);

  // Cross-check against a direct editor run on the stored code.
  const auto z0 = code_from_json(s.get_outfit(id).at("code"));
  EditConfig cfg;
  cfg.steps = 6;
  const auto direct = edit_codes(z0, EditTarget{}, cfg, models.classifier, LabelSchema::outfit_default(), &models.inventory);
  CHECK(direct.region == chosen);
  CHECK(e1.at("p").get<std::vector<double>>() == direct.p);

  const auto png = s.frame(e1.at("id"), 6);
  CHECK(decode_png_rgb(png).height() == 64);
  CHECK(status_of([&] { s.frame(e1.at("id"), 7); }) == 404);

  std::string code;
  CHECK(status_of([&] { s.edit(id, {{"target", {{"mode", "region"}, {"region", "outer"}}}}); }, &code) == 409);
  CHECK(code == "target_absent");
  CHECK(status_of([&] { s.edit(id, {{"config", {{"steps", -1}}}}); }) == 422);
  CHECK(status_of([&] { s.edit(id, {{"target", {{"mode", "sideways"}}}}); }) == 422);
  CHECK(status_of([&] { s.edit("ffff", body); }) == 404);
  const auto added = s.edit(id, {{"target", {{"mode", "region"}, {"region", "outer"}}}, {"config", {{"add_garment", true}, {"steps", 2}}}});
  CHECK(added.at("region") == labels::outer);
}

TEST_CASE("retrieval and search match the editor's ranking") {
  Fixture fx;
  const auto models = fx.models();
  OutfitService s(fx.svc, fx.models());
  const std::string id = s.upload(fx.image_png, fx.map_png).at("id");
  const std::string tid = s.edit(id, {{"target", {{"mode", "region"}, {"region", labels::top}}}, {"config", {{"steps", 3}}}}).at("id");

  const auto r = s.retrieve(tid, 2, std::nullopt, 4);
  CHECK(r.at("region") == labels::top);
  const auto traj = trajectory_from_json(nlohmann::json::parse(read_text_file(fx.svc.store_dir / "edits" / tid / "trajectory.json")));
  const auto expect = retrieve_garment(traj.codes[2].garment(labels::top), labels::top, models.inventory, 4);
  REQUIRE(r.at("hits").size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(r.at("hits")[i].at("id") == models.inventory.records[expect[i].index].id);
    CHECK(r.at("hits")[i].at("distance").get<double>() == expect[i].distance);
  }
  CHECK(status_of([&] { s.retrieve(tid, 4, std::nullopt, 1); }) == 422);
  CHECK(status_of([&] { s.retrieve("abc", 0, std::nullopt, 1); }) == 404);

  const auto& g = models.inventory.records.front();
  const auto hit = s.search(g.region, g.id, 1);
  CHECK(hit.at("hits")[0].at("distance").get<double>() == 0.0);
  CHECK(s.search(labels::bottom, "", 3).at("hits").size() == 3);
  CHECK(status_of([&] { s.search(labels::top, "nope", 1); }) == 404);
  CHECK(s.thumbnail(g.id).size() > 8);

  // Inventory without outer layers.
  auto bundle = fx.models();
  std::erase_if(bundle.inventory.records, [](const GarmentRecord& x) { return x.region == labels::outer; });
  auto svc2 = fx.svc;
  svc2.store_dir = fx.svc.store_dir.string() + "_noouter";
  fs::remove_all(svc2.store_dir);
  OutfitService lean(svc2, std::move(bundle));
  const std::string id2 = lean.upload(fx.image_png, fx.map_png).at("id");
  const std::string tid2 = lean.edit(id2, {{"config", {{"steps", 1}}}}).at("id");
  std::string code;
  CHECK(status_of([&] { lean.retrieve(tid2, 0, labels::outer, 1); }, &code) == 409);
  CHECK(code == "empty_inventory_slice");
  CHECK(status_of([&] { lean.search(labels::outer, "", 1); }, &code) == 409);
  CHECK(status_of([&] { lean.edit(id2, {{"target", {{"mode", "region"}, {"region", "outer"}}}, {"config", {{"add_garment", true}}}}); },
                  &code) == 409);
  CHECK(code == "empty_inventory_slice");
}

TEST_CASE("a staged but unrenamed trajectory is invisible") {
  Fixture fx;
  SessionStore store(fx.svc.store_dir);
  const std::string tid = "abcdef0123";
  fs::create_directories(store.root() / "tmp" / tid / "frames");
  write_file_atomic(store.root() / "tmp" / tid / "trajectory.json", std::string("{}"));
  CHECK_FALSE(store.has_trajectory(tid));
  store.put_trajectory(tid, {{"steps", nlohmann::json::array()}}, {Image(4, 4)});
  CHECK(store.has_trajectory(tid));
  CHECK(fs::exists(store.root() / "edits" / tid / "frames" / "0.png"));
  CHECK_FALSE(fs::exists(store.root() / "tmp" / tid));
}

TEST_CASE("HTTP routes carry JSON bodies and error objects") {
  Fixture fx;
  const auto hashes = fx.models().hashes;
  OutfitService s(fx.svc, fx.models());
  httplib::Server server;
  s.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  auto health = cli.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(nlohmann::json::parse(health->body).at("checkpoint_hashes").at("classifier") == hashes.at("classifier"));

  const std::string img(fx.image_png.begin(), fx.image_png.end()), map(fx.map_png.begin(), fx.map_png.end());
  httplib::MultipartFormDataItems items = {{"image", img, "x.png", "image/png"}, {"region_map", map, "m.png", "image/png"}};
  auto up = cli.Post("/outfits", items);
  REQUIRE(up);
  CHECK(up->status == 201);
  const std::string id = nlohmann::json::parse(up->body).at("id");

  auto missing = cli.Post("/outfits", httplib::MultipartFormDataItems{{"image", img, "x.png", "image/png"}});
  CHECK(missing->status == 400);
  CHECK(nlohmann::json::parse(missing->body).at("error").at("field") == "region_map");

  auto ed = cli.Post("/outfits/" + id + "/edits", R"({"target":{"mode":"auto"},"config":{"steps":6}})", "application/json");
  REQUIRE(ed);
  CHECK(ed->status == 201);
  const auto ej = nlohmann::json::parse(ed->body);
  CHECK(ej.at("frames").size() == 7);
  auto frame = cli.Get(ej.at("frames")[3].get<std::string>());
  CHECK(frame->status == 200);
  CHECK(frame->get_header_value("Content-Type") == "image/png");

  auto rt = cli.Get("/edits/" + ej.at("id").get<std::string>() + "/retrieve?k=6&top_k=2");
  CHECK(rt->status == 200);
  CHECK(nlohmann::json::parse(rt->body).at("hits").size() == 2);
  auto bad_k = cli.Get("/edits/" + ej.at("id").get<std::string>() + "/retrieve?k=x");
  CHECK(bad_k->status == 422);

  auto search = cli.Get("/inventory/search?region=bottom&top_k=2");
  CHECK(search->status == 200);
  auto thumb = cli.Get(nlohmann::json::parse(search->body).at("hits")[0].at("thumbnail").get<std::string>());
  CHECK(thumb->status == 200);
  CHECK(cli.Get("/inventory/search?region=sky")->status == 422);

  auto bad_json = cli.Post("/outfits/" + id + "/edits", "{", "application/json");
  CHECK(bad_json->status == 422);
  for (const auto& path : {"/outfits/00ff", "/edits/00ff", "/no/such/route"}) {
    auto r = cli.Get(path);
    CHECK(r->status == 404);
    CHECK(nlohmann::json::parse(r->body).at("error").contains("code"));
  }

  server.stop();
  t.join();
}
