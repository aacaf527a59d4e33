// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <chrono>
#include <cstring>
#include <future>
#include <set>

#include "close/checkpoint.hpp"
#include "close/ply.hpp"
#include "close/service.hpp"
#include "http_support.hpp"
#include "support.hpp"

using namespace closenet;
using namespace closenet::testing;
using nlohmann::json;

namespace {

struct Fixture {
  TempDir dir{"service"};
  NetworkState model = NetworkState::initialize(small_config(), 21);
  ServiceConfig config;

  Fixture() {
    config.scan_dir = dir / "scans";
    config.checkpoint_dir = dir / "ckpts";
    std::filesystem::create_directories(dir / "src");
  }
  std::filesystem::path write_scan(std::uint64_t seed, std::size_t n) {
    ScanSample s = synthetic_scan(seed, n);
    const auto path = dir / "src" / (s.id + ".ply");
    save_scan(s, path);
    return path;
  }
};

}  // namespace

TEST_CASE("points payload round trip") {
  const ScanSample s = synthetic_scan(1, 50);
  const std::string bytes = encode_points(s);
  CHECK(bytes.size() == 4 + 50 * 9 * 4);
  std::uint32_t count;
  std::memcpy(&count, bytes.data(), 4);
  CHECK(count == 50);
  const ScanSample back = decode_points(bytes);
  for (std::size_t i = 0; i < 50; ++i) {
    for (int a = 0; a < 3; ++a) {
      CHECK(back.points(i, a) == static_cast<double>(static_cast<float>(s.points(i, a))));
      CHECK(back.colors(i, a) == static_cast<double>(static_cast<float>(s.colors(i, a))));
      CHECK(back.normals(i, a) == static_cast<double>(static_cast<float>(s.normals(i, a))));
    }
  }
  CHECK_THROWS_AS(decode_points(bytes.substr(0, bytes.size() - 1)), ParseError);
  CHECK_THROWS_AS(decode_points("ab"), ParseError);
}

TEST_CASE("annotation workflow over HTTP") {
  Fixture f;
  Service service(f.model, f.config);
  LiveServer server(service);

  auto health = server.get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(body_of(health)["status"] == "ok");
  const json tax = body_of(server.get("/taxonomy"));
  REQUIRE(tax["classes"].size() == 18);
  CHECK(tax["classes"][0]["id"] == 1);
  CHECK(tax["classes"][17]["name"] == "Hair");

  const auto ply = f.write_scan(5, 400);
  auto up = upload(server.client(), ply, "alice");
  REQUIRE(up);
  CHECK(up->status == 201);
  const json info = body_of(up);
  CHECK(info["scan_id"] == "alice");
  CHECK(info["num_points"] == 400);
  const ScanSample stored = load_scan(ply, std::filesystem::path(ply).replace_extension(".json"));
  std::set<int> wire_garments;
  for (ClassId c : stored.garments->present()) wire_garments.insert(c + 1);
  CHECK(info["garments"].get<std::set<int>>() == wire_garments);
  CHECK(body_of(server.get("/scans"))["scans"] == json::array({"alice"}));
  CHECK(server.get("/scans/nobody")->status == 404);
  CHECK(server.post("/scans/nobody/segment")->status == 404);

  // Points arrive bit-exact as the float32 values of the stored PLY.
  auto pts = server.get("/scans/alice/points");
  REQUIRE(pts);
  CHECK(pts->get_header_value("Content-Type") == "application/octet-stream");
  CHECK(pts->body == encode_points(stored));

  const json seg = body_of(server.post("/scans/alice/segment"));
  REQUIRE(seg["labels"].size() == 400);
  for (int l : seg["labels"]) CHECK(wire_garments.contains(l));
  for (double c : seg["confidence"]) CHECK((c > 0.0 && c <= 1.0));
  CHECK(seg["model_hash"] == f.model.hash());

  // Relabel the first ten points to Hair (wire id 18).
  json indices = json::array();
  for (int i = 0; i < 10; ++i) indices.push_back(i);
  auto lab = server.post("/scans/alice/labels", {{"indices", indices}, {"class_id", 18}});
  REQUIRE(lab->status == 200);
  std::size_t expect_changed = 0;
  for (int i = 0; i < 10; ++i) expect_changed += seg["labels"][i] != 18;
  CHECK(body_of(lab)["changed"] == expect_changed);
  const json now = body_of(server.get("/scans/alice/labels"));
  for (int i = 0; i < 10; ++i) CHECK(now["labels"][i] == 18);
  CHECK(now["labels"][10] == seg["labels"][10]);
  CHECK(now["corrected_indices"].size() == 10);

  auto vote = server.post("/scans/alice/labels", {{"indices", json::array({10, 11, 12})}, {"mode", "majority_vote"}});
  CHECK(vote->status == 200);
  CHECK(server.post("/scans/alice/labels", {{"indices", indices}, {"class_id", 0}})->status == 422);
  CHECK(server.post("/scans/alice/labels", {{"indices", json::array({400})}, {"class_id", 1}})->status == 422);
  CHECK(server.client().Post("/scans/alice/labels", "{oops", "application/json")->status == 400);

  auto att = server.get("/scans/alice/attention?class=1");
  REQUIRE(att->status == 200);
  const json weights = body_of(att)["weights"];
  CHECK(weights.size() == 400);
  for (double w : weights) CHECK((w >= 0.0 && w <= 1.0));
  CHECK(server.get("/scans/alice/attention")->status == 422);

  // A second scan without corrections cannot drive a refinement.
  REQUIRE(upload(server.client(), f.write_scan(6, 200), "bob")->status == 201);
  CHECK(server.post("/refine", {{"scan_id", "bob"}})->status == 422);
  CHECK(server.post("/refine", {{"scan_id", "alice"}, {"lambdas", "bogus"}})->status == 422);

  auto ref = server.post("/refine", {{"scan_id", "alice"}, {"lambdas", "full"}});
  REQUIRE(ref->status == 200);
  const json report = body_of(ref);
  CHECK(report["refinement_count"] == 1);
  CHECK(report["model_hash"] != f.model.hash());
  const auto ckpt = report["checkpoint"].get<std::string>();
  CHECK(load_checkpoint(ckpt).hash() == report["model_hash"]);
  const json status = body_of(server.get("/model/status"));
  CHECK(status["checkpoint_hash"] == report["model_hash"]);
  CHECK(status["reference_hash"] == f.model.hash());
  CHECK(status["refining"] == false);
  CHECK(body_of(server.post("/scans/alice/segment"))["model_hash"] == report["model_hash"]);

  const json reset = body_of(server.post("/model/reset"));
  CHECK(reset["checkpoint_hash"] == f.model.hash());
  CHECK(reset["refinement_count"] == 0);
}

TEST_CASE("raw PLY uploads and persistence across restarts") {
  Fixture f;
  const auto ply = f.write_scan(7, 120);
  {
    Service service(f.model, f.config);
    LiveServer server(service);
    // The canonical body encoder needs body parameters, which a bare PLY lacks.
    auto bare = server.client().Post("/scans?garments=tshirt,pants,shoes,body,hair", read_bytes(ply),
                                     "application/octet-stream");
    CHECK(bare->status == 422);
    CHECK(server.client().Post("/scans", "", "application/octet-stream")->status == 422);
    CHECK(upload(server.client(), ply, "bad/id")->status == 422);
    CHECK(upload(server.client(), ply, "keep")->status == 201);
  }
  Service restarted(f.model, f.config);
  CHECK(restarted.scan_ids() == std::vector<std::string>{"keep"});
  CHECK(restarted.scan_info("keep")["num_points"] == 120);

  NetworkConfig bodyless = small_config();
  bodyless.body_encoder = BodyEncoderMode::None;
  ServiceConfig other = f.config;
  other.scan_dir = f.dir / "scans2";
  Service open(NetworkState::initialize(bodyless, 1), other);
  LiveServer server(open);
  auto bare = server.client().Post("/scans?garments=tshirt,pants,shoes,body,hair&id=raw", read_bytes(ply),
                                   "application/octet-stream");
  REQUIRE(bare->status == 201);
  CHECK(body_of(bare)["scan_id"] == "raw");
  CHECK(body_of(bare)["has_body"] == false);
}

TEST_CASE("edits and a second refinement are refused while one runs") {
  Fixture f;
  f.config.refine.epochs = 5;
  f.config.refine.steps_per_epoch = 10;
  Service service(f.model, f.config);
  LiveServer server(service);
  REQUIRE(upload(server.client(), f.write_scan(8, 1500), "slow")->status == 201);
  const json seg = body_of(server.post("/scans/slow/segment"));
  const int flipped = seg["labels"][0] == 1 ? 5 : 1;
  REQUIRE(server.post("/scans/slow/labels", {{"indices", json::array({0})}, {"class_id", flipped}})->status == 200);

  auto running = std::async(std::launch::async, [&] {
    httplib::Client c("127.0.0.1", server.port());
    c.set_read_timeout(300);
    return c.Post("/refine", json{{"scan_id", "slow"}}.dump(), "application/json")->status;
  });
  bool busy = false;
  for (int i = 0; i < 2000 && !busy; ++i) {
    busy = body_of(server.get("/model/status"))["refining"].get<bool>();
    if (!busy) std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  REQUIRE(busy);
  CHECK(server.post("/refine", {{"scan_id", "slow"}})->status == 409);
  CHECK(server.post("/scans/slow/labels", {{"indices", json::array({1})}, {"class_id", 2}})->status == 409);
  CHECK(server.post("/model/reset")->status == 409);
  CHECK(server.get("/health")->status == 200);
  CHECK(running.get() == 200);
  CHECK(body_of(server.get("/model/status"))["refining"] == false);
}
