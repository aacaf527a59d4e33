// SPDX-License-Identifier: Apache-2.0
#include "close/service.hpp"

#include <httplib.h>

#include <bit>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>

#include "close/checkpoint.hpp"
#include "close/heuristics.hpp"
#include "close/synthgen.hpp"

namespace closenet {

using nlohmann::json;

void ServiceConfig::apply_environment() {
  if (const char* v = std::getenv("CLOSE_CKPT_DIR"); v && *v) checkpoint_dir = v;
  if (const char* v = std::getenv("CLOSE_SCAN_DIR"); v && *v) scan_dir = v;
  if (const char* v = std::getenv("CLOSE_PORT"); v && *v) {
    char* end = nullptr;
    const long port_value = std::strtol(v, &end, 10);
    if (*end != '\0' || port_value < 0 || port_value > 65535)
      throw ValidationError("CLOSE_PORT is not a valid port: " + std::string(v));
    port = static_cast<int>(port_value);
  }
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + b])) << (8 * b);
  return v;
}

bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 128 || id.front() == '.') return false;
  for (char c : id) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') return false;
  }
  return true;
}

json wire_labels(std::span<const ClassId> labels) {
  json out = json::array();
  for (ClassId c : labels) out.push_back(static_cast<int>(c) + 1);
  return out;
}

ClassId wire_class(const json& value) {
  if (!value.is_number_integer()) throw ServiceError(422, "class ids must be integers");
  const int c = value.get<int>();
  if (c < 1 || c > kNumClasses)
    throw ServiceError(422, "class id " + std::to_string(c) + " outside 1.." + std::to_string(kNumClasses));
  return static_cast<ClassId>(c - 1);
}

std::vector<std::uint32_t> wire_indices(const json& value, std::size_t n) {
  if (!value.is_array() || value.empty()) throw ServiceError(422, "indices must be a non-empty array");
  std::set<std::uint32_t> unique;
  for (const auto& v : value) {
    if (!v.is_number_integer() || v.get<long long>() < 0 || v.get<long long>() >= static_cast<long long>(n))
      throw ServiceError(422, "index outside the scan");
    unique.insert(v.get<std::uint32_t>());
  }
  return {unique.begin(), unique.end()};
}

RefineLambdas lambdas_from(const json& value, const RefineLambdas& base, bool& from_preset) {
  if (value.is_string()) {
    from_preset = true;
    return lambda_preset(value.get<std::string>());
  }
  if (!value.is_object()) throw ServiceError(422, "lambdas must be an object or a preset name");
  RefineLambdas out = base;
  for (const auto& [key, v] : value.items()) {
    if (!v.is_number()) throw ServiceError(422, "lambda '" + key + "' must be a number");
    if (key == "corrected") out.corrected = v.get<double>();
    else if (key == "stable") out.stable = v.get<double>();
    else if (key == "anchor") out.anchor = v.get<double>();
    else throw ServiceError(422, "unknown lambda '" + key + "'");
  }
  return out;
}

}  // namespace

std::string encode_points(const ScanSample& scan) {
  const std::size_t n = scan.size();
  std::string out;
  out.reserve(4 + n * 9 * 4);
  put_u32(out, static_cast<std::uint32_t>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (const Matrix* m : {&scan.points, &scan.colors, &scan.normals}) {
      for (std::size_t c = 0; c < 3; ++c) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>((*m)(i, c))));
    }
  }
  return out;
}

ScanSample decode_points(std::string_view bytes) {
  if (bytes.size() < 4) throw ParseError("points payload shorter than its count", bytes.size());
  const std::size_t n = get_u32(bytes, 0);
  if (bytes.size() != 4 + n * 36)
    throw ParseError("points payload holds " + std::to_string(bytes.size()) + " bytes for " + std::to_string(n) +
                         " points",
                     bytes.size());
  ScanSample scan;
  scan.points = Matrix(n, 3);
  scan.colors = Matrix(n, 3);
  scan.normals = Matrix(n, 3);
  std::size_t at = 4;
  for (std::size_t i = 0; i < n; ++i) {
    for (Matrix* m : {&scan.points, &scan.colors, &scan.normals}) {
      for (std::size_t c = 0; c < 3; ++c, at += 4) (*m)(i, c) = std::bit_cast<float>(get_u32(bytes, at));
    }
  }
  return scan;
}

Service::Service(ServiceConfig config, const BodyModel& body_model)
    : config_(std::move(config)), body_model_(&body_model) {
  if (config_.checkpoint.empty()) throw ValidationError("service needs a checkpoint");
  reference_ = std::make_shared<const NetworkState>(load_checkpoint(config_.checkpoint));
  current_ = reference_;
  if (config_.suite_manifest) {
    const LoadedSuite loaded = read_suite(*config_.suite_manifest);
    suite_ = make_examples(loaded.test, reference_->config, *body_model_);
    for (const auto& e : suite_) {
      if (e.labels.empty()) throw ValidationError("regression suite scan '" + e.id + "' has no labels");
    }
  }
  if (!suite_.empty()) baseline_suite_miou_ = evaluate(suite_, *reference_, config_.refine.forward).mean_iou;
  last_suite_miou_ = baseline_suite_miou_;
  load_scan_dir();
}

Service::Service(NetworkState reference, ServiceConfig config, std::vector<Example> frozen_suite,
                 const BodyModel& body_model)
    : config_(std::move(config)),
      body_model_(&body_model),
      reference_(std::make_shared<const NetworkState>(std::move(reference))),
      suite_(std::move(frozen_suite)) {
  current_ = reference_;
  if (!suite_.empty()) baseline_suite_miou_ = evaluate(suite_, *reference_, config_.refine.forward).mean_iou;
  last_suite_miou_ = baseline_suite_miou_;
  load_scan_dir();
}

void Service::load_scan_dir() {
  if (config_.scan_dir.empty()) return;
  std::filesystem::create_directories(config_.scan_dir);
  std::vector<std::filesystem::path> files;
  for (const auto& f : std::filesystem::directory_iterator(config_.scan_dir)) {
    if (f.path().extension() == ".ply") files.push_back(f.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& ply : files) {
    auto meta = ply;
    meta.replace_extension(".json");
    try {
      ScanSample scan = load_scan(ply, std::filesystem::exists(meta) ? std::optional(meta) : std::nullopt);
      scan.id = ply.stem().string();
      register_scan(std::move(scan));
    } catch (const Error& e) {
      std::cerr << "skipping stored scan " << ply.string() << ": " << e.what() << '\n';
    }
  }
}

void Service::register_scan(ScanSample scan) {
  if (!scan.garments) throw ServiceError(422, "scan '" + scan.id + "' declares no garments");
  scan.validate();
  auto e = std::make_shared<ScanEntry>();
  e->example = make_example(scan, reference_->config, *body_model_);
  e->scan = std::move(scan);
  std::unique_lock lock(scans_mutex_);
  scans_[e->scan.id] = std::move(e);
}

std::shared_ptr<Service::ScanEntry> Service::entry(const std::string& id) const {
  std::shared_lock lock(scans_mutex_);
  auto it = scans_.find(id);
  if (it == scans_.end()) throw ServiceError(404, "unknown scan '" + id + "'");
  return it->second;
}

std::vector<ClassId> Service::current_labels(const ScanEntry& e) const {
  std::vector<ClassId> labels = e.predicted;
  if (labels.empty()) {
    if (!e.corrections.empty() && e.corrections.size() == e.scan.size()) labels.assign(e.scan.size(), 0);
    else throw ServiceError(422, "scan '" + e.scan.id + "' has not been segmented yet");
  }
  for (const auto& [i, c] : e.corrections) labels[i] = c;
  return labels;
}

json Service::health() const { return {{"status", "ok"}}; }

json Service::taxonomy() const {
  const auto& t = LabelTaxonomy::standard();
  json classes = json::array();
  for (int i = 0; i < t.size(); ++i) {
    const auto id = static_cast<ClassId>(i);
    const Rgb rgb = t.color(id);
    classes.push_back({{"id", i + 1},
                       {"name", std::string(t.name(id))},
                       {"color", {rgb.r, rgb.g, rgb.b}},
                       {"coarse", std::string(to_string(t.coarse(id)))}});
  }
  return {{"fingerprint", t.fingerprint()}, {"classes", classes}};
}

json Service::add_scan(const std::string& ply_bytes, const std::string& metadata_json,
                       const std::optional<std::string>& requested_id) {
  if (config_.scan_dir.empty()) throw ServiceError(500, "service has no scan directory");
  std::string id;
  {
    std::unique_lock lock(scans_mutex_);
    if (requested_id) {
      id = *requested_id;
    } else {
      do {
        char buf[32];
        std::snprintf(buf, sizeof buf, "scan-%04llu", static_cast<unsigned long long>(next_id_++));
        id = buf;
      } while (scans_.contains(id) || std::filesystem::exists(config_.scan_dir / (id + ".ply")));
    }
  }
  if (!valid_id(id)) throw ServiceError(422, "invalid scan id '" + id + "'");
  std::filesystem::create_directories(config_.scan_dir);
  const auto ply = config_.scan_dir / (id + ".ply");
  const auto meta = config_.scan_dir / (id + ".json");
  {
    std::ofstream out(ply, std::ios::binary);
    out.write(ply_bytes.data(), static_cast<std::streamsize>(ply_bytes.size()));
    if (!out) throw Error("cannot write " + ply.string());
  }
  std::filesystem::remove(meta);
  try {
    if (!metadata_json.empty()) {
      json doc = json::parse(metadata_json);
      doc["id"] = id;
      std::ofstream(meta) << doc.dump() << '\n';
    }
    ScanSample scan = load_scan(ply, metadata_json.empty() ? std::nullopt : std::optional(meta));
    scan.id = id;
    register_scan(std::move(scan));
  } catch (...) {
    std::filesystem::remove(ply);
    std::filesystem::remove(meta);
    throw;
  }
  return scan_info(id);
}

json Service::add_scan(const ScanSample& scan) {
  if (!valid_id(scan.id)) throw ServiceError(422, "invalid scan id '" + scan.id + "'");
  if (!config_.scan_dir.empty()) save_scan(scan, config_.scan_dir / (scan.id + ".ply"));
  register_scan(scan);
  return scan_info(scan.id);
}

json Service::scan_info(const std::string& id) const {
  auto e = entry(id);
  std::lock_guard lock(e->mutex);
  json garments = json::array();
  for (ClassId c : e->scan.garments->present()) garments.push_back(static_cast<int>(c) + 1);
  return {{"scan_id", id},
          {"num_points", e->scan.size()},
          {"garments", garments},
          {"has_body", e->scan.body.has_value()},
          {"has_labels", e->scan.labels.has_value()},
          {"segmented", !e->predicted.empty()},
          {"corrections", e->corrections.size()}};
}

std::vector<std::string> Service::scan_ids() const {
  std::shared_lock lock(scans_mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, e] : scans_) ids.push_back(id);
  return ids;
}

std::string Service::points(const std::string& id) const {
  auto e = entry(id);
  std::lock_guard lock(e->mutex);
  return encode_points(e->scan);
}

std::shared_ptr<const NetworkState> Service::current_model() const {
  std::lock_guard lock(model_mutex_);
  return current_;
}

json Service::segment(const std::string& id) {
  auto e = entry(id);
  const auto model = current_model();
  Segmentation seg = closenet::segment(e->example.input, *model, config_.segment);
  std::lock_guard lock(e->mutex);
  e->predicted = std::move(seg.labels);
  e->confidence = std::move(seg.confidence);
  return {{"scan_id", id},
          {"labels", wire_labels(e->predicted)},
          {"confidence", e->confidence},
          {"model_hash", model->hash()}};
}

json Service::set_labels(const std::string& id, const json& request) {
  if (refining_) throw ServiceError(409, "a refinement is in progress");
  if (!request.is_object()) throw ServiceError(422, "label request must be a JSON object");
  auto e = entry(id);
  std::lock_guard lock(e->mutex);
  const std::size_t n = e->scan.size();
  std::size_t changed = 0;
  if (request.contains("labels")) {
    const auto& values = request["labels"];
    if (!values.is_array() || values.size() != n)
      throw ServiceError(422, "label vector must hold one class id per point (" + std::to_string(n) + ")");
    std::vector<ClassId> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = wire_class(values[i]);
    const std::vector<ClassId> before = e->predicted.empty() ? std::vector<ClassId>() : current_labels(*e);
    e->corrections.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (e->predicted.empty() || labels[i] != e->predicted[i]) e->corrections[static_cast<std::uint32_t>(i)] = labels[i];
      if (before.empty() || before[i] != labels[i]) ++changed;
    }
  } else if (request.contains("indices")) {
    const auto indices = wire_indices(request["indices"], n);
    const std::vector<ClassId> base = current_labels(*e);
    std::vector<ClassId> updated;
    const std::string mode = request.value("mode", std::string("relabel"));
    if (mode == "majority_vote") {
      updated = majority_vote(base, indices);
    } else if (mode == "relabel") {
      if (!request.contains("class_id")) throw ServiceError(422, "relabel needs class_id");
      updated = relabel(base, indices, wire_class(request["class_id"]));
    } else {
      throw ServiceError(422, "unknown label mode '" + mode + "'");
    }
    for (auto i : indices) {
      changed += updated[i] != base[i];
      e->corrections[i] = updated[i];
    }
  } else {
    throw ServiceError(422, "label request needs 'indices' or 'labels'");
  }
  return {{"scan_id", id}, {"changed", changed}, {"corrections", e->corrections.size()}};
}

json Service::labels(const std::string& id) const {
  auto e = entry(id);
  std::lock_guard lock(e->mutex);
  json corrected = json::array();
  for (const auto& [i, c] : e->corrections) corrected.push_back(i);
  return {{"scan_id", id}, {"labels", wire_labels(current_labels(*e))}, {"corrected_indices", corrected}};
}

json Service::refine(const json& request) {
  if (!request.is_object() || !request.contains("scan_id") || !request["scan_id"].is_string())
    throw ServiceError(422, "refine request needs a scan_id");
  const std::string id = request["scan_id"].get<std::string>();
  auto e = entry(id);

  RefineConfig rc = config_.refine;
  if (request.contains("lambdas")) {
    bool preset = false;
    rc.lambdas = lambdas_from(request["lambdas"], rc.lambdas, preset);
    if (preset && rc.lambdas.corrected >= rc.lambdas.stable) rc.enforce_lambda_order = false;
  }
  if (request.contains("layers")) {
    if (!request["layers"].is_array()) throw ServiceError(422, "layers must be an array of layer names");
    rc.layers.clear();
    for (const auto& l : request["layers"]) {
      if (!l.is_string()) throw ServiceError(422, "layers must be an array of layer names");
      rc.layers.insert(l.get<std::string>());
    }
  }

  bool expected = false;
  if (!refining_.compare_exchange_strong(expected, true)) throw ServiceError(409, "a refinement is in progress");
  struct Release {
    std::atomic<bool>& flag;
    ~Release() { flag = false; }
  } release{refining_};

  const auto model = current_model();
  std::vector<ClassId> user_labels;
  std::vector<std::uint32_t> corrected;
  std::vector<ClassId> truth;
  {
    std::lock_guard lock(e->mutex);
    if (e->corrections.empty()) throw ServiceError(422, "scan '" + id + "' has no corrections");
    if (e->predicted.empty()) {
      Segmentation seg = closenet::segment(e->example.input, *model, config_.segment);
      e->predicted = std::move(seg.labels);
      e->confidence = std::move(seg.confidence);
    }
    user_labels = current_labels(*e);
    for (const auto& [i, c] : e->corrections) corrected.push_back(i);
    if (e->scan.labels) truth = *e->scan.labels;
  }

  RefineResult result = closenet::refine(*model, *reference_, e->example.input, user_labels, corrected, rc, truth,
                                         suite_.empty() ? nullptr : &suite_);
  auto next = std::make_shared<const NetworkState>(std::move(result.state));
  int count = 0;
  {
    std::lock_guard lock(model_mutex_);
    current_ = next;
    count = ++refinements_;
    if (result.report.suite_miou_after) last_suite_miou_ = result.report.suite_miou_after;
  }
  json out = result.report.to_json();
  out["scan_id"] = id;
  out["model_hash"] = next->hash();
  out["refinement_count"] = count;
  if (!config_.checkpoint_dir.empty()) {
    std::filesystem::create_directories(config_.checkpoint_dir);
    const auto path = config_.checkpoint_dir / ("refined-" + std::to_string(count) + ".ckpt");
    save_checkpoint(*next, path, {{"refined_on", id}, {"report", result.report.to_json()}});
    out["checkpoint"] = path.string();
  }

  Segmentation seg = closenet::segment(e->example.input, *next, config_.segment);
  std::lock_guard lock(e->mutex);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < seg.labels.size(); ++i) changed += seg.labels[i] != e->predicted[i];
  e->predicted = std::move(seg.labels);
  e->confidence = std::move(seg.confidence);
  out["changed_points"] = changed;
  return out;
}

json Service::reset_model() {
  if (refining_) throw ServiceError(409, "a refinement is in progress");
  {
    std::lock_guard lock(model_mutex_);
    current_ = reference_;
    refinements_ = 0;
    last_suite_miou_ = baseline_suite_miou_;
  }
  return model_status();
}

json Service::model_status() const {
  std::lock_guard lock(model_mutex_);
  return {{"checkpoint_hash", current_->hash()},
          {"reference_hash", reference_->hash()},
          {"refinement_count", refinements_},
          {"last_suite_miou", last_suite_miou_ ? json(*last_suite_miou_) : json(nullptr)},
          {"refining", refining_.load()},
          {"config", to_json(current_->config)}};
}

json Service::attention(const std::string& id, int class_id) const {
  if (class_id < 1 || class_id > kNumClasses) throw ServiceError(422, "class id outside the taxonomy");
  auto e = entry(id);
  const auto model = current_model();
  if (model->config.clothing_encoder != ClothingEncoderMode::Attention)
    throw ServiceError(422, "the loaded model has no attention encoder");
  return {{"scan_id", id},
          {"class_id", class_id},
          {"weights", export_attention_map(e->example.input, *model, static_cast<ClassId>(class_id - 1))}};
}

// HTTP front end ------------------------------------------------------------

struct HttpServer::Impl {
  explicit Impl(Service& s) : service(s) {}
  Service& service;
  httplib::Server server;
};

namespace {

void reply(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      reply(res, {{"error", e.what()}}, e.status());
    } catch (const json::exception& e) {
      reply(res, {{"error", std::string("malformed JSON: ") + e.what()}}, 400);
    } catch (const ParseError& e) {
      reply(res, {{"error", e.what()}}, 400);
    } catch (const ValidationError& e) {
      reply(res, {{"error", e.what()}}, 422);
    } catch (const std::exception& e) {
      reply(res, {{"error", e.what()}}, 500);
    }
  };
}

json body_json(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  return json::parse(req.body);
}

}  // namespace

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& s = impl_->server;
  Service& svc = impl_->service;
  s.Get("/health", guarded([&svc](const auto&, auto& res) { reply(res, svc.health()); }));
  s.Get("/taxonomy", guarded([&svc](const auto&, auto& res) { reply(res, svc.taxonomy()); }));
  s.Get("/scans", guarded([&svc](const auto&, auto& res) { reply(res, {{"scans", svc.scan_ids()}}); }));
  s.Post("/scans", guarded([&svc](const httplib::Request& req, auto& res) {
    std::optional<std::string> id;
    std::string ply, meta;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("ply")) throw ServiceError(422, "multipart upload needs a 'ply' part");
      ply = req.get_file_value("ply").content;
      if (req.has_file("meta")) meta = req.get_file_value("meta").content;
      if (req.has_file("id")) id = req.get_file_value("id").content;
    } else {
      ply = req.body;
      if (req.has_param("garments")) {
        const auto g = GarmentVector::parse(req.get_param_value("garments"), LabelTaxonomy::standard());
        json garments = json::array();
        for (ClassId c : g.present()) garments.push_back(std::string(LabelTaxonomy::standard().name(c)));
        meta = json{{"schema", 1}, {"garments", garments}}.dump();
      }
    }
    if (req.has_param("id")) id = req.get_param_value("id");
    if (ply.empty()) throw ServiceError(422, "empty scan upload");
    reply(res, svc.add_scan(ply, meta, id), 201);
  }));
  s.Get(R"(/scans/([^/]+))", guarded([&svc](const httplib::Request& req, auto& res) {
    reply(res, svc.scan_info(req.matches[1]));
  }));
  s.Get(R"(/scans/([^/]+)/points)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    res.set_content(svc.points(req.matches[1]), "application/octet-stream");
  }));
  s.Post(R"(/scans/([^/]+)/segment)", guarded([&svc](const httplib::Request& req, auto& res) {
    reply(res, svc.segment(req.matches[1]));
  }));
  s.Post(R"(/scans/([^/]+)/labels)", guarded([&svc](const httplib::Request& req, auto& res) {
    reply(res, svc.set_labels(req.matches[1], body_json(req)));
  }));
  s.Get(R"(/scans/([^/]+)/labels)", guarded([&svc](const httplib::Request& req, auto& res) {
    reply(res, svc.labels(req.matches[1]));
  }));
  s.Get(R"(/scans/([^/]+)/attention)", guarded([&svc](const httplib::Request& req, auto& res) {
    if (!req.has_param("class")) throw ServiceError(422, "attention needs ?class=<id>");
    reply(res, svc.attention(req.matches[1], std::stoi(req.get_param_value("class"))));
  }));
  s.Post("/refine", guarded([&svc](const httplib::Request& req, auto& res) { reply(res, svc.refine(body_json(req))); }));
  s.Post("/model/reset", guarded([&svc](const auto&, auto& res) { reply(res, svc.reset_model()); }));
  s.Get("/model/status", guarded([&svc](const auto&, auto& res) { reply(res, svc.model_status()); }));
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace closenet
