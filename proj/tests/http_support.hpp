// SPDX-License-Identifier: Apache-2.0
// In-process HTTP server on a free port plus request helpers.
#pragma once

#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "close/service.hpp"

namespace closenet::testing {

class LiveServer {
 public:
  explicit LiveServer(Service& service) : http_(service) {
    port_ = http_.bind("127.0.0.1", 0);
    thread_ = std::thread([this] { http_.listen(); });
    http_.wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(120);
  }
  ~LiveServer() {
    http_.stop();
    thread_.join();
  }

  httplib::Client& client() { return *client_; }
  int port() const { return port_; }

  httplib::Result get(const std::string& path) { return client_->Get(path); }
  httplib::Result post(const std::string& path, const nlohmann::json& body = nlohmann::json::object()) {
    return client_->Post(path, body.dump(), "application/json");
  }

 private:
  HttpServer http_;
  int port_ = 0;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
};

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

inline nlohmann::json body_of(const httplib::Result& r) { return nlohmann::json::parse(r->body); }

/// Multipart upload of a PLY file and its metadata document.
inline httplib::Result upload(httplib::Client& client, const std::filesystem::path& ply, const std::string& id) {
  auto meta = ply;
  meta.replace_extension(".json");
  httplib::MultipartFormDataItems items{{"ply", read_bytes(ply), "scan.ply", "application/octet-stream"},
                                        {"meta", read_bytes(meta), "scan.json", "application/json"},
                                        {"id", id, "", ""}};
  return client.Post("/scans", items);
}

}  // namespace closenet::testing
