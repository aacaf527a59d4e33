// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "close/body_model.hpp"
#include "close/error.hpp"
#include "close/network.hpp"
#include "close/refinement.hpp"
#include "close/scan.hpp"
#include "close/training.hpp"

namespace closenet {

/// Error carrying the HTTP status a handler should answer with.
class ServiceError : public Error {
 public:
  ServiceError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

struct ServiceConfig {
  std::filesystem::path checkpoint;      // reference weights
  std::filesystem::path checkpoint_dir;  // refined checkpoints are written here
  std::filesystem::path scan_dir;        // uploaded scans (PLY + metadata)
  std::string host = "127.0.0.1";
  int port = 8080;
  /// Suite manifest whose test split is the frozen regression suite.
  std::optional<std::filesystem::path> suite_manifest;
  RefineConfig refine;
  SegmentOptions segment;

  /// Fills checkpoint_dir, scan_dir and port from CLOSE_CKPT_DIR,
  /// CLOSE_SCAN_DIR and CLOSE_PORT when they are set.
  void apply_environment();
};

/// Binary points payload: u32 count, then count×9 float32 (x,y,z,r,g,b,nx,ny,nz),
/// all little endian.
std::string encode_points(const ScanSample& scan);
ScanSample decode_points(std::string_view bytes);

/// Scan store, model slot and refinement queue behind the HTTP endpoints.
/// Request bodies and responses are JSON; class ids on the wire are 1-based.
class Service {
 public:
  /// Loads the reference checkpoint and any scans already in scan_dir.
  explicit Service(ServiceConfig config, const BodyModel& body_model = toy_body_model());
  Service(NetworkState reference, ServiceConfig config, std::vector<Example> frozen_suite = {},
          const BodyModel& body_model = toy_body_model());

  nlohmann::json health() const;
  nlohmann::json taxonomy() const;

  /// Stores a PLY (with optional metadata document) and returns {"scan_id", "num_points"}.
  nlohmann::json add_scan(const std::string& ply_bytes, const std::string& metadata_json,
                          const std::optional<std::string>& requested_id = std::nullopt);
  nlohmann::json add_scan(const ScanSample& scan);
  nlohmann::json scan_info(const std::string& id) const;
  std::vector<std::string> scan_ids() const;
  std::string points(const std::string& id) const;

  nlohmann::json segment(const std::string& id);
  /// {"indices":[...], "class_id":c} | {"indices":[...], "mode":"majority_vote"} | {"labels":[...]}.
  nlohmann::json set_labels(const std::string& id, const nlohmann::json& request);
  nlohmann::json labels(const std::string& id) const;
  /// {"scan_id", "lambdas"?: {...} | "preset", "layers"?: [...]}. 409 while busy.
  nlohmann::json refine(const nlohmann::json& request);
  nlohmann::json reset_model();
  nlohmann::json model_status() const;
  /// Per-point attention weight of one class (1-based id).
  nlohmann::json attention(const std::string& id, int class_id) const;

  std::shared_ptr<const NetworkState> current_model() const;
  const NetworkState& reference_model() const { return *reference_; }

 private:
  struct ScanEntry {
    std::mutex mutex;
    ScanSample scan;
    Example example;
    std::vector<ClassId> predicted;        // empty before the first segmentation
    std::vector<double> confidence;
    std::map<std::uint32_t, ClassId> corrections;
  };

  std::shared_ptr<ScanEntry> entry(const std::string& id) const;
  std::vector<ClassId> current_labels(const ScanEntry& e) const;
  void load_scan_dir();
  void register_scan(ScanSample scan);

  ServiceConfig config_;
  const BodyModel* body_model_;
  std::shared_ptr<const NetworkState> reference_;
  std::vector<Example> suite_;
  std::optional<double> baseline_suite_miou_;

  mutable std::mutex model_mutex_;
  std::shared_ptr<const NetworkState> current_;
  int refinements_ = 0;
  std::optional<double> last_suite_miou_;
  std::atomic<bool> refining_{false};

  mutable std::shared_mutex scans_mutex_;
  std::map<std::string, std::shared_ptr<ScanEntry>> scans_;
  std::uint64_t next_id_ = 0;
};

/// cpp-httplib front end for a Service.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds the socket; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace closenet
