#pragma once

// Read-only HTTP render service.
//   GET  /info    JSON description of the loaded avatar
//   POST /render  JSON view request -> image/png, or multipart/mixed for several outputs
// 400 for invalid requests, 503 until a scene is loaded.

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

#include "dnrf/view.hpp"

namespace dnrf::service {

inline constexpr std::string_view kMultipartBoundary = "dnrf-7f3a9c1e5b2d-part";

struct Response {
  int status = 200;
  std::string content_type;
  std::string body;
};

// Throws ContractViolation on malformed JSON, unknown keys, or wrong types.
view::ViewRequest parse_request(std::string_view body);
std::string request_to_json(const view::ViewRequest& request);

struct ServiceConfig {
  int http_workers = 4;    // concurrent requests; further requests queue
  int render_threads = 1;  // ray-parallel workers shared by requests
};

class RenderService {
 public:
  explicit RenderService(ServiceConfig config = {});
  ~RenderService();

  RenderService(const RenderService&) = delete;
  RenderService& operator=(const RenderService&) = delete;

  void load(view::Scene scene);
  bool ready() const { return ready_.load(); }

  Response info() const;
  Response render(std::string_view body) const;

  // Binds and serves on a background thread; returns the bound port (port 0 picks one).
  int start(const std::string& host, int port);
  // Blocks while the server runs.
  void wait() const;
  void stop();

 private:
  struct Http;

  ServiceConfig config_;
  std::shared_ptr<const view::Scene> scene_;
  std::atomic<bool> ready_{false};
  mutable std::mutex scene_mutex_;
  mutable std::mutex pool_mutex_;
  std::unique_ptr<ThreadPool> pool_;
  std::unique_ptr<Http> http_;

  std::shared_ptr<const view::Scene> snapshot() const;
};

}  // namespace dnrf::service
