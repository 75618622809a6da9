#include "dnrf/service.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <thread>

#include "dnrf/errors.hpp"

namespace dnrf::service {
namespace {

using nlohmann::json;

Response json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

Response error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}});
}

double number(const json& j, const char* key) {
  if (!j.is_number()) throw ContractViolation(std::string("'") + key + "' must be a number");
  return j.get<double>();
}

int integer(const json& j, const char* key) {
  if (!j.is_number_integer()) throw ContractViolation(std::string("'") + key + "' must be an integer");
  return j.get<int>();
}

// Coefficients ranked by spread over the dataset's frames, most varied first.
json blendshape_hints(const view::Scene& scene, std::size_t limit) {
  const int dim = scene.header.expr_dim;
  struct Stat {
    int index;
    double lo, hi, stddev;
  };
  std::vector<Stat> stats;
  const double n = static_cast<double>(scene.expressions.size());
  for (int k = 0; k < dim; ++k) {
    double lo = INFINITY, hi = -INFINITY, sum = 0.0, sq = 0.0;
    for (const auto& e : scene.expressions) {
      const double v = e[static_cast<std::size_t>(k)];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
      sq += v * v;
    }
    const double mean = sum / n;
    stats.push_back({k, lo, hi, std::sqrt(std::max(0.0, sq / n - mean * mean))});
  }
  std::stable_sort(stats.begin(), stats.end(), [](const Stat& a, const Stat& b) { return a.stddev > b.stddev; });
  json out = json::array();
  for (std::size_t i = 0; i < std::min(limit, stats.size()); ++i) {
    if (stats[i].stddev == 0.0) break;
    out.push_back({{"index", stats[i].index}, {"min", stats[i].lo}, {"max", stats[i].hi}, {"stddev", stats[i].stddev}});
  }
  return out;
}

}  // namespace

view::ViewRequest parse_request(std::string_view body) {
  json j;
  try {
    j = json::parse(body.begin(), body.end());
  } catch (const json::exception& e) {
    throw ContractViolation(std::string("request is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ContractViolation("request must be a JSON object");
  view::ViewRequest r;
  for (const auto& [key, value] : j.items()) {
    if (key == "base_frame") {
      r.base_frame = integer(value, "base_frame");
    } else if (key == "expression") {
      if (value.is_null()) continue;
      if (!value.is_array()) throw ContractViolation("'expression' must be an array of numbers");
      std::vector<float> e;
      for (const auto& v : value) e.push_back(static_cast<float>(number(v, "expression")));
      r.expression = std::move(e);
    } else if (key == "overrides") {
      if (!value.is_object()) throw ContractViolation("'overrides' must map coefficient indices to values");
      for (const auto& [index, v] : value.items()) {
        std::size_t used = 0;
        int k = -1;
        try {
          k = std::stoi(index, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != index.size()) throw ContractViolation("override key '" + index + "' is not an integer");
        r.overrides[k] = static_cast<float>(number(v, "overrides"));
      }
    } else if (key == "pose_delta") {
      if (!value.is_object()) throw ContractViolation("'pose_delta' must be an object");
      for (const auto& [name, v] : value.items()) {
        auto& d = r.pose_delta;
        double* slot = name == "yaw" ? &d.yaw : name == "pitch" ? &d.pitch : name == "roll" ? &d.roll
                     : name == "tx"  ? &d.tx  : name == "ty"    ? &d.ty    : name == "tz"   ? &d.tz
                                                                                              : nullptr;
        if (!slot) throw ContractViolation("unknown pose_delta field '" + name + "'");
        *slot = number(v, name.c_str());
      }
    } else if (key == "resolution") {
      if (!value.is_null()) r.resolution = integer(value, "resolution");
    } else if (key == "outputs") {
      if (!value.is_array()) throw ContractViolation("'outputs' must be an array of names");
      r.outputs.clear();
      for (const auto& v : value) {
        if (!v.is_string()) throw ContractViolation("'outputs' must be an array of names");
        const auto o = view::output_from_string(v.get<std::string>());
        if (std::find(r.outputs.begin(), r.outputs.end(), o) != r.outputs.end()) {
          throw ContractViolation("output '" + v.get<std::string>() + "' requested twice");
        }
        r.outputs.push_back(o);
      }
    } else {
      throw ContractViolation("unknown request field '" + key + "'");
    }
  }
  return r;
}

std::string request_to_json(const view::ViewRequest& r) {
  json j;
  j["base_frame"] = r.base_frame;
  if (r.expression) j["expression"] = *r.expression;
  json overrides = json::object();
  for (const auto& [k, v] : r.overrides) overrides[std::to_string(k)] = v;
  j["overrides"] = overrides;
  const auto& d = r.pose_delta;
  j["pose_delta"] = {{"yaw", d.yaw}, {"pitch", d.pitch}, {"roll", d.roll}, {"tx", d.tx}, {"ty", d.ty}, {"tz", d.tz}};
  if (r.resolution) j["resolution"] = *r.resolution;
  json outputs = json::array();
  for (auto o : r.outputs) outputs.push_back(std::string(view::to_string(o)));
  j["outputs"] = outputs;
  return j.dump();
}

struct RenderService::Http {
  httplib::Server server;
  std::thread thread;
};

RenderService::RenderService(ServiceConfig config) : config_(config) {
  if (config_.render_threads > 1) pool_ = std::make_unique<ThreadPool>(config_.render_threads);
}

RenderService::~RenderService() { stop(); }

void RenderService::load(view::Scene scene) {
  auto shared = std::make_shared<const view::Scene>(std::move(scene));
  {
    std::lock_guard lock(scene_mutex_);
    scene_ = std::move(shared);
  }
  ready_ = true;
}

std::shared_ptr<const view::Scene> RenderService::snapshot() const {
  std::lock_guard lock(scene_mutex_);
  return scene_;
}

Response RenderService::info() const {
  const auto scene = snapshot();
  if (!scene) return error_response(503, "checkpoint is still loading");
  const auto& cfg = scene->state.field_config();
  const auto& cam = scene->header.camera;
  json frames = json::array();
  for (std::size_t i = 0; i < scene->frame_ids.size(); ++i) {
    frames.push_back({{"index", i}, {"id", scene->frame_ids[i]}, {"latent_row", scene->latent_rows[i]}});
  }
  const auto& c = scene->header.head_center;
  return json_response(
      200, {
               {"expr_dim", cfg.expr_dim},
               {"latent_dim", cfg.latent_dim},
               {"frame_count", scene->poses.size()},
               {"frames", frames},
               {"iteration", scene->state.iteration},
               {"camera", {{"width", cam.width}, {"height", cam.height}, {"z_near", cam.z_near}, {"z_far", cam.z_far}}},
               {"resolution", {{"min", view::kMinResolution}, {"max", view::kMaxResolution}, {"default", cam.width}}},
               {"outputs", {"color", "depth", "normals", "alpha"}},
               {"head_center", {c.x(), c.y(), c.z()}},
               {"pose_delta",
                {{"order", "R_yaw * R_pitch * R_roll about head_center, then translate"},
                 {"angles", "degrees"},
                 {"translation", "canonical units"}}},
               {"blendshape_hints", blendshape_hints(*scene, 10)},
           });
}

Response RenderService::render(std::string_view body) const {
  const auto scene = snapshot();
  if (!scene) return error_response(503, "checkpoint is still loading");
  view::ViewRequest request;
  try {
    request = parse_request(body);
    view::validate_request(*scene, request);
  } catch (const ContractViolation& e) {
    return error_response(400, e.what());
  }

  view::ViewImages images;
  {
    // The shared pool serves one request at a time; others render on their own thread.
    std::unique_lock lock(pool_mutex_, std::try_to_lock);
    images = view::render_view(*scene, request, lock.owns_lock() ? pool_.get() : nullptr);
  }

  if (request.outputs.size() == 1) {
    const auto png = view::encode_output(images, request.outputs.front());
    return {200, "image/png", std::string(png.begin(), png.end())};
  }
  std::string out;
  const std::string boundary(kMultipartBoundary);
  for (auto o : request.outputs) {
    const auto png = view::encode_output(images, o);
    out += "--" + boundary + "\r\nContent-Type: image/png\r\nContent-Disposition: inline; name=\"" +
           std::string(view::to_string(o)) + "\"\r\n\r\n";
    out.append(png.begin(), png.end());
    out += "\r\n";
  }
  out += "--" + boundary + "--\r\n";
  return {200, "multipart/mixed; boundary=" + boundary, std::move(out)};
}

int RenderService::start(const std::string& host, int port) {
  if (http_) throw ContractViolation("RenderService: already started");
  http_ = std::make_unique<Http>();
  auto& server = http_->server;
  const int workers = std::max(1, config_.http_workers);
  server.new_task_queue = [workers] { return new httplib::ThreadPool(static_cast<std::size_t>(workers)); };
  auto send = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Get("/info", [this, send](const httplib::Request&, httplib::Response& res) { send(res, info()); });
  server.Post("/render", [this, send](const httplib::Request& req, httplib::Response& res) {
    try {
      send(res, render(req.body));
    } catch (const std::exception& e) {
      spdlog::error("render failed: {}", e.what());
      send(res, error_response(500, e.what()));
    }
  });

  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    http_.reset();
    throw DataError(DataErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  }
  http_->thread = std::thread([&server] { server.listen_after_bind(); });
  server.wait_until_ready();
  spdlog::info("render service listening on {}:{}", host, bound);
  return bound;
}

void RenderService::wait() const {
  while (http_ && http_->server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

void RenderService::stop() {
  if (!http_) return;
  http_->server.stop();
  if (http_->thread.joinable()) http_->thread.join();
  http_.reset();
}

}  // namespace dnrf::service
