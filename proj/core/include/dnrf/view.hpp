#pragma once

// Rendering a trained avatar from an edited base frame: expression overrides and
// a head pose delta. Shared by `dnrf render` and the HTTP service.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dnrf/dataset.hpp"
#include "dnrf/train.hpp"

namespace dnrf::view {

inline constexpr int kMinResolution = 16;
inline constexpr int kMaxResolution = 256;

enum class Output { kColor, kDepth, kNormals, kAlpha };

std::string_view to_string(Output output);
// Throws ContractViolation for unknown names.
Output output_from_string(std::string_view name);

// Head motion in canonical space: rotate by R_yaw * R_pitch * R_roll about the
// head center (yaw about +y, pitch about +x, roll about +z, degrees), then
// translate by (tx, ty, tz).
struct PoseDelta {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
  double tx = 0.0;
  double ty = 0.0;
  double tz = 0.0;

  bool is_identity() const { return yaw == 0 && pitch == 0 && roll == 0 && tx == 0 && ty == 0 && tz == 0; }
  // Canonical-space transform applied to the head.
  render::Pose transform(const render::Vec3& center) const;
  bool operator==(const PoseDelta&) const = default;
};

struct ViewRequest {
  int base_frame = 0;                           // position in the dataset's frame list
  std::optional<std::vector<float>> expression;  // replaces the base frame's vector
  std::map<int, float> overrides;                // applied after `expression`
  PoseDelta pose_delta;
  std::optional<int> resolution;  // output width; height keeps the aspect ratio
  std::vector<Output> outputs{Output::kColor};
  bool operator==(const ViewRequest&) const = default;
};

// Everything a render needs besides the request. The state must outlive renders.
struct Scene {
  train::TrainState state;
  data::DatasetHeader header;
  Image background;
  std::vector<render::Pose> poses;
  std::vector<std::vector<float>> expressions;
  std::vector<int> frame_ids;
  std::vector<int> latent_rows;  // resolved per frame (test frames take the first training frame's row)
};

Scene make_scene(train::TrainState state, const data::Dataset& dataset);

// Throws ContractViolation describing the first problem.
void validate_request(const Scene& scene, const ViewRequest& request);

std::vector<float> resolved_expression(const Scene& scene, const ViewRequest& request);
render::Pose resolved_pose(const Scene& scene, const ViewRequest& request);
render::Camera resolved_camera(const Scene& scene, const ViewRequest& request);

struct ViewImages {
  render::RenderedImage rendered;
  render::Camera camera;
  render::Pose pose;
};

ViewImages render_view(const Scene& scene, const ViewRequest& request, ThreadPool* pool = nullptr);

// PNG bytes for one output: 8-bit color, 16-bit depth over [z_near, z_far],
// 8-bit normals mapped from [-1, 1] (pixels with alpha < 0.5 stay 0), 8-bit alpha.
std::vector<std::uint8_t> encode_output(const ViewImages& images, Output output);

}  // namespace dnrf::view
