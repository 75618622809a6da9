#include "dnrf/view.hpp"

#include <cmath>
#include <numbers>

#include "dnrf/errors.hpp"

namespace dnrf::view {
namespace {

constexpr double kNormalAlphaThreshold = 0.5;

Eigen::Matrix3d axis_rotation(double degrees, const render::Vec3& axis) {
  return Eigen::AngleAxisd(degrees * std::numbers::pi / 180.0, axis).toRotationMatrix();
}

}  // namespace

std::string_view to_string(Output output) {
  switch (output) {
    case Output::kColor: return "color";
    case Output::kDepth: return "depth";
    case Output::kNormals: return "normals";
    case Output::kAlpha: return "alpha";
  }
  return "color";
}

Output output_from_string(std::string_view name) {
  for (Output o : {Output::kColor, Output::kDepth, Output::kNormals, Output::kAlpha}) {
    if (to_string(o) == name) return o;
  }
  throw ContractViolation("unknown output '" + std::string(name) + "' (expected color, depth, normals, alpha)");
}

render::Pose PoseDelta::transform(const render::Vec3& center) const {
  const Eigen::Matrix3d r = axis_rotation(yaw, render::Vec3::UnitY()) * axis_rotation(pitch, render::Vec3::UnitX()) *
                            axis_rotation(roll, render::Vec3::UnitZ());
  // p -> R (p - c) + c + t
  return render::Pose::translation(center + render::Vec3(tx, ty, tz))
      .after(render::Pose::rotation(r))
      .after(render::Pose::translation(-center));
}

Scene make_scene(train::TrainState state, const data::Dataset& dataset) {
  if (dataset.header.expr_dim != state.field_config().expr_dim) {
    throw DataError(DataErrorCode::kMalformed, "dataset has " + std::to_string(dataset.header.expr_dim) +
                                                   " expression coefficients, checkpoint expects " +
                                                   std::to_string(state.field_config().expr_dim));
  }
  if (dataset.frames.empty()) throw DataError(DataErrorCode::kBadFrame, "dataset has no frames");
  Scene s;
  s.header = dataset.header;
  s.background = dataset.background;
  for (std::size_t i = 0; i < dataset.frames.size(); ++i) {
    const auto& f = dataset.frames[i];
    s.poses.push_back(f.pose);
    s.expressions.push_back(f.expression);
    s.frame_ids.push_back(f.id);
    int row = f.latent_index;
    if (row < 0 || row >= state.latents.rows) {
      row = dataset.frames[static_cast<std::size_t>(dataset.first_train_frame())].latent_index;
    }
    s.latent_rows.push_back(row < state.latents.rows ? row : -1);
  }
  s.state = std::move(state);
  return s;
}

void validate_request(const Scene& scene, const ViewRequest& request) {
  const int frames = static_cast<int>(scene.poses.size());
  const int expr_dim = scene.header.expr_dim;
  auto fail = [](const std::string& msg) { throw ContractViolation(msg); };
  if (request.base_frame < 0 || request.base_frame >= frames) {
    fail("base_frame " + std::to_string(request.base_frame) + " is outside [0, " + std::to_string(frames) + ")");
  }
  if (request.expression) {
    if (static_cast<int>(request.expression->size()) != expr_dim) {
      fail("expression has " + std::to_string(request.expression->size()) + " coefficients, expected " +
           std::to_string(expr_dim));
    }
    for (float v : *request.expression)
      if (!std::isfinite(v)) fail("expression contains a non-finite value");
  }
  for (const auto& [index, value] : request.overrides) {
    if (index < 0 || index >= expr_dim) {
      fail("expression override index " + std::to_string(index) + " is outside [0, " + std::to_string(expr_dim) + ")");
    }
    if (!std::isfinite(value)) fail("expression override " + std::to_string(index) + " is not finite");
  }
  const auto& d = request.pose_delta;
  for (double v : {d.yaw, d.pitch, d.roll, d.tx, d.ty, d.tz})
    if (!std::isfinite(v)) fail("pose_delta contains a non-finite value");
  if (request.resolution && (*request.resolution < kMinResolution || *request.resolution > kMaxResolution)) {
    fail("resolution " + std::to_string(*request.resolution) + " is outside [" + std::to_string(kMinResolution) +
         ", " + std::to_string(kMaxResolution) + "]");
  }
  if (request.outputs.empty()) fail("no outputs requested");
}

std::vector<float> resolved_expression(const Scene& scene, const ViewRequest& request) {
  std::vector<float> e = request.expression ? *request.expression
                                            : scene.expressions[static_cast<std::size_t>(request.base_frame)];
  for (const auto& [index, value] : request.overrides) e[static_cast<std::size_t>(index)] = value;
  return e;
}

render::Pose resolved_pose(const Scene& scene, const ViewRequest& request) {
  const render::Pose& base = scene.poses[static_cast<std::size_t>(request.base_frame)];
  if (request.pose_delta.is_identity()) return base;
  // Moving the head by D means a camera point now lands on D^-1 of its old canonical point.
  return request.pose_delta.transform(scene.header.head_center).inverse().after(base);
}

render::Camera resolved_camera(const Scene& scene, const ViewRequest& request) {
  const auto& c = scene.header.camera;
  if (!request.resolution || *request.resolution == c.width) return c;
  const int w = *request.resolution;
  const int h = std::max(1, static_cast<int>(std::lround(static_cast<double>(w) * c.height / c.width)));
  return c.resized(w, h);
}

ViewImages render_view(const Scene& scene, const ViewRequest& request, ThreadPool* pool) {
  validate_request(scene, request);
  ViewImages out;
  out.camera = resolved_camera(scene, request);
  out.pose = resolved_pose(scene, request);
  const Image background = resize_bilinear(scene.background, out.camera.width, out.camera.height);
  const std::vector<float> expression = resolved_expression(scene, request);
  const int row = scene.latent_rows[static_cast<std::size_t>(request.base_frame)];
  const std::span<const float> latent = row >= 0 ? scene.state.latents.row(row) : std::span<const float>();
  out.rendered = train::render_with_state(scene.state, out.camera, out.pose, background, expression, latent, pool);
  return out;
}

std::vector<std::uint8_t> encode_output(const ViewImages& images, Output output) {
  const auto& r = images.rendered;
  switch (output) {
    case Output::kColor: return encode_png8(r.color);
    case Output::kDepth:
      return encode_png16(render::depth_to_unit(r.depth, images.camera.z_near, images.camera.z_far));
    case Output::kNormals: {
      Image masked = r.depth;
      for (std::size_t i = 0; i < masked.data.size(); ++i)
        if (r.alpha.data[i] < kNormalAlphaThreshold) masked.data[i] = 0.0f;
      return encode_png8(render::normals_to_unit(render::normals_from_depth(masked, images.camera, images.pose)));
    }
    case Output::kAlpha: return encode_png8(r.alpha);
  }
  throw ContractViolation("encode_output: unknown output");
}

}  // namespace dnrf::view
