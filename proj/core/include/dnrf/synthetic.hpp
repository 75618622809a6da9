#pragma once

// Closed-form dynamic scene used as ground truth: a soft sphere whose radius
// follows the first expression coefficient, seen from a yaw orbit.

#include <cstdint>
#include <string>
#include <string_view>

#include "dnrf/dataset.hpp"
#include "dnrf/render.hpp"

namespace dnrf::data {

struct SyntheticSceneSpec {
  std::string name = "blob";
  int width = 48;
  int height = 48;
  double focal = 60.0;
  double camera_distance = 3.0;  // camera center to head center
  double z_near = 1.8;
  double z_far = 4.2;

  // r(delta) = base_radius + radius_per_expr * delta[0]
  double base_radius = 0.6;
  double radius_per_expr = 0.5;
  double density = 40.0;         // sigma deep inside the sphere
  double shell_softness = 0.02;  // width of the logistic falloff at the surface

  int expr_dim = 76;
  int train_frames = 30;
  int test_frames = 8;
  double orbit_degrees = 30.0;  // total yaw span
  double expr_range = 0.4;      // delta[0] spans [-expr_range, expr_range]
  double color_jitter = 0.0;    // per-frame multiplicative tint amplitude
  std::uint64_t schedule_seed = 7;
  int oracle_samples = 512;

  void validate() const;
};

// "blob" and "blob-jitter" (per-frame nuisance tint).
SyntheticSceneSpec synthetic_preset(std::string_view name);

class AnalyticField final : public render::RadianceField {
 public:
  AnalyticField(const SyntheticSceneSpec& spec, double delta0, const render::Rgb& tint = {1.0, 1.0, 1.0});

  double radius() const { return radius_; }
  double density_at(const render::Vec3& p) const;
  render::Rgb albedo_at(const render::Vec3& p) const;

  void evaluate(const Eigen::Matrix3Xd& points, const Eigen::Matrix3Xd& dirs, Eigen::VectorXd& sigma,
                Eigen::Matrix3Xd& rgb) const override;

 private:
  double radius_;
  double density_;
  double softness_;
  render::Rgb tint_;
};

// Per-pixel compositing of `field` at `samples` stratified positions (bin
// centers, or jittered when rng is given) through render::composite.
render::RenderedImage oracle_render(const render::RadianceField& field, const render::Camera& camera,
                                    const render::Pose& pose, const Image& background, int samples,
                                    Rng* jitter = nullptr);

render::Camera synthetic_camera(const SyntheticSceneSpec& spec);
// Head yawed by `yaw_degrees` and pitched by `pitch_degrees`, `camera_distance` in front of the camera.
render::Pose orbit_pose(const SyntheticSceneSpec& spec, double yaw_degrees, double pitch_degrees = 0.0);
Image synthetic_background(int width, int height);

// Pixel area of the sphere's silhouette for an on-axis head.
double analytic_silhouette_area(const SyntheticSceneSpec& spec, double delta0);

// Smallest box holding every pixel with alpha > threshold, grown by `pad`.
BBox alpha_bbox(const Image& alpha, double threshold, int pad);

// Seeds change only the stratified jitter of the ground-truth renders.
Dataset generate_synthetic(const SyntheticSceneSpec& spec, std::uint64_t seed);

}  // namespace dnrf::data
