#include "dnrf/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dnrf/errors.hpp"

namespace dnrf::data {

using render::Rgb;
using render::Vec3;

void SyntheticSceneSpec::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ContractViolation(std::string("SyntheticSceneSpec: ") + what);
  };
  require(width > 0 && height > 0 && focal > 0.0, "bad camera");
  require(z_near > 0.0 && z_near < z_far, "need 0 < z_near < z_far");
  require(base_radius - std::abs(radius_per_expr) * expr_range > 0.0, "radius must stay positive over the schedule");
  require(camera_distance - (base_radius + std::abs(radius_per_expr) * expr_range) > z_near,
          "sphere must lie beyond z_near");
  require(expr_dim >= 1, "need at least one expression coefficient");
  require(train_frames >= 1 && test_frames >= 0, "need training frames");
  require(oracle_samples >= 1, "need oracle samples");
}

SyntheticSceneSpec synthetic_preset(std::string_view name) {
  SyntheticSceneSpec spec;
  if (name == "blob") return spec;
  if (name == "blob-jitter") {
    spec.name = "blob-jitter";
    spec.color_jitter = 0.25;
    return spec;
  }
  throw ContractViolation("unknown synthetic preset '" + std::string(name) + "'");
}

AnalyticField::AnalyticField(const SyntheticSceneSpec& spec, double delta0, const Rgb& tint)
    : radius_(spec.base_radius + spec.radius_per_expr * delta0),
      density_(spec.density),
      softness_(spec.shell_softness),
      tint_(tint) {}

double AnalyticField::density_at(const Vec3& p) const {
  return density_ / (1.0 + std::exp(-(radius_ - p.norm()) / softness_));
}

Rgb AnalyticField::albedo_at(const Vec3& p) const {
  const Rgb base{0.5 + 0.35 * std::sin(2.5 * p.x() + 0.3), 0.5 + 0.35 * std::sin(2.5 * p.y() + 1.7),
                 0.5 + 0.35 * std::sin(2.5 * p.z() + 2.9)};
  Rgb out;
  for (int c = 0; c < 3; ++c) out[c] = std::clamp(base[c] * tint_[c], 0.0, 1.0);
  return out;
}

void AnalyticField::evaluate(const Eigen::Matrix3Xd& points, const Eigen::Matrix3Xd& /*dirs*/,
                             Eigen::VectorXd& sigma, Eigen::Matrix3Xd& rgb) const {
  sigma.resize(points.cols());
  rgb.resize(3, points.cols());
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    const Vec3 p = points.col(j);
    sigma(j) = density_at(p);
    const Rgb a = albedo_at(p);
    rgb.col(j) = Vec3(a[0], a[1], a[2]);
  }
}

render::RenderedImage oracle_render(const render::RadianceField& field, const render::Camera& camera,
                                    const render::Pose& pose, const Image& background, int samples, Rng* jitter) {
  camera.validate();
  if (background.width != camera.width || background.height != camera.height || background.channels != 3) {
    throw ContractViolation("oracle_render: background does not match the camera");
  }
  render::RenderedImage out{Image(camera.width, camera.height, 3), Image(camera.width, camera.height, 1),
                            Image(camera.width, camera.height, 1)};
  Eigen::Matrix3Xd points(3, static_cast<Eigen::Index>(camera.width) * samples);
  Eigen::Matrix3Xd dirs(3, points.cols());
  Eigen::VectorXd sigma;
  Eigen::Matrix3Xd rgb;
  std::vector<std::vector<double>> ts(static_cast<std::size_t>(camera.width));
  for (int row = 0; row < camera.height; ++row) {
    for (int col = 0; col < camera.width; ++col) {
      const render::Ray ray = render::generate_ray(camera, row, col, pose);
      ts[col] = render::sample_stratified(camera.z_near, camera.z_far, samples, jitter);
      for (int s = 0; s < samples; ++s) {
        const auto j = static_cast<Eigen::Index>(col) * samples + s;
        points.col(j) = ray.origin + ts[col][s] * ray.dir;
        dirs.col(j) = ray.dir;
      }
    }
    field.evaluate(points, dirs, sigma, rgb);
    for (int col = 0; col < camera.width; ++col) {
      const std::size_t off = static_cast<std::size_t>(col) * samples;
      const Rgb bg{background.at(row, col, 0), background.at(row, col, 1), background.at(row, col, 2)};
      const auto r = render::composite<double>(ts[col], std::span<const double>(sigma.data() + off, samples),
                                               std::span<const double>(rgb.data() + 3 * off, 3 * samples), bg,
                                               camera.z_far);
      for (int c = 0; c < 3; ++c) out.color.at(row, col, c) = static_cast<float>(r.color[c]);
      out.depth.at(row, col, 0) = static_cast<float>(r.depth);
      out.alpha.at(row, col, 0) = static_cast<float>(r.opacity());
    }
  }
  return out;
}

render::Camera synthetic_camera(const SyntheticSceneSpec& spec) {
  render::Camera c;
  c.focal = spec.focal;
  c.width = spec.width;
  c.height = spec.height;
  c.cx = 0.5 * spec.width;
  c.cy = 0.5 * spec.height;
  c.z_near = spec.z_near;
  c.z_far = spec.z_far;
  return c;
}

render::Pose orbit_pose(const SyntheticSceneSpec& spec, double yaw_degrees, double pitch_degrees) {
  const double yaw = yaw_degrees * std::numbers::pi / 180.0;
  const double pitch = pitch_degrees * std::numbers::pi / 180.0;
  const Eigen::Matrix3d r = (Eigen::AngleAxisd(yaw, Vec3::UnitY()) * Eigen::AngleAxisd(pitch, Vec3::UnitX()))
                                .toRotationMatrix();
  // canonical = R (x_cam + (0, 0, D)): the head sits D in front of the camera.
  return render::Pose::rotation(r).after(render::Pose::translation(Vec3(0.0, 0.0, spec.camera_distance)));
}

Image synthetic_background(int width, int height) {
  Image bg(width, height, 3);
  for (int r = 0; r < height; ++r) {
    const double v = height > 1 ? static_cast<double>(r) / (height - 1) : 0.0;
    for (int c = 0; c < width; ++c) {
      const double u = width > 1 ? static_cast<double>(c) / (width - 1) : 0.0;
      bg.at(r, c, 0) = static_cast<float>(0.20 + 0.45 * v + 0.05 * u);
      bg.at(r, c, 1) = static_cast<float>(0.30 + 0.25 * v);
      bg.at(r, c, 2) = static_cast<float>(0.55 - 0.15 * v + 0.05 * u);
    }
  }
  return quantize8(bg);
}

double analytic_silhouette_area(const SyntheticSceneSpec& spec, double delta0) {
  const double r = spec.base_radius + spec.radius_per_expr * delta0;
  const double d = spec.camera_distance;
  const double rho = spec.focal * r / std::sqrt(d * d - r * r);
  return std::numbers::pi * rho * rho;
}

BBox alpha_bbox(const Image& alpha, double threshold, int pad) {
  BBox box{alpha.height, alpha.width, 0, 0};
  bool any = false;
  for (int r = 0; r < alpha.height; ++r) {
    for (int c = 0; c < alpha.width; ++c) {
      if (alpha.at(r, c, 0) <= threshold) continue;
      any = true;
      box.row0 = std::min(box.row0, r);
      box.col0 = std::min(box.col0, c);
      box.row1 = std::max(box.row1, r + 1);
      box.col1 = std::max(box.col1, c + 1);
    }
  }
  if (!any) return {};
  box.row0 = std::max(0, box.row0 - pad);
  box.col0 = std::max(0, box.col0 - pad);
  box.row1 = std::min(alpha.height, box.row1 + pad);
  box.col1 = std::min(alpha.width, box.col1 + pad);
  return box;
}

namespace {

render::SceneBounds frustum_bounds(const render::Camera& camera, const std::vector<render::Pose>& poses) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  const int rows[] = {0, camera.height / 2, camera.height - 1};
  const int cols[] = {0, camera.width / 2, camera.width - 1};
  for (const auto& pose : poses) {
    for (int r : rows) {
      for (int c : cols) {
        const auto ray = render::generate_ray(camera, r, c, pose);
        for (double t : {camera.z_near, camera.z_far}) {
          const Vec3 p = ray.origin + t * ray.dir;
          lo = lo.cwiseMin(p);
          hi = hi.cwiseMax(p);
        }
      }
    }
  }
  const Vec3 pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace

Dataset generate_synthetic(const SyntheticSceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Dataset d;
  d.header.camera = synthetic_camera(spec);
  d.header.expr_dim = spec.expr_dim;
  d.header.head_center = Vec3::Zero();
  d.header.description = "synthetic:" + spec.name;
  d.background = synthetic_background(spec.width, spec.height);

  struct Plan {
    double yaw;
    double delta0;
    data::Split split;
  };
  std::vector<Plan> plan;
  const int m = spec.train_frames;
  const double half = 0.5 * spec.orbit_degrees;
  for (int i = 0; i < m; ++i) {
    const double yaw = m > 1 ? -half + spec.orbit_degrees * i / (m - 1) : 0.0;
    // Multiplying by 7 decorrelates expression from yaw along the orbit.
    const int slot = (7 * i) % m;
    const double delta0 = m > 1 ? -spec.expr_range + 2.0 * spec.expr_range * slot / (m - 1) : 0.0;
    plan.push_back({yaw, delta0, Split::kTrain});
  }
  const int n_test = spec.test_frames;
  for (int k = 0; k < n_test; ++k) {
    const double yaw = -half + spec.orbit_degrees * (k + 0.5) / n_test;
    const int slot = (3 * k + 1) % std::max(n_test, 1);
    const double delta0 =
        n_test > 1 ? -spec.expr_range + 2.0 * spec.expr_range * slot / (n_test - 1) : 0.0;
    plan.push_back({yaw, delta0, Split::kTest});
  }

  std::vector<render::Pose> poses;
  for (const auto& p : plan) poses.push_back(orbit_pose(spec, p.yaw));
  d.header.bounds = frustum_bounds(d.header.camera, poses);

  int latent = 0;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    FrameRecord f;
    f.id = static_cast<int>(i);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frames/%05d.png", f.id);
    f.image_path = buf;
    f.pose = poses[i];
    f.expression.assign(static_cast<std::size_t>(spec.expr_dim), 0.0f);
    f.expression[0] = static_cast<float>(plan[i].delta0);
    f.split = plan[i].split;
    f.latent_index = f.split == Split::kTrain ? latent++ : -1;

    Rgb tint{1.0, 1.0, 1.0};
    if (spec.color_jitter > 0.0) {
      Rng tint_rng = Rng::derive(spec.schedule_seed, {0x7417, i});
      for (double& t : tint) t = 1.0 + spec.color_jitter * tint_rng.uniform(-1.0, 1.0);
    }
    // The field sees the float-rounded coefficient, like every consumer of the dataset.
    const AnalyticField field(spec, static_cast<double>(f.expression[0]), tint);
    Rng jitter = Rng::derive(seed, {0x0DA7A, i});
    const auto rendered = oracle_render(field, d.header.camera, f.pose, d.background, spec.oracle_samples, &jitter);
    f.image = quantize8(rendered.color);
    f.bbox = alpha_bbox(rendered.alpha, 1e-3, 1);
    d.frames.push_back(std::move(f));
  }
  d.validate();
  return d;
}

}  // namespace dnrf::data
