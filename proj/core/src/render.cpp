#include "dnrf/render.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dnrf/errors.hpp"

namespace dnrf::render {

void Camera::validate() const {
  if (!(focal > 0.0)) throw ContractViolation("Camera: focal length must be positive");
  if (width <= 0 || height <= 0) throw ContractViolation("Camera: image size must be positive");
  if (!(z_near > 0.0 && z_near < z_far)) throw ContractViolation("Camera: need 0 < z_near < z_far");
}

Camera Camera::resized(int new_width, int new_height) const {
  Camera c = *this;
  const double sx = static_cast<double>(new_width) / width;
  const double sy = static_cast<double>(new_height) / height;
  c.width = new_width;
  c.height = new_height;
  c.focal = focal * sx;
  c.cx = cx * sx;
  c.cy = cy * sy;
  return c;
}

Pose Pose::from_row_major(std::span<const double> values) {
  if (values.size() != 16) throw ContractViolation("Pose: expected 16 values");
  Pose p;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) p.matrix(r, c) = values[r * 4 + c];
  return p;
}

Pose Pose::translation(const Vec3& t) {
  Pose p;
  p.matrix.topRightCorner<3, 1>() = t;
  return p;
}

Pose Pose::rotation(const Eigen::Matrix3d& r) {
  Pose p;
  p.matrix.topLeftCorner<3, 3>() = r;
  return p;
}

std::array<double, 16> Pose::row_major() const {
  std::array<double, 16> out{};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) out[r * 4 + c] = matrix(r, c);
  return out;
}

Pose Pose::inverse() const {
  Pose p;
  const Eigen::Matrix3d rt = rotation_part().transpose();
  p.matrix.topLeftCorner<3, 3>() = rt;
  p.matrix.topRightCorner<3, 1>() = -rt * translation_part();
  return p;
}

bool Pose::is_rigid(double tolerance) const {
  if (!matrix.allFinite()) return false;
  const Eigen::Matrix3d r = rotation_part();
  if (!((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tolerance)) return false;
  if (std::abs(r.determinant() - 1.0) > tolerance) return false;
  const Eigen::RowVector4d last(0, 0, 0, 1);
  return (matrix.row(3) - last).cwiseAbs().maxCoeff() == 0.0;
}

void Pose::validate(double tolerance) const {
  if (!is_rigid(tolerance)) throw ContractViolation("Pose: not a rigid transform");
}

Ray generate_ray(const Camera& camera, int row, int col, const Pose& pose) {
  if (row < 0 || row >= camera.height || col < 0 || col >= camera.width) {
    throw ContractViolation("generate_ray: pixel (" + std::to_string(row) + ", " + std::to_string(col) +
                            ") outside " + std::to_string(camera.height) + "x" + std::to_string(camera.width));
  }
  const Vec3 d((col + 0.5 - camera.cx) / camera.focal, -(row + 0.5 - camera.cy) / camera.focal, -1.0);
  Ray ray;
  ray.origin = pose.translation_part();
  ray.dir = pose.apply_direction(d.normalized()).normalized();
  ray.row = row;
  ray.col = col;
  return ray;
}

std::vector<double> sample_stratified(double z_near, double z_far, int n, Rng* rng) {
  if (n < 1) throw ContractViolation("sample_stratified: need at least one sample");
  std::vector<double> ts(static_cast<std::size_t>(n));
  const double step = (z_far - z_near) / n;
  for (int i = 0; i < n; ++i) {
    const double u = rng ? rng->uniform() : 0.5;
    ts[i] = z_near + (i + u) * step;
  }
  return ts;
}

std::vector<double> sample_bin_edges(std::span<const double> ts, double z_near, double z_far) {
  std::vector<double> edges(ts.size() + 1);
  edges.front() = z_near;
  for (std::size_t i = 1; i < ts.size(); ++i) edges[i] = 0.5 * (ts[i - 1] + ts[i]);
  edges.back() = z_far;
  return edges;
}

std::vector<double> importance_resample(std::span<const double> ts, std::span<const double> weights,
                                        double z_near, double z_far, int n, Rng* rng) {
  if (ts.size() != weights.size() || ts.empty()) {
    throw ContractViolation("importance_resample: need one weight per coarse sample");
  }
  if (n < 1) throw ContractViolation("importance_resample: need at least one sample");
  const std::vector<double> edges = sample_bin_edges(ts, z_near, z_far);
  std::vector<double> cdf(ts.size() + 1, 0.0);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double w = std::max(weights[i], 0.0) + kImportanceFloor;
    cdf[i + 1] = cdf[i] + w;
  }
  const double total = cdf.back();
  for (double& c : cdf) c /= total;
  cdf.back() = 1.0;

  std::vector<double> out(static_cast<std::size_t>(n));
  std::size_t bin = 0;
  for (int k = 0; k < n; ++k) {
    const double u = (k + (rng ? rng->uniform() : 0.5)) / n;
    while (bin + 1 < ts.size() && cdf[bin + 1] <= u) ++bin;
    const double mass = cdf[bin + 1] - cdf[bin];
    const double frac = mass > 0.0 ? std::clamp((u - cdf[bin]) / mass, 0.0, 1.0) : 0.5;
    out[k] = edges[bin] + frac * (edges[bin + 1] - edges[bin]);
  }
  return out;
}

std::vector<double> merge_sorted(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size() + b.size());
  std::merge(a.begin(), a.end(), b.begin(), b.end(), out.begin());
  return out;
}

double CompositeResult::opacity() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

namespace {

template <typename T>
void check_composite_inputs(std::span<const double> ts, std::span<const T> sigmas, std::span<const T> rgb,
                            double z_far) {
  if (sigmas.size() != ts.size() || rgb.size() != 3 * ts.size()) {
    throw ContractViolation("composite: ts, sigmas and rgb lengths disagree");
  }
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (i > 0 && !(ts[i] >= ts[i - 1])) throw ContractViolation("composite: sample positions are not sorted");
    if (std::isnan(static_cast<double>(sigmas[i]))) throw NumericError("composite: NaN density");
    if (sigmas[i] < T(0)) throw ContractViolation("composite: negative density");
  }
  if (!ts.empty() && ts.back() > z_far) throw ContractViolation("composite: sample beyond z_far");
}

double interval(std::span<const double> ts, std::size_t i, double z_far) {
  return (i + 1 < ts.size() ? ts[i + 1] : z_far) - ts[i];
}

}  // namespace

template <typename T>
CompositeResult composite(std::span<const double> ts, std::span<const T> sigmas, std::span<const T> rgb,
                          const Rgb& background, double z_far) {
  check_composite_inputs(ts, sigmas, rgb, z_far);
  CompositeResult r;
  r.weights.resize(ts.size());
  double transmittance = 1.0;
  double weight_sum = 0.0;
  double depth_sum = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double optical = static_cast<double>(sigmas[i]) * interval(ts, i, z_far);
    const double alpha = -std::expm1(-optical);
    const double w = transmittance * alpha;
    r.weights[i] = w;
    for (int c = 0; c < 3; ++c) r.color[c] += w * static_cast<double>(rgb[3 * i + c]);
    weight_sum += w;
    depth_sum += w * ts[i];
    transmittance *= std::exp(-optical);
  }
  r.residual_transmittance = transmittance;
  for (int c = 0; c < 3; ++c) r.color[c] += transmittance * background[c];
  r.depth = weight_sum > 0.0 ? depth_sum / weight_sum : 0.0;
  return r;
}

template <typename T>
void composite_backward(std::span<const double> ts, std::span<const T> sigmas, std::span<const T> rgb,
                        const Rgb& background, double z_far, const CompositeResult& result, const Rgb& d_color,
                        std::span<T> d_sigma, std::span<T> d_rgb) {
  const std::size_t n = ts.size();
  if (result.weights.size() != n || d_sigma.size() != n || d_rgb.size() != 3 * n) {
    throw ContractViolation("composite_backward: buffer sizes disagree with the forward result");
  }
  // dC/dsigma_i = delta_i * (T_{i+1} c_i - S_i), S_i = sum_{j>i} w_j c_j + T_N bg.
  // Projected on d_color, the suffix sum S_i . g is carried as a scalar.
  double suffix = result.residual_transmittance *
                  (background[0] * d_color[0] + background[1] * d_color[1] + background[2] * d_color[2]);
  double t_next = result.residual_transmittance;
  for (std::size_t i = n; i-- > 0;) {
    const double dt = interval(ts, i, z_far);
    const double optical = static_cast<double>(sigmas[i]) * dt;
    const double c_dot_g = static_cast<double>(rgb[3 * i]) * d_color[0] +
                           static_cast<double>(rgb[3 * i + 1]) * d_color[1] +
                           static_cast<double>(rgb[3 * i + 2]) * d_color[2];
    d_sigma[i] = static_cast<T>(dt * (t_next * c_dot_g - suffix));
    for (int c = 0; c < 3; ++c) d_rgb[3 * i + c] = static_cast<T>(result.weights[i] * d_color[c]);
    suffix += result.weights[i] * c_dot_g;
    // T_i = T_{i+1} / exp(-optical) is unstable once T underflows; rebuild from w.
    const double alpha = -std::expm1(-optical);
    t_next = alpha > 0.0 ? result.weights[i] / alpha : t_next;
  }
}

template CompositeResult composite(std::span<const double>, std::span<const float>, std::span<const float>,
                                   const Rgb&, double);
template CompositeResult composite(std::span<const double>, std::span<const double>, std::span<const double>,
                                   const Rgb&, double);
template void composite_backward(std::span<const double>, std::span<const float>, std::span<const float>,
                                 const Rgb&, double, const CompositeResult&, const Rgb&, std::span<float>,
                                 std::span<float>);
template void composite_backward(std::span<const double>, std::span<const double>, std::span<const double>,
                                 const Rgb&, double, const CompositeResult&, const Rgb&, std::span<double>,
                                 std::span<double>);

MlpField::MlpField(const field::FieldParams<float>& params, const SceneBounds& bounds,
                   std::span<const float> delta, std::span<const float> gamma)
    : params_(params), bounds_(bounds), delta_(delta.begin(), delta.end()), gamma_(gamma.begin(), gamma.end()) {}

void MlpField::evaluate(const Eigen::Matrix3Xd& points, const Eigen::Matrix3Xd& dirs, Eigen::VectorXd& sigma,
                        Eigen::Matrix3Xd& rgb) const {
  field::Points<float> p(3, points.cols());
  for (Eigen::Index j = 0; j < points.cols(); ++j) p.col(j) = bounds_.normalize(points.col(j)).cast<float>();
  const field::Points<float> d = dirs.cast<float>();
  const auto out = field::field_forward_batch<float>(params_, p, d, delta_, gamma_);
  sigma = out.sigma.transpose().cast<double>();
  rgb = out.rgb.cast<double>();
}

std::vector<RayRender> render_rays(const RadianceField& coarse, const RadianceField& fine,
                                   std::span<const Ray> rays, std::span<const Rgb> backgrounds, double z_near,
                                   double z_far, const SampleConfig& config, Rng* rng) {
  if (rays.size() != backgrounds.size()) throw ContractViolation("render_rays: one background color per ray");
  const std::size_t count = rays.size();
  const int nc = config.n_coarse;
  const int nu = config.n_coarse + config.n_fine;
  std::vector<RayRender> out(count);
  if (count == 0) return out;

  auto fill = [&](const std::vector<std::vector<double>>& per_ray_ts, int per_ray, Eigen::Matrix3Xd& points,
                  Eigen::Matrix3Xd& dirs) {
    points.resize(3, static_cast<Eigen::Index>(count) * per_ray);
    dirs.resize(3, points.cols());
    for (std::size_t r = 0; r < count; ++r) {
      for (int s = 0; s < per_ray; ++s) {
        const auto col = static_cast<Eigen::Index>(r) * per_ray + s;
        points.col(col) = rays[r].origin + per_ray_ts[r][s] * rays[r].dir;
        dirs.col(col) = rays[r].dir;
      }
    }
  };

  std::vector<std::vector<double>> coarse_ts(count);
  for (std::size_t r = 0; r < count; ++r) coarse_ts[r] = sample_stratified(z_near, z_far, nc, rng);

  Eigen::Matrix3Xd points;
  Eigen::Matrix3Xd dirs;
  Eigen::VectorXd sigma;
  Eigen::Matrix3Xd rgb;
  fill(coarse_ts, nc, points, dirs);
  coarse.evaluate(points, dirs, sigma, rgb);
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t off = r * nc;
    out[r].coarse = composite<double>(coarse_ts[r], std::span<const double>(sigma.data() + off, nc),
                                      std::span<const double>(rgb.data() + 3 * off, 3 * nc), backgrounds[r], z_far);
  }

  std::vector<std::vector<double>> fine_ts(count);
  for (std::size_t r = 0; r < count; ++r) {
    const auto extra = importance_resample(coarse_ts[r], out[r].coarse.weights, z_near, z_far, config.n_fine, rng);
    fine_ts[r] = merge_sorted(coarse_ts[r], extra);
  }
  fill(fine_ts, nu, points, dirs);
  fine.evaluate(points, dirs, sigma, rgb);
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t off = r * nu;
    out[r].fine = composite<double>(fine_ts[r], std::span<const double>(sigma.data() + off, nu),
                                    std::span<const double>(rgb.data() + 3 * off, 3 * nu), backgrounds[r], z_far);
    out[r].fine_ts = std::move(fine_ts[r]);
  }
  return out;
}

RayRender render_ray(const RadianceField& coarse, const RadianceField& fine, const Ray& ray, const Rgb& background,
                     double z_near, double z_far, const SampleConfig& config, Rng* rng) {
  auto out = render_rays(coarse, fine, std::span<const Ray>(&ray, 1), std::span<const Rgb>(&background, 1),
                         z_near, z_far, config, rng);
  return std::move(out.front());
}

RenderedImage render_image(const RadianceField& coarse, const RadianceField& fine, const Camera& camera,
                           const Pose& pose, const Image& background, const SampleConfig& config,
                           ThreadPool* pool) {
  camera.validate();
  if (background.width != camera.width || background.height != camera.height || background.channels != 3) {
    throw ContractViolation("render_image: background must be a " + std::to_string(camera.width) + "x" +
                            std::to_string(camera.height) + " RGB image");
  }
  RenderedImage img{Image(camera.width, camera.height, 3), Image(camera.width, camera.height, 1),
                    Image(camera.width, camera.height, 1)};
  constexpr int kTile = 64;
  const std::size_t pixels = static_cast<std::size_t>(camera.width) * camera.height;
  const std::size_t tiles = (pixels + kTile - 1) / kTile;

  auto work = [&](std::size_t tile) {
    const std::size_t begin = tile * kTile;
    const std::size_t end = std::min(pixels, begin + kTile);
    std::vector<Ray> rays;
    std::vector<Rgb> bgs;
    for (std::size_t i = begin; i < end; ++i) {
      const int row = static_cast<int>(i / camera.width);
      const int col = static_cast<int>(i % camera.width);
      rays.push_back(generate_ray(camera, row, col, pose));
      bgs.push_back({background.at(row, col, 0), background.at(row, col, 1), background.at(row, col, 2)});
    }
    const auto results = render_rays(coarse, fine, rays, bgs, camera.z_near, camera.z_far, config, nullptr);
    for (std::size_t k = 0; k < results.size(); ++k) {
      const int row = rays[k].row;
      const int col = rays[k].col;
      const auto& f = results[k].fine;
      for (int c = 0; c < 3; ++c) img.color.at(row, col, c) = static_cast<float>(f.color[c]);
      img.depth.at(row, col, 0) = static_cast<float>(f.depth);
      img.alpha.at(row, col, 0) = static_cast<float>(f.opacity());
    }
  };
  if (pool) {
    pool->parallel_for(tiles, work);
  } else {
    for (std::size_t t = 0; t < tiles; ++t) work(t);
  }
  return img;
}

Image normals_from_depth(const Image& depth, const Camera& camera, const Pose& pose) {
  if (depth.channels != 1 || depth.width != camera.width || depth.height != camera.height) {
    throw ContractViolation("normals_from_depth: depth map must match the camera");
  }
  const int w = depth.width;
  const int h = depth.height;
  std::vector<Vec3> points(static_cast<std::size_t>(w) * h, Vec3::Zero());
  auto valid = [&](int r, int c) { return r >= 0 && r < h && c >= 0 && c < w && depth.at(r, c, 0) > 0.0f; };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!valid(r, c)) continue;
      const Vec3 d =
          Vec3((c + 0.5 - camera.cx) / camera.focal, -(r + 0.5 - camera.cy) / camera.focal, -1.0).normalized();
      points[static_cast<std::size_t>(r) * w + c] = pose.apply_point(static_cast<double>(depth.at(r, c, 0)) * d);
    }
  }
  auto at = [&](int r, int c) -> const Vec3& { return points[static_cast<std::size_t>(r) * w + c]; };
  // Central difference when both neighbours exist, one-sided otherwise.
  auto tangent = [&](int r, int c, int dr, int dc, Vec3& out) {
    const bool fwd = valid(r + dr, c + dc);
    const bool back = valid(r - dr, c - dc);
    if (fwd && back) out = at(r + dr, c + dc) - at(r - dr, c - dc);
    else if (fwd) out = at(r + dr, c + dc) - at(r, c);
    else if (back) out = at(r, c) - at(r - dr, c - dc);
    else return false;
    return true;
  };

  Image normals(w, h, 3);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!valid(r, c)) continue;
      Vec3 tx;
      Vec3 ty;
      if (!tangent(r, c, 0, 1, tx) || !tangent(r, c, 1, 0, ty)) continue;
      // Rows grow downward, so ty x tx faces the camera.
      const Vec3 n = ty.cross(tx);
      const double len = n.norm();
      if (!(len > 1e-12)) continue;
      for (int k = 0; k < 3; ++k) normals.at(r, c, k) = static_cast<float>(n[k] / len);
    }
  }
  return normals;
}

Image depth_to_unit(const Image& depth, double z_near, double z_far) {
  Image out = depth;
  for (float& v : out.data) {
    v = v > 0.0f ? static_cast<float>(std::clamp((v - z_near) / (z_far - z_near), 0.0, 1.0)) : 0.0f;
  }
  return out;
}

Image normals_to_unit(const Image& normals) {
  Image out = normals;
  for (std::size_t i = 0; i < out.data.size(); i += 3) {
    const bool empty = normals.data[i] == 0.0f && normals.data[i + 1] == 0.0f && normals.data[i + 2] == 0.0f;
    for (int k = 0; k < 3; ++k) out.data[i + k] = empty ? 0.0f : 0.5f * (normals.data[i + k] + 1.0f);
  }
  return out;
}

}  // namespace dnrf::render
