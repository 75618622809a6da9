#pragma once

// Rays, sampling along rays, and alpha-compositing against a fixed background.

#include <Eigen/Dense>

#include <array>
#include <span>
#include <vector>

#include "dnrf/field.hpp"
#include "dnrf/image.hpp"
#include "dnrf/parallel.hpp"
#include "dnrf/rng.hpp"

namespace dnrf::render {

using Vec3 = Eigen::Vector3d;
using Rgb = std::array<double, 3>;

// Pinhole camera, y-down pixel grid, looking down -z. Pixel centers sit at +0.5.
struct Camera {
  double focal = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;
  double z_near = 0.1;
  double z_far = 1.0;

  void validate() const;
  // Same field of view at a different pixel resolution.
  Camera resized(int new_width, int new_height) const;
  bool operator==(const Camera&) const = default;
};

// Rigid 4x4 transform from camera space to canonical head space.
struct Pose {
  Eigen::Matrix4d matrix = Eigen::Matrix4d::Identity();

  static Pose identity() { return {}; }
  static Pose from_row_major(std::span<const double> values);
  static Pose translation(const Vec3& t);
  static Pose rotation(const Eigen::Matrix3d& r);

  std::array<double, 16> row_major() const;
  Eigen::Matrix3d rotation_part() const { return matrix.topLeftCorner<3, 3>(); }
  Vec3 translation_part() const { return matrix.topRightCorner<3, 1>(); }
  Vec3 apply_point(const Vec3& p) const { return rotation_part() * p + translation_part(); }
  Vec3 apply_direction(const Vec3& d) const { return rotation_part() * d; }
  // this after `first`: x -> this(first(x)).
  Pose after(const Pose& first) const { return {matrix * first.matrix}; }
  Pose inverse() const;

  // Rotation block orthonormal with det +1, last row (0,0,0,1).
  bool is_rigid(double tolerance = 1e-5) const;
  void validate(double tolerance = 1e-5) const;
  bool operator==(const Pose& o) const { return matrix == o.matrix; }
};

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit length
  int row = 0;
  int col = 0;
};

Ray generate_ray(const Camera& camera, int row, int col, const Pose& pose);

// Axis-aligned canonical-space box mapped onto [-1, 1]^3 before encoding.
struct SceneBounds {
  Vec3 min = Vec3::Constant(-1.0);
  Vec3 max = Vec3::Constant(1.0);

  Vec3 normalize(const Vec3& p) const {
    return (2.0 * (p - min).array() / (max - min).array() - 1.0).matrix();
  }
  Vec3 center() const { return 0.5 * (min + max); }
  bool operator==(const SceneBounds& o) const { return min == o.min && max == o.max; }
};

// One t per equal bin of [z_near, z_far]: jittered with `rng`, bin centers without.
std::vector<double> sample_stratified(double z_near, double z_far, int n, Rng* rng);

// Bins around each sample: [z_near, midpoints..., z_far].
std::vector<double> sample_bin_edges(std::span<const double> ts, double z_near, double z_far);

inline constexpr double kImportanceFloor = 1e-5;

// Inverse-transform sampling of the piecewise-constant pdf whose mass in the bin
// around ts[i] is proportional to weights[i] + kImportanceFloor. Stratified u:
// u_k = (k + xi)/n, xi from `rng` or 0.5 without one. Output is sorted.
std::vector<double> importance_resample(std::span<const double> ts, std::span<const double> weights,
                                        double z_near, double z_far, int n, Rng* rng);

std::vector<double> merge_sorted(std::span<const double> a, std::span<const double> b);

struct CompositeResult {
  Rgb color{};
  std::vector<double> weights;
  double residual_transmittance = 1.0;
  double depth = 0.0;  // weighted mean t; 0 when every weight is 0

  double opacity() const;
};

// Alpha-compositing quadrature. delta_i = t_{i+1} - t_i, the last interval runs
// to z_far; alpha_i = 1 - exp(-sigma_i delta_i); color gets the weighted sample
// colors plus residual transmittance times the background.
// rgb holds 3 interleaved values per sample.
template <typename T>
CompositeResult composite(std::span<const double> ts, std::span<const T> sigmas, std::span<const T> rgb,
                          const Rgb& background, double z_far);

// dL/dsigma and dL/drgb (interleaved) given dL/dcolor, written into the outputs.
template <typename T>
void composite_backward(std::span<const double> ts, std::span<const T> sigmas, std::span<const T> rgb,
                        const Rgb& background, double z_far, const CompositeResult& result, const Rgb& d_color,
                        std::span<T> d_sigma, std::span<T> d_rgb);

// A field evaluated at canonical points with its conditioning already bound.
class RadianceField {
 public:
  virtual ~RadianceField() = default;
  virtual void evaluate(const Eigen::Matrix3Xd& points, const Eigen::Matrix3Xd& dirs, Eigen::VectorXd& sigma,
                        Eigen::Matrix3Xd& rgb) const = 0;
};

// The learned field behind RadianceField: normalizes positions by the scene
// bounds and evaluates in single precision.
class MlpField final : public RadianceField {
 public:
  MlpField(const field::FieldParams<float>& params, const SceneBounds& bounds, std::span<const float> delta,
           std::span<const float> gamma);

  void evaluate(const Eigen::Matrix3Xd& points, const Eigen::Matrix3Xd& dirs, Eigen::VectorXd& sigma,
                Eigen::Matrix3Xd& rgb) const override;

 private:
  const field::FieldParams<float>& params_;
  SceneBounds bounds_;
  std::vector<float> delta_;
  std::vector<float> gamma_;
};

struct SampleConfig {
  int n_coarse = 64;
  int n_fine = 64;
  bool operator==(const SampleConfig&) const = default;
};

struct RayRender {
  CompositeResult coarse;
  CompositeResult fine;
  std::vector<double> fine_ts;  // sorted union of coarse and resampled t
};

// Coarse pass on stratified samples; fine pass on the union of those and
// n_fine importance samples. Deterministic sampling when rng is null.
std::vector<RayRender> render_rays(const RadianceField& coarse, const RadianceField& fine,
                                   std::span<const Ray> rays, std::span<const Rgb> backgrounds,
                                   double z_near, double z_far, const SampleConfig& config, Rng* rng);

RayRender render_ray(const RadianceField& coarse, const RadianceField& fine, const Ray& ray,
                     const Rgb& background, double z_near, double z_far, const SampleConfig& config,
                     Rng* rng = nullptr);

struct RenderedImage {
  Image color;  // 3 channels
  Image depth;  // 1 channel, expected ray distance t (0 = empty)
  Image alpha;  // 1 channel, sum of fine weights
};

// Deterministic render of every pixel; output does not depend on pool size.
RenderedImage render_image(const RadianceField& coarse, const RadianceField& fine, const Camera& camera,
                           const Pose& pose, const Image& background, const SampleConfig& config,
                           ThreadPool* pool = nullptr);

// Depth (distance along each pixel's ray) to canonical-space unit normals, one
// per pixel, from central-difference tangents. Zero depth gives a zero normal.
Image normals_from_depth(const Image& depth, const Camera& camera, const Pose& pose);

// Depth scaled linearly from [z_near, z_far] to [0, 1], for 16-bit export.
Image depth_to_unit(const Image& depth, double z_near, double z_far);
// Normals from [-1, 1] to [0, 1] per channel; zero normals stay black.
Image normals_to_unit(const Image& normals);

}  // namespace dnrf::render
