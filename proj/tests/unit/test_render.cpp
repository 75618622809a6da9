#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "dnrf/metrics.hpp"
#include "dnrf/render.hpp"
#include "dnrf/synthetic.hpp"
#include "oracles.hpp"

using namespace dnrf;
using namespace dnrf::render;

namespace {

Camera test_camera(int w = 8, int h = 6) {
  Camera c;
  c.focal = 10.0;
  c.width = w;
  c.height = h;
  c.cx = 0.5 * w;
  c.cy = 0.5 * h;
  c.z_near = 0.5;
  c.z_far = 4.0;
  return c;
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized().toRotationMatrix();
}

// The analytic field seen through a rigid motion: f'(p) = f(Q^-1 p).
class MovedField final : public RadianceField {
 public:
  MovedField(const RadianceField& base, const Pose& q) : base_(base), inv_(q.inverse()) {}
  void evaluate(const Eigen::Matrix3Xd& points, const Eigen::Matrix3Xd& dirs, Eigen::VectorXd& sigma,
                Eigen::Matrix3Xd& rgb) const override {
    Eigen::Matrix3Xd p(3, points.cols()), d(3, dirs.cols());
    for (Eigen::Index j = 0; j < points.cols(); ++j) {
      p.col(j) = inv_.apply_point(points.col(j));
      d.col(j) = inv_.apply_direction(dirs.col(j));
    }
    base_.evaluate(p, d, sigma, rgb);
  }

 private:
  const RadianceField& base_;
  Pose inv_;
};

class EmptyField final : public RadianceField {
 public:
  void evaluate(const Eigen::Matrix3Xd& points, const Eigen::Matrix3Xd&, Eigen::VectorXd& sigma,
                Eigen::Matrix3Xd& rgb) const override {
    sigma = Eigen::VectorXd::Zero(points.cols());
    rgb = Eigen::Matrix3Xd::Constant(3, points.cols(), 0.7);
  }
};

struct RandomRay {
  std::vector<double> ts, sigma, rgb;
  double z_far;
};

RandomRay random_ray(Rng& rng, int n) {
  RandomRay r;
  double t = rng.uniform(0.1, 1.0);
  for (int i = 0; i < n; ++i) {
    r.ts.push_back(t);
    t += rng.uniform(0.0, 0.3);
    r.sigma.push_back(rng.uniform(0.0, 100.0));
    for (int c = 0; c < 3; ++c) r.rgb.push_back(rng.uniform());
  }
  r.z_far = t;
  return r;
}

}  // namespace

TEST_CASE("rays through the principal point and under translation") {
  const Camera cam = test_camera(8, 6);
  const Ray axis = generate_ray(cam, 2, 3, Pose::identity());
  // pixel center (3.5, 2.5) is offset from (4, 3); use an odd camera for the exact axis
  Camera odd = cam;
  odd.cx = 3.5;
  odd.cy = 2.5;
  const Ray center = generate_ray(odd, 2, 3, Pose::identity());
  CHECK(center.dir.isApprox(Vec3(0, 0, -1), 1e-15));
  CHECK(axis.origin == Vec3::Zero());
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c) {
      const Ray ray = generate_ray(cam, r, c, Pose::identity());
      CHECK(ray.origin == Vec3::Zero());
      CHECK(std::abs(ray.dir.norm() - 1.0) < 1e-6);
    }

  const Vec3 t(0.3, -1.2, 2.5);
  const Pose shifted = Pose::translation(t);
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c) {
      const Ray a = generate_ray(cam, r, c, Pose::identity());
      const Ray b = generate_ray(cam, r, c, shifted);
      CHECK(b.origin == t);
      CHECK((a.dir - b.dir).norm() < 1e-15);
    }
  CHECK_THROWS_AS(generate_ray(cam, 6, 0, Pose::identity()), ContractViolation);
  CHECK_THROWS_AS(generate_ray(cam, 0, -1, Pose::identity()), ContractViolation);
}

TEST_CASE("pose rigidity check") {
  Rng rng(1);
  const Pose p = Pose::rotation(random_rotation(rng)).after(Pose::translation(Vec3(1, 2, 3)));
  CHECK(p.is_rigid());
  CHECK(p.after(p.inverse()).matrix.isApprox(Eigen::Matrix4d::Identity(), 1e-12));
  Pose bad = p;
  bad.matrix(0, 0) += 0.01;
  CHECK_FALSE(bad.is_rigid());
  Pose mirror = Pose::rotation(Eigen::Vector3d(1, 1, -1).asDiagonal());
  CHECK_FALSE(mirror.is_rigid());
}

TEST_CASE("stratified sampling") {
  CHECK(sample_stratified(1.0, 3.0, 1, nullptr) == std::vector<double>{2.0});
  CHECK(sample_stratified(0.0, 1.0, 4, nullptr) == std::vector<double>{0.125, 0.375, 0.625, 0.875});
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    Rng rng(seed);
    const auto ts = sample_stratified(2.0, 6.0, 64, &rng);
    bool ok = ts.size() == 64;
    for (int i = 0; i < 64 && ok; ++i) {
      const double lo = 2.0 + 4.0 * i / 64.0, hi = 2.0 + 4.0 * (i + 1) / 64.0;
      ok = ts[static_cast<std::size_t>(i)] >= lo && ts[static_cast<std::size_t>(i)] < hi &&
           (i == 0 || ts[static_cast<std::size_t>(i)] > ts[static_cast<std::size_t>(i) - 1]);
    }
    if (!ok) {
      FAIL("seed " << seed);
    }
  }
}

TEST_CASE("composite hand examples") {
  const Rgb bg{0.1, 0.2, 0.3};
  SUBCASE("empty field shows the background") {
    const std::vector<double> ts{0.5, 1.0, 2.0}, sigma(3, 0.0), rgb(9, 0.8);
    const auto r = composite<double>(ts, sigma, rgb, bg, 3.0);
    CHECK(r.color == bg);
    CHECK(r.residual_transmittance == 1.0);
    CHECK(r.depth == 0.0);
  }
  SUBCASE("two unit samples") {
    const std::vector<double> ts{0.0, 1.0}, sigma{1.0, 1.0}, rgb{1, 0, 0, 0, 1, 0};
    const auto r = composite<double>(ts, sigma, rgb, {0, 0, 1}, 2.0);
    const double e1 = std::exp(-1.0);
    CHECK(r.weights[0] == doctest::Approx(1 - e1).epsilon(1e-14));
    CHECK(r.weights[1] == doctest::Approx(e1 * (1 - e1)).epsilon(1e-14));
    CHECK(r.residual_transmittance == doctest::Approx(std::exp(-2.0)).epsilon(1e-14));
    CHECK(r.color[0] == doctest::Approx(0.63212).epsilon(1e-5));
    CHECK(r.color[1] == doctest::Approx(0.23254).epsilon(1e-4));
    CHECK(r.color[2] == doctest::Approx(0.13534).epsilon(1e-4));
  }
  SUBCASE("homogeneous medium") {
    for (int n : {1, 2, 7, 64, 333}) {
      Rng rng(static_cast<std::uint64_t>(n));
      std::vector<double> ts{0.0};
      for (int i = 1; i < n; ++i) ts.push_back(rng.uniform());
      std::sort(ts.begin(), ts.end());
      const std::vector<double> sigma(static_cast<std::size_t>(n), 2.0), rgb(3 * static_cast<std::size_t>(n), 0.5);
      const auto r = composite<double>(ts, sigma, rgb, bg, 1.0);
      CHECK(std::abs(r.residual_transmittance - std::exp(-2.0)) < 1e-12);
    }
  }
  SUBCASE("bad input") {
    const std::vector<double> ts{1.0, 0.5}, sigma{1.0, 1.0}, rgb(6, 0.5);
    CHECK_THROWS_AS(composite<double>(ts, sigma, rgb, bg, 2.0), ContractViolation);
    const std::vector<double> ts2{0.5, 1.0}, neg{1.0, -1.0};
    CHECK_THROWS_AS(composite<double>(ts2, neg, rgb, bg, 2.0), ContractViolation);
    const std::vector<double> nan{1.0, std::numeric_limits<double>::quiet_NaN()};
    CHECK_THROWS_AS(composite<double>(ts2, nan, rgb, bg, 2.0), NumericError);
  }
}

TEST_CASE("composite conservation, monotone transmittance, opaque front") {
  Rng rng(77);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto ray = random_ray(rng, static_cast<int>(rng.uniform_int(1, 40)));
    const auto r = composite<double>(ray.ts, ray.sigma, ray.rgb, {0.2, 0.4, 0.6}, ray.z_far);
    double sum = 0.0, t = 1.0;
    for (double w : r.weights) {
      CHECK(w >= 0.0);
      const double next = t - w;
      CHECK(next <= t);
      t = next;
      sum += w;
    }
    CHECK(std::abs(sum + r.residual_transmittance - 1.0) < 1e-9);
  }
  const std::vector<double> ts{1.0, 2.0, 3.0}, sigma{1e6, 5.0, 5.0}, rgb{0.9, 0.1, 0.4, 0, 0, 0, 1, 1, 1};
  const auto r = composite<double>(ts, sigma, rgb, {0, 1, 0}, 4.0);
  CHECK(std::abs(r.color[0] - 0.9) < 1e-6);
  CHECK(std::abs(r.color[1] - 0.1) < 1e-6);
  CHECK(std::abs(r.color[2] - 0.4) < 1e-6);
}

TEST_CASE("composite_backward matches central differences") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto ray = random_ray(rng, 12);
    for (auto& s : ray.sigma) s = rng.uniform(0.0, 5.0);
    const Rgb bg{rng.uniform(), rng.uniform(), rng.uniform()};
    const Rgb g{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto loss = [&] {
      const auto r = composite<double>(ray.ts, ray.sigma, ray.rgb, bg, ray.z_far);
      return r.color[0] * g[0] + r.color[1] * g[1] + r.color[2] * g[2];
    };
    const auto r = composite<double>(ray.ts, ray.sigma, ray.rgb, bg, ray.z_far);
    std::vector<double> ds(12), dc(36);
    composite_backward<double>(ray.ts, ray.sigma, ray.rgb, bg, ray.z_far, r, g, ds, dc);
    oracle::FdResult fd;
    oracle::fd_compare(ray.sigma, ds, loss, "sigma", fd, 1e-6);
    oracle::fd_compare(ray.rgb, dc, loss, "rgb", fd, 1e-6);
    INFO(fd.worst);
    CHECK(fd.max_rel_error < 1e-4);
  }
}

TEST_CASE("importance resampling of a flat pdf is uniform") {
  const auto ts = sample_stratified(2.0, 6.0, 64, nullptr);
  const std::vector<double> w(64, 0.3);
  std::vector<double> pooled;
  Rng rng(8);
  while (pooled.size() < 100000) {
    const auto s = importance_resample(ts, w, 2.0, 6.0, 64, &rng);
    CHECK(std::is_sorted(s.begin(), s.end()));
    pooled.insert(pooled.end(), s.begin(), s.end());
  }
  const double ks = oracle::ks_statistic(pooled, [](double t) { return std::clamp((t - 2.0) / 4.0, 0.0, 1.0); });
  CHECK(ks < 0.01);
}

TEST_CASE("importance resampling concentrates on a single heavy bin") {
  const auto ts = sample_stratified(0.0, 1.0, 64, nullptr);
  std::vector<double> w(64, 0.0);
  w[20] = 1.0;
  const auto edges = sample_bin_edges(ts, 0.0, 1.0);
  std::size_t inside = 0, total = 0;
  Rng rng(9);
  while (total < 100000) {
    for (double t : importance_resample(ts, w, 0.0, 1.0, 64, &rng)) {
      ++total;
      inside += (t >= edges[20] && t <= edges[21]) ? 1 : 0;
    }
  }
  CHECK(static_cast<double>(inside) / static_cast<double>(total) >= 0.99);
}

TEST_CASE("importance resampling matches the floored pdf") {
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const auto ts = sample_stratified(1.0, 3.0, 32, &rng);
    std::vector<double> w(32);
    for (auto& v : w) v = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
    const auto edges = sample_bin_edges(ts, 1.0, 3.0);
    std::vector<double> mass(32);
    for (int i = 0; i < 32; ++i) mass[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] + kImportanceFloor;
    const double total_mass = std::accumulate(mass.begin(), mass.end(), 0.0);

    std::vector<double> pooled;
    std::vector<double> counts(32, 0.0);
    while (pooled.size() < 100000) {
      for (double t : importance_resample(ts, w, 1.0, 3.0, 64, &rng)) {
        pooled.push_back(t);
        const auto bin = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), t) - edges.begin()) - 1;
        counts[std::min<std::size_t>(bin, 31)] += 1.0;
      }
    }
    const double n = static_cast<double>(pooled.size());
    CHECK(oracle::ks_statistic(pooled, oracle::piecewise_cdf(edges, mass)) < 0.01);
    for (std::size_t i = 0; i < 32; ++i) {
      const double p = mass[i] / total_mass;
      const double sd = std::sqrt(n * p * (1 - p));
      CHECK(std::abs(counts[i] - n * p) <= 3.0 * sd + 1.0);
    }
  }
}

TEST_CASE("render_ray with an empty field shows the background") {
  field::FieldConfig c;
  c.expr_dim = 2;
  c.latent_dim = 2;
  c.backbone_layers = 2;
  c.backbone_width = 8;
  c.color_layers = 2;
  c.color_width = 8;
  const auto params = field::make_field_params<float>(c);
  const std::vector<float> delta(2, 0.1f), gamma(2, 0.0f);
  const MlpField f(params, {}, delta, gamma);
  const Ray ray = generate_ray(test_camera(), 2, 2, Pose::translation(Vec3(0, 0, 2)));
  const Rgb bg{0.25, 0.5, 0.75};
  const auto out = render_ray(f, f, ray, bg, 0.5, 4.0, {});
  CHECK(out.coarse.color == bg);
  CHECK(out.fine.color == bg);
  CHECK(out.coarse.weights.size() == 64);
  CHECK(out.fine.weights.size() == 128);
  CHECK(out.fine_ts.size() == 128);
  CHECK(std::is_sorted(out.fine_ts.begin(), out.fine_ts.end()));
}

TEST_CASE("analytic field through render_ray and render_image agrees with the oracle") {
  const auto spec = data::synthetic_preset("blob");
  const data::AnalyticField field(spec, 0.2);
  const Camera cam = data::synthetic_camera(spec);
  const Pose pose = data::orbit_pose(spec, 10.0);
  const Image bg = data::synthetic_background(cam.width, cam.height);
  const auto oracle = data::oracle_render(field, cam, pose, bg, 1024);

  for (auto [row, col] : {std::pair{24, 24}, {20, 30}, {10, 12}, {30, 16}}) {
    const Ray ray = generate_ray(cam, row, col, pose);
    const Rgb b{bg.at(row, col, 0), bg.at(row, col, 1), bg.at(row, col, 2)};
    const auto out = render_ray(field, field, ray, b, cam.z_near, cam.z_far, {});
    for (int c = 0; c < 3; ++c) CHECK(std::abs(out.fine.color[static_cast<std::size_t>(c)] - oracle.color.at(row, col, c)) < 1.0 / 64.0);
  }

  const auto rendered = render_image(field, field, cam, pose, bg, {64, 64});
  CHECK(train::psnr(rendered.color, oracle.color) > 40.0);
  const auto matched = data::oracle_render(field, cam, pose, bg, 128);
  CHECK(train::psnr(rendered.color, matched.color) > 40.0);
}

TEST_CASE("render_image: 1x1, empty field, thread independence") {
  const auto spec = data::synthetic_preset("blob");
  const data::AnalyticField field(spec, -0.1);
  Camera one = data::synthetic_camera(spec).resized(1, 1);
  const Pose pose = data::orbit_pose(spec, 0.0);
  Image bg1(1, 1, 3, 0.4f);
  const auto img = render_image(field, field, one, pose, bg1, {32, 32});
  const auto ray = render_ray(field, field, generate_ray(one, 0, 0, pose), {0.4f, 0.4f, 0.4f}, one.z_near, one.z_far,
                              {32, 32});
  for (int c = 0; c < 3; ++c) CHECK(img.color.at(0, 0, c) == static_cast<float>(ray.fine.color[static_cast<std::size_t>(c)]));
  CHECK(img.depth.at(0, 0, 0) == static_cast<float>(ray.fine.depth));

  const Camera cam = data::synthetic_camera(spec).resized(24, 24);
  const Image bg = data::synthetic_background(24, 24);
  const EmptyField empty;
  const auto blank = render_image(empty, empty, cam, pose, bg, {16, 16});
  CHECK(quantize8(blank.color) == bg);

  ThreadPool p1(1), p3(3);
  const auto a = render_image(field, field, cam, pose, bg, {16, 16}, &p1);
  const auto b = render_image(field, field, cam, pose, bg, {16, 16}, &p3);
  const auto c = render_image(field, field, cam, pose, bg, {16, 16}, nullptr);
  CHECK(a.color == b.color);
  CHECK(a.depth == b.depth);
  CHECK(a.alpha == c.alpha);
  CHECK(a.color == c.color);

  CHECK_THROWS_AS(render_image(field, field, cam, pose, bg1, {16, 16}), ContractViolation);
}

TEST_CASE("quadrature converges on the analytic scene") {
  auto spec = data::synthetic_preset("blob");
  spec.width = spec.height = 24;
  spec.focal = 30.0;
  const data::AnalyticField field(spec, 0.0);
  const Camera cam = data::synthetic_camera(spec);
  const Pose pose = data::orbit_pose(spec, 5.0);
  const Image bg = data::synthetic_background(24, 24);
  auto mean_abs = [](const Image& a, const Image& b) { return train::l1_distance(a, b); };
  Image previous = data::oracle_render(field, cam, pose, bg, 64).color;
  double last_change = std::numeric_limits<double>::infinity();
  for (int n : {128, 256, 512, 1024}) {
    const Image next = data::oracle_render(field, cam, pose, bg, n).color;
    const double change = mean_abs(previous, next);
    CHECK(change < last_change);
    last_change = change;
    previous = next;
  }
}

TEST_CASE("rigid motion of camera and field together leaves the image unchanged") {
  const auto spec = data::synthetic_preset("blob");
  const data::AnalyticField field(spec, 0.3);
  const Camera cam = data::synthetic_camera(spec).resized(24, 24);
  const Image bg = data::synthetic_background(24, 24);
  Rng rng(21);
  for (int trial = 0; trial < 3; ++trial) {
    const Pose p = data::orbit_pose(spec, rng.uniform(-20, 20), rng.uniform(-10, 10));
    const Pose q = Pose::rotation(random_rotation(rng)).after(Pose::translation(Vec3(rng.uniform(-1, 1), 0.5, -0.2)));
    const MovedField moved(field, q);
    const auto a = render_image(field, field, cam, p, bg, {32, 32});
    const auto b = render_image(moved, moved, cam, q.after(p), bg, {32, 32});
    double worst = 0.0;
    for (std::size_t i = 0; i < a.color.data.size(); ++i)
      worst = std::max(worst, static_cast<double>(std::abs(a.color.data[i] - b.color.data[i])));
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("normals from depth") {
  const Camera cam = test_camera(16, 12);
  auto dir = [&](int r, int c) {
    return Vec3((c + 0.5 - cam.cx) / cam.focal, -(r + 0.5 - cam.cy) / cam.focal, -1.0).normalized();
  };
  auto plane_depth = [&](const Vec3& n, double offset) {
    // points x with n.x = offset, measured as distance along each ray
    Image depth(cam.width, cam.height, 1);
    for (int r = 0; r < cam.height; ++r)
      for (int c = 0; c < cam.width; ++c) depth.at(r, c, 0) = static_cast<float>(offset / n.dot(dir(r, c)));
    return depth;
  };

  SUBCASE("fronto-parallel plane") {
    const auto normals = normals_from_depth(plane_depth(Vec3(0, 0, -1), 2.0), cam, Pose::identity());
    for (int r = 1; r + 1 < cam.height; ++r)
      for (int c = 1; c + 1 < cam.width; ++c) {
        CHECK(std::abs(normals.at(r, c, 0)) < 1e-3);
        CHECK(std::abs(normals.at(r, c, 1)) < 1e-3);
        CHECK(std::abs(normals.at(r, c, 2) - 1.0) < 1e-3);
      }
  }
  SUBCASE("tilted ramp, also under a pose") {
    const Vec3 n = Vec3(0.3, -0.2, -1.0).normalized();
    Rng rng(4);
    const Pose pose = Pose::rotation(random_rotation(rng)).after(Pose::translation(Vec3(0.1, 0.2, 0.3)));
    for (const Pose& p : {Pose::identity(), pose}) {
      const auto normals = normals_from_depth(plane_depth(n, 2.0), cam, p);
      const Vec3 expect = -(p.rotation_part() * n);  // facing the camera
      for (int r = 1; r + 1 < cam.height; ++r)
        for (int c = 1; c + 1 < cam.width; ++c)
          for (int k = 0; k < 3; ++k) CHECK(std::abs(normals.at(r, c, k) - expect[k]) < 1e-3);
    }
  }
  SUBCASE("no depth, no normals") {
    const auto normals = normals_from_depth(Image(cam.width, cam.height, 1), cam, Pose::identity());
    for (float v : normals.data) CHECK(v == 0.0f);
  }
}
