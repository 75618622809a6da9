#include "dnrf/train.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "dnrf/errors.hpp"
#include "dnrf/metrics.hpp"

namespace dnrf::train {
namespace {

// Stream tags for Rng::derive.
constexpr std::uint64_t kInitStream = 0x1A17;
constexpr std::uint64_t kEpochStream = 0xE90C;
constexpr std::uint64_t kPixelStream = 0x91E1;
constexpr std::uint64_t kSampleStream = 0x5A3F;

template <typename T>
field::Points<T> sample_points(const RayBatch& batch, const std::vector<std::vector<double>>& ts,
                               const render::SceneBounds& bounds, field::Points<T>& dirs) {
  Eigen::Index total = 0;
  for (const auto& t : ts) total += static_cast<Eigen::Index>(t.size());
  field::Points<T> points(3, total);
  dirs.resize(3, total);
  Eigen::Index col = 0;
  for (std::size_t r = 0; r < batch.rays.size(); ++r) {
    const auto& ray = batch.rays[r];
    const Eigen::Matrix<T, 3, 1> dir = ray.dir.cast<T>();
    for (double t : ts[r]) {
      points.col(col) = bounds.normalize(ray.origin + t * ray.dir).cast<T>();
      dirs.col(col) = dir;
      ++col;
    }
  }
  return points;
}

// Composites every ray of one pass, adds the squared error to `loss` and, when
// requested, writes dL/dsigma and dL/drgb for the field backward pass.
template <typename T>
std::vector<render::CompositeResult> composite_pass(const RayBatch& batch, const std::vector<std::vector<double>>& ts,
                                                    const field::FieldBatch<T>& out, double z_far, double& loss,
                                                    nn::Matrix<T>* d_sigma, nn::Matrix<T>* d_rgb) {
  std::vector<render::CompositeResult> results(batch.rays.size());
  if (d_sigma) {
    d_sigma->resize(1, out.sigma.cols());
    d_rgb->resize(3, out.rgb.cols());
  }
  std::size_t off = 0;
  for (std::size_t r = 0; r < batch.rays.size(); ++r) {
    const std::size_t n = ts[r].size();
    const std::span<const T> sigma(out.sigma.data() + off, n);
    const std::span<const T> rgb(out.rgb.data() + 3 * off, 3 * n);
    results[r] = render::composite<T>(ts[r], sigma, rgb, batch.backgrounds[r], z_far);
    render::Rgb d_color{};
    for (int c = 0; c < 3; ++c) {
      const double e = results[r].color[c] - batch.targets[r][c];
      loss += e * e;
      d_color[c] = 2.0 * e;
    }
    if (d_sigma) {
      render::composite_backward<T>(ts[r], sigma, rgb, batch.backgrounds[r], z_far, results[r], d_color,
                                    std::span<T>(d_sigma->data() + off, n), std::span<T>(d_rgb->data() + 3 * off, 3 * n));
    }
    off += n;
  }
  return results;
}

}  // namespace

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ContractViolation(std::string("TrainConfig: ") + what);
  };
  require(rays_per_batch > 0 && n_coarse > 0 && n_fine > 0 && rays_per_chunk > 0, "counts must be positive");
  require(bbox_fraction >= 0.0 && bbox_fraction <= 1.0, "bbox_fraction must lie in [0, 1]");
  require(lr >= 0.0 && (!latent_lr || *latent_lr >= 0.0), "learning rates must be non-negative");
  require(latent_decay >= 0.0, "latent_decay must be non-negative");
  require(iterations >= 0 && checkpoint_interval >= 0, "iteration counts must be non-negative");
  require(train_fraction > 0.0 && train_fraction <= 1.0, "train_fraction must lie in (0, 1]");
}

Preset training_preset(std::string_view name) {
  Preset p;
  if (name == "full") return p;
  if (name == "desk") {
    p.field.backbone_layers = 3;
    p.field.backbone_width = 64;
    p.field.color_layers = 2;
    p.field.color_width = 32;
    p.train.rays_per_batch = 512;
    p.train.n_coarse = 16;
    p.train.n_fine = 16;
    p.train.iterations = 20000;
    p.train.rays_per_chunk = 16;
    return p;
  }
  throw ContractViolation("unknown training preset '" + std::string(name) + "' (expected desk or full)");
}

TrainState init_train_state(const field::FieldConfig& field_config, const data::Dataset& dataset,
                            const TrainConfig& config) {
  config.validate();
  if (field_config.expr_dim != dataset.header.expr_dim) {
    throw ContractViolation("init_train_state: field expects " + std::to_string(field_config.expr_dim) +
                            " expression coefficients, dataset has " + std::to_string(dataset.header.expr_dim));
  }
  TrainState s;
  Rng rng = Rng::derive(config.seed, {kInitStream});
  s.coarse = field::init_field_params<float>(field_config, rng);
  s.fine = field::init_field_params<float>(field_config, rng);
  s.latents.rows = dataset.latent_rows();
  s.latents.dim = field_config.latent_dim;
  s.latents.values.assign(static_cast<std::size_t>(s.latents.rows) * s.latents.dim, 0.0f);

  nn::AdamConfig net{.lr = config.lr};
  nn::AdamConfig latent{.lr = config.latent_lr.value_or(config.lr)};
  s.adam_coarse = nn::AdamState<float>::zeros(s.coarse.parameter_count(), net);
  s.adam_fine = nn::AdamState<float>::zeros(s.fine.parameter_count(), net);
  s.adam_latent.assign(static_cast<std::size_t>(s.latents.rows),
                       nn::AdamState<float>::zeros(static_cast<std::size_t>(s.latents.dim), latent));
  s.seed = config.seed;
  s.bounds = dataset.header.bounds;
  s.samples = {config.n_coarse, config.n_fine};
  return s;
}

std::vector<int> training_subset(const data::Dataset& dataset, double fraction) {
  const std::vector<int> all = dataset.frame_indices(data::Split::kTrain);
  if (all.empty()) throw DataError(DataErrorCode::kBadFrame, "dataset has no training frames");
  const auto m = static_cast<std::int64_t>(all.size());
  const auto k = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::ceil(fraction * m - 1e-9)), 1, m);
  std::vector<int> out;
  for (std::int64_t j = 0; j < k; ++j) out.push_back(all[static_cast<std::size_t>(j * m / k)]);
  return out;
}

int scheduled_frame(std::span<const int> frames, std::uint64_t seed, std::int64_t iteration) {
  if (frames.empty()) throw ContractViolation("scheduled_frame: no frames");
  const auto m = static_cast<std::int64_t>(frames.size());
  std::vector<int> perm(frames.begin(), frames.end());
  Rng rng = Rng::derive(seed, {kEpochStream, static_cast<std::uint64_t>(iteration / m)});
  rng.shuffle(std::span<int>(perm));
  return perm[static_cast<std::size_t>(iteration % m)];
}

std::vector<PixelCoord> sample_ray_batch(const data::FrameRecord& frame, int width, int height, int count,
                                         double bbox_fraction, Rng& rng) {
  const auto& box = frame.bbox;
  int in_box = static_cast<int>(std::ceil(bbox_fraction * count - 1e-9));
  if (box.empty()) {
    spdlog::warn("frame {} has an empty bounding box; sampling rays uniformly", frame.id);
    in_box = 0;
  }
  std::vector<PixelCoord> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    if (i < in_box) {
      out.push_back({static_cast<int>(rng.uniform_int(box.row0, box.row1)),
                     static_cast<int>(rng.uniform_int(box.col0, box.col1))});
    } else {
      out.push_back({static_cast<int>(rng.uniform_int(0, height)), static_cast<int>(rng.uniform_int(0, width))});
    }
  }
  return out;
}

template <typename T>
BatchGradients<T> zero_gradients(const field::FieldParams<T>& coarse, const field::FieldParams<T>& fine) {
  BatchGradients<T> g;
  g.coarse = field::zeros_like(coarse);
  g.fine = field::zeros_like(fine);
  g.delta = nn::Vector<T>::Zero(coarse.config.expr_dim);
  g.gamma = nn::Vector<T>::Zero(coarse.config.latent_dim);
  return g;
}

template <typename T>
PhotometricLoss photometric_loss(const field::FieldParams<T>& coarse, const field::FieldParams<T>& fine,
                                 const render::SceneBounds& bounds, std::span<const T> delta,
                                 std::span<const T> gamma, double z_near, double z_far, int n_fine,
                                 RayBatch& batch, Rng* resample_rng, BatchGradients<T>* grads) {
  const std::size_t count = batch.rays.size();
  if (batch.targets.size() != count || batch.backgrounds.size() != count || batch.coarse_ts.size() != count) {
    throw ContractViolation("photometric_loss: ray batch fields disagree in length");
  }
  PhotometricLoss loss;
  if (count == 0) return loss;

  field::ConditioningGrad<T> cond;
  nn::Matrix<T> d_sigma;
  nn::Matrix<T> d_rgb;
  field::Points<T> dirs;

  std::vector<render::CompositeResult> coarse_results;
  {
    field::FieldTape<T> tape;
    const auto points = sample_points<T>(batch, batch.coarse_ts, bounds, dirs);
    const auto out = field::field_forward_batch(coarse, points, dirs, delta, gamma, grads ? &tape : nullptr);
    coarse_results = composite_pass(batch, batch.coarse_ts, out, z_far, loss.coarse, grads ? &d_sigma : nullptr,
                                    grads ? &d_rgb : nullptr);
    if (grads) field::field_backward(coarse, tape, d_sigma, d_rgb, grads->coarse, cond);
  }

  if (batch.fine_ts.empty()) {
    batch.fine_ts.resize(count);
    for (std::size_t r = 0; r < count; ++r) {
      const auto extra = render::importance_resample(batch.coarse_ts[r], coarse_results[r].weights, z_near, z_far,
                                                     n_fine, resample_rng);
      batch.fine_ts[r] = render::merge_sorted(batch.coarse_ts[r], extra);
    }
  }
  if (batch.fine_ts.size() != count) throw ContractViolation("photometric_loss: fine sample list has wrong length");

  {
    field::FieldTape<T> tape;
    const auto points = sample_points<T>(batch, batch.fine_ts, bounds, dirs);
    const auto out = field::field_forward_batch(fine, points, dirs, delta, gamma, grads ? &tape : nullptr);
    composite_pass(batch, batch.fine_ts, out, z_far, loss.fine, grads ? &d_sigma : nullptr, grads ? &d_rgb : nullptr);
    if (grads) field::field_backward(fine, tape, d_sigma, d_rgb, grads->fine, cond);
  }

  if (grads) {
    if (grads->delta.size() != cond.delta.size()) grads->delta = nn::Vector<T>::Zero(cond.delta.size());
    if (grads->gamma.size() != cond.gamma.size()) grads->gamma = nn::Vector<T>::Zero(cond.gamma.size());
    grads->delta += cond.delta;
    grads->gamma += cond.gamma;
  }
  return loss;
}

LossReport compute_loss(const TrainState& state, const data::Dataset& dataset, int frame_index,
                        std::span<const PixelCoord> pixels, const TrainConfig& config, ThreadPool* pool,
                        StepGradients& grads) {
  const auto& frame = dataset.frames.at(static_cast<std::size_t>(frame_index));
  const auto& camera = dataset.header.camera;
  const int dim = state.latents.dim;
  std::vector<float> gamma(static_cast<std::size_t>(dim), 0.0f);
  if (config.use_latent && frame.latent_index >= 0) {
    const auto row = state.latents.row(frame.latent_index);
    std::copy(row.begin(), row.end(), gamma.begin());
  }

  const std::size_t n = pixels.size();
  const std::size_t chunk = static_cast<std::size_t>(config.rays_per_chunk);
  const std::size_t chunks = (n + chunk - 1) / chunk;
  std::vector<BatchGradients<float>> partial(chunks);
  std::vector<PhotometricLoss> losses(chunks);

  auto work = [&](std::size_t k) {
    RayBatch batch;
    Rng rng = Rng::derive(state.seed, {kSampleStream, static_cast<std::uint64_t>(state.iteration), k});
    for (std::size_t i = k * chunk; i < std::min(n, (k + 1) * chunk); ++i) {
      const auto [row, col] = pixels[i];
      batch.rays.push_back(render::generate_ray(camera, row, col, frame.pose));
      batch.targets.push_back({frame.image.at(row, col, 0), frame.image.at(row, col, 1), frame.image.at(row, col, 2)});
      batch.backgrounds.push_back(
          {dataset.background.at(row, col, 0), dataset.background.at(row, col, 1), dataset.background.at(row, col, 2)});
      batch.coarse_ts.push_back(render::sample_stratified(camera.z_near, camera.z_far, config.n_coarse, &rng));
    }
    partial[k] = zero_gradients(state.coarse, state.fine);
    losses[k] = photometric_loss<float>(state.coarse, state.fine, state.bounds, frame.expression, gamma,
                                        camera.z_near, camera.z_far, config.n_fine, batch, &rng, &partial[k]);
  };
  if (pool) {
    pool->parallel_for(chunks, work);
  } else {
    for (std::size_t k = 0; k < chunks; ++k) work(k);
  }

  LossReport report;
  report.iteration = state.iteration;
  report.frame = frame_index;
  grads.coarse = field::zeros_like(state.coarse);
  grads.fine = field::zeros_like(state.fine);
  nn::Vector<float> d_gamma = nn::Vector<float>::Zero(dim);
  for (std::size_t k = 0; k < chunks; ++k) {
    report.loss_coarse += losses[k].coarse;
    report.loss_fine += losses[k].fine;
    field::accumulate(grads.coarse, partial[k].coarse);
    field::accumulate(grads.fine, partial[k].fine);
    d_gamma += partial[k].gamma;
  }

  grads.latent.assign(static_cast<std::size_t>(dim), 0.0f);
  if (config.use_latent) {
    double norm2 = 0.0;
    for (float g : gamma) norm2 += static_cast<double>(g) * g;
    report.loss_latent = config.latent_decay * norm2;
    for (int i = 0; i < dim; ++i) {
      grads.latent[i] = static_cast<float>(d_gamma(i) + 2.0 * config.latent_decay * gamma[i]);
    }
  }
  return report;
}

LossReport train_step(TrainState& state, const data::Dataset& dataset, const TrainConfig& config, ThreadPool* pool) {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<int> frames = training_subset(dataset, config.train_fraction);
  const int frame_index = scheduled_frame(frames, state.seed, state.iteration);
  const auto& frame = dataset.frames[static_cast<std::size_t>(frame_index)];

  Rng pixel_rng = Rng::derive(state.seed, {kPixelStream, static_cast<std::uint64_t>(state.iteration)});
  const auto pixels = sample_ray_batch(frame, dataset.header.camera.width, dataset.header.camera.height,
                                       config.rays_per_batch, config.bbox_fraction, pixel_rng);
  StepGradients grads;
  LossReport report;
  try {
    report = compute_loss(state, dataset, frame_index, pixels, config, pool, grads);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " at iteration " + std::to_string(state.iteration) + " (frame " +
                       std::to_string(frame.id) + ")");
  }
  if (!std::isfinite(report.total())) {
    throw NumericError("non-finite loss at iteration " + std::to_string(state.iteration) + " (frame " +
                       std::to_string(frame.id) + ")");
  }

  auto step_group = [](const char* name, field::FieldParams<float>& params, const field::FieldParams<float>& g,
                       nn::AdamState<float>& adam) {
    const auto p = params.slots();
    const auto gs = g.slots();
    nn::adam_step<float>(name, p, gs, adam);
  };
  step_group("coarse", state.coarse, grads.coarse, state.adam_coarse);
  step_group("fine", state.fine, grads.fine, state.adam_fine);
  if (config.use_latent && frame.latent_index >= 0 && state.latents.dim > 0) {
    const std::vector<nn::ParamSlot<float>> p{{"latent." + std::to_string(frame.latent_index),
                                               state.latents.row(frame.latent_index)}};
    const std::vector<nn::ParamSlot<const float>> g{{"latent." + std::to_string(frame.latent_index), grads.latent}};
    nn::adam_step<float>("latent", p, g, state.adam_latent[static_cast<std::size_t>(frame.latent_index)]);
  }
  state.iteration += 1;
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return report;
}

void run_training(TrainState& state, const data::Dataset& dataset, const TrainConfig& config, ThreadPool* pool,
                  const std::function<void(const TrainState&, const LossReport&)>& on_step) {
  config.validate();
  while (state.iteration < config.iterations) {
    const LossReport report = train_step(state, dataset, config, pool);
    if (on_step) on_step(state, report);
  }
}

std::span<const float> latent_for(const TrainState& state, const data::Dataset& dataset, int frame_index,
                                  LatentPolicy policy) {
  const auto& frame = dataset.frames.at(static_cast<std::size_t>(frame_index));
  int row = frame.latent_index;
  if (policy == LatentPolicy::kFirstTrainFrame || row < 0 || row >= state.latents.rows) {
    row = dataset.frames[static_cast<std::size_t>(dataset.first_train_frame())].latent_index;
  }
  if (row < 0 || row >= state.latents.rows) return {};
  return state.latents.row(row);
}

render::RenderedImage render_with_state(const TrainState& state, const render::Camera& camera,
                                        const render::Pose& pose, const Image& background,
                                        std::span<const float> expression, std::span<const float> latent,
                                        ThreadPool* pool) {
  std::vector<float> gamma(latent.begin(), latent.end());
  gamma.resize(static_cast<std::size_t>(state.field_config().latent_dim), 0.0f);
  const render::MlpField coarse(state.coarse, state.bounds, expression, gamma);
  const render::MlpField fine(state.fine, state.bounds, expression, gamma);
  return render::render_image(coarse, fine, camera, pose, background, state.samples, pool);
}

EvalResult evaluate(const TrainState& state, const data::Dataset& dataset, data::Split split, LatentPolicy policy,
                    ThreadPool* pool) {
  const auto indices = dataset.frame_indices(split);
  if (indices.empty()) {
    throw DataError(DataErrorCode::kBadFrame, "no frames in the " + std::string(data::to_string(split)) + " split");
  }
  EvalResult result;
  for (int i : indices) {
    const auto& frame = dataset.frames[static_cast<std::size_t>(i)];
    const auto rendered = render_with_state(state, dataset.header.camera, frame.pose, dataset.background,
                                            frame.expression, latent_for(state, dataset, i, policy), pool);
    FrameMetrics m;
    m.frame = frame.id;
    m.l1 = l1_distance(rendered.color, frame.image);
    m.psnr = psnr(rendered.color, frame.image);
    m.ssim = ssim(rendered.color, frame.image);
    result.l1 += m.l1;
    result.psnr += m.psnr;
    result.ssim += m.ssim;
    result.frames.push_back(m);
  }
  const auto n = static_cast<double>(indices.size());
  result.l1 /= n;
  result.psnr /= n;
  result.ssim /= n;
  return result;
}

template BatchGradients<float> zero_gradients(const field::FieldParams<float>&, const field::FieldParams<float>&);
template BatchGradients<double> zero_gradients(const field::FieldParams<double>&, const field::FieldParams<double>&);
template PhotometricLoss photometric_loss(const field::FieldParams<float>&, const field::FieldParams<float>&,
                                          const render::SceneBounds&, std::span<const float>, std::span<const float>,
                                          double, double, int, RayBatch&, Rng*, BatchGradients<float>*);
template PhotometricLoss photometric_loss(const field::FieldParams<double>&, const field::FieldParams<double>&,
                                          const render::SceneBounds&, std::span<const double>,
                                          std::span<const double>, double, double, int, RayBatch&, Rng*,
                                          BatchGradients<double>*);

}  // namespace dnrf::train
