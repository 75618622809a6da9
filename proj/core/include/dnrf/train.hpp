#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dnrf/dataset.hpp"
#include "dnrf/field.hpp"
#include "dnrf/nn.hpp"
#include "dnrf/parallel.hpp"
#include "dnrf/render.hpp"

namespace dnrf::train {

struct TrainConfig {
  int rays_per_batch = 2048;
  int n_coarse = 64;
  int n_fine = 64;
  double lr = 5e-4;
  std::optional<double> latent_lr;  // unset: same as lr
  double latent_decay = 0.05;       // lambda on ||gamma||^2
  double bbox_fraction = 0.95;
  std::int64_t iterations = 400000;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_interval = 0;  // 0: only at the end
  bool use_latent = true;                // false keeps every latent code at zero
  double train_fraction = 1.0;           // evenly spaced subset of the training frames
  int rays_per_chunk = 64;               // fixed work unit; results do not depend on thread count

  void validate() const;
};

struct Preset {
  field::FieldConfig field;
  TrainConfig train;
};

// "full": full-size network, 64+64 samples, 2048 rays, 400k iterations.
// "desk": 3x64 backbone, 2x32 color branch, 16+16 samples, 512 rays, 20k iterations.
Preset training_preset(std::string_view name);

struct LatentTable {
  int rows = 0;
  int dim = 0;
  std::vector<float> values;  // row-major

  std::span<float> row(int i) { return {values.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)}; }
  std::span<const float> row(int i) const {
    return {values.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
  bool operator==(const LatentTable&) const = default;
};

struct TrainState {
  field::FieldParams<float> coarse;
  field::FieldParams<float> fine;
  LatentTable latents;
  nn::AdamState<float> adam_coarse;
  nn::AdamState<float> adam_fine;
  std::vector<nn::AdamState<float>> adam_latent;  // one per latent row, so untouched rows never move
  std::int64_t iteration = 0;
  std::uint64_t seed = 0;
  render::SceneBounds bounds;
  render::SampleConfig samples;
  std::string dataset_path;

  const field::FieldConfig& field_config() const { return coarse.config; }
  bool operator==(const TrainState&) const = default;
};

// Fresh networks (uniform init from `config.seed`), zero latent codes, zero moments.
TrainState init_train_state(const field::FieldConfig& field_config, const data::Dataset& dataset,
                            const TrainConfig& config);

// Training frames used under `fraction`: evenly spaced, always including the first.
std::vector<int> training_subset(const data::Dataset& dataset, double fraction);

// Frame for `iteration`: a per-epoch permutation of `frames` keyed by seed.
int scheduled_frame(std::span<const int> frames, std::uint64_t seed, std::int64_t iteration);

struct PixelCoord {
  int row = 0;
  int col = 0;
  bool operator==(const PixelCoord&) const = default;
};

// ceil(bbox_fraction * count) pixels uniform in the frame's box, the rest
// uniform over the image. An empty box falls back to all-uniform with a warning.
std::vector<PixelCoord> sample_ray_batch(const data::FrameRecord& frame, int width, int height, int count,
                                         double bbox_fraction, Rng& rng);

// Rays of one frame plus their sample positions. fine_ts is filled on first
// evaluation and reused afterwards (resampling is outside the gradient).
struct RayBatch {
  std::vector<render::Ray> rays;
  std::vector<render::Rgb> targets;
  std::vector<render::Rgb> backgrounds;
  std::vector<std::vector<double>> coarse_ts;
  std::vector<std::vector<double>> fine_ts;
};

template <typename T>
struct BatchGradients {
  field::FieldParams<T> coarse;
  field::FieldParams<T> fine;
  nn::Vector<T> delta;
  nn::Vector<T> gamma;
};

template <typename T>
BatchGradients<T> zero_gradients(const field::FieldParams<T>& coarse, const field::FieldParams<T>& fine);

struct PhotometricLoss {
  double coarse = 0.0;  // sum over rays of ||C_coarse - I||^2
  double fine = 0.0;
};

// Both passes of every ray in `batch`, with gradients when `grads` is given.
template <typename T>
PhotometricLoss photometric_loss(const field::FieldParams<T>& coarse, const field::FieldParams<T>& fine,
                                 const render::SceneBounds& bounds, std::span<const T> delta,
                                 std::span<const T> gamma, double z_near, double z_far, int n_fine,
                                 RayBatch& batch, Rng* resample_rng, BatchGradients<T>* grads);

struct LossReport {
  std::int64_t iteration = 0;
  int frame = 0;
  double loss_coarse = 0.0;
  double loss_fine = 0.0;
  double loss_latent = 0.0;
  double wall_ms = 0.0;

  double total() const { return loss_coarse + loss_fine + loss_latent; }
};

struct StepGradients {
  field::FieldParams<float> coarse;
  field::FieldParams<float> fine;
  std::vector<float> latent;  // gradient of the frame's latent row, decay included
};

// Loss and gradients for one frame's pixel batch at the state's current iteration.
LossReport compute_loss(const TrainState& state, const data::Dataset& dataset, int frame_index,
                        std::span<const PixelCoord> pixels, const TrainConfig& config, ThreadPool* pool,
                        StepGradients& grads);

// One optimizer step: schedule a frame, sample rays, backpropagate, update
// coarse/fine/latent-row with Adam. Throws NumericError on a non-finite loss.
LossReport train_step(TrainState& state, const data::Dataset& dataset, const TrainConfig& config, ThreadPool* pool);

// Steps until state.iteration reaches config.iterations.
void run_training(TrainState& state, const data::Dataset& dataset, const TrainConfig& config, ThreadPool* pool,
                  const std::function<void(const TrainState&, const LossReport&)>& on_step = {});

enum class LatentPolicy { kPerFrame, kFirstTrainFrame };

// Latent code used to render `frame_index`. Frames without a latent row (held
// out) always take the first training frame's code.
std::span<const float> latent_for(const TrainState& state, const data::Dataset& dataset, int frame_index,
                                  LatentPolicy policy);

render::RenderedImage render_with_state(const TrainState& state, const render::Camera& camera,
                                        const render::Pose& pose, const Image& background,
                                        std::span<const float> expression, std::span<const float> latent,
                                        ThreadPool* pool);

struct FrameMetrics {
  int frame = 0;
  double l1 = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalResult {
  double l1 = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  std::vector<FrameMetrics> frames;
};

// Throws DataError for an empty split.
EvalResult evaluate(const TrainState& state, const data::Dataset& dataset, data::Split split, LatentPolicy policy,
                    ThreadPool* pool);

}  // namespace dnrf::train
