#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "dnrf/checkpoint.hpp"
#include "dnrf/metrics.hpp"
#include "dnrf/synthetic.hpp"
#include "dnrf/train.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace dnrf;
using namespace dnrf::train;

namespace {

const data::Dataset& small_dataset() {
  static const data::Dataset d = data::generate_synthetic(oracle::small_spec(16, 6, 2), 4);
  return d;
}

field::FieldConfig toy_field() {
  field::FieldConfig c;
  c.expr_dim = 76;
  c.latent_dim = 8;
  c.backbone_layers = 2;
  c.backbone_width = 16;
  c.color_layers = 2;
  c.color_width = 8;
  c.encoding.pos_freqs = 4;
  c.encoding.dir_freqs = 2;
  return c;
}

TrainConfig toy_train(std::int64_t iterations = 10) {
  TrainConfig t;
  t.rays_per_batch = 48;
  t.rays_per_chunk = 16;
  t.n_coarse = 8;
  t.n_fine = 8;
  t.iterations = iterations;
  t.seed = 11;
  return t;
}

// Gaussian-window SSIM evaluated window by window, without separable filtering.
double ssim_reference(const Image& a, const Image& b) {
  double taps[11][11];
  double sum = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      taps[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
      sum += taps[i][j];
    }
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  for (int ch = 0; ch < a.channels; ++ch) {
    double acc = 0.0;
    int windows = 0;
    for (int r = 0; r + 11 <= a.height; ++r)
      for (int c = 0; c + 11 <= a.width; ++c) {
        double mx = 0, my = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            mx += taps[i][j] / sum * a.at(r + i, c + j, ch);
            my += taps[i][j] / sum * b.at(r + i, c + j, ch);
          }
        double vx = 0, vy = 0, cov = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double dx = a.at(r + i, c + j, ch) - mx, dy = b.at(r + i, c + j, ch) - my;
            vx += taps[i][j] / sum * dx * dx;
            vy += taps[i][j] / sum * dy * dy;
            cov += taps[i][j] / sum * dx * dy;
          }
        acc += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++windows;
      }
    total += acc / windows;
  }
  return total / a.channels;
}

Image random_image(Rng& rng, int w, int h) {
  Image img(w, h, 3);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform(0.1, 0.8));
  return img;
}

}  // namespace

TEST_CASE("preset defaults") {
  const auto full = training_preset("full");
  CHECK(full.train.rays_per_batch == 2048);
  CHECK(full.train.n_coarse == 64);
  CHECK(full.train.n_fine == 64);
  CHECK(full.train.lr == 5e-4);
  CHECK(full.train.latent_decay == 0.05);
  CHECK(full.train.bbox_fraction == 0.95);
  CHECK(full.train.iterations == 400000);
  CHECK(full.field.backbone_layers == 8);
  const auto desk = training_preset("desk");
  CHECK(desk.train.rays_per_batch == 512);
  CHECK(desk.train.iterations == 20000);
  CHECK_THROWS_AS(training_preset("huge"), ContractViolation);
}

TEST_CASE("metrics") {
  Rng rng(1);
  const Image a = random_image(rng, 20, 16);
  CHECK(l1_distance(a, a) == 0.0);
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  Image shifted = a;
  for (auto& v : shifted.data) v += 0.1f;
  CHECK(l1_distance(a, shifted) == doctest::Approx(0.1).epsilon(1e-5));
  CHECK(psnr(a, shifted) == doctest::Approx(20.0).epsilon(1e-4));
  for (int trial = 0; trial < 3; ++trial) {
    const Image x = random_image(rng, 24, 19);
    Image y = x;
    for (auto& v : y.data) v = std::clamp(v + static_cast<float>(rng.uniform(-0.2, 0.2)), 0.0f, 1.0f);
    CHECK(std::abs(ssim(x, y) - ssim_reference(x, y)) < 1e-9);
  }
  CHECK_THROWS_AS(psnr(a, Image(3, 3, 3)), ContractViolation);
}

TEST_CASE("ray batches favour the head box") {
  data::FrameRecord frame;
  frame.id = 0;
  SUBCASE("full-image box") {
    frame.bbox = {0, 0, 32, 32};
    Rng rng(2);
    const auto px = sample_ray_batch(frame, 32, 32, 2048, 0.95, rng);
    CHECK(px.size() == 2048);
    for (const auto& p : px) CHECK((p.row >= 0 && p.row < 32 && p.col >= 0 && p.col < 32));
  }
  SUBCASE("quarter box") {
    frame.bbox = {8, 8, 24, 24};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      const auto px = sample_ray_batch(frame, 32, 32, 2048, 0.95, rng);
      const auto inside = std::count_if(px.begin(), px.end(), [&](const PixelCoord& p) { return frame.bbox.contains(p.row, p.col); });
      CHECK(inside >= 1900);
    }
  }
  SUBCASE("same seed, same pixels") {
    frame.bbox = {3, 4, 10, 12};
    Rng a(5), b(5);
    CHECK(sample_ray_batch(frame, 16, 16, 100, 0.95, a) == sample_ray_batch(frame, 16, 16, 100, 0.95, b));
  }
  SUBCASE("empty box falls back to the whole image") {
    frame.bbox = {};
    Rng rng(6);
    const auto px = sample_ray_batch(frame, 16, 16, 2000, 0.95, rng);
    std::set<int> rows;
    for (const auto& p : px) rows.insert(p.row);
    CHECK(rows.size() == 16);
  }
}

TEST_CASE("loss of a perfect reconstruction is the latent penalty") {
  data::Dataset d = small_dataset();
  for (auto& f : d.frames) f.image = d.background;  // the zero field shows exactly the background
  auto state = init_train_state(toy_field(), d, toy_train());
  state.coarse = field::make_field_params<float>(toy_field());
  state.fine = field::make_field_params<float>(toy_field());
  Rng rng(1);
  const auto pixels = sample_ray_batch(d.frames[0], 16, 16, 40, 0.95, rng);

  StepGradients g;
  auto report = compute_loss(state, d, 0, pixels, toy_train(), nullptr, g);
  CHECK(report.total() == 0.0);
  for (const auto& s : std::as_const(g.coarse).slots())
    for (float v : s.values) CHECK(v == 0.0f);
  for (const auto& s : std::as_const(g.fine).slots())
    for (float v : s.values) CHECK(v == 0.0f);
  for (float v : g.latent) CHECK(v == 0.0f);

  state.latents.row(d.frames[0].latent_index)[0] = 1.0f;
  report = compute_loss(state, d, 0, pixels, toy_train(), nullptr, g);
  CHECK(report.loss_coarse == 0.0);
  CHECK(report.loss_fine == 0.0);
  CHECK(report.loss_latent == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(g.latent[0] == doctest::Approx(0.1).epsilon(1e-6));
  for (std::size_t i = 1; i < g.latent.size(); ++i) CHECK(g.latent[i] == 0.0f);
}

TEST_CASE("latent decay gradient is 2 lambda gamma") {
  const auto& d = small_dataset();
  auto cfg = toy_train();
  cfg.latent_decay = 0.3;
  auto state = init_train_state(toy_field(), d, cfg);
  Rng rng(9);
  auto row = state.latents.row(d.frames[1].latent_index);
  for (auto& v : row) v = static_cast<float>(rng.uniform(-1, 1));
  Rng prng(2);
  const auto pixels = sample_ray_batch(d.frames[1], 16, 16, 32, 0.95, prng);
  StepGradients with, without;
  compute_loss(state, d, 1, pixels, cfg, nullptr, with);
  cfg.latent_decay = 0.0;
  compute_loss(state, d, 1, pixels, cfg, nullptr, without);
  for (std::size_t i = 0; i < row.size(); ++i)
    CHECK(with.latent[i] - without.latent[i] == doctest::Approx(2.0 * 0.3 * row[i]).epsilon(1e-5));
}

TEST_CASE("per-ray loss gradients match central differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto r = gradcheck::check(seed);
    INFO("seed " << seed << " worst " << r.worst << " kinks " << r.kinks);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.checked > 2000);
    CHECK(r.kinks * 4 < r.checked);
  }
}

TEST_CASE("training is deterministic and independent of thread count") {
  const auto& d = small_dataset();
  const auto cfg = toy_train(100);
  auto a = init_train_state(toy_field(), d, cfg);
  auto b = a;
  auto c = a;
  run_training(a, d, cfg, nullptr);
  run_training(b, d, cfg, nullptr);
  ThreadPool pool(3);
  run_training(c, d, cfg, &pool);
  CHECK(a.iteration == 100);
  CHECK(a == b);
  CHECK(a == c);
  CHECK(data::serialize_checkpoint(a) == data::serialize_checkpoint(c));
  auto other = toy_train(100);
  other.seed = 12;
  auto e = init_train_state(toy_field(), d, other);
  CHECK_FALSE(e.coarse == init_train_state(toy_field(), d, cfg).coarse);
}

TEST_CASE("zero learning rate freezes everything") {
  const auto& d = small_dataset();
  auto cfg = toy_train(12);
  cfg.lr = 0.0;
  auto state = init_train_state(toy_field(), d, cfg);
  const auto before = state;
  std::vector<double> losses;
  run_training(state, d, cfg, nullptr, [&](const TrainState&, const LossReport& r) { losses.push_back(r.total()); });
  CHECK(state.coarse == before.coarse);
  CHECK(state.fine == before.fine);
  CHECK(state.latents == before.latents);
  // two full epochs over the same frozen networks
  const double first = std::accumulate(losses.begin(), losses.begin() + 6, 0.0);
  const double second = std::accumulate(losses.begin() + 6, losses.end(), 0.0);
  CHECK(std::abs(first - second) < 0.25 * first);
}

TEST_CASE("a step touches only its own latent row") {
  const auto& d = small_dataset();
  const auto cfg = toy_train(1);
  auto state = init_train_state(toy_field(), d, cfg);
  for (auto& v : state.latents.values) v = 0.01f;
  const auto before = state.latents;
  const auto report = train_step(state, d, cfg, nullptr);
  const int row = d.frames[static_cast<std::size_t>(report.frame)].latent_index;
  for (int r = 0; r < state.latents.rows; ++r) {
    const bool same = std::equal(state.latents.row(r).begin(), state.latents.row(r).end(), before.row(r).begin());
    CHECK(same == (r != row));
  }
  for (int r = 0; r < state.latents.rows; ++r)
    CHECK(state.adam_latent[static_cast<std::size_t>(r)].step_count == (r == row ? 1 : 0));
}

TEST_CASE("stepping from a reloaded checkpoint equals stepping directly") {
  const auto& d = small_dataset();
  const auto cfg = toy_train(8);
  auto state = init_train_state(toy_field(), d, cfg);
  run_training(state, d, cfg, nullptr);
  auto reloaded = data::deserialize_checkpoint(data::serialize_checkpoint(state));
  auto next = toy_train(9);
  train_step(state, d, next, nullptr);
  train_step(reloaded, d, next, nullptr);
  CHECK(state == reloaded);
  CHECK(data::serialize_checkpoint(state) == data::serialize_checkpoint(reloaded));
}

TEST_CASE("non-finite loss reports the iteration") {
  const auto& d = small_dataset();
  const auto cfg = toy_train(5);
  auto state = init_train_state(toy_field(), d, cfg);
  state.iteration = 3;
  state.fine.color.layers.back().bias(0) = std::numeric_limits<float>::quiet_NaN();
  try {
    train_step(state, d, cfg, nullptr);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("iteration 3") != std::string::npos);
  }
}

TEST_CASE("frame scheduling and subsets") {
  const std::vector<int> frames{0, 2, 4, 6, 8};
  for (std::int64_t epoch = 0; epoch < 4; ++epoch) {
    std::multiset<int> seen;
    for (std::int64_t i = 0; i < 5; ++i) seen.insert(scheduled_frame(frames, 3, epoch * 5 + i));
    CHECK(seen == std::multiset<int>(frames.begin(), frames.end()));
  }
  CHECK(scheduled_frame(frames, 3, 17) == scheduled_frame(frames, 3, 17));

  const auto d = data::generate_synthetic(oracle::small_spec(16, 30, 2), 1);
  const auto all = training_subset(d, 1.0);
  CHECK(all.size() == 30);
  const auto quarter = training_subset(d, 0.25);
  CHECK(quarter.size() == 8);
  CHECK(quarter.front() == 0);
  CHECK(std::is_sorted(quarter.begin(), quarter.end()));
  for (std::size_t i = 1; i < quarter.size(); ++i) CHECK(quarter[i] - quarter[i - 1] >= 3);
}

TEST_CASE("evaluation") {
  const auto& d = small_dataset();
  auto state = init_train_state(toy_field(), d, toy_train());
  for (std::size_t i = 0; i < state.latents.values.size(); ++i) state.latents.values[i] = 0.001f * static_cast<float>(i);
  const auto train_eval = evaluate(state, d, data::Split::kTrain, LatentPolicy::kPerFrame, nullptr);
  CHECK(train_eval.frames.size() == 6);
  CHECK(std::isfinite(train_eval.psnr));
  CHECK(train_eval.ssim <= 1.0);

  const int first = d.first_train_frame();
  const int test_frame = d.frame_indices(data::Split::kTest).front();
  const auto code = latent_for(state, d, test_frame, LatentPolicy::kPerFrame);
  const auto expect = state.latents.row(d.frames[static_cast<std::size_t>(first)].latent_index);
  CHECK(std::equal(code.begin(), code.end(), expect.begin(), expect.end()));
  const auto policy = latent_for(state, d, 3, LatentPolicy::kFirstTrainFrame);
  CHECK(std::equal(policy.begin(), policy.end(), expect.begin(), expect.end()));

  auto no_test = d;
  no_test.frames.erase(std::remove_if(no_test.frames.begin(), no_test.frames.end(),
                                      [](const data::FrameRecord& f) { return f.split == data::Split::kTest; }),
                       no_test.frames.end());
  CHECK_THROWS_AS(evaluate(state, no_test, data::Split::kTest, LatentPolicy::kPerFrame, nullptr), DataError);
}

TEST_CASE("desk preset: smoothed loss falls tenfold in 5k steps") {
  const auto d = data::generate_synthetic(data::synthetic_preset("blob"), 1);
  auto preset = training_preset("desk");
  preset.train.iterations = 5000;
  preset.train.seed = 1;
  auto state = init_train_state(preset.field, d, preset.train);
  std::vector<double> losses;
  run_training(state, d, preset.train, nullptr,
               [&](const TrainState&, const LossReport& r) { losses.push_back(r.loss_coarse + r.loss_fine); });
  const double head = std::accumulate(losses.begin(), losses.begin() + 200, 0.0) / 200.0;
  const double tail = std::accumulate(losses.end() - 200, losses.end(), 0.0) / 200.0;
  MESSAGE("smoothed loss " << head << " -> " << tail);
  CHECK(tail * 10.0 <= head);
}
