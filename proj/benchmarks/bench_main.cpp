#include <benchmark/benchmark.h>

#include <vector>

#include "dnrf/field.hpp"
#include "dnrf/render.hpp"
#include "dnrf/synthetic.hpp"
#include "dnrf/train.hpp"

using namespace dnrf;

namespace {

field::FieldConfig desk_field() { return train::training_preset("desk").field; }

struct FieldInputs {
  field::FieldParams<float> params;
  field::Points<float> pts;
  field::Points<float> dirs;
  std::vector<float> delta;
  std::vector<float> gamma;
};

FieldInputs field_inputs(int n) {
  const auto cfg = desk_field();
  Rng rng(1);
  FieldInputs in{field::init_field_params<float>(cfg, rng), field::Points<float>(3, n), field::Points<float>(3, n),
                 std::vector<float>(static_cast<std::size_t>(cfg.expr_dim), 0.1f),
                 std::vector<float>(static_cast<std::size_t>(cfg.latent_dim), 0.01f)};
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) in.pts(k, i) = static_cast<float>(rng.uniform(-1, 1));
    in.dirs.col(i) = render::Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), -1.0).normalized().cast<float>();
  }
  return in;
}

void BM_FieldForward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  auto in = field_inputs(n);
  for (auto _ : state) {
    auto out = field::field_forward_batch<float>(in.params, in.pts, in.dirs, std::span<const float>(in.delta), std::span<const float>(in.gamma), nullptr);
    benchmark::DoNotOptimize(out);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_FieldForward)->Arg(256)->Arg(2048);

void BM_FieldForwardBackward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  auto in = field_inputs(n);
  auto grads = field::zeros_like(in.params);
  const nn::Matrix<float> d_sigma = nn::Matrix<float>::Constant(1, n, 1e-3f);
  const nn::Matrix<float> d_rgb = nn::Matrix<float>::Constant(3, n, 1e-3f);
  for (auto _ : state) {
    field::FieldTape<float> tape;
    auto out = field::field_forward_batch<float>(in.params, in.pts, in.dirs, std::span<const float>(in.delta), std::span<const float>(in.gamma), &tape);
    field::ConditioningGrad<float> cond;
    field::field_backward<float>(in.params, tape, d_sigma, d_rgb, grads, cond);
    benchmark::DoNotOptimize(out);
    benchmark::DoNotOptimize(cond);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_FieldForwardBackward)->Arg(256)->Arg(2048);

void BM_Composite(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(2);
  const auto ts = render::sample_stratified(2.0, 6.0, n, &rng);
  std::vector<double> sigma(ts.size()), rgb(3 * ts.size());
  for (auto& s : sigma) s = rng.uniform(0.0, 5.0);
  for (auto& c : rgb) c = rng.uniform();
  for (auto _ : state) {
    auto r = render::composite<double>(ts, sigma, rgb, {0.5, 0.5, 0.5}, 6.0);
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Composite)->Arg(64)->Arg(128);

void BM_ImportanceResample(benchmark::State& state) {
  Rng rng(3);
  const auto ts = render::sample_stratified(2.0, 6.0, 64, &rng);
  std::vector<double> w(ts.size());
  for (auto& v : w) v = rng.uniform();
  for (auto _ : state) {
    auto s = render::importance_resample(ts, w, 2.0, 6.0, 64, &rng);
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_ImportanceResample);

void BM_TrainStep(benchmark::State& state) {
  auto spec = data::synthetic_preset("blob");
  spec.train_frames = 4;
  spec.test_frames = 0;
  spec.oracle_samples = 64;
  const auto dataset = data::generate_synthetic(spec, 1);
  auto preset = train::training_preset("desk");
  preset.train.rays_per_batch = static_cast<int>(state.range(0));
  auto ts = train::init_train_state(preset.field, dataset, preset.train);
  for (auto _ : state) {
    auto r = train::train_step(ts, dataset, preset.train, nullptr);
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
