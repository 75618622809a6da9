#include "dnrf/field.hpp"

#include <cmath>
#include <string>

namespace dnrf::field {

void FieldConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ContractViolation(std::string("FieldConfig: ") + what);
  };
  require(expr_dim >= 0 && latent_dim >= 0, "expression and latent sizes must be non-negative");
  require(backbone_layers >= 1 && backbone_width >= 1, "backbone needs at least one non-empty layer");
  require(color_layers >= 1 && color_width >= 1, "color branch needs at least one non-empty layer");
  require(encoding.pos_freqs >= 0 && encoding.dir_freqs >= 0, "frequency counts must be non-negative");
  require(position_features() > 0 && direction_features() > 0, "encodings must be non-empty");
}

template <typename T>
std::vector<nn::ParamSlot<T>> FieldParams<T>::slots() {
  std::vector<nn::ParamSlot<T>> out;
  nn::append_slots(backbone, "backbone", out);
  nn::append_slots(density, "density", out);
  nn::append_slots(color, "color", out);
  return out;
}

template <typename T>
std::vector<nn::ParamSlot<const T>> FieldParams<T>::slots() const {
  std::vector<nn::ParamSlot<const T>> out;
  nn::append_slots(backbone, "backbone", out);
  nn::append_slots(density, "density", out);
  nn::append_slots(color, "color", out);
  return out;
}

template <typename T>
FieldParams<T> make_field_params(const FieldConfig& config) {
  config.validate();
  using nn::Activation;
  using nn::Index;
  FieldParams<T> p;
  p.config = config;

  std::vector<Index> widths{config.backbone_input_dim()};
  std::vector<Activation> acts;
  for (int i = 0; i < config.backbone_layers; ++i) {
    widths.push_back(config.backbone_width);
    acts.push_back(Activation::kRelu);
  }
  p.backbone = nn::make_dense_stack<T>(widths, acts);

  const std::array<Index, 2> density_widths{config.backbone_width, 1};
  const std::array<Activation, 1> density_acts{Activation::kRelu};
  p.density = nn::make_dense_stack<T>(density_widths, density_acts);

  widths = {config.backbone_width + config.direction_features()};
  acts.clear();
  for (int i = 0; i + 1 < config.color_layers; ++i) {
    widths.push_back(config.color_width);
    acts.push_back(Activation::kRelu);
  }
  widths.push_back(3);
  acts.push_back(Activation::kSigmoid);
  p.color = nn::make_dense_stack<T>(widths, acts);
  return p;
}

template <typename T>
FieldParams<T> init_field_params(const FieldConfig& config, Rng& rng) {
  FieldParams<T> p = make_field_params<T>(config);
  nn::init_uniform(p.backbone, rng);
  nn::init_uniform(p.density, rng);
  nn::init_uniform(p.color, rng);
  return p;
}

template <typename T>
FieldParams<T> zeros_like(const FieldParams<T>& params) {
  FieldParams<T> out;
  out.config = params.config;
  out.backbone = nn::zeros_like(params.backbone);
  out.density = nn::zeros_like(params.density);
  out.color = nn::zeros_like(params.color);
  return out;
}

template <typename T>
void accumulate(FieldParams<T>& into, const FieldParams<T>& from) {
  nn::accumulate(into.backbone, from.backbone);
  nn::accumulate(into.density, from.density);
  nn::accumulate(into.color, from.color);
}

template <typename T>
FieldBatch<T> field_forward_batch(const FieldParams<T>& params, const Points<T>& points, const Points<T>& dirs,
                                  std::span<const T> delta, std::span<const T> gamma, FieldTape<T>* tape) {
  const FieldConfig& cfg = params.config;
  if (static_cast<int>(delta.size()) != cfg.expr_dim || static_cast<int>(gamma.size()) != cfg.latent_dim) {
    throw ContractViolation("field_forward: expected expression/latent sizes " + std::to_string(cfg.expr_dim) +
                            "/" + std::to_string(cfg.latent_dim) + ", got " + std::to_string(delta.size()) +
                            "/" + std::to_string(gamma.size()));
  }
  if (points.cols() != dirs.cols()) throw ContractViolation("field_forward: points/dirs count mismatch");

  nn::Vector<T> tail(cfg.expr_dim + cfg.latent_dim);
  for (int i = 0; i < cfg.expr_dim; ++i) tail(i) = delta[i];
  for (int i = 0; i < cfg.latent_dim; ++i) tail(cfg.expr_dim + i) = gamma[i];

  FieldTape<T> local;
  FieldTape<T>& t = tape ? *tape : local;
  t.owner = &params;

  const nn::Matrix<T>& hidden = nn::dense_forward(
      params.backbone, encoding::encode_batch<T>(points, cfg.encoding.pos_freqs, cfg.encoding.include_input),
      tail, t.backbone);

  FieldBatch<T> out;
  out.sigma = nn::dense_forward(params.density, hidden, nn::Vector<T>(), t.density);

  const int width = cfg.backbone_width;
  nn::Matrix<T> color_in(width + cfg.direction_features(), hidden.cols());
  color_in.topRows(width) = hidden;
  color_in.bottomRows(cfg.direction_features()) =
      encoding::encode_batch<T>(dirs, cfg.encoding.dir_freqs, cfg.encoding.include_input);
  out.rgb = nn::dense_forward(params.color, std::move(color_in), nn::Vector<T>(), t.color);
  return out;
}

template <typename T>
FieldOutput<T> field_forward(const FieldParams<T>& params, const std::array<T, 3>& p, const std::array<T, 3>& v,
                             std::span<const T> delta, std::span<const T> gamma) {
  const double norm = std::sqrt(static_cast<double>(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]));
  if (std::abs(norm - 1.0) > 1e-3) throw ContractViolation("field_forward: view direction is not unit length");
  Points<T> points(3, 1);
  Points<T> dirs(3, 1);
  for (int i = 0; i < 3; ++i) {
    points(i, 0) = p[i];
    dirs(i, 0) = v[i];
  }
  const FieldBatch<T> batch = field_forward_batch(params, points, dirs, delta, gamma);
  return {{batch.rgb(0, 0), batch.rgb(1, 0), batch.rgb(2, 0)}, batch.sigma(0, 0)};
}

template <typename T>
void field_backward(const FieldParams<T>& params, const FieldTape<T>& tape, const nn::Matrix<T>& d_sigma,
                    const nn::Matrix<T>& d_rgb, FieldParams<T>& grads, ConditioningGrad<T>& cond) {
  if (tape.owner != &params) throw ContractViolation("field_backward: tape was recorded for other parameters");
  const FieldConfig& cfg = params.config;
  const int width = cfg.backbone_width;

  auto from_density = nn::dense_backward(params.density, tape.density, d_sigma, grads.density, true);
  auto from_color = nn::dense_backward(params.color, tape.color, d_rgb, grads.color, true);
  nn::Matrix<T> d_hidden = std::move(from_density.input);
  d_hidden += from_color.input.topRows(width);
  auto from_backbone = nn::dense_backward(params.backbone, tape.backbone, std::move(d_hidden), grads.backbone, false);

  if (cond.delta.size() != cfg.expr_dim) cond.delta = nn::Vector<T>::Zero(cfg.expr_dim);
  if (cond.gamma.size() != cfg.latent_dim) cond.gamma = nn::Vector<T>::Zero(cfg.latent_dim);
  if (from_backbone.tail.size() > 0) {
    cond.delta += from_backbone.tail.head(cfg.expr_dim);
    cond.gamma += from_backbone.tail.tail(cfg.latent_dim);
  }
}

#define DNRF_INSTANTIATE_FIELD(T)                                                                         \
  template struct FieldParams<T>;                                                                         \
  template FieldParams<T> make_field_params<T>(const FieldConfig&);                                       \
  template FieldParams<T> init_field_params<T>(const FieldConfig&, Rng&);                                 \
  template FieldParams<T> zeros_like(const FieldParams<T>&);                                              \
  template void accumulate(FieldParams<T>&, const FieldParams<T>&);                                       \
  template FieldBatch<T> field_forward_batch(const FieldParams<T>&, const Points<T>&, const Points<T>&,   \
                                             std::span<const T>, std::span<const T>, FieldTape<T>*);      \
  template FieldOutput<T> field_forward(const FieldParams<T>&, const std::array<T, 3>&,                   \
                                        const std::array<T, 3>&, std::span<const T>, std::span<const T>); \
  template void field_backward(const FieldParams<T>&, const FieldTape<T>&, const nn::Matrix<T>&,          \
                               const nn::Matrix<T>&, FieldParams<T>&, ConditioningGrad<T>&);

DNRF_INSTANTIATE_FIELD(float)
DNRF_INSTANTIATE_FIELD(double)

#undef DNRF_INSTANTIATE_FIELD

}  // namespace dnrf::field
