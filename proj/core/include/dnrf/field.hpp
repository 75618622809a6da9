#pragma once

// The conditioned radiance field: (position, view direction, expression,
// latent code) -> (rgb, density).

#include <array>
#include <span>
#include <vector>

#include "dnrf/encoding.hpp"
#include "dnrf/nn.hpp"
#include "dnrf/rng.hpp"

namespace dnrf::field {

struct FieldConfig {
  int expr_dim = 76;
  int latent_dim = 32;
  int backbone_layers = 8;
  int backbone_width = 256;
  int color_layers = 4;  // includes the 3-wide output layer
  int color_width = 128;
  encoding::EncodingConfig encoding;

  int position_features() const { return encoding::encoded_dim(encoding.pos_freqs, encoding.include_input); }
  int direction_features() const { return encoding::encoded_dim(encoding.dir_freqs, encoding.include_input); }
  int backbone_input_dim() const { return position_features() + expr_dim + latent_dim; }
  void validate() const;
  bool operator==(const FieldConfig&) const = default;
};

template <typename T>
using Points = Eigen::Matrix<T, 3, Eigen::Dynamic>;

template <typename T>
struct FieldParams {
  FieldConfig config;
  nn::DenseStack<T> backbone;  // [enc(p); delta; gamma] -> width, ReLU after every layer
  nn::DenseStack<T> density;   // width -> 1, ReLU
  nn::DenseStack<T> color;     // [backbone out; enc(v)] -> ... -> 3, sigmoid on the last layer

  std::vector<nn::ParamSlot<T>> slots();
  std::vector<nn::ParamSlot<const T>> slots() const;
  std::size_t parameter_count() const {
    return backbone.parameter_count() + density.parameter_count() + color.parameter_count();
  }
  bool operator==(const FieldParams&) const = default;
};

// All-zero parameters with the configured shapes.
template <typename T>
FieldParams<T> make_field_params(const FieldConfig& config);

template <typename T>
FieldParams<T> init_field_params(const FieldConfig& config, Rng& rng);

template <typename T>
FieldParams<T> zeros_like(const FieldParams<T>& params);

template <typename T>
void accumulate(FieldParams<T>& into, const FieldParams<T>& from);

template <typename U, typename T>
FieldParams<U> cast_params(const FieldParams<T>& p) {
  FieldParams<U> out;
  out.config = p.config;
  out.backbone = nn::cast_stack<U>(p.backbone);
  out.density = nn::cast_stack<U>(p.density);
  out.color = nn::cast_stack<U>(p.color);
  return out;
}

template <typename T>
struct FieldOutput {
  std::array<T, 3> rgb;
  T sigma;
};

template <typename T>
struct FieldBatch {
  nn::Matrix<T> rgb;    // 3 x N
  nn::Matrix<T> sigma;  // 1 x N
};

template <typename T>
struct FieldTape {
  nn::DenseTape<T> backbone;
  nn::DenseTape<T> density;
  nn::DenseTape<T> color;
  const FieldParams<T>* owner = nullptr;
};

template <typename T>
struct ConditioningGrad {
  nn::Vector<T> delta;
  nn::Vector<T> gamma;
};

// Single query. `p` is a normalized canonical position, `v` a unit direction.
template <typename T>
FieldOutput<T> field_forward(const FieldParams<T>& params, const std::array<T, 3>& p, const std::array<T, 3>& v,
                             std::span<const T> delta, std::span<const T> gamma);

// Batched query sharing one (delta, gamma). Records a tape when one is given.
template <typename T>
FieldBatch<T> field_forward_batch(const FieldParams<T>& params, const Points<T>& points, const Points<T>& dirs,
                                  std::span<const T> delta, std::span<const T> gamma,
                                  FieldTape<T>* tape = nullptr);

// Accumulates parameter gradients into `grads` and conditioning gradients into
// `cond` (which is sized on first use) given dL/dsigma (1xN) and dL/drgb (3xN).
template <typename T>
void field_backward(const FieldParams<T>& params, const FieldTape<T>& tape, const nn::Matrix<T>& d_sigma,
                    const nn::Matrix<T>& d_rgb, FieldParams<T>& grads, ConditioningGrad<T>& cond);

}  // namespace dnrf::field
