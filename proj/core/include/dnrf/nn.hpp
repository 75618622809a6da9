#pragma once

// Dense network substrate: linear layers, activations, a taped forward pass for
// chains of layers, exact reverse accumulation, uniform init, and Adam.
//
// Batched data is column-major: one column per sample.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dnrf/errors.hpp"
#include "dnrf/rng.hpp"

namespace dnrf::nn {

using Index = Eigen::Index;
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class Activation { kIdentity, kRelu, kSigmoid };

template <typename T>
struct LinearLayer {
  Matrix<T> weight;  // out x in
  Vector<T> bias;    // out

  LinearLayer() = default;
  LinearLayer(Index in, Index out) : weight(Matrix<T>::Zero(out, in)), bias(Vector<T>::Zero(out)) {}

  Index in_features() const { return weight.cols(); }
  Index out_features() const { return weight.rows(); }

  bool operator==(const LinearLayer& other) const {
    return weight.rows() == other.weight.rows() && weight.cols() == other.weight.cols() &&
           weight == other.weight && bias == other.bias;
  }
};

template <typename T>
Vector<T> linear_forward_no_bias(const LinearLayer<T>& layer, const Vector<T>& x) {
  if (x.size() != layer.in_features() || layer.bias.size() != layer.out_features()) {
    throw ContractViolation("linear_forward: expected input of size " +
                            std::to_string(layer.in_features()) + ", got " + std::to_string(x.size()));
  }
  return layer.weight * x;
}

template <typename T>
Vector<T> linear_forward(const LinearLayer<T>& layer, const Vector<T>& x) {
  return linear_forward_no_bias(layer, x) + layer.bias;
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename Derived>
void activate_inplace(Activation kind, Eigen::MatrixBase<Derived>& x) {
  using T = typename Derived::Scalar;
  switch (kind) {
    case Activation::kIdentity: break;
    case Activation::kRelu: x = x.cwiseMax(T(0)); break;
    case Activation::kSigmoid: x = x.unaryExpr([](T v) { return sigmoid(v); }); break;
  }
}

template <typename T>
Vector<T> activation(Activation kind, Vector<T> x) {
  activate_inplace(kind, x);
  return x;
}

// grad <- grad * f'(z), with f' expressed through the activated output f(z).
template <typename T>
void activation_backward_inplace(Activation kind, const Matrix<T>& output, Matrix<T>& grad) {
  switch (kind) {
    case Activation::kIdentity: break;
    case Activation::kRelu:
      grad = (output.array() > T(0)).select(grad, T(0));
      break;
    case Activation::kSigmoid:
      grad.array() *= output.array() * (T(1) - output.array());
      break;
  }
}

// A chain of dense layers, each followed by its activation. The first layer's
// input is [x; tail], where x varies per column and tail is shared by every
// column of the batch (per-frame conditioning). Splitting it out lets the tail's
// contribution be computed once per batch instead of once per sample.
template <typename T>
struct DenseStack {
  std::vector<LinearLayer<T>> layers;
  std::vector<Activation> activations;

  Index input_features() const { return layers.empty() ? 0 : layers.front().in_features(); }
  Index output_features() const { return layers.empty() ? 0 : layers.back().out_features(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }
  bool operator==(const DenseStack&) const = default;
};

// widths = {in, hidden..., out}; one activation per layer.
template <typename T>
DenseStack<T> make_dense_stack(std::span<const Index> widths, std::span<const Activation> activations) {
  if (widths.size() < 2 || activations.size() != widths.size() - 1) {
    throw ContractViolation("make_dense_stack: need one activation per layer");
  }
  DenseStack<T> stack;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    if (widths[i] <= 0 || widths[i + 1] <= 0) {
      throw ContractViolation("make_dense_stack: layer " + std::to_string(i) + " has zero width");
    }
    stack.layers.emplace_back(widths[i], widths[i + 1]);
    stack.activations.push_back(activations[i]);
  }
  return stack;
}

template <typename T>
DenseStack<T> zeros_like(const DenseStack<T>& stack) {
  DenseStack<T> out = stack;
  for (auto& l : out.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  return out;
}

template <typename U, typename T>
DenseStack<U> cast_stack(const DenseStack<T>& stack) {
  DenseStack<U> out;
  out.activations = stack.activations;
  for (const auto& l : stack.layers) {
    LinearLayer<U> c;
    c.weight = l.weight.template cast<U>();
    c.bias = l.bias.template cast<U>();
    out.layers.push_back(std::move(c));
  }
  return out;
}

template <typename T>
void accumulate(DenseStack<T>& into, const DenseStack<T>& from) {
  if (into.layers.size() != from.layers.size()) throw ContractViolation("accumulate: layer count mismatch");
  for (std::size_t i = 0; i < into.layers.size(); ++i) {
    into.layers[i].weight += from.layers[i].weight;
    into.layers[i].bias += from.layers[i].bias;
  }
}

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0. Draw order is layer by
// layer, column-major within a weight matrix.
template <typename T>
void init_uniform(DenseStack<T>& stack, Rng& rng) {
  for (auto& l : stack.layers) {
    if (l.in_features() == 0 || l.out_features() == 0) throw ContractViolation("init_uniform: zero-width layer");
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_features()));
    for (Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
    l.bias.setZero();
  }
}

// Forward record for one batch through a DenseStack.
template <typename T>
struct DenseTape {
  Matrix<T> input;
  Vector<T> tail;
  std::vector<Matrix<T>> outputs;  // post-activation, one per layer
  const DenseStack<T>* owner = nullptr;
};

template <typename T>
const Matrix<T>& dense_forward(const DenseStack<T>& stack, Matrix<T> input, const Vector<T>& tail,
                               DenseTape<T>& tape) {
  if (stack.layers.empty()) throw ContractViolation("dense_forward: empty stack");
  const auto& first = stack.layers.front();
  if (input.rows() + tail.size() != first.in_features()) {
    throw ContractViolation("dense_forward: input has " + std::to_string(input.rows() + tail.size()) +
                            " features, layer expects " + std::to_string(first.in_features()));
  }
  tape.owner = &stack;
  tape.input = std::move(input);
  tape.tail = tail;
  tape.outputs.resize(stack.layers.size());

  const Index vary = tape.input.rows();
  Vector<T> shift = first.bias;
  if (tail.size() > 0) shift.noalias() += first.weight.rightCols(tail.size()) * tail;
  Matrix<T>& z0 = tape.outputs[0];
  z0.resize(first.out_features(), tape.input.cols());
  z0.noalias() = first.weight.leftCols(vary) * tape.input;
  z0.colwise() += shift;
  activate_inplace(stack.activations[0], z0);

  for (std::size_t i = 1; i < stack.layers.size(); ++i) {
    const auto& l = stack.layers[i];
    Matrix<T>& z = tape.outputs[i];
    z.resize(l.out_features(), tape.input.cols());
    z.noalias() = l.weight * tape.outputs[i - 1];
    z.colwise() += l.bias;
    activate_inplace(stack.activations[i], z);
  }
  return tape.outputs.back();
}

template <typename T>
Matrix<T> dense_forward(const DenseStack<T>& stack, const Matrix<T>& input, const Vector<T>& tail) {
  DenseTape<T> tape;
  dense_forward(stack, input, tail, tape);
  return std::move(tape.outputs.back());
}

template <typename T>
struct DenseInputGrad {
  Matrix<T> input;  // empty unless requested
  Vector<T> tail;
};

// Reverse accumulation through a recorded forward pass. `upstream` is dL/d(output)
// with the output's shape. Parameter gradients are added into `grads`.
template <typename T>
DenseInputGrad<T> dense_backward(const DenseStack<T>& stack, const DenseTape<T>& tape, Matrix<T> upstream,
                                 DenseStack<T>& grads, bool want_input_grad = true) {
  if (tape.owner != &stack || tape.outputs.size() != stack.layers.size()) {
    throw ContractViolation("dense_backward: tape was not recorded for this stack");
  }
  if (upstream.rows() != tape.outputs.back().rows() || upstream.cols() != tape.outputs.back().cols()) {
    throw ContractViolation("dense_backward: upstream gradient shape does not match the tape output");
  }
  if (grads.layers.size() != stack.layers.size()) throw ContractViolation("dense_backward: grad buffer mismatch");

  Matrix<T> delta = std::move(upstream);
  for (std::size_t k = stack.layers.size(); k-- > 1;) {
    activation_backward_inplace(stack.activations[k], tape.outputs[k], delta);
    auto& g = grads.layers[k];
    g.weight.noalias() += delta * tape.outputs[k - 1].transpose();
    g.bias.noalias() += delta.rowwise().sum();
    Matrix<T> below = stack.layers[k].weight.transpose() * delta;
    delta = std::move(below);
  }

  activation_backward_inplace(stack.activations[0], tape.outputs[0], delta);
  const auto& first = stack.layers[0];
  auto& g0 = grads.layers[0];
  const Index vary = tape.input.rows();
  const Index tail = tape.tail.size();
  const Vector<T> delta_sum = delta.rowwise().sum();
  g0.weight.leftCols(vary).noalias() += delta * tape.input.transpose();
  g0.bias += delta_sum;

  DenseInputGrad<T> result;
  if (tail > 0) {
    g0.weight.rightCols(tail).noalias() += delta_sum * tape.tail.transpose();
    result.tail = first.weight.rightCols(tail).transpose() * delta_sum;
  }
  if (want_input_grad) result.input = first.weight.leftCols(vary).transpose() * delta;
  return result;
}

// Named view over one contiguous parameter array.
template <typename T>
struct ParamSlot {
  std::string name;
  std::span<T> values;
};

template <typename T>
void append_slots(DenseStack<T>& stack, std::string_view prefix, std::vector<ParamSlot<T>>& out) {
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    auto& l = stack.layers[i];
    const std::string base = std::string(prefix) + "." + std::to_string(i);
    out.push_back({base + ".weight", {l.weight.data(), static_cast<std::size_t>(l.weight.size())}});
    out.push_back({base + ".bias", {l.bias.data(), static_cast<std::size_t>(l.bias.size())}});
  }
}

template <typename T>
void append_slots(const DenseStack<T>& stack, std::string_view prefix, std::vector<ParamSlot<const T>>& out) {
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    const auto& l = stack.layers[i];
    const std::string base = std::string(prefix) + "." + std::to_string(i);
    out.push_back({base + ".weight", {l.weight.data(), static_cast<std::size_t>(l.weight.size())}});
    out.push_back({base + ".bias", {l.bias.data(), static_cast<std::size_t>(l.bias.size())}});
  }
}

template <typename T>
std::size_t slot_total(std::span<const ParamSlot<T>> slots) {
  std::size_t n = 0;
  for (const auto& s : slots) n += s.values.size();
  return n;
}

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::int64_t step_count = 0;
  std::vector<T> first_moment;
  std::vector<T> second_moment;

  static AdamState zeros(std::size_t n, const AdamConfig& config) {
    AdamState s;
    s.config = config;
    s.first_moment.assign(n, T(0));
    s.second_moment.assign(n, T(0));
    return s;
  }
  bool operator==(const AdamState& o) const {
    return step_count == o.step_count && first_moment == o.first_moment && second_moment == o.second_moment &&
           config.lr == o.config.lr && config.beta1 == o.config.beta1 && config.beta2 == o.config.beta2 &&
           config.eps == o.config.eps;
  }
};

// One bias-corrected Adam update over a parameter group. Gradients are checked
// for finiteness before anything is modified.
template <typename T>
void adam_step(std::string_view group, std::span<const ParamSlot<T>> params,
               std::span<const ParamSlot<const T>> grads, AdamState<T>& state) {
  if (params.size() != grads.size()) throw ContractViolation("adam_step: slot count mismatch in " + std::string(group));
  std::size_t total = 0;
  for (std::size_t s = 0; s < params.size(); ++s) {
    if (params[s].values.size() != grads[s].values.size()) {
      throw ContractViolation("adam_step: shape mismatch for " + std::string(group) + "/" + params[s].name);
    }
    for (T g : grads[s].values) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("non-finite gradient in parameter group '" + std::string(group) + "' (" +
                           grads[s].name + ")");
      }
    }
    total += params[s].values.size();
  }
  if (state.first_moment.size() != total || state.second_moment.size() != total || state.step_count < 0) {
    throw ContractViolation("adam_step: optimizer state does not match group " + std::string(group));
  }

  const AdamConfig& c = state.config;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  std::size_t k = 0;
  for (std::size_t s = 0; s < params.size(); ++s) {
    auto p = params[s].values;
    auto g = grads[s].values;
    for (std::size_t i = 0; i < p.size(); ++i, ++k) {
      const double gi = static_cast<double>(g[i]);
      const double m = c.beta1 * static_cast<double>(state.first_moment[k]) + (1.0 - c.beta1) * gi;
      const double v = c.beta2 * static_cast<double>(state.second_moment[k]) + (1.0 - c.beta2) * gi * gi;
      state.first_moment[k] = static_cast<T>(m);
      state.second_moment[k] = static_cast<T>(v);
      const double step = c.lr * (m / correction1) / (std::sqrt(v / correction2) + c.eps);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - step);
    }
  }
}

}  // namespace dnrf::nn
