#pragma once
//
// Multi-label classifiers with hand-written gradients: a linear model and a
// one-hidden-layer ReLU MLP, both with per-class sigmoid outputs and mean
// binary cross-entropy loss.
//
// Parameter layout (row-major):
//   linear: W [input_dim x num_classes], b [num_classes]
//   mlp:    W1 [input_dim x hidden_dim], b1 [hidden_dim],
//           W2 [hidden_dim x num_classes], b2 [num_classes]

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

enum class ModelKind { linear, mlp };

inline const char* to_string(ModelKind k) { return k == ModelKind::linear ? "linear" : "mlp"; }

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "linear") return ModelKind::linear;
  if (s == "mlp") return ModelKind::mlp;
  throw ValidationError("unknown model kind '" + s + "' (expected linear|mlp)");
}

struct ModelSpec {
  ModelKind kind = ModelKind::linear;
  std::size_t input_dim = 1;
  std::size_t hidden_dim = 0;  // mlp only
  std::size_t num_classes = 1;

  void validate() const {
    detail::require(input_dim >= 1, "ModelSpec: input_dim must be >= 1");
    detail::require(num_classes >= 1, "ModelSpec: num_classes must be >= 1");
    if (kind == ModelKind::mlp) detail::require(hidden_dim >= 1, "ModelSpec: mlp needs hidden_dim >= 1");
  }

  Manifest manifest() const {
    validate();
    if (kind == ModelKind::linear)
      return {{"W", {input_dim, num_classes}}, {"b", {num_classes}}};
    return {{"W1", {input_dim, hidden_dim}},
            {"b1", {hidden_dim}},
            {"W2", {hidden_dim, num_classes}},
            {"b2", {num_classes}}};
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Probabilities are kept inside [kProbFloor, 1 - kProbFloor].
inline constexpr double kProbFloor = 1e-12;

namespace detail {

inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double clamp_prob(double p) noexcept {
  return std::clamp(p, kProbFloor, 1.0 - kProbFloor);
}

// out[r, :] = in[r, :] * W + b, with W stored [in_cols x out_cols].
inline Matrix affine(const Matrix& in, std::span<const double> w, std::span<const double> b,
                     std::size_t out_cols) {
  const std::size_t in_cols = in.cols();
  Matrix out(in.rows(), out_cols);
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto dst = out.row(r);
    std::copy(b.begin(), b.end(), dst.begin());
    auto src = in.row(r);
    for (std::size_t i = 0; i < in_cols; ++i) {
      const double x = src[i];
      if (x == 0.0) continue;
      const double* wr = w.data() + i * out_cols;
      for (std::size_t j = 0; j < out_cols; ++j) dst[j] += x * wr[j];
    }
  }
  return out;
}

// grad_w += in^T * delta, grad_b += column sums of delta.
inline void affine_backward(const Matrix& in, const Matrix& delta, std::span<double> grad_w,
                            std::span<double> grad_b) {
  const std::size_t out_cols = delta.cols();
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto d = delta.row(r);
    auto x = in.row(r);
    for (std::size_t i = 0; i < in.cols(); ++i) {
      if (x[i] == 0.0) continue;
      double* gw = grad_w.data() + i * out_cols;
      for (std::size_t j = 0; j < out_cols; ++j) gw[j] += x[i] * d[j];
    }
    for (std::size_t j = 0; j < out_cols; ++j) grad_b[j] += d[j];
  }
}

struct ForwardCache {
  Matrix hidden;  // post-ReLU activations (mlp only)
  Matrix logits;
};

inline ForwardCache forward_logits(const ModelSpec& spec, const ParameterVector& params,
                                   const Matrix& inputs) {
  spec.validate();
  if (params.manifest() != spec.manifest())
    throw ValidationError("forward: parameters do not match model spec");
  if (inputs.cols() != spec.input_dim)
    throw ValidationError("forward: input width " + std::to_string(inputs.cols()) +
                          " != input_dim " + std::to_string(spec.input_dim));
  ForwardCache cache;
  if (spec.kind == ModelKind::linear) {
    cache.logits = affine(inputs, params.tensor("W"), params.tensor("b"), spec.num_classes);
    return cache;
  }
  cache.hidden = affine(inputs, params.tensor("W1"), params.tensor("b1"), spec.hidden_dim);
  for (double& h : cache.hidden.data()) h = std::max(h, 0.0);
  cache.logits = affine(cache.hidden, params.tensor("W2"), params.tensor("b2"), spec.num_classes);
  return cache;
}

}  // namespace detail

// Weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases zero.
inline ParameterVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  ParameterVector p(spec.manifest());
  Rng rng(seed);
  auto fill = [&](std::string_view name, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& w : p.tensor(name)) w = rng.uniform(-bound, bound);
  };
  if (spec.kind == ModelKind::linear) {
    fill("W", spec.input_dim);
  } else {
    fill("W1", spec.input_dim);
    fill("W2", spec.hidden_dim);
  }
  return p;
}

// Per-class probabilities, each clamped into (0, 1).
inline Matrix forward(const ModelSpec& spec, const ParameterVector& params, const Matrix& inputs) {
  Matrix scores = detail::forward_logits(spec, params, inputs).logits;
  for (double& s : scores.data()) s = detail::clamp_prob(detail::sigmoid(s));
  return scores;
}

struct LossAndGrad {
  double loss = 0.0;
  ParameterVector grad;
};

// Mean binary cross-entropy over all (example, class) pairs and its exact
// gradient. The clamp only guards the logarithm; the gradient uses the raw
// sigmoid so it stays the derivative of the unclamped loss.
inline LossAndGrad loss_and_grad(const ModelSpec& spec, const ParameterVector& params,
                                 const LabeledBatch& batch) {
  if (batch.size() == 0) throw ValidationError("loss_and_grad: empty batch");
  if (batch.targets.rows() != batch.inputs.rows() || batch.targets.cols() != spec.num_classes)
    throw ValidationError("loss_and_grad: target shape does not match model");

  auto cache = detail::forward_logits(spec, params, batch.inputs);
  const double scale = 1.0 / static_cast<double>(batch.size() * spec.num_classes);

  double loss = 0.0;
  Matrix delta(batch.size(), spec.num_classes);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      const double p = detail::sigmoid(cache.logits(r, c));
      const double y = batch.targets(r, c);
      const double pc = detail::clamp_prob(p);
      loss -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
      delta(r, c) = (p - y) * scale;
    }
  }

  LossAndGrad out{loss * scale, ParameterVector(params.manifest())};
  auto& g = out.grad;
  if (spec.kind == ModelKind::linear) {
    detail::affine_backward(batch.inputs, delta, g.tensor("W"), g.tensor("b"));
    return out;
  }

  detail::affine_backward(cache.hidden, delta, g.tensor("W2"), g.tensor("b2"));
  const auto w2 = params.tensor("W2");
  Matrix dhidden(batch.size(), spec.hidden_dim);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    for (std::size_t h = 0; h < spec.hidden_dim; ++h) {
      if (cache.hidden(r, h) <= 0.0) continue;
      double acc = 0.0;
      const double* wr = w2.data() + h * spec.num_classes;
      for (std::size_t c = 0; c < spec.num_classes; ++c) acc += wr[c] * delta(r, c);
      dhidden(r, h) = acc;
    }
  }
  detail::affine_backward(batch.inputs, dhidden, g.tensor("W1"), g.tensor("b1"));
  return out;
}

// Mean BCE without the gradient; used for evaluation logging.
inline double loss_only(const ModelSpec& spec, const ParameterVector& params,
                        const LabeledBatch& batch) {
  if (batch.size() == 0) throw ValidationError("loss_only: empty batch");
  const Matrix scores = forward(spec, params, batch.inputs);
  double loss = 0.0;
  for (std::size_t i = 0; i < scores.data().size(); ++i) {
    const double p = scores.data()[i];
    const double y = batch.targets.data()[i];
    loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return loss / static_cast<double>(scores.data().size());
}

}  // namespace fedsim
