#include "wmax/network.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "wmax/errors.hpp"
#include "wmax/math_kernel.hpp"

namespace wmax {

int NetworkParams::hidden_unit_count() const {
  int n = 0;
  for (std::size_t l = 1; l + 1 < layer_sizes.size(); ++l) n += layer_sizes[l];
  return n;
}

int NetworkParams::total_unit_count() const {
  int n = 0;
  for (std::size_t l = 1; l < layer_sizes.size(); ++l) n += layer_sizes[l];
  return n;
}

void NetworkParams::validate() const {
  if (layer_sizes.size() < 2 || layers.size() != layer_sizes.size() - 1) {
    throw ShapeError("network needs at least one weight layer");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.weights.rows() != layer_sizes[l + 1] ||
        layer.weights.cols() != layer_sizes[l] ||
        layer.biases.size() != layer_sizes[l + 1]) {
      throw ShapeError("layer " + std::to_string(l) + " dimensions disagree");
    }
    if (!layer.weights.allFinite() || !layer.biases.allFinite()) {
      throw ShapeError("layer " + std::to_string(l) + " has non-finite entries");
    }
  }
}

GradientEstimate GradientEstimate::zeros_like(const NetworkParams& params) {
  GradientEstimate grad;
  grad.layers.reserve(params.layers.size());
  for (const auto& layer : params.layers) {
    grad.layers.push_back({MatrixXd::Zero(layer.weights.rows(), layer.weights.cols()),
                           VectorXd::Zero(layer.biases.size())});
  }
  return grad;
}

GradientEstimate& GradientEstimate::operator+=(const GradientEstimate& other) {
  if (other.layers.size() != layers.size()) {
    throw ShapeError("gradient shapes disagree");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].weights += other.layers[l].weights;
    layers[l].biases += other.layers[l].biases;
  }
  return *this;
}

GradientEstimate& GradientEstimate::operator*=(double factor) {
  for (auto& layer : layers) {
    layer.weights *= factor;
    layer.biases *= factor;
  }
  return *this;
}

double GradientEstimate::max_abs() const {
  double m = 0.0;
  for (const auto& layer : layers) {
    if (layer.weights.size() > 0) {
      m = std::max(m, layer.weights.cwiseAbs().maxCoeff());
    }
    m = std::max(m, layer.biases.cwiseAbs().maxCoeff());
  }
  return m;
}

GradientEstimate average_gradients(const std::vector<GradientEstimate>& grads) {
  if (grads.empty()) {
    throw ShapeError("average_gradients: empty batch");
  }
  GradientEstimate mean = grads.front();
  for (std::size_t i = 1; i < grads.size(); ++i) mean += grads[i];
  mean *= 1.0 / static_cast<double>(grads.size());
  return mean;
}

NetworkParams init_params(const std::vector<int>& layer_sizes,
                          const InitScheme& scheme, std::uint64_t seed) {
  if (layer_sizes.size() < 2) {
    throw ConfigError("init_params: need an input size and at least one layer");
  }
  if (layer_sizes.front() < 0) {
    throw ConfigError("init_params: negative input dimension");
  }
  for (std::size_t l = 1; l < layer_sizes.size(); ++l) {
    if (layer_sizes[l] <= 0) {
      throw ConfigError("init_params: layer " + std::to_string(l) +
                        " must have positive width");
    }
  }
  if (scheme.kind == InitScheme::Kind::uniform_range && scheme.range < 0) {
    throw ConfigError("init_params: negative uniform_range half-width");
  }

  NetworkParams params;
  params.layer_sizes = layer_sizes;
  Rng rng = Rng(seed).fork(0x706172616d73ULL);  // parameter stream
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int fan_in = layer_sizes[l];
    const int fan_out = layer_sizes[l + 1];
    double half_width = 0.0;
    switch (scheme.kind) {
      case InitScheme::Kind::uniform_fan_in:
        half_width = fan_in > 0 ? 1.0 / std::sqrt(double(fan_in)) : 1.0;
        break;
      case InitScheme::Kind::constant_zero:
        half_width = 0.0;
        break;
      case InitScheme::Kind::uniform_range:
        half_width = scheme.range;
        break;
    }
    LayerParams layer;
    layer.weights.resize(fan_out, fan_in);
    layer.biases.resize(fan_out);
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) {
        layer.weights(r, c) = rng.uniform(-half_width, half_width);
      }
      layer.biases(r) = rng.uniform(-half_width, half_width);
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

namespace {

void check_input_dim(const NetworkParams& params, const VectorXd& input) {
  if (input.size() != params.input_dim()) {
    throw ShapeError("input has dimension " + std::to_string(input.size()) +
                     ", network expects " + std::to_string(params.input_dim()));
  }
}

ForwardTrace forward_impl(const NetworkParams& params, const VectorXd& input,
                          Rng* rng) {
  check_input_dim(params, input);
  ForwardTrace trace;
  trace.kind = rng ? ForwardTrace::Kind::sampled : ForwardTrace::Kind::deterministic;
  trace.input = input;
  trace.layers.resize(params.num_layers());
  const VectorXd* x = &trace.input;
  for (int l = 0; l < params.num_layers(); ++l) {
    auto& out = trace.layers[l];
    out.pre_activations = params.layers[l].weights * (*x) + params.layers[l].biases;
    const int width = static_cast<int>(out.pre_activations.size());
    out.firing_probs.resize(width);
    out.activations.resize(width);
    for (int u = 0; u < width; ++u) {
      const double p = sigmoid(out.pre_activations(u));
      out.firing_probs(u) = p;
      out.activations(u) = rng ? (rng->bernoulli(p) ? 1.0 : 0.0) : p;
    }
    x = &out.activations;
  }
  return trace;
}

void check_hidden_address(const NetworkParams& params, const ForwardTrace& trace,
                          UnitAddress addr) {
  if (addr.layer < 0 || addr.layer >= params.num_layers() || addr.unit < 0 ||
      addr.unit >= params.layer_sizes[addr.layer + 1]) {
    throw std::out_of_range("unit address out of bounds");
  }
  if (addr.layer == params.num_layers() - 1) {
    throw std::domain_error(
        "the natural extension applies to hidden units only");
  }
  if (static_cast<int>(trace.layers.size()) != params.num_layers()) {
    throw ShapeError("trace does not match network");
  }
}

}  // namespace

ForwardTrace forward_sample(const NetworkParams& params, const VectorXd& input,
                            Rng& rng) {
  return forward_impl(params, input, &rng);
}

ForwardTrace forward_deterministic(const NetworkParams& params,
                                   const VectorXd& input) {
  return forward_impl(params, input, nullptr);
}

std::vector<OutgoingLogit> outgoing_logits(const NetworkParams& params,
                                           const ForwardTrace& trace,
                                           UnitAddress addr, double u) {
  check_hidden_address(params, trace, addr);
  const auto& next = params.layers[addr.layer + 1];
  const auto& own_layer = trace.layers[addr.layer];
  const auto& next_layer = trace.layers[addr.layer + 1];
  const double own_act = own_layer.activations(addr.unit);

  std::vector<OutgoingLogit> out(next.weights.rows());
  for (int i = 0; i < next.weights.rows(); ++i) {
    OutgoingLogit& logit = out[i];
    logit.weight = next.weights(i, addr.unit);
    logit.bias_eff = next_layer.pre_activations(i) - logit.weight * own_act;
    logit.activation = next_layer.activations(i);
    const double sign = 2.0 * logit.activation - 1.0;
    logit.prob = sigmoid(sign * (logit.weight * u + logit.bias_eff));
  }
  return out;
}

double importance_ratio(const NetworkParams& params, const ForwardTrace& trace,
                        UnitAddress addr, double u) {
  check_hidden_address(params, trace, addr);
  const auto& next = params.layers[addr.layer + 1];
  const auto& own_layer = trace.layers[addr.layer];
  const auto& next_layer = trace.layers[addr.layer + 1];
  const double own_act = own_layer.activations(addr.unit);

  double ratio = 1.0;
  for (int i = 0; i < next.weights.rows(); ++i) {
    const double v = next.weights(i, addr.unit);
    const double bias_eff = next_layer.pre_activations(i) - v * own_act;
    const double sign = 2.0 * next_layer.activations(i) - 1.0;
    const double num = sigmoid(sign * (v * u + bias_eff));
    const double den = sigmoid(sign * (v * own_act + bias_eff));
    ratio *= num / den;
  }
  return ratio;
}

GradientEstimate backprop_deterministic(const NetworkParams& params,
                                        const ForwardTrace& trace,
                                        const VectorXd& output_grads) {
  if (trace.kind != ForwardTrace::Kind::deterministic) {
    throw std::domain_error("backprop_deterministic needs a deterministic trace");
  }
  if (output_grads.size() != params.output_dim()) {
    throw ShapeError("output_grads size does not match the output layer");
  }
  GradientEstimate grad = GradientEstimate::zeros_like(params);
  const int last = params.num_layers() - 1;
  VectorXd delta = output_grads;
  for (int l = last - 1; l >= 0; --l) {
    const auto& probs = trace.layers[l].firing_probs;
    delta = (params.layers[l + 1].weights.transpose() * delta).eval();
    delta.array() *= probs.array() * (1.0 - probs.array());
    grad.layers[l].biases = delta;
    grad.layers[l].weights = delta * trace.layer_input(l).transpose();
  }
  return grad;
}

GradientEstimate backprop_deterministic(const NetworkParams& params,
                                        const ForwardTrace& trace,
                                        double output_grad) {
  VectorXd grads = VectorXd::Constant(params.output_dim(), output_grad);
  return backprop_deterministic(params, trace, grads);
}

}  // namespace wmax
