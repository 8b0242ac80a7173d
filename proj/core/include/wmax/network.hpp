#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "wmax/rng.hpp"

namespace wmax {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// One weight layer: maps fan_in upstream activations to fan_out units.
struct LayerParams {
  MatrixXd weights;  // [fan_out x fan_in]
  VectorXd biases;   // [fan_out]
};

// A layered network of Bernoulli-logistic units.
//
// layer_sizes[0] is the input dimension (0 allowed: a bias-only first
// layer), layer_sizes[l+1] the width of weight layer l. The last layer is
// the output layer.
struct NetworkParams {
  std::vector<LayerParams> layers;
  std::vector<int> layer_sizes;

  int num_layers() const { return static_cast<int>(layers.size()); }
  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int hidden_unit_count() const;
  int total_unit_count() const;

  // Throws ShapeError if layer dimensions disagree or entries are not finite.
  void validate() const;
};

// Identifies one unit: layer l in [0, num_layers), unit u in [0, width_l).
// Layer num_layers-1 is the output layer.
struct UnitAddress {
  int layer = 0;
  int unit = 0;
  bool operator==(const UnitAddress&) const = default;
};

// Record of one forward pass. For a sampled trace, activations are exactly
// 0/1; for a deterministic trace they equal the firing probabilities.
struct ForwardTrace {
  enum class Kind { sampled, deterministic };

  struct Layer {
    VectorXd pre_activations;  // w*x + b
    VectorXd firing_probs;     // sigmoid(pre_activations)
    VectorXd activations;
  };

  Kind kind = Kind::sampled;
  VectorXd input;
  std::vector<Layer> layers;
  double reward = 0.0;

  const Layer& output_layer() const { return layers.back(); }
  // Activations feeding weight layer l (the input for l = 0).
  const VectorXd& layer_input(int l) const {
    return l == 0 ? input : layers[l - 1].activations;
  }
};

// Parameter increments congruent to a NetworkParams.
struct GradientEstimate {
  std::vector<LayerParams> layers;

  static GradientEstimate zeros_like(const NetworkParams& params);
  GradientEstimate& operator+=(const GradientEstimate& other);
  GradientEstimate& operator*=(double factor);
  double max_abs() const;
};

// Elementwise mean of a non-empty set of congruent estimates, accumulated
// in index order.
GradientEstimate average_gradients(const std::vector<GradientEstimate>& grads);

struct InitScheme {
  enum class Kind { uniform_fan_in, constant_zero, uniform_range };
  Kind kind = Kind::uniform_fan_in;
  double range = 1.0;  // uniform_range half-width C

  static InitScheme uniform_fan_in() { return {Kind::uniform_fan_in, 0.0}; }
  static InitScheme constant_zero() { return {Kind::constant_zero, 0.0}; }
  static InitScheme uniform_range(double c) { return {Kind::uniform_range, c}; }
};

// Reproducible parameter draw; uniform_fan_in uses [-1/sqrt(fan_in), +1/sqrt(fan_in)]
// (bias-only layers fall back to half-width 1).
NetworkParams init_params(const std::vector<int>& layer_sizes,
                          const InitScheme& scheme, std::uint64_t seed);

// Samples every unit: fires with probability sigmoid(w*x + b) given sampled
// upstream activations.
ForwardTrace forward_sample(const NetworkParams& params, const VectorXd& input,
                            Rng& rng);

// Hidden units output their expected values; the output layer also records
// its expected value (callers wanting a Bernoulli output sample it from
// firing_probs).
ForwardTrace forward_deterministic(const NetworkParams& params,
                                   const VectorXd& input);

// One outgoing connection of a hidden unit, viewed through the natural
// extension: the unit passes the value u while its layer siblings stay at
// their sampled activations.
struct OutgoingLogit {
  double weight = 0.0;       // v_i
  double bias_eff = 0.0;     // c_i plus frozen sibling contribution
  double activation = 0.0;   // observed D_i
  double prob = 0.0;         // Pr(D_i = observed | unit outputs u)
};

// The natural-extension view of a hidden unit's outgoing layer at value u.
// Throws std::domain_error for output-layer addresses.
std::vector<OutgoingLogit> outgoing_logits(const NetworkParams& params,
                                           const ForwardTrace& trace,
                                           UnitAddress addr, double u);

// prod_i Pr(D_i = d_i | unit outputs u) / Pr(D_i = d_i | sampled activation).
double importance_ratio(const NetworkParams& params, const ForwardTrace& trace,
                        UnitAddress addr, double u);

// Chain-rule gradient of (output_grads . output pre-activations) w.r.t. all
// hidden-layer parameters of a deterministic trace. Output-layer entries of
// the result are zero; the output layer's own update is the caller's
// responsibility (REINFORCE in the training loop).
GradientEstimate backprop_deterministic(const NetworkParams& params,
                                        const ForwardTrace& trace,
                                        const VectorXd& output_grads);
GradientEstimate backprop_deterministic(const NetworkParams& params,
                                        const ForwardTrace& trace,
                                        double output_grad);

}  // namespace wmax
