#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wmax/math_kernel.hpp"
#include "wmax/network.hpp"
#include "wmax/rng.hpp"

namespace wmax {

enum class EstimatorKind {
  reinforce,
  ste,
  weight_max,
  p_order,
  unbiased_wm,
  backprop,  // continuous-valued baseline; handled by the trainer
};

enum class UwmVariant {
  single_sample,  // one uniform draw per hidden unit per episode
  mc,             // mean of M independent uniform draws
  rectangle,      // midpoint rule on M subintervals of [0, 1]
  u_at_h,         // diagnostic: evaluate at U = H (recovers weight_max)
};

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::reinforce;
  int order = 1;                                   // p for p_order
  UwmVariant uwm_variant = UwmVariant::single_sample;
  int uwm_samples = 1;                             // M for mc/rectangle
  bool chain_global_reward = false;                // p_order: feed R downstream

  void validate() const;  // throws ConfigError
};

std::string to_string(EstimatorKind kind);
EstimatorKind estimator_kind_from_string(const std::string& name);

// "single", "mc:M", "rect:M"; also accepts the diagnostic "u_at_h".
std::string uwm_variant_to_string(UwmVariant variant, int samples);
void parse_uwm_variant(const std::string& text, UwmVariant* variant,
                       int* samples);

// Human-readable estimator label, e.g. "p_order(3)" or "unbiased_wm[mc:5]".
std::string describe(const EstimatorConfig& config);

// The per-unit scalar that replaces the global reward in a unit's
// REINFORCE-style update. Output units always carry the global reward.
struct IndividualReward {
  double rhat = 0.0;
  std::optional<double> u_sample;          // unbiased_wm single_sample only
  std::optional<DerivativeStack> stack;    // p_order only
};

struct IndividualRewardTable {
  std::vector<std::vector<IndividualReward>> layers;  // [layer][unit]
};

// Every unit, hidden and output: delta_b = R (H - firing_prob).
GradientEstimate estimate_reinforce(const NetworkParams& params,
                                    const ForwardTrace& trace, double reward);

// Output layer by REINFORCE; hidden unit u gets
// delta_b = (sum_i v_i delta_b_i) * p_u (1 - p_u), propagated backward.
GradientEstimate estimate_ste(const NetworkParams& params,
                              const ForwardTrace& trace, double reward);

// Individual reward rhat = H * sum_i rhat_i v_i (D_i - sigma(z_i)); zero
// update whenever the unit is not firing.
GradientEstimate estimate_weight_max(const NetworkParams& params,
                                     const ForwardTrace& trace, double reward);

// p-term alternating Taylor correction of weight_max; order = 1 coincides
// with estimate_weight_max exactly.
GradientEstimate estimate_p_order(const NetworkParams& params,
                                  const ForwardTrace& trace, double reward,
                                  int order, bool chain_global_reward = false);

// Importance-sampled evaluation of the reward slope at a uniform point;
// exactly unbiased. Draw handling is controlled by config.uwm_variant.
GradientEstimate estimate_unbiased_wm(const NetworkParams& params,
                                      const ForwardTrace& trace, double reward,
                                      const EstimatorConfig& config, Rng& rng);

// Dispatch on config.kind (everything except the backprop baseline).
GradientEstimate estimate(const NetworkParams& params, const ForwardTrace& trace,
                          double reward, const EstimatorConfig& config, Rng& rng);

// The rhat table the corresponding estimate_* call uses internally;
// byte-identical given an equal rng state. Only defined for the Weight
// Maximization family (throws std::domain_error otherwise).
IndividualRewardTable individual_rewards(const NetworkParams& params,
                                         const ForwardTrace& trace,
                                         double reward,
                                         const EstimatorConfig& config,
                                         Rng& rng);

}  // namespace wmax
