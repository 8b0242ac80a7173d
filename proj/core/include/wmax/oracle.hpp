#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "wmax/estimators.hpp"
#include "wmax/network.hpp"

namespace wmax {

// Enumeration is limited to networks whose units fit one joint sweep.
inline constexpr int kEnumerationCapacity = 24;

// A rewarded environment small enough to enumerate: the expected reward of
// every output configuration, under one fixed input (possibly empty).
//
// reward_table is indexed by the output bitmask; bit u carries output unit
// u's activation.
struct EnumerableTask {
  std::vector<double> reward_table;
  VectorXd input = VectorXd(0);
};

// sum over all joint binary configurations of prod(unit probabilities) * reward.
double exact_expected_reward(const NetworkParams& params,
                             const EnumerableTask& task);

// Exact gradient of the expected reward for every parameter, via the
// per-unit two-point decomposition (r(1) - r(0)) sigma'(z) enumerated over
// upstream and sibling configurations.
GradientEstimate exact_gradient(const NetworkParams& params,
                                const EnumerableTask& task);

// The natural extension g at a hidden unit: expected reward when the unit
// passes the value u downstream, siblings and upstream marginalized at their
// sampling distributions. Defined for any real u (u in [0,1] is the
// estimator-relevant range).
double natural_extension_value(const NetworkParams& params,
                               const EnumerableTask& task, UnitAddress addr,
                               double u);

// E[rhat^(k)(h) | H=h] enumerated exactly for a unit in the first hidden
// layer of a two-weight-layer network (outgoing units are output units, so
// downstream rewards carry no approximation). h must be 0 or 1.
double expected_rhat_order(const NetworkParams& params,
                           const EnumerableTask& task, UnitAddress addr, int h,
                           int order);

// Exact E[estimate] for every parameter under the given estimator. Uniform
// draws of unbiased_wm are integrated by Gauss-Legendre quadrature with
// quad_nodes nodes per unit.
GradientEstimate expected_estimate(const NetworkParams& params,
                                   const EnumerableTask& task,
                                   const EstimatorConfig& config,
                                   int quad_nodes = 64);

struct BiasVarianceReport {
  EstimatorConfig estimator;
  UnitAddress target;            // bias parameter of this unit
  double bias = 0.0;             // E[estimate] - exact gradient
  double variance = 0.0;         // E[estimate^2] - E[estimate]^2
  double quadrature_error = 0.0; // node-halving difference of the bias
  double c_range = 0.0;          // parameter range C (study rows only)
  int trial = -1;                // study trial index (study rows only)
};

// Exact bias and variance of the estimator at one bias coordinate.
BiasVarianceReport estimator_bias_variance(const NetworkParams& params,
                                           const EnumerableTask& task,
                                           const EstimatorConfig& config,
                                           UnitAddress target,
                                           int quad_nodes = 64);

struct StudyOptions {
  // Five-layer bias/variance topology: bias-only first layer of one unit,
  // three hidden layers of four, one output unit.
  std::vector<int> layer_sizes = {0, 1, 4, 4, 4, 1};
  std::vector<EstimatorConfig> estimators;  // empty: the five standard rules
  UnitAddress target = {0, 0};
  double reward_range = 10.0;
  int quad_nodes = 64;
};

// Bias/variance study over a grid of parameter ranges C: per (estimator, C,
// trial) one report. Each trial draws a unit-scale parameter direction and a
// reward table once and reuses them across the whole C grid, so trends in C
// are comparable trial by trial.
std::vector<BiasVarianceReport> bias_variance_study(std::span<const double> c_grid,
                                                  int trials, std::uint64_t seed,
                                                  const StudyOptions& options = {});

// "estimator,C,trial,bias,variance,quadrature_error"
void write_bias_variance_csv(std::ostream& out,
                             std::span<const BiasVarianceReport> reports);

}  // namespace wmax
