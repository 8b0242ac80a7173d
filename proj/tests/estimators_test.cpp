#include <cmath>
#include <vector>

#include <doctest.h>

#include "wmax/errors.hpp"
#include "wmax/estimators.hpp"
#include "wmax/math_kernel.hpp"
#include "wmax/network.hpp"
#include "wmax/oracle.hpp"
#include "wmax/rng.hpp"

using namespace wmax;

namespace {

// Bias-only network: layer widths with no external input.
NetworkParams bias_only_net(const std::vector<int>& widths, double scale,
                            std::uint64_t seed) {
  std::vector<int> sizes = {0};
  sizes.insert(sizes.end(), widths.begin(), widths.end());
  return init_params(sizes, InitScheme::uniform_range(scale), seed);
}

ForwardTrace sample_bias_only(const NetworkParams& params, Rng& rng) {
  return forward_sample(params, VectorXd(0), rng);
}

bool grads_identical(const GradientEstimate& a, const GradientEstimate& b) {
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (!(a.layers[l].weights.array() == b.layers[l].weights.array()).all()) {
      return false;
    }
    if (!(a.layers[l].biases.array() == b.layers[l].biases.array()).all()) {
      return false;
    }
  }
  return true;
}

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const int n = static_cast<int>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST_CASE("reinforce basics") {
  // single unit, b = 0, H = 1, R = 1 -> delta_b = 0.5
  NetworkParams params = bias_only_net({1}, 0.0, 0);
  ForwardTrace trace;
  trace.kind = ForwardTrace::Kind::sampled;
  trace.input = VectorXd(0);
  trace.layers.resize(1);
  trace.layers[0].pre_activations = VectorXd::Zero(1);
  trace.layers[0].firing_probs = VectorXd::Constant(1, 0.5);
  trace.layers[0].activations = VectorXd::Constant(1, 1.0);

  const GradientEstimate grad = estimate_reinforce(params, trace, 1.0);
  CHECK(grad.layers[0].biases(0) == doctest::Approx(0.5));

  const GradientEstimate zero = estimate_reinforce(params, trace, 0.0);
  CHECK(zero.max_abs() == 0.0);
}

TEST_CASE("ste hand-computed chain and zero-weight gate") {
  // no-input chain: hidden unit (bias b) -> output unit (weight v, bias c)
  NetworkParams params = bias_only_net({1, 1}, 0.0, 0);
  params.layers[0].biases(0) = 0.4;
  params.layers[1].weights(0, 0) = 1.3;
  params.layers[1].biases(0) = -0.2;

  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const ForwardTrace trace = sample_bias_only(params, rng);
    const double reward = rng.uniform(-2, 2);
    const GradientEstimate grad = estimate_ste(params, trace, reward);

    const double h = trace.layers[0].activations(0);
    const double d = trace.layers[1].activations(0);
    const double v = 1.3;
    const double z_out = trace.layers[1].pre_activations(0);
    const double delta_out = reward * (d - sigmoid(z_out));
    const double p_hidden = trace.layers[0].firing_probs(0);
    CHECK(grad.layers[1].biases(0) == doctest::Approx(delta_out).epsilon(1e-12));
    CHECK(grad.layers[1].weights(0, 0) ==
          doctest::Approx(delta_out * h).epsilon(1e-12));
    CHECK(grad.layers[0].biases(0) ==
          doctest::Approx(v * delta_out * p_hidden * (1 - p_hidden)).epsilon(1e-12));
  }

  // zero outgoing weights -> zero hidden updates
  params.layers[1].weights(0, 0) = 0.0;
  const ForwardTrace trace = sample_bias_only(params, rng);
  const GradientEstimate grad = estimate_ste(params, trace, 1.5);
  CHECK(grad.layers[0].biases(0) == 0.0);
}

TEST_CASE("weight_max hand-computed chain and firing gate") {
  NetworkParams params = bias_only_net({1, 1}, 0.0, 0);
  params.layers[0].biases(0) = -0.1;
  params.layers[1].weights(0, 0) = 0.9;
  params.layers[1].biases(0) = 0.3;
  const double v = 0.9, c = 0.3;

  Rng rng(5);
  EstimatorConfig config;
  config.kind = EstimatorKind::weight_max;
  int saw_firing = 0, saw_silent = 0;
  for (int t = 0; t < 50; ++t) {
    const ForwardTrace trace = sample_bias_only(params, rng);
    const double reward = rng.uniform(-3, 3);
    const GradientEstimate grad = estimate_weight_max(params, trace, reward);
    Rng table_rng(0);
    const IndividualRewardTable table =
        individual_rewards(params, trace, reward, config, table_rng);

    CHECK(table.layers[1][0].rhat == reward);  // output unit carries R
    const double h = trace.layers[0].activations(0);
    if (h == 0.0) {
      ++saw_silent;
      CHECK(grad.layers[0].biases(0) == 0.0);
      CHECK(table.layers[0][0].rhat == 0.0);
    } else {
      ++saw_firing;
      const double d = trace.layers[1].activations(0);
      const double rhat = reward * v * (d - sigmoid(v + c));
      CHECK(table.layers[0][0].rhat == doctest::Approx(rhat).epsilon(1e-12));
      const double p_hidden = trace.layers[0].firing_probs(0);
      CHECK(grad.layers[0].biases(0) ==
            doctest::Approx(rhat * (1 - p_hidden)).epsilon(1e-12));
    }
  }
  CHECK(saw_firing > 0);
  CHECK(saw_silent > 0);
}

TEST_CASE("p_order(1) is exactly weight_max and p=2 matches the s/t forms") {
  const NetworkParams params = bias_only_net({2, 2, 1}, 1.3, 77);
  Rng rng(9);
  for (int t = 0; t < 1000; ++t) {
    const ForwardTrace trace = sample_bias_only(params, rng);
    const double reward = rng.uniform(-4, 4);
    const GradientEstimate wm = estimate_weight_max(params, trace, reward);
    const GradientEstimate p1 = estimate_p_order(params, trace, reward, 1);
    CHECK(grads_identical(wm, p1));
  }

  // two-unit chain: rhat(p=2) = s1 - (s2 + s1 t1)/2
  NetworkParams chain = bias_only_net({1, 1}, 0.0, 0);
  chain.layers[0].biases(0) = 0.2;
  chain.layers[1].weights(0, 0) = 1.1;
  chain.layers[1].biases(0) = -0.4;
  EstimatorConfig config;
  config.kind = EstimatorKind::p_order;
  config.order = 2;
  Rng rng2(13);
  for (int t = 0; t < 40; ++t) {
    const ForwardTrace trace = sample_bias_only(chain, rng2);
    if (trace.layers[0].activations(0) == 0.0) continue;
    const double reward = rng2.uniform(-2, 2);
    const double v = 1.1;
    const double z = trace.layers[1].pre_activations(0);
    const double d = trace.layers[1].activations(0);
    const double s1 = reward * v * (d - sigmoid(z));
    const double t1 = v * (d - sigmoid(z));
    const double s2 = reward * v * v * (-sigmoid_derivative(1, z));
    const double expected_rhat = s1 - (s2 + s1 * t1) / 2;

    Rng table_rng(0);
    const IndividualRewardTable table =
        individual_rewards(chain, trace, reward, config, table_rng);
    CHECK(table.layers[0][0].rhat == doctest::Approx(expected_rhat).epsilon(1e-12));
    REQUIRE(table.layers[0][0].stack.has_value());
    CHECK(table.layers[0][0].stack->s[0] == doctest::Approx(s1).epsilon(1e-12));
    CHECK(table.layers[0][0].stack->s[1] == doctest::Approx(s2).epsilon(1e-12));
    CHECK(table.layers[0][0].stack->t[0] == doctest::Approx(t1).epsilon(1e-12));
  }

  CHECK_THROWS_AS(estimate_p_order(chain, sample_bias_only(chain, rng2), 1.0, 0),
                  ConfigError);
  CHECK_THROWS_AS(
      estimate_p_order(chain, sample_bias_only(chain, rng2), 1.0, kMaxOrder + 1),
      ConfigError);
}

TEST_CASE("unbiased_wm gates, variants and determinism") {
  const NetworkParams params = bias_only_net({2, 3, 1}, 1.0, 55);
  EstimatorConfig config;
  config.kind = EstimatorKind::unbiased_wm;

  Rng rng(21);
  // firing gate: silent hidden units contribute exactly zero
  for (int t = 0; t < 200; ++t) {
    const ForwardTrace trace = sample_bias_only(params, rng);
    const double reward = rng.uniform(-2, 2);
    Rng est_rng = rng.fork(t);
    const GradientEstimate grad =
        estimate_unbiased_wm(params, trace, reward, config, est_rng);
    for (int l = 0; l < 2; ++l) {
      for (int u = 0; u < trace.layers[l].activations.size(); ++u) {
        if (trace.layers[l].activations(u) == 0.0) {
          CHECK(grad.layers[l].biases(u) == 0.0);
        }
      }
    }
  }

  // equal rng states give byte-identical estimates and reward tables
  const ForwardTrace trace = sample_bias_only(params, rng);
  Rng r1(999), r2(999);
  const GradientEstimate g1 = estimate_unbiased_wm(params, trace, 1.5, config, r1);
  const GradientEstimate g2 = estimate_unbiased_wm(params, trace, 1.5, config, r2);
  CHECK(grads_identical(g1, g2));
  Rng r3(999), r4(999);
  const IndividualRewardTable t1 = individual_rewards(params, trace, 1.5, config, r3);
  const IndividualRewardTable t2 = individual_rewards(params, trace, 1.5, config, r4);
  for (std::size_t l = 0; l < t1.layers.size(); ++l) {
    for (std::size_t u = 0; u < t1.layers[l].size(); ++u) {
      CHECK(t1.layers[l][u].rhat == t2.layers[l][u].rhat);
      CHECK(t1.layers[l][u].u_sample == t2.layers[l][u].u_sample);
    }
  }

  // zero outgoing weights: slope is zero for every u, so rewards vanish
  NetworkParams zeroed = params;
  zeroed.layers[1].weights.setZero();
  zeroed.layers[2].weights.setZero();
  Rng r5(3);
  const ForwardTrace ztrace = sample_bias_only(zeroed, r5);
  const GradientEstimate zg = estimate_unbiased_wm(zeroed, ztrace, 2.0, config, r5);
  for (int l = 0; l < 2; ++l) CHECK(zg.layers[l].biases.cwiseAbs().maxCoeff() == 0.0);

  EstimatorConfig bad = config;
  bad.uwm_samples = 0;
  bad.uwm_variant = UwmVariant::mc;
  Rng r6(1);
  CHECK_THROWS_AS(estimate_unbiased_wm(params, trace, 1.0, bad, r6), ConfigError);
}

TEST_CASE("unbiased_wm with U forced to H reproduces weight_max exactly") {
  const NetworkParams params = bias_only_net({3, 2, 2}, 1.4, 101);
  EstimatorConfig config;
  config.kind = EstimatorKind::unbiased_wm;
  config.uwm_variant = UwmVariant::u_at_h;
  Rng rng(31);
  for (int t = 0; t < 1000; ++t) {
    const ForwardTrace trace = sample_bias_only(params, rng);
    const double reward = rng.uniform(-3, 3);
    Rng est_rng(0);
    const GradientEstimate ua =
        estimate_unbiased_wm(params, trace, reward, config, est_rng);
    const GradientEstimate wm = estimate_weight_max(params, trace, reward);
    CHECK(grads_identical(ua, wm));
  }
}

TEST_CASE("individual_rewards domain") {
  const NetworkParams params = bias_only_net({1, 1}, 0.5, 1);
  Rng rng(4);
  const ForwardTrace trace = sample_bias_only(params, rng);
  for (EstimatorKind kind : {EstimatorKind::reinforce, EstimatorKind::ste}) {
    EstimatorConfig config;
    config.kind = kind;
    Rng r(0);
    CHECK_THROWS_AS(individual_rewards(params, trace, 1.0, config, r),
                    std::domain_error);
  }
}

TEST_CASE("bias order scaling in the outgoing weight norm") {
  // 2-weight-layer probe: biased estimators against the exact gradient at
  // the hidden unit's bias, outgoing weights scaled by s.
  Rng rng(31);
  const std::vector<int> sizes = {0, 1, 3};
  const NetworkParams base = init_params(sizes, InitScheme::uniform_range(1.0),
                                         rng.next_u64());
  EnumerableTask task;
  task.input = VectorXd(0);
  task.reward_table.resize(8);
  for (auto& r : task.reward_table) r = rng.uniform(-5, 5);

  const std::vector<double> scales = {0.05, 0.1, 0.2};
  auto bias_at = [&](const EstimatorConfig& config, double scale) {
    NetworkParams params = base;
    params.layers[1].weights *= scale;
    return std::fabs(
        estimator_bias_variance(params, task, config, {0, 0}).bias);
  };

  SUBCASE("weight_max slope 2") {
    EstimatorConfig config;
    config.kind = EstimatorKind::weight_max;
    std::vector<double> biases;
    for (double s : scales) biases.push_back(bias_at(config, s));
    CHECK(fit_loglog_slope(scales, biases) == doctest::Approx(2.0).epsilon(0.15));
  }
  SUBCASE("ste slope 2") {
    EstimatorConfig config;
    config.kind = EstimatorKind::ste;
    std::vector<double> biases;
    for (double s : scales) biases.push_back(bias_at(config, s));
    CHECK(fit_loglog_slope(scales, biases) == doctest::Approx(2.0).epsilon(0.15));
  }
  SUBCASE("p_order slopes p+1") {
    for (int p : {2, 3}) {
      EstimatorConfig config;
      config.kind = EstimatorKind::p_order;
      config.order = p;
      std::vector<double> biases;
      for (double s : scales) biases.push_back(bias_at(config, s));
      const double slope = fit_loglog_slope(scales, biases);
      CHECK(std::fabs(slope - (p + 1)) <= 0.5);
    }
  }
}

TEST_CASE("divergent Taylor regime: bias non-decreasing in p at v=4") {
  NetworkParams params;
  params.layer_sizes = {0, 1, 1};
  params.layers.resize(2);
  params.layers[0].weights = MatrixXd(1, 0);
  params.layers[0].biases = VectorXd::Constant(1, 0.3);
  params.layers[1].weights = MatrixXd::Constant(1, 1, 4.0);
  params.layers[1].biases = VectorXd::Constant(1, -4.0);
  EnumerableTask task;
  task.input = VectorXd(0);
  task.reward_table = {1.5, -2.0};

  double prev = 0.0;
  for (int p = 4; p <= 8; ++p) {
    EstimatorConfig config;
    config.kind = EstimatorKind::p_order;
    config.order = p;
    const double bias =
        std::fabs(estimator_bias_variance(params, task, config, {0, 0}).bias);
    CHECK(bias >= prev);
    prev = bias;
  }
}

TEST_CASE("p_order approaches the unbiased estimator in the convergent regime") {
  // small outgoing norms: higher p shrinks the bias toward zero
  const NetworkParams params = bias_only_net({1, 2, 1}, 0.4, 71);
  EnumerableTask task;
  task.input = VectorXd(0);
  task.reward_table = {3.0, -1.5};
  double bias2 = 0, bias6 = 0;
  for (int p : {2, 6}) {
    EstimatorConfig config;
    config.kind = EstimatorKind::p_order;
    config.order = p;
    const double b =
        std::fabs(estimator_bias_variance(params, task, config, {0, 0}).bias);
    (p == 2 ? bias2 : bias6) = b;
  }
  EstimatorConfig uwm;
  uwm.kind = EstimatorKind::unbiased_wm;
  const double uwm_bias =
      std::fabs(estimator_bias_variance(params, task, uwm, {0, 0}).bias);
  CHECK(bias6 < bias2);
  CHECK(uwm_bias <= 1e-10);
  CHECK(bias6 <= 1e-5);
}

TEST_CASE("estimator kind and variant round trips") {
  for (EstimatorKind kind :
       {EstimatorKind::reinforce, EstimatorKind::ste, EstimatorKind::weight_max,
        EstimatorKind::p_order, EstimatorKind::unbiased_wm,
        EstimatorKind::backprop}) {
    CHECK(estimator_kind_from_string(to_string(kind)) == kind);
  }
  UwmVariant variant;
  int samples = 0;
  parse_uwm_variant("single", &variant, &samples);
  CHECK(variant == UwmVariant::single_sample);
  parse_uwm_variant("mc:5", &variant, &samples);
  CHECK(variant == UwmVariant::mc);
  CHECK(samples == 5);
  parse_uwm_variant("rect:10", &variant, &samples);
  CHECK(variant == UwmVariant::rectangle);
  CHECK(samples == 10);
  CHECK_THROWS_AS(parse_uwm_variant("mc:0", &variant, &samples), ConfigError);
  CHECK_THROWS_AS(parse_uwm_variant("banana", &variant, &samples), ConfigError);
  CHECK_THROWS_AS(estimator_kind_from_string("sgd"), ConfigError);
}
