#include "wmax/estimators.hpp"

#include <cmath>
#include <stdexcept>

#include "wmax/errors.hpp"

namespace wmax {
namespace {

// sigmoid(z) and sigmoid(-z) from a single exp, bit-identical to calling
// sigmoid() twice. The negative side is needed where 1 - sigmoid(z) would
// cancel (importance-ratio denominators of saturated units).
struct SigmoidPair {
  double pos;
  double neg;
};

inline SigmoidPair sigmoid_pair(double z) {
  if (z >= 0) {
    const double e = std::exp(-z);
    const double d = 1.0 + e;
    return {1.0 / d, e / d};
  }
  const double e = std::exp(z);
  const double d = 1.0 + e;
  return {e / d, 1.0 / d};
}

void require_sampled(const ForwardTrace& trace) {
  if (trace.kind != ForwardTrace::Kind::sampled) {
    throw std::invalid_argument("estimator needs a sampled trace");
  }
}

// delta_b and the input-scaled weight row for one unit.
inline void apply_unit_update(GradientEstimate& grad, const ForwardTrace& trace,
                              int layer, int unit, double delta_b) {
  grad.layers[layer].biases(unit) = delta_b;
  grad.layers[layer].weights.row(unit) =
      delta_b * trace.layer_input(layer).transpose();
}

struct FamilyOptions {
  int order = 1;                // Taylor order p (ignored on the uwm path)
  bool uwm = false;             // importance-sampled slope instead of Taylor
  UwmVariant variant = UwmVariant::single_sample;
  int samples = 1;
  bool chain_global_reward = false;
  bool want_stacks = false;
};

// Shared walk for the Weight Maximization family. Computes individual
// rewards top-down (output layer first) and the per-unit updates
// delta_b = rhat (H - firing_prob). Hidden units gate on H: not firing means
// exactly zero reward and update.
void wm_family(const NetworkParams& params, const ForwardTrace& trace,
               double reward, const FamilyOptions& opt, Rng* rng,
               GradientEstimate* grad, IndividualRewardTable* table) {
  require_sampled(trace);
  const int num_layers = params.num_layers();
  if (table) table->layers.resize(num_layers);

  // Output layer: rhat is the global reward.
  std::vector<VectorXd> rhat(num_layers);
  {
    const int last = num_layers - 1;
    const auto& out = trace.layers[last];
    const int width = params.layer_sizes[last + 1];
    rhat[last] = VectorXd::Constant(width, reward);
    if (grad) {
      for (int u = 0; u < width; ++u) {
        apply_unit_update(*grad, trace, last, u,
                          reward * (out.activations(u) - out.firing_probs(u)));
      }
    }
    if (table) {
      table->layers[last].assign(width, IndividualReward{reward, {}, {}});
    }
  }

  const int p = opt.order;
  std::vector<double> s(p + 1), t(p + 1), tf(p + 1);
  std::vector<double> derivs(p > 1 ? p - 1 : 0);
  std::vector<double> v_buf, bias_eff_buf, act_buf, den_buf;

  for (int l = num_layers - 2; l >= 0; --l) {
    const auto& weights = params.layers[l + 1].weights;  // [m x n]
    const auto& own = trace.layers[l];
    const auto& next = trace.layers[l + 1];
    const int m = static_cast<int>(weights.rows());
    const int n = static_cast<int>(weights.cols());
    const VectorXd& rhat_next = rhat[l + 1];

    rhat[l] = VectorXd::Zero(n);
    if (table) table->layers[l].assign(n, IndividualReward{});
    v_buf.resize(m);
    bias_eff_buf.resize(m);
    act_buf.resize(m);
    den_buf.resize(m);

    for (int u = 0; u < n; ++u) {
      const double h = own.activations(u);
      if (h == 0.0) {
        if (grad) apply_unit_update(*grad, trace, l, u, 0.0);
        continue;  // rhat stays exactly zero
      }

      for (int i = 0; i < m; ++i) {
        v_buf[i] = weights(i, u);
        bias_eff_buf[i] = next.pre_activations(i) - v_buf[i] * h;
        act_buf[i] = next.activations(i);
      }

      double unit_rhat = 0.0;
      if (!opt.uwm) {
        // p-order Taylor path evaluated at the sampled activation.
        std::fill(s.begin(), s.end(), 0.0);
        std::fill(t.begin(), t.end(), 0.0);
        for (int i = 0; i < m; ++i) {
          const double z = v_buf[i] * h + bias_eff_buf[i];
          const double prob = sigmoid(z);
          const double score = act_buf[i] - prob;
          const double ri = opt.chain_global_reward ? reward : rhat_next(i);
          s[1] += ri * v_buf[i] * score;
          t[1] += v_buf[i] * score;
          if (p >= 2) {
            sigmoid_derivatives_from_prob(p - 1, prob, derivs);
            double v_pow = v_buf[i];
            for (int k = 2; k <= p; ++k) {
              v_pow *= v_buf[i];
              s[k] += ri * v_pow * (-derivs[k - 2]);
              t[k] += v_pow * (-derivs[k - 2]);
            }
          }
        }
        tf[0] = 1.0;
        for (int j = 1; j < p; ++j) {
          tf[j] = composite_tf(j, std::span<const double>(t.data() + 1, p));
        }
        double k_factorial = 1.0;
        double sign = 1.0;
        for (int k = 1; k <= p; ++k) {
          k_factorial *= k;
          double rhat_k = 0.0;
          for (int j = 1; j <= k; ++j) {
            rhat_k += static_cast<double>(binomial(k - 1, j - 1)) * s[j] * tf[k - j];
          }
          unit_rhat += sign * rhat_k / k_factorial;
          sign = -sign;
        }
        if (table && opt.want_stacks) {
          DerivativeStack stack;
          stack.s.assign(s.begin() + 1, s.end());
          stack.t.assign(t.begin() + 1, t.end());
          (*table).layers[l][u].stack = std::move(stack);
        }
      } else {
        // Importance-sampled slope estimate at one or more points of [0, 1].
        for (int i = 0; i < m; ++i) {
          const double z = v_buf[i] * h + bias_eff_buf[i];
          const SigmoidPair pair = sigmoid_pair(z);
          den_buf[i] = act_buf[i] != 0.0 ? pair.pos : pair.neg;
        }
        const auto slope_at = [&](double x) {
          double ratio = 1.0;
          double slope = 0.0;
          for (int i = 0; i < m; ++i) {
            const double z = v_buf[i] * x + bias_eff_buf[i];
            const SigmoidPair pair = sigmoid_pair(z);
            ratio *= (act_buf[i] != 0.0 ? pair.pos : pair.neg) / den_buf[i];
            const double ri = opt.chain_global_reward ? reward : rhat_next(i);
            slope += ri * v_buf[i] * (act_buf[i] - pair.pos);
          }
          return ratio * slope;
        };
        switch (opt.variant) {
          case UwmVariant::single_sample: {
            const double x = rng->uniform();
            unit_rhat = slope_at(x);
            if (table) (*table).layers[l][u].u_sample = x;
            break;
          }
          case UwmVariant::mc: {
            double acc = 0.0;
            for (int j = 0; j < opt.samples; ++j) acc += slope_at(rng->uniform());
            unit_rhat = acc / opt.samples;
            break;
          }
          case UwmVariant::rectangle: {
            double acc = 0.0;
            for (int j = 0; j < opt.samples; ++j) {
              acc += slope_at((j + 0.5) / opt.samples);
            }
            unit_rhat = acc / opt.samples;
            break;
          }
          case UwmVariant::u_at_h: {
            unit_rhat = slope_at(h);
            break;
          }
        }
      }

      rhat[l](u) = unit_rhat;  // h == 1, so the H factor is implicit
      if (table) (*table).layers[l][u].rhat = unit_rhat;
      if (grad) {
        apply_unit_update(*grad, trace, l, u,
                          unit_rhat * (h - own.firing_probs(u)));
      }
    }
  }
}

}  // namespace

void EstimatorConfig::validate() const {
  if (kind == EstimatorKind::p_order && (order < 1 || order > kMaxOrder)) {
    throw ConfigError("p_order: order must lie in [1, " +
                      std::to_string(kMaxOrder) + "]");
  }
  if (kind == EstimatorKind::unbiased_wm && uwm_samples < 1) {
    throw ConfigError("unbiased_wm: sample count M must be at least 1");
  }
}

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::reinforce: return "reinforce";
    case EstimatorKind::ste: return "ste";
    case EstimatorKind::weight_max: return "weight_max";
    case EstimatorKind::p_order: return "p_order";
    case EstimatorKind::unbiased_wm: return "unbiased_wm";
    case EstimatorKind::backprop: return "backprop";
  }
  return "?";
}

EstimatorKind estimator_kind_from_string(const std::string& name) {
  if (name == "reinforce") return EstimatorKind::reinforce;
  if (name == "ste") return EstimatorKind::ste;
  if (name == "weight_max") return EstimatorKind::weight_max;
  if (name == "p_order") return EstimatorKind::p_order;
  if (name == "unbiased_wm") return EstimatorKind::unbiased_wm;
  if (name == "backprop") return EstimatorKind::backprop;
  throw ConfigError("unknown estimator: " + name);
}

std::string uwm_variant_to_string(UwmVariant variant, int samples) {
  switch (variant) {
    case UwmVariant::single_sample: return "single";
    case UwmVariant::mc: return "mc:" + std::to_string(samples);
    case UwmVariant::rectangle: return "rect:" + std::to_string(samples);
    case UwmVariant::u_at_h: return "u_at_h";
  }
  return "?";
}

void parse_uwm_variant(const std::string& text, UwmVariant* variant,
                       int* samples) {
  if (text == "single") {
    *variant = UwmVariant::single_sample;
    *samples = 1;
    return;
  }
  if (text == "u_at_h") {
    *variant = UwmVariant::u_at_h;
    *samples = 1;
    return;
  }
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  if ((head == "mc" || head == "rect") && colon != std::string::npos) {
    int m = 0;
    try {
      m = std::stoi(text.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("bad uwm variant sample count: " + text);
    }
    if (m < 1) throw ConfigError("uwm variant needs M >= 1: " + text);
    *variant = head == "mc" ? UwmVariant::mc : UwmVariant::rectangle;
    *samples = m;
    return;
  }
  throw ConfigError("unknown uwm variant: " + text +
                    " (expected single, mc:M or rect:M)");
}

std::string describe(const EstimatorConfig& config) {
  switch (config.kind) {
    case EstimatorKind::p_order:
      return "p_order(" + std::to_string(config.order) + ")";
    case EstimatorKind::unbiased_wm:
      return "unbiased_wm[" +
             uwm_variant_to_string(config.uwm_variant, config.uwm_samples) + "]";
    default:
      return to_string(config.kind);
  }
}

GradientEstimate estimate_reinforce(const NetworkParams& params,
                                    const ForwardTrace& trace, double reward) {
  require_sampled(trace);
  GradientEstimate grad = GradientEstimate::zeros_like(params);
  for (int l = 0; l < params.num_layers(); ++l) {
    const auto& layer = trace.layers[l];
    for (int u = 0; u < layer.activations.size(); ++u) {
      apply_unit_update(grad, trace, l, u,
                        reward * (layer.activations(u) - layer.firing_probs(u)));
    }
  }
  return grad;
}

GradientEstimate estimate_ste(const NetworkParams& params,
                              const ForwardTrace& trace, double reward) {
  require_sampled(trace);
  GradientEstimate grad = GradientEstimate::zeros_like(params);
  const int last = params.num_layers() - 1;
  VectorXd delta_next(params.output_dim());
  {
    const auto& out = trace.layers[last];
    for (int u = 0; u < delta_next.size(); ++u) {
      delta_next(u) = reward * (out.activations(u) - out.firing_probs(u));
      apply_unit_update(grad, trace, last, u, delta_next(u));
    }
  }
  for (int l = last - 1; l >= 0; --l) {
    const auto& own = trace.layers[l];
    VectorXd feedback = params.layers[l + 1].weights.transpose() * delta_next;
    VectorXd delta(own.activations.size());
    for (int u = 0; u < delta.size(); ++u) {
      const double prob = own.firing_probs(u);
      delta(u) = feedback(u) * prob * (1.0 - prob);
      apply_unit_update(grad, trace, l, u, delta(u));
    }
    delta_next = std::move(delta);
  }
  return grad;
}

GradientEstimate estimate_weight_max(const NetworkParams& params,
                                     const ForwardTrace& trace, double reward) {
  return estimate_p_order(params, trace, reward, 1);
}

GradientEstimate estimate_p_order(const NetworkParams& params,
                                  const ForwardTrace& trace, double reward,
                                  int order, bool chain_global_reward) {
  if (order < 1 || order > kMaxOrder) {
    throw ConfigError("p_order: order must lie in [1, " +
                      std::to_string(kMaxOrder) + "]");
  }
  FamilyOptions opt;
  opt.order = order;
  opt.chain_global_reward = chain_global_reward;
  GradientEstimate grad = GradientEstimate::zeros_like(params);
  wm_family(params, trace, reward, opt, nullptr, &grad, nullptr);
  return grad;
}

GradientEstimate estimate_unbiased_wm(const NetworkParams& params,
                                      const ForwardTrace& trace, double reward,
                                      const EstimatorConfig& config, Rng& rng) {
  if (config.uwm_samples < 1) {
    throw ConfigError("unbiased_wm: sample count M must be at least 1");
  }
  FamilyOptions opt;
  opt.uwm = true;
  opt.variant = config.uwm_variant;
  opt.samples = config.uwm_samples;
  opt.chain_global_reward = config.chain_global_reward;
  GradientEstimate grad = GradientEstimate::zeros_like(params);
  wm_family(params, trace, reward, opt, &rng, &grad, nullptr);
  return grad;
}

GradientEstimate estimate(const NetworkParams& params, const ForwardTrace& trace,
                          double reward, const EstimatorConfig& config,
                          Rng& rng) {
  config.validate();
  switch (config.kind) {
    case EstimatorKind::reinforce:
      return estimate_reinforce(params, trace, reward);
    case EstimatorKind::ste:
      return estimate_ste(params, trace, reward);
    case EstimatorKind::weight_max:
      return estimate_weight_max(params, trace, reward);
    case EstimatorKind::p_order:
      return estimate_p_order(params, trace, reward, config.order,
                              config.chain_global_reward);
    case EstimatorKind::unbiased_wm:
      return estimate_unbiased_wm(params, trace, reward, config, rng);
    case EstimatorKind::backprop:
      throw ConfigError(
          "the backprop baseline runs through the trainer, not estimate()");
  }
  throw ConfigError("unhandled estimator kind");
}

IndividualRewardTable individual_rewards(const NetworkParams& params,
                                         const ForwardTrace& trace,
                                         double reward,
                                         const EstimatorConfig& config,
                                         Rng& rng) {
  config.validate();
  FamilyOptions opt;
  switch (config.kind) {
    case EstimatorKind::weight_max:
      opt.order = 1;
      break;
    case EstimatorKind::p_order:
      opt.order = config.order;
      opt.want_stacks = true;
      break;
    case EstimatorKind::unbiased_wm:
      opt.uwm = true;
      opt.variant = config.uwm_variant;
      opt.samples = config.uwm_samples;
      break;
    default:
      throw std::domain_error(
          "individual rewards exist only for the Weight Maximization family");
  }
  opt.chain_global_reward = config.chain_global_reward;
  IndividualRewardTable table;
  wm_family(params, trace, reward, opt, &rng, nullptr, &table);
  return table;
}

}  // namespace wmax
