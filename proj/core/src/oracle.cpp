#include "wmax/oracle.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

#include "wmax/errors.hpp"
#include "wmax/math_kernel.hpp"
#include "wmax/rng.hpp"

namespace wmax {
namespace {

constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Gauss-Legendre quadrature on [0, 1]
// ---------------------------------------------------------------------------

struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};

Quadrature gauss_legendre_unit(int n) {
  Quadrature quad;
  quad.nodes.resize(n);
  quad.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    // Newton iteration from the Chebyshev estimate of the i-th root of P_n.
    double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double derivative = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      derivative = n * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / derivative;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * derivative * derivative);
    quad.nodes[i] = 0.5 * (1.0 - x);
    quad.nodes[n - 1 - i] = 0.5 * (1.0 + x);
    quad.weights[i] = 0.5 * w;
    quad.weights[n - 1 - i] = 0.5 * w;
  }
  return quad;
}

// ---------------------------------------------------------------------------
// Layer-by-layer enumeration tables
// ---------------------------------------------------------------------------

inline int bit(int mask, int i) { return (mask >> i) & 1; }

// Precomputed per-config quantities of one network/task pair. Weight layer l
// maps "source" configs (the fixed input for l = 0, otherwise masks of
// activation layer l-1) to masks of its own output units.
struct Enumeration {
  const NetworkParams* params = nullptr;
  const EnumerableTask* task = nullptr;
  int num_layers = 0;                        // weight layers
  std::vector<int> width;                    // units of weight layer l
  std::vector<int> count;                    // 1 << width
  std::vector<int> src_count;                // source configs of weight layer l
  std::vector<std::vector<VectorXd>> pre;    // pre[l][src]
  std::vector<std::vector<VectorXd>> fire;   // sigmoid(pre)
  std::vector<std::vector<VectorXd>> off;    // sigmoid(-pre)
  std::vector<std::vector<double>> marg;     // P(layer l output = c)
  std::vector<std::vector<double>> value;    // E[R | layer l output = c]
  std::vector<std::vector<double>> value2;   // E[R^2 | layer l output = c]

  double trans(int l, int src, int d) const {
    const VectorXd& f = fire[l][src];
    const VectorXd& o = off[l][src];
    double p = 1.0;
    for (int i = 0; i < width[l]; ++i) {
      p *= bit(d, i) ? f(i) : o(i);
    }
    return p;
  }

  VectorXd mask_vector(int l, int mask) const {
    VectorXd acts(width[l]);
    for (int i = 0; i < width[l]; ++i) acts(i) = bit(mask, i);
    return acts;
  }

  // Activations feeding weight layer l under source config src.
  VectorXd source_acts(int l, int src) const {
    return l == 0 ? task->input : mask_vector(l - 1, src);
  }
};

Enumeration build_enumeration(const NetworkParams& params,
                              const EnumerableTask& task) {
  params.validate();
  if (params.total_unit_count() > kEnumerationCapacity) {
    throw CapacityError("network has " +
                        std::to_string(params.total_unit_count()) +
                        " units; exact enumeration is limited to " +
                        std::to_string(kEnumerationCapacity));
  }
  if (task.input.size() != params.input_dim()) {
    throw ShapeError("task input does not match the network input dimension");
  }
  const std::size_t out_configs = std::size_t(1) << params.output_dim();
  if (task.reward_table.size() != out_configs) {
    throw ShapeError("reward_table must cover all " +
                     std::to_string(out_configs) + " output configurations");
  }

  Enumeration e;
  e.params = &params;
  e.task = &task;
  e.num_layers = params.num_layers();
  e.width.resize(e.num_layers);
  e.count.resize(e.num_layers);
  e.src_count.resize(e.num_layers);
  e.pre.resize(e.num_layers);
  e.fire.resize(e.num_layers);
  e.off.resize(e.num_layers);
  for (int l = 0; l < e.num_layers; ++l) {
    e.width[l] = params.layer_sizes[l + 1];
    e.count[l] = 1 << e.width[l];
    e.src_count[l] = l == 0 ? 1 : e.count[l - 1];
    e.pre[l].resize(e.src_count[l]);
    e.fire[l].resize(e.src_count[l]);
    e.off[l].resize(e.src_count[l]);
    for (int src = 0; src < e.src_count[l]; ++src) {
      const VectorXd acts = e.source_acts(l, src);
      VectorXd z = params.layers[l].weights * acts + params.layers[l].biases;
      VectorXd f(e.width[l]), o(e.width[l]);
      for (int i = 0; i < e.width[l]; ++i) {
        f(i) = sigmoid(z(i));
        o(i) = sigmoid(-z(i));
      }
      e.pre[l][src] = std::move(z);
      e.fire[l][src] = std::move(f);
      e.off[l][src] = std::move(o);
    }
  }

  e.marg.resize(e.num_layers);
  for (int l = 0; l < e.num_layers; ++l) {
    e.marg[l].assign(e.count[l], 0.0);
    for (int src = 0; src < e.src_count[l]; ++src) {
      const double p_src = l == 0 ? 1.0 : e.marg[l - 1][src];
      if (p_src == 0.0) continue;
      for (int d = 0; d < e.count[l]; ++d) {
        e.marg[l][d] += p_src * e.trans(l, src, d);
      }
    }
  }

  e.value.resize(e.num_layers);
  e.value2.resize(e.num_layers);
  const int last = e.num_layers - 1;
  e.value[last] = task.reward_table;
  e.value2[last].resize(e.count[last]);
  for (int c = 0; c < e.count[last]; ++c) {
    e.value2[last][c] = task.reward_table[c] * task.reward_table[c];
  }
  for (int l = last - 1; l >= 0; --l) {
    e.value[l].assign(e.count[l], 0.0);
    e.value2[l].assign(e.count[l], 0.0);
    for (int c = 0; c < e.count[l]; ++c) {
      for (int d = 0; d < e.count[l + 1]; ++d) {
        const double t = e.trans(l + 1, c, d);
        e.value[l][c] += t * e.value[l + 1][d];
        e.value2[l][c] += t * e.value2[l + 1][d];
      }
    }
  }
  return e;
}

void check_unit(const Enumeration& e, UnitAddress addr) {
  if (addr.layer < 0 || addr.layer >= e.num_layers || addr.unit < 0 ||
      addr.unit >= e.width[addr.layer]) {
    throw std::out_of_range("unit address out of bounds");
  }
}

// ---------------------------------------------------------------------------
// Per-estimator message DP
//
// mean[l] holds E[q_u | configs], sec[l] holds E[q_u q_v | configs], where
// q is the quantity chained backward by the estimator: the individual reward
// for the Weight Maximization family, the bias update for STE. Messages for
// the family depend only on the layer's own config; STE messages also depend
// on the source config (through sigma'(z)), so they are pair-indexed.
// ---------------------------------------------------------------------------

struct Messages {
  bool per_src = false;
  std::vector<std::vector<VectorXd>> mean;  // [l][pair]
  std::vector<std::vector<MatrixXd>> sec;   // [l][pair]

  int pair_index(const Enumeration& e, int l, int src, int c) const {
    return per_src ? src * e.count[l] + c : c;
  }
};

// K1/K2 kernel of one firing unit u of layer l against its outgoing layer:
// R_u = sum_i K1_i q_i in mean, E over the unit's own draws of the quadratic
// form K2_ij for the second moment.
struct UnitKernel {
  VectorXd k1;
  MatrixXd k2;
};

// Taylor-path kernel (weight_max / p_order): deterministic in (c, d).
UnitKernel taylor_kernel(const Enumeration& e, int l, int c, int d, int u,
                         int order) {
  const auto& weights = e.params->layers[l + 1].weights;
  const int m = e.width[l + 1];
  const VectorXd& f = e.fire[l + 1][c];

  const int p = order;
  std::vector<double> t(p + 1, 0.0);
  MatrixXd a = MatrixXd::Zero(p + 1, m);  // a(j, i) = per-unit s^(j) factor
  std::vector<double> derivs(p > 1 ? p - 1 : 0);
  for (int i = 0; i < m; ++i) {
    const double v = weights(i, u);
    const double score = bit(d, i) - f(i);
    a(1, i) = v * score;
    t[1] += v * score;
    if (p >= 2) {
      sigmoid_derivatives_from_prob(p - 1, f(i), derivs);
      double v_pow = v;
      for (int k = 2; k <= p; ++k) {
        v_pow *= v;
        a(k, i) = v_pow * (-derivs[k - 2]);
        t[k] += a(k, i);
      }
    }
  }
  std::vector<double> tf(p, 0.0);
  tf[0] = 1.0;
  for (int j = 1; j < p; ++j) {
    tf[j] = composite_tf(j, std::span<const double>(t.data() + 1, p));
  }

  UnitKernel kernel;
  kernel.k1 = VectorXd::Zero(m);
  double k_factorial = 1.0;
  double sign = 1.0;
  for (int k = 1; k <= p; ++k) {
    k_factorial *= k;
    for (int j = 1; j <= k; ++j) {
      const double coeff =
          sign / k_factorial * double(binomial(k - 1, j - 1)) * tf[k - j];
      kernel.k1 += coeff * a.row(j).transpose();
    }
    sign = -sign;
  }
  kernel.k2 = kernel.k1 * kernel.k1.transpose();
  return kernel;
}

// Unbiased-WM kernel: importance-sampled slope integrated over the unit's
// own uniform draw(s).
UnitKernel uwm_kernel(const Enumeration& e, int l, int c, int d, int u,
                      const EstimatorConfig& config, const Quadrature& quad) {
  const auto& weights = e.params->layers[l + 1].weights;
  const int m = e.width[l + 1];
  const VectorXd& z_at_h = e.pre[l + 1][c];
  const VectorXd& f = e.fire[l + 1][c];
  const VectorXd& o = e.off[l + 1][c];
  const double h = bit(c, u);

  VectorXd v(m), den(m);
  for (int i = 0; i < m; ++i) {
    v(i) = weights(i, u);
    den(i) = bit(d, i) ? f(i) : o(i);
  }

  // slope terms and ratio at a point x
  VectorXd g(m);
  const auto eval = [&](double x, double* ratio_out) {
    double ratio = 1.0;
    for (int i = 0; i < m; ++i) {
      const double z = v(i) * x + (z_at_h(i) - v(i) * h);
      const double num_fire = sigmoid(z);
      const double num = bit(d, i) ? num_fire : sigmoid(-z);
      ratio *= num / den(i);
      g(i) = v(i) * (bit(d, i) - num_fire);
    }
    *ratio_out = ratio;
  };

  UnitKernel kernel;
  kernel.k1 = VectorXd::Zero(m);
  kernel.k2 = MatrixXd::Zero(m, m);
  switch (config.uwm_variant) {
    case UwmVariant::single_sample:
    case UwmVariant::mc: {
      const int samples =
          config.uwm_variant == UwmVariant::single_sample ? 1 : config.uwm_samples;
      MatrixXd k2_one = MatrixXd::Zero(m, m);  // E[rho^2 g g^T]
      for (std::size_t q = 0; q < quad.nodes.size(); ++q) {
        double ratio = 0.0;
        eval(quad.nodes[q], &ratio);
        kernel.k1 += quad.weights[q] * ratio * g;
        k2_one += (quad.weights[q] * ratio * ratio) * (g * g.transpose());
      }
      const double inv_m = 1.0 / double(samples);
      kernel.k2 = inv_m * k2_one +
                  (1.0 - inv_m) * (kernel.k1 * kernel.k1.transpose());
      break;
    }
    case UwmVariant::rectangle: {
      for (int j = 0; j < config.uwm_samples; ++j) {
        const double x = (j + 0.5) / config.uwm_samples;
        double ratio = 0.0;
        eval(x, &ratio);
        kernel.k1 += (ratio / config.uwm_samples) * g;
      }
      kernel.k2 = kernel.k1 * kernel.k1.transpose();
      break;
    }
    case UwmVariant::u_at_h: {
      double ratio = 0.0;
      eval(h, &ratio);
      kernel.k1 = ratio * g;
      kernel.k2 = kernel.k1 * kernel.k1.transpose();
      break;
    }
  }
  return kernel;
}

// Messages for STE and the WM family, from the output layer down to
// down_to_layer inclusive.
Messages compute_messages(const Enumeration& e, const EstimatorConfig& config,
                          const Quadrature& quad, int down_to_layer) {
  Messages msg;
  msg.per_src = config.kind == EstimatorKind::ste;
  msg.mean.resize(e.num_layers);
  msg.sec.resize(e.num_layers);

  const int last = e.num_layers - 1;
  const int order = config.kind == EstimatorKind::weight_max ? 1 : config.order;

  // Base: output layer.
  {
    const int pairs = msg.per_src ? e.src_count[last] * e.count[last] : e.count[last];
    msg.mean[last].resize(pairs);
    msg.sec[last].resize(pairs);
    for (int src = 0; src < (msg.per_src ? e.src_count[last] : 1); ++src) {
      for (int c = 0; c < e.count[last]; ++c) {
        const int idx = msg.pair_index(e, last, src, c);
        const double r = e.value[last][c];
        if (config.kind == EstimatorKind::ste) {
          VectorXd mean(e.width[last]);
          for (int u = 0; u < e.width[last]; ++u) {
            mean(u) = r * (bit(c, u) - e.fire[last][src](u));
          }
          msg.mean[last][idx] = mean;
          msg.sec[last][idx] = mean * mean.transpose();
        } else {
          msg.mean[last][idx] = VectorXd::Constant(e.width[last], r);
          msg.sec[last][idx] = MatrixXd::Constant(e.width[last], e.width[last], r * r);
        }
      }
    }
  }

  for (int l = last - 1; l >= down_to_layer; --l) {
    const int src_dim = msg.per_src ? e.src_count[l] : 1;
    msg.mean[l].assign(std::size_t(src_dim) * e.count[l], VectorXd());
    msg.sec[l].assign(std::size_t(src_dim) * e.count[l], MatrixXd());

    for (int c = 0; c < e.count[l]; ++c) {
      const int n = e.width[l];
      const int m = e.width[l + 1];

      if (config.kind == EstimatorKind::ste) {
        // Accumulate downstream moments, then push through W^T and sigma'.
        VectorXd m1 = VectorXd::Zero(m);
        MatrixXd m2 = MatrixXd::Zero(m, m);
        for (int d = 0; d < e.count[l + 1]; ++d) {
          const double t = e.trans(l + 1, c, d);
          const int down = msg.pair_index(e, l + 1, c, d);
          m1 += t * msg.mean[l + 1][down];
          m2 += t * msg.sec[l + 1][down];
        }
        const MatrixXd& w = e.params->layers[l + 1].weights;
        const VectorXd feed = w.transpose() * m1;
        const MatrixXd quad_form = w.transpose() * m2 * w;
        for (int src = 0; src < src_dim; ++src) {
          VectorXd sig_prime(n);
          for (int u = 0; u < n; ++u) {
            sig_prime(u) = e.fire[l][src](u) * e.off[l][src](u);
          }
          const int idx = msg.pair_index(e, l, src, c);
          msg.mean[l][idx] = sig_prime.asDiagonal() * feed;
          msg.sec[l][idx] =
              sig_prime.asDiagonal() * quad_form * sig_prime.asDiagonal();
        }
        continue;
      }

      // Weight Maximization family: per firing unit kernels against the
      // outgoing layer, reduced over the next config.
      VectorXd mean = VectorXd::Zero(n);
      MatrixXd sec = MatrixXd::Zero(n, n);
      std::vector<UnitKernel> kernels(n);
      for (int d = 0; d < e.count[l + 1]; ++d) {
        const double t = e.trans(l + 1, c, d);
        const int down = msg.pair_index(e, l + 1, c, d);
        VectorXd down_mean;
        MatrixXd down_sec;
        if (config.chain_global_reward) {
          down_mean = VectorXd::Constant(m, e.value[l + 1][d]);
          down_sec = MatrixXd::Constant(m, m, e.value2[l + 1][d]);
        } else {
          down_mean = msg.mean[l + 1][down];
          down_sec = msg.sec[l + 1][down];
        }
        for (int u = 0; u < n; ++u) {
          if (!bit(c, u)) continue;  // not firing: reward is exactly zero
          kernels[u] = config.kind == EstimatorKind::unbiased_wm
                           ? uwm_kernel(e, l, c, d, u, config, quad)
                           : taylor_kernel(e, l, c, d, u, order);
        }
        for (int u = 0; u < n; ++u) {
          if (!bit(c, u)) continue;
          mean(u) += t * kernels[u].k1.dot(down_mean);
          sec(u, u) += t * kernels[u].k2.cwiseProduct(down_sec).sum();
          for (int w2 = u + 1; w2 < n; ++w2) {
            if (!bit(c, w2)) continue;
            sec(u, w2) +=
                t * kernels[u].k1.dot(down_sec * kernels[w2].k1);
          }
        }
      }
      for (int u = 0; u < n; ++u) {
        for (int w2 = u + 1; w2 < n; ++w2) {
          sec(w2, u) = sec(u, w2);
        }
      }
      for (int src = 0; src < src_dim; ++src) {
        const int idx = msg.pair_index(e, l, src, c);
        msg.mean[l][idx] = mean;
        msg.sec[l][idx] = sec;
      }
    }
  }
  return msg;
}

struct CoordinateMoments {
  double first = 0.0;
  double second = 0.0;
};

// Moments of the estimate at one bias coordinate.
CoordinateMoments coordinate_moments(const Enumeration& e,
                                     const EstimatorConfig& config,
                                     const Messages* msg, UnitAddress target) {
  const int l = target.layer;
  const int u = target.unit;
  CoordinateMoments out;
  for (int src = 0; src < e.src_count[l]; ++src) {
    const double p_src = l == 0 ? 1.0 : e.marg[l - 1][src];
    if (p_src == 0.0) continue;
    const double sigma = e.fire[l][src](u);
    for (int c = 0; c < e.count[l]; ++c) {
      const double weight = p_src * e.trans(l, src, c);
      if (weight == 0.0) continue;
      const double score = bit(c, u) - sigma;
      double first = 0.0;
      double second = 0.0;
      if (config.kind == EstimatorKind::reinforce) {
        first = score * e.value[l][c];
        second = score * score * e.value2[l][c];
      } else if (config.kind == EstimatorKind::ste) {
        const int idx = msg->pair_index(e, l, src, c);
        first = msg->mean[l][idx](u);
        second = msg->sec[l][idx](u, u);
      } else {
        const int idx = msg->pair_index(e, l, src, c);
        first = score * msg->mean[l][idx](u);
        second = score * score * msg->sec[l][idx](u, u);
      }
      out.first += weight * first;
      out.second += weight * second;
    }
  }
  return out;
}

const std::vector<EstimatorConfig>& default_study_estimators() {
  static const std::vector<EstimatorConfig> kEstimators = [] {
    std::vector<EstimatorConfig> list(5);
    list[0].kind = EstimatorKind::reinforce;
    list[1].kind = EstimatorKind::ste;
    list[2].kind = EstimatorKind::weight_max;
    list[3].kind = EstimatorKind::p_order;
    list[3].order = 2;
    list[4].kind = EstimatorKind::unbiased_wm;
    return list;
  }();
  return kEstimators;
}

}  // namespace

double exact_expected_reward(const NetworkParams& params,
                             const EnumerableTask& task) {
  const Enumeration e = build_enumeration(params, task);
  const int last = e.num_layers - 1;
  double total = 0.0;
  for (int c = 0; c < e.count[last]; ++c) {
    total += e.marg[last][c] * task.reward_table[c];
  }
  return total;
}

GradientEstimate exact_gradient(const NetworkParams& params,
                                const EnumerableTask& task) {
  const Enumeration e = build_enumeration(params, task);
  GradientEstimate grad = GradientEstimate::zeros_like(params);
  for (int l = 0; l < e.num_layers; ++l) {
    for (int src = 0; src < e.src_count[l]; ++src) {
      const double p_src = l == 0 ? 1.0 : e.marg[l - 1][src];
      if (p_src == 0.0) continue;
      const VectorXd acts = e.source_acts(l, src);
      const VectorXd& f = e.fire[l][src];
      const VectorXd& o = e.off[l][src];
      for (int u = 0; u < e.width[l]; ++u) {
        // Conditional value of the layer with unit u forced to 0 and 1,
        // siblings at their sampling probabilities.
        double r1 = 0.0;
        double r0 = 0.0;
        for (int sib = 0; sib < e.count[l]; ++sib) {
          if (bit(sib, u)) continue;
          double q = 1.0;
          for (int j = 0; j < e.width[l]; ++j) {
            if (j == u) continue;
            q *= bit(sib, j) ? f(j) : o(j);
          }
          r0 += q * e.value[l][sib];
          r1 += q * e.value[l][sib | (1 << u)];
        }
        const double slope = p_src * f(u) * o(u) * (r1 - r0);
        grad.layers[l].biases(u) += slope;
        grad.layers[l].weights.row(u) += slope * acts.transpose();
      }
    }
  }
  return grad;
}

double natural_extension_value(const NetworkParams& params,
                               const EnumerableTask& task, UnitAddress addr,
                               double u) {
  const Enumeration e = build_enumeration(params, task);
  check_unit(e, addr);
  const int l = addr.layer;
  if (l == e.num_layers - 1) {
    throw std::domain_error("the natural extension applies to hidden units only");
  }

  double total = 0.0;
  for (int src = 0; src < e.src_count[l]; ++src) {
    const double p_src = l == 0 ? 1.0 : e.marg[l - 1][src];
    if (p_src == 0.0) continue;
    const VectorXd& f = e.fire[l][src];
    const VectorXd& o = e.off[l][src];
    for (int sib = 0; sib < e.count[l]; ++sib) {
      if (bit(sib, addr.unit)) continue;
      double q = 1.0;
      for (int j = 0; j < e.width[l]; ++j) {
        if (j == addr.unit) continue;
        q *= bit(sib, j) ? f(j) : o(j);
      }
      // Layer activations with the unit passing u downstream.
      VectorXd acts = e.mask_vector(l, sib);
      acts(addr.unit) = u;
      const VectorXd z =
          params.layers[l + 1].weights * acts + params.layers[l + 1].biases;
      double val = 0.0;
      for (int d = 0; d < e.count[l + 1]; ++d) {
        double p = 1.0;
        for (int i = 0; i < e.width[l + 1]; ++i) {
          p *= sigmoid((2.0 * bit(d, i) - 1.0) * z(i));
        }
        val += p * e.value[l + 1][d];
      }
      total += p_src * q * val;
    }
  }
  return total;
}

double expected_rhat_order(const NetworkParams& params,
                           const EnumerableTask& task, UnitAddress addr, int h,
                           int order) {
  const Enumeration e = build_enumeration(params, task);
  check_unit(e, addr);
  if (e.num_layers != 2 || addr.layer != 0) {
    throw std::domain_error(
        "expected_rhat_order needs a first-hidden-layer unit whose outgoing "
        "units are output units");
  }
  if (h != 0 && h != 1) {
    throw std::domain_error("h must be 0 or 1");
  }
  if (order < 1 || order > kMaxOrder) {
    throw std::out_of_range("order outside [1, " + std::to_string(kMaxOrder) + "]");
  }

  const int u = addr.unit;
  const int n = e.width[0];
  const int m = e.width[1];
  const VectorXd& f = e.fire[0][0];
  const VectorXd& o = e.off[0][0];
  const auto& w_out = params.layers[1].weights;

  const int p = order;
  std::vector<double> s(p + 1), t(p + 1);
  std::vector<double> derivs(p > 1 ? p - 1 : 0);

  double total = 0.0;
  for (int sib = 0; sib < e.count[0]; ++sib) {
    if (bit(sib, u)) continue;
    double q = 1.0;
    for (int j = 0; j < n; ++j) {
      if (j == u) continue;
      q *= bit(sib, j) ? f(j) : o(j);
    }
    const int layer_config = sib | (h << u);
    const VectorXd& fire_next = e.fire[1][layer_config];

    for (int d = 0; d < e.count[1]; ++d) {
      const double p_next = e.trans(1, layer_config, d);
      const double rhat_down = e.value[1][d];  // outgoing units are outputs
      std::fill(s.begin(), s.end(), 0.0);
      std::fill(t.begin(), t.end(), 0.0);
      for (int i = 0; i < m; ++i) {
        const double v = w_out(i, u);
        const double score = bit(d, i) - fire_next(i);
        s[1] += rhat_down * v * score;
        t[1] += v * score;
        if (p >= 2) {
          sigmoid_derivatives_from_prob(p - 1, fire_next(i), derivs);
          double v_pow = v;
          for (int k = 2; k <= p; ++k) {
            v_pow *= v;
            s[k] += rhat_down * v_pow * (-derivs[k - 2]);
            t[k] += v_pow * (-derivs[k - 2]);
          }
        }
      }
      double rhat_p = 0.0;
      for (int j = 1; j <= p; ++j) {
        rhat_p += double(binomial(p - 1, j - 1)) * s[j] *
                  composite_tf(p - j, std::span<const double>(t.data() + 1, p));
      }
      total += q * p_next * rhat_p;
    }
  }
  return total;
}

GradientEstimate expected_estimate(const NetworkParams& params,
                                   const EnumerableTask& task,
                                   const EstimatorConfig& config,
                                   int quad_nodes) {
  config.validate();
  if (config.kind == EstimatorKind::backprop) {
    throw ConfigError("the backprop baseline has no enumerated estimator form");
  }
  const Enumeration e = build_enumeration(params, task);
  const Quadrature quad = gauss_legendre_unit(quad_nodes);
  Messages msg;
  if (config.kind != EstimatorKind::reinforce) {
    msg = compute_messages(e, config, quad, 0);
  }

  GradientEstimate grad = GradientEstimate::zeros_like(params);
  for (int l = 0; l < e.num_layers; ++l) {
    for (int src = 0; src < e.src_count[l]; ++src) {
      const double p_src = l == 0 ? 1.0 : e.marg[l - 1][src];
      if (p_src == 0.0) continue;
      const VectorXd acts = e.source_acts(l, src);
      for (int c = 0; c < e.count[l]; ++c) {
        const double weight = p_src * e.trans(l, src, c);
        if (weight == 0.0) continue;
        for (int u = 0; u < e.width[l]; ++u) {
          const double score = bit(c, u) - e.fire[l][src](u);
          double delta_b = 0.0;
          if (config.kind == EstimatorKind::reinforce) {
            delta_b = score * e.value[l][c];
          } else if (config.kind == EstimatorKind::ste) {
            delta_b = msg.mean[l][msg.pair_index(e, l, src, c)](u);
          } else {
            delta_b = score * msg.mean[l][msg.pair_index(e, l, src, c)](u);
          }
          grad.layers[l].biases(u) += weight * delta_b;
          grad.layers[l].weights.row(u) += weight * delta_b * acts.transpose();
        }
      }
    }
  }
  return grad;
}

BiasVarianceReport estimator_bias_variance(const NetworkParams& params,
                                           const EnumerableTask& task,
                                           const EstimatorConfig& config,
                                           UnitAddress target, int quad_nodes) {
  config.validate();
  if (config.kind == EstimatorKind::backprop) {
    throw ConfigError("the backprop baseline has no enumerated estimator form");
  }
  const Enumeration e = build_enumeration(params, task);
  check_unit(e, target);

  const GradientEstimate exact = exact_gradient(params, task);
  const double exact_coord = exact.layers[target.layer].biases(target.unit);

  const auto moments_at = [&](int nodes) {
    const Quadrature quad = gauss_legendre_unit(nodes);
    Messages msg;
    if (config.kind != EstimatorKind::reinforce) {
      msg = compute_messages(e, config, quad, target.layer);
    }
    return coordinate_moments(e, config,
                              config.kind == EstimatorKind::reinforce ? nullptr : &msg,
                              target);
  };

  const CoordinateMoments moments = moments_at(quad_nodes);
  BiasVarianceReport report;
  report.estimator = config;
  report.target = target;
  report.bias = moments.first - exact_coord;
  report.variance = moments.second - moments.first * moments.first;
  if (config.kind == EstimatorKind::unbiased_wm &&
      (config.uwm_variant == UwmVariant::single_sample ||
       config.uwm_variant == UwmVariant::mc)) {
    const CoordinateMoments coarse = moments_at(std::max(8, quad_nodes / 2));
    report.quadrature_error = std::abs(coarse.first - moments.first);
  }
  return report;
}

std::vector<BiasVarianceReport> bias_variance_study(std::span<const double> c_grid,
                                                  int trials, std::uint64_t seed,
                                                  const StudyOptions& options) {
  if (trials < 1) {
    throw ConfigError("bias_variance_study: trials must be at least 1");
  }
  const std::vector<EstimatorConfig>& estimators =
      options.estimators.empty() ? default_study_estimators() : options.estimators;

  // One unit-scale parameter direction and reward table per trial, shared
  // across the C grid.
  std::vector<NetworkParams> directions;
  std::vector<EnumerableTask> tasks;
  Rng root(seed);
  for (int trial = 0; trial < trials; ++trial) {
    Rng trial_rng = root.fork(std::uint64_t(trial));
    directions.push_back(init_params(options.layer_sizes,
                                     InitScheme::uniform_range(1.0),
                                     trial_rng.next_u64()));
    EnumerableTask task;
    const int out_width = options.layer_sizes.back();
    task.input = VectorXd(options.layer_sizes.front());
    for (int i = 0; i < task.input.size(); ++i) {
      task.input(i) = trial_rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    task.reward_table.resize(std::size_t(1) << out_width);
    for (auto& r : task.reward_table) {
      r = trial_rng.uniform(-options.reward_range, options.reward_range);
    }
    tasks.push_back(std::move(task));
  }

  std::vector<BiasVarianceReport> reports;
  for (const auto& config : estimators) {
    for (const double c : c_grid) {
      for (int trial = 0; trial < trials; ++trial) {
        NetworkParams scaled = directions[trial];
        for (auto& layer : scaled.layers) {
          layer.weights *= c;
          layer.biases *= c;
        }
        BiasVarianceReport report = estimator_bias_variance(
            scaled, tasks[trial], config, options.target, options.quad_nodes);
        report.c_range = c;
        report.trial = trial;
        reports.push_back(report);
      }
    }
  }
  return reports;
}

void write_bias_variance_csv(std::ostream& out,
                             std::span<const BiasVarianceReport> reports) {
  out << "estimator,C,trial,bias,variance,quadrature_error\n";
  for (const auto& report : reports) {
    out << describe(report.estimator) << ',' << report.c_range << ','
        << report.trial << ',' << report.bias << ',' << report.variance << ','
        << report.quadrature_error << '\n';
  }
}

}  // namespace wmax
