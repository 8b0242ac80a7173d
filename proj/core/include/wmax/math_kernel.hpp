#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace wmax {

// Highest derivative order served by the sigmoid/Bernoulli tables.
inline constexpr int kMaxOrder = 16;

// Logistic sigmoid 1/(1+exp(-x)), evaluated without overflow for any finite x.
double sigmoid(double x);

// p-th derivative of the sigmoid at x, 1 <= p <= kMaxOrder.
//
// Uses the closed form in terms of Eulerian numbers:
//   sigma^(p)(x) = sum_{k=1..p} (-1)^(k-1) A(p, k-1) s^k (1-s)^(p+1-k),
// with s = sigmoid(x).
double sigmoid_derivative(int order, double x);

// Derivatives 1..order evaluated from an already-known sigmoid value
// s = sigmoid(x). out must have room for `order` entries; out[k-1] holds
// sigma^(k)(x). This is the hot-path form: no exp() calls.
void sigmoid_derivatives_from_prob(int order, double sigma_value,
                                   std::span<double> out);

// Eulerian number A(n, k), 1 <= n, 0 <= k <= n-1. Exact integer arithmetic.
std::uint64_t eulerian_number(int n, int k);

// Exact binomial coefficient; n small enough that the result fits u64.
std::uint64_t binomial(int n, int k);

// Reduced fraction with value num/den, den > 0.
struct Rational {
  long long num = 0;
  long long den = 1;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

// Bernoulli number B_n in the B_1 = -1/2 convention, n <= kMaxOrder + 1.
// With this convention sigma^(p)(0) = (2^(p+1)-1) B_{p+1} / (p+1).
Rational bernoulli_number(int n);

// A partition of an integer k in multiplicity encoding: counts[j-1] is the
// number of parts equal to j, so sum_j j*counts[j-1] = k.
struct PartitionMultiplicity {
  std::vector<int> counts;

  int order() const;         // the k this is a partition of
  int total_parts() const;   // sum of counts
  bool operator==(const PartitionMultiplicity&) const = default;
};

// All partitions of k in multiplicity encoding, deterministic order,
// no duplicates. 1 <= k <= kMaxOrder.
std::vector<PartitionMultiplicity> integer_partitions(int k);

// Complete exponential Bell polynomial in t = (t^(1), ..., t^(k)):
//   tf(k) = sum over partitions of k of
//           k! / prod_j (counts_j! * (j!)^counts_j) * prod_j (t^(j))^counts_j,
// with tf(0) = 1. t must supply at least k leading entries.
double composite_tf(int k, std::span<const double> t);

// Absolute error of the p-term Taylor expansion of sigmoid about 0 at x.
double taylor_error_sigmoid(int order, double x);

// Per-unit s/t diagnostics attached to a p-order individual reward:
// s[k-1] and t[k-1] hold s^(k) and t^(k).
struct DerivativeStack {
  std::vector<double> s;
  std::vector<double> t;
};

}  // namespace wmax
