#include "wmax/math_kernel.hpp"

#include <cmath>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>

namespace wmax {
namespace {

using u64 = std::uint64_t;
using i128 = __int128;

// Eulerian triangle rows 1..kMaxOrder+2, A(n,k) at rows_[n-1][k].
// Built once; n stays small enough that every entry fits u64 exactly.
class EulerianTable {
 public:
  static const EulerianTable& instance() {
    static EulerianTable table;
    return table;
  }

  u64 at(int n, int k) const { return rows_[n - 1][k]; }
  int max_n() const { return static_cast<int>(rows_.size()); }

 private:
  EulerianTable() {
    const int n_max = kMaxOrder + 2;
    rows_.resize(n_max);
    rows_[0] = {1};
    for (int n = 2; n <= n_max; ++n) {
      rows_[n - 1].assign(n, 0);
      for (int k = 0; k < n; ++k) {
        const u64 left = (k < n - 1) ? rows_[n - 2][k] : 0;
        const u64 right = (k > 0) ? rows_[n - 2][k - 1] : 0;
        rows_[n - 1][k] = u64(k + 1) * left + u64(n - k) * right;
      }
    }
  }

  std::vector<std::vector<u64>> rows_;
};

i128 gcd128(i128 a, i128 b) {
  while (b != 0) {
    i128 t = a % b;
    a = b;
    b = t;
  }
  return a < 0 ? -a : a;
}

struct Rat128 {
  i128 num = 0;
  i128 den = 1;

  void reduce() {
    if (den < 0) {
      num = -num;
      den = -den;
    }
    if (num == 0) {
      den = 1;
      return;
    }
    const i128 g = gcd128(num, den);
    num /= g;
    den /= g;
  }
};

Rat128 sub(Rat128 a, Rat128 b) {
  Rat128 r{a.num * b.den - b.num * a.den, a.den * b.den};
  r.reduce();
  return r;
}

Rat128 scale(Rat128 a, i128 f) {
  Rat128 r{a.num * f, a.den};
  r.reduce();
  return r;
}

// Akiyama-Tanigawa rows; produces the B_1 = +1/2 sequence, flipped to the
// stated -1/2 convention at the API boundary.
class BernoulliTable {
 public:
  static const BernoulliTable& instance() {
    static BernoulliTable table;
    return table;
  }

  Rational at(int n) const { return values_[n]; }
  int max_n() const { return static_cast<int>(values_.size()) - 1; }

 private:
  BernoulliTable() {
    const int n_max = kMaxOrder + 2;
    std::vector<Rat128> row(n_max + 1);
    for (int j = 0; j <= n_max; ++j) row[j] = Rat128{1, j + 1};
    values_.resize(n_max + 1);
    values_[0] = Rational{1, 1};
    for (int n = 1; n <= n_max; ++n) {
      for (int j = 0; j + n <= n_max; ++j) {
        row[j] = scale(sub(row[j], row[j + 1]), j + 1);
      }
      Rat128 b = row[0];
      if (n == 1) b.num = -b.num;  // convention: B_1 = -1/2
      values_[n] = Rational{static_cast<long long>(b.num),
                            static_cast<long long>(b.den)};
    }
  }

  std::vector<Rational> values_;
};

void partitions_rec(int remaining, int max_part, std::vector<int>& counts,
                    std::vector<PartitionMultiplicity>& out) {
  if (remaining == 0) {
    out.push_back(PartitionMultiplicity{counts});
    return;
  }
  for (int part = std::min(remaining, max_part); part >= 1; --part) {
    ++counts[part - 1];
    partitions_rec(remaining - part, part, counts, out);
    --counts[part - 1];
  }
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void sigmoid_derivatives_from_prob(int order, double sigma_value,
                                   std::span<double> out) {
  if (order < 1 || order > kMaxOrder) {
    throw std::out_of_range("sigmoid derivative order " +
                            std::to_string(order) + " outside [1, " +
                            std::to_string(kMaxOrder) + "]");
  }
  const auto& eulerian = EulerianTable::instance();
  const double s = sigma_value;
  const double q = 1.0 - sigma_value;
  // Powers s^k and q^k for k = 0..order+1.
  double s_pow[kMaxOrder + 2];
  double q_pow[kMaxOrder + 2];
  s_pow[0] = q_pow[0] = 1.0;
  for (int k = 1; k <= order + 1; ++k) {
    s_pow[k] = s_pow[k - 1] * s;
    q_pow[k] = q_pow[k - 1] * q;
  }
  for (int p = 1; p <= order; ++p) {
    double acc = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= p; ++k) {
      acc += sign * static_cast<double>(eulerian.at(p, k - 1)) * s_pow[k] *
             q_pow[p + 1 - k];
      sign = -sign;
    }
    out[p - 1] = acc;
  }
}

double sigmoid_derivative(int order, double x) {
  double buf[kMaxOrder];
  sigmoid_derivatives_from_prob(order, sigmoid(x), std::span<double>(buf, kMaxOrder));
  return buf[order - 1];
}

std::uint64_t eulerian_number(int n, int k) {
  const auto& table = EulerianTable::instance();
  if (n < 1 || n > table.max_n()) {
    throw std::out_of_range("eulerian_number: n = " + std::to_string(n) +
                            " outside [1, " + std::to_string(table.max_n()) + "]");
  }
  if (k < 0 || k > n - 1) {
    throw std::out_of_range("eulerian_number: k = " + std::to_string(k) +
                            " outside [0, n-1]");
  }
  return table.at(n, k);
}

std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) {
    throw std::out_of_range("binomial: k outside [0, n]");
  }
  if (k > n - k) k = n - k;
  u64 result = 1;
  for (int j = 1; j <= k; ++j) {
    result = result * u64(n - k + j) / u64(j);
  }
  return result;
}

Rational bernoulli_number(int n) {
  const auto& table = BernoulliTable::instance();
  if (n < 0 || n > table.max_n()) {
    throw std::out_of_range("bernoulli_number: n = " + std::to_string(n) +
                            " outside [0, " + std::to_string(table.max_n()) + "]");
  }
  return table.at(n);
}

int PartitionMultiplicity::order() const {
  int k = 0;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    k += static_cast<int>(j + 1) * counts[j];
  }
  return k;
}

int PartitionMultiplicity::total_parts() const {
  return std::accumulate(counts.begin(), counts.end(), 0);
}

std::vector<PartitionMultiplicity> integer_partitions(int k) {
  if (k < 1 || k > kMaxOrder) {
    throw std::out_of_range("integer_partitions: k = " + std::to_string(k) +
                            " outside [1, " + std::to_string(kMaxOrder) + "]");
  }
  std::vector<PartitionMultiplicity> out;
  std::vector<int> counts(k, 0);
  partitions_rec(k, k, counts, out);
  return out;
}

double composite_tf(int k, std::span<const double> t) {
  if (k < 0) {
    throw std::out_of_range("composite_tf: negative order");
  }
  if (k == 0) return 1.0;
  if (static_cast<int>(t.size()) < k) {
    throw std::out_of_range("composite_tf: need t^(1..k)");
  }
  double k_factorial = 1.0;
  for (int j = 2; j <= k; ++j) k_factorial *= j;

  double total = 0.0;
  for (const auto& partition : integer_partitions(k)) {
    double coeff = k_factorial;
    double product = 1.0;
    double part_factorial = 1.0;  // j! running over part sizes
    for (int j = 1; j <= k; ++j) {
      part_factorial *= j;
      const int mult = partition.counts[j - 1];
      for (int c = 1; c <= mult; ++c) {
        coeff /= static_cast<double>(c) * part_factorial;
        product *= t[j - 1];
      }
    }
    total += coeff * product;
  }
  return total;
}

double taylor_error_sigmoid(int order, double x) {
  double derivs[kMaxOrder];
  sigmoid_derivatives_from_prob(order, 0.5, std::span<double>(derivs, kMaxOrder));
  double approx = 0.5;  // sigma(0)
  double x_pow = 1.0;
  double k_factorial = 1.0;
  for (int k = 1; k <= order; ++k) {
    x_pow *= x;
    k_factorial *= k;
    approx += derivs[k - 1] * x_pow / k_factorial;
  }
  return std::abs(sigmoid(x) - approx);
}

}  // namespace wmax
