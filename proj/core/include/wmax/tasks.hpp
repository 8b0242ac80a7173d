#pragma once

#include <memory>
#include <string>

#include <Eigen/Core>

#include "wmax/rng.hpp"

namespace wmax {

// One interaction: a sampled input and the environment's correct answer.
struct Episode {
  Eigen::VectorXd input;    // binary entries
  int correct_output = 0;   // -1 or +1
};

// Episode-generating environment with a {-1,+1} answer per episode.
class Task {
 public:
  virtual ~Task() = default;
  virtual std::string name() const = 0;
  virtual int input_dim() const = 0;
  virtual Episode sample_input(Rng& rng) const = 0;
  // +1 on a match, -1 otherwise; network_output must be -1 or +1.
  virtual double reward(const Episode& episode, int network_output) const;
};

// k-bit multiplexer: the first k input positions are address bits (most
// significant first), the remaining 2^k are data bits; the answer is the
// addressed data bit mapped to {-1, +1}.
class MultiplexerTask : public Task {
 public:
  explicit MultiplexerTask(int k);

  std::string name() const override { return "multiplexer"; }
  int address_bits() const { return k_; }
  int input_dim() const override { return k_ + (1 << k_); }
  Episode sample_input(Rng& rng) const override;

  // The correct {-1,+1} answer for an arbitrary input vector.
  int decode(const Eigen::VectorXd& input) const;

 private:
  int k_;
};

// Factory for the CLI/config layer; name must be "multiplexer".
std::unique_ptr<Task> make_task(const std::string& name, int k);

}  // namespace wmax
