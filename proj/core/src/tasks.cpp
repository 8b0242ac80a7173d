#include "wmax/tasks.hpp"

#include <stdexcept>

#include "wmax/errors.hpp"

namespace wmax {

double Task::reward(const Episode& episode, int network_output) const {
  if (network_output != -1 && network_output != 1) {
    throw std::domain_error("network output must be -1 or +1");
  }
  return network_output == episode.correct_output ? 1.0 : -1.0;
}

MultiplexerTask::MultiplexerTask(int k) : k_(k) {
  if (k < 1 || k > 20) {
    throw ConfigError("multiplexer: k must lie in [1, 20]");
  }
}

Episode MultiplexerTask::sample_input(Rng& rng) const {
  Episode episode;
  episode.input.resize(input_dim());
  for (int i = 0; i < episode.input.size(); ++i) {
    episode.input(i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }
  episode.correct_output = decode(episode.input);
  return episode;
}

int MultiplexerTask::decode(const Eigen::VectorXd& input) const {
  if (input.size() != input_dim()) {
    throw ShapeError("multiplexer input has wrong dimension");
  }
  int address = 0;
  for (int i = 0; i < k_; ++i) {  // most significant address bit first
    address = (address << 1) | (input(i) != 0.0 ? 1 : 0);
  }
  const double data_bit = input(k_ + address);
  return data_bit != 0.0 ? 1 : -1;
}

std::unique_ptr<Task> make_task(const std::string& name, int k) {
  if (name == "multiplexer") {
    return std::make_unique<MultiplexerTask>(k);
  }
  throw ConfigError("unknown task: " + name);
}

}  // namespace wmax
