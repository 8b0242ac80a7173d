#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "wmax/estimators.hpp"
#include "wmax/network.hpp"
#include "wmax/tasks.hpp"

namespace wmax {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TaskConfig {
  std::string name = "multiplexer";
  int k = 4;
};

struct TrainConfig {
  TaskConfig task;
  std::vector<int> hidden_layers = {64, 64};  // output layer is always width 1
  EstimatorConfig estimator;
  double step_size = 0.005;
  int batch_size = 16;
  long long episodes = 5'000'000;
  std::uint64_t seed = 1;
  AdamConfig adam;
  double weight_decay = 0.0;           // off by default
  long long running_avg_window = 10'000;  // episodes
  int log_every = 1;                   // batches between learning-curve rows
  int threads = 1;
  bool deterministic = true;           // fixed-order batch reduction
  InitScheme init = InitScheme::uniform_fan_in();

  // input + hidden layers + single output unit
  std::vector<int> layer_sizes(int input_dim) const;
  void validate() const;
};

// JSON round-trip of TrainConfig; unknown keys are rejected, missing keys
// keep their defaults. See README for the schema.
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_json(const TrainConfig& config);

// First/second moment accumulators congruent to the parameters.
struct AdamState {
  std::vector<LayerParams> first_moment;
  std::vector<LayerParams> second_moment;
  long long step = 0;

  static AdamState zeros_like(const NetworkParams& params);
};

// One Adam ascent step (reward maximization): params += step_size * mhat /
// (sqrt(vhat) + eps). weight_decay > 0 subtracts weight_decay * theta from
// the gradient first.
void adam_step(NetworkParams& params, AdamState& state,
               const GradientEstimate& grad, double step_size,
               const AdamConfig& adam = {}, double weight_decay = 0.0);

struct CurvePoint {
  long long episode = 0;     // episodes completed when the row was logged
  double batch_reward = 0;   // mean reward of the just-finished batch
  double running_avg = 0;    // mean reward over the trailing window
};

struct LearningCurve {
  std::vector<CurvePoint> points;
};

struct TrainResult {
  LearningCurve curve;
  NetworkParams params;
  double average_reward = 0.0;      // mean over every episode of the run
  double final_running_avg = 0.0;
  double peak_running_avg = 0.0;
};

// Batched training: sample batch_size episodes, average the per-episode
// estimates, apply Adam, log. Bit-reproducible for a fixed config and seed
// in deterministic mode, independent of the thread count.
TrainResult train_run(const TrainConfig& config, const Task& task);
TrainResult train_run(const TrainConfig& config);

// "episode,batch_reward,running_avg"
void write_curve_csv(std::ostream& out, const LearningCurve& curve);

struct SweepEntry {
  TrainConfig config;
  std::string label;  // defaults to describe(estimator)
};

struct SweepRow {
  std::string estimator;
  int width = 0;  // first hidden layer size N
  int runs = 0;
  double mean_avg_reward = 0.0;
  double std_avg_reward = 0.0;
  double mean_final_running = 0.0;
  double std_final_running = 0.0;
};

struct CurveAggregate {
  std::string estimator;
  int width = 0;
  std::vector<long long> episode;
  std::vector<double> mean_running_avg;
  std::vector<double> std_running_avg;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<CurveAggregate> curves;
};

// Repeats every entry runs_per_config times on consecutive seeds and
// aggregates mean/stddev of the run-average reward and the running-average
// curve.
SweepResult sweep(const std::vector<SweepEntry>& entries, int runs_per_config);

// "estimator,N,runs,mean_avg_reward,std_avg_reward,mean_final_running_avg,std_final_running_avg"
void write_sweep_summary_csv(std::ostream& out, const SweepResult& result);
// "estimator,N,episode,mean_running_avg,std_running_avg"
void write_sweep_curves_csv(std::ostream& out, const SweepResult& result);

}  // namespace wmax
