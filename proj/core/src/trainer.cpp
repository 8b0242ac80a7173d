#include "wmax/trainer.hpp"

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "wmax/errors.hpp"

namespace wmax {

std::vector<int> TrainConfig::layer_sizes(int input_dim) const {
  std::vector<int> sizes;
  sizes.reserve(hidden_layers.size() + 2);
  sizes.push_back(input_dim);
  sizes.insert(sizes.end(), hidden_layers.begin(), hidden_layers.end());
  sizes.push_back(1);
  return sizes;
}

void TrainConfig::validate() const {
  estimator.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (episodes < batch_size) {
    throw ConfigError("episodes must cover at least one batch");
  }
  if (step_size <= 0) throw ConfigError("step_size must be positive");
  if (running_avg_window < 1) {
    throw ConfigError("running_avg_window must be at least 1");
  }
  if (log_every < 1) throw ConfigError("log_every must be at least 1");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  for (int width : hidden_layers) {
    if (width < 1) throw ConfigError("hidden layer widths must be positive");
  }
}

namespace {

using nlohmann::json;

InitScheme init_scheme_from_json(const json& j) {
  const auto scheme = j.value("scheme", std::string("uniform_fan_in"));
  if (scheme == "uniform_fan_in") return InitScheme::uniform_fan_in();
  if (scheme == "constant_zero") return InitScheme::constant_zero();
  if (scheme == "uniform_range") {
    return InitScheme::uniform_range(j.value("range", 1.0));
  }
  throw ConfigError("unknown init scheme: " + scheme);
}

json init_scheme_to_json(const InitScheme& scheme) {
  json j;
  switch (scheme.kind) {
    case InitScheme::Kind::uniform_fan_in:
      j["scheme"] = "uniform_fan_in";
      break;
    case InitScheme::Kind::constant_zero:
      j["scheme"] = "constant_zero";
      break;
    case InitScheme::Kind::uniform_range:
      j["scheme"] = "uniform_range";
      j["range"] = scheme.range;
      break;
  }
  return j;
}

void check_known_keys(const json& j, std::initializer_list<const char*> known,
                      const std::string& where) {
  for (const auto& item : j.items()) {
    bool found = false;
    for (const char* key : known) {
      if (item.key() == key) {
        found = true;
        break;
      }
    }
    if (!found) {
      throw ConfigError("unknown config key \"" + item.key() + "\" in " + where);
    }
  }
}

}  // namespace

TrainConfig parse_train_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config JSON: ") + e.what());
  }
  try {
    check_known_keys(doc,
                     {"task", "layers", "estimator", "step_size", "batch_size",
                      "episodes", "seed", "adam", "weight_decay",
                      "running_avg_window", "log_every", "threads",
                      "deterministic", "init"},
                     "config");
    TrainConfig config;
    if (doc.contains("task")) {
      const auto& t = doc["task"];
      check_known_keys(t, {"name", "k"}, "task");
      config.task.name = t.value("name", config.task.name);
      config.task.k = t.value("k", config.task.k);
    }
    if (doc.contains("layers")) {
      config.hidden_layers = doc["layers"].get<std::vector<int>>();
    }
    if (doc.contains("estimator")) {
      const auto& e = doc["estimator"];
      check_known_keys(e, {"kind", "p", "uwm_variant", "chain_global_reward"},
                       "estimator");
      config.estimator.kind =
          estimator_kind_from_string(e.value("kind", std::string("reinforce")));
      config.estimator.order = e.value("p", 1);
      if (e.contains("uwm_variant")) {
        parse_uwm_variant(e["uwm_variant"].get<std::string>(),
                          &config.estimator.uwm_variant,
                          &config.estimator.uwm_samples);
      }
      config.estimator.chain_global_reward =
          e.value("chain_global_reward", false);
    }
    config.step_size = doc.value("step_size", config.step_size);
    config.batch_size = doc.value("batch_size", config.batch_size);
    config.episodes = doc.value("episodes", config.episodes);
    config.seed = doc.value("seed", config.seed);
    if (doc.contains("adam")) {
      const auto& a = doc["adam"];
      check_known_keys(a, {"beta1", "beta2", "epsilon"}, "adam");
      config.adam.beta1 = a.value("beta1", config.adam.beta1);
      config.adam.beta2 = a.value("beta2", config.adam.beta2);
      config.adam.epsilon = a.value("epsilon", config.adam.epsilon);
    }
    config.weight_decay = doc.value("weight_decay", config.weight_decay);
    config.running_avg_window =
        doc.value("running_avg_window", config.running_avg_window);
    config.log_every = doc.value("log_every", config.log_every);
    config.threads = doc.value("threads", config.threads);
    config.deterministic = doc.value("deterministic", config.deterministic);
    if (doc.contains("init")) {
      config.init = init_scheme_from_json(doc["init"]);
    }
    return config;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config: " + path);
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_train_config(buffer.str());
}

std::string train_config_to_json(const TrainConfig& config) {
  json doc;
  doc["task"] = {{"name", config.task.name}, {"k", config.task.k}};
  doc["layers"] = config.hidden_layers;
  json est;
  est["kind"] = to_string(config.estimator.kind);
  est["p"] = config.estimator.order;
  est["uwm_variant"] = uwm_variant_to_string(config.estimator.uwm_variant,
                                             config.estimator.uwm_samples);
  est["chain_global_reward"] = config.estimator.chain_global_reward;
  doc["estimator"] = est;
  doc["step_size"] = config.step_size;
  doc["batch_size"] = config.batch_size;
  doc["episodes"] = config.episodes;
  doc["seed"] = config.seed;
  doc["adam"] = {{"beta1", config.adam.beta1},
                 {"beta2", config.adam.beta2},
                 {"epsilon", config.adam.epsilon}};
  doc["weight_decay"] = config.weight_decay;
  doc["running_avg_window"] = config.running_avg_window;
  doc["log_every"] = config.log_every;
  doc["threads"] = config.threads;
  doc["deterministic"] = config.deterministic;
  doc["init"] = init_scheme_to_json(config.init);
  return doc.dump(2);
}

AdamState AdamState::zeros_like(const NetworkParams& params) {
  AdamState state;
  for (const auto& layer : params.layers) {
    LayerParams zero{MatrixXd::Zero(layer.weights.rows(), layer.weights.cols()),
                     VectorXd::Zero(layer.biases.size())};
    state.first_moment.push_back(zero);
    state.second_moment.push_back(zero);
  }
  return state;
}

void adam_step(NetworkParams& params, AdamState& state,
               const GradientEstimate& grad, double step_size,
               const AdamConfig& adam, double weight_decay) {
  if (grad.layers.size() != params.layers.size() ||
      state.first_moment.size() != params.layers.size()) {
    throw ShapeError("adam_step: shapes disagree");
  }
  state.step += 1;
  const double bias1 = 1.0 - std::pow(adam.beta1, double(state.step));
  const double bias2 = 1.0 - std::pow(adam.beta2, double(state.step));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto update = [&]<typename T>(T& theta, const T& g_in, T& m, T& v) {
      if (theta.rows() != g_in.rows() || theta.cols() != g_in.cols()) {
        throw ShapeError("adam_step: layer shapes disagree");
      }
      T g = g_in;
      if (weight_decay != 0.0) g -= weight_decay * theta;
      m = adam.beta1 * m + (1.0 - adam.beta1) * g;
      v = adam.beta2 * v + (1.0 - adam.beta2) * g.cwiseProduct(g);
      theta.array() += step_size * (m.array() / bias1) /
                       ((v.array() / bias2).sqrt() + adam.epsilon);
    };
    update(params.layers[l].weights, grad.layers[l].weights,
           state.first_moment[l].weights, state.second_moment[l].weights);
    update(params.layers[l].biases, grad.layers[l].biases,
           state.first_moment[l].biases, state.second_moment[l].biases);
  }
}

namespace {

// Persistent episode workers; batches are distributed by work stealing and
// the caller participates. Index 0 is the caller, extra workers count up.
class WorkerPool {
 public:
  explicit WorkerPool(int extra_workers) {
    for (int t = 0; t < extra_workers; ++t) {
      workers_.emplace_back([this, t] { worker_loop(t + 1); });
    }
  }

  WorkerPool(const WorkerPool&) = delete;

  ~WorkerPool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& worker : workers_) worker.join();
  }

  int width() const { return static_cast<int>(workers_.size()) + 1; }

  // Runs f(worker_index, item) for every item in [0, total); blocks until done.
  void run(int total, const std::function<void(int, int)>& f) {
    if (workers_.empty() || total <= 1) {
      for (int i = 0; i < total; ++i) f(0, i);
      return;
    }
    {
      std::lock_guard<std::mutex> lock(mu_);
      job_ = &f;
      total_ = total;
      next_.store(0, std::memory_order_relaxed);
      active_ = static_cast<int>(workers_.size());
      ++generation_;
    }
    cv_.notify_all();
    for (int i = next_.fetch_add(1); i < total_; i = next_.fetch_add(1)) {
      f(0, i);
    }
    std::unique_lock<std::mutex> lock(mu_);
    done_cv_.wait(lock, [this] { return active_ == 0; });
    job_ = nullptr;
  }

 private:
  void worker_loop(int worker_index) {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(int, int)>* job = nullptr;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        job = job_;
      }
      for (int i = next_.fetch_add(1); i < total_; i = next_.fetch_add(1)) {
        (*job)(worker_index, i);
      }
      {
        std::lock_guard<std::mutex> lock(mu_);
        if (--active_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(int, int)>* job_ = nullptr;
  std::atomic<int> next_{0};
  int total_ = 0;
  int active_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

// Per-episode work shared by every estimator: sample, roll the network,
// score, estimate. The backprop baseline runs the deterministic forward
// pass and trains the output unit by REINFORCE.
double run_episode(const NetworkParams& params, const Task& task,
                   const EstimatorConfig& est, Rng rng, GradientEstimate* grad) {
  const Episode episode = task.sample_input(rng);
  if (est.kind == EstimatorKind::backprop) {
    ForwardTrace trace = forward_deterministic(params, episode.input);
    const double prob = trace.output_layer().firing_probs(0);
    const double h = rng.bernoulli(prob) ? 1.0 : 0.0;
    const double reward = task.reward(episode, h != 0.0 ? 1 : -1);
    const double output_grad = reward * (h - prob);
    *grad = backprop_deterministic(params, trace, output_grad);
    const int last = static_cast<int>(grad->layers.size()) - 1;
    grad->layers[last].biases(0) = output_grad;
    grad->layers[last].weights.row(0) =
        output_grad * trace.layer_input(last).transpose();
    return reward;
  }
  ForwardTrace trace = forward_sample(params, episode.input, rng);
  const double h = trace.output_layer().activations(0);
  const double reward = task.reward(episode, h != 0.0 ? 1 : -1);
  trace.reward = reward;
  *grad = estimate(params, trace, reward, est, rng);
  return reward;
}

}  // namespace

TrainResult train_run(const TrainConfig& config, const Task& task) {
  config.validate();
  if (config.task.name != task.name()) {
    throw ConfigError("config names task \"" + config.task.name +
                      "\" but was given \"" + task.name() + "\"");
  }

  NetworkParams params =
      init_params(config.layer_sizes(task.input_dim()), config.init, config.seed);
  AdamState adam = AdamState::zeros_like(params);
  const Rng root(config.seed);

  const int batch = config.batch_size;
  const long long num_batches = config.episodes / batch;
  const long long window_batches =
      std::max<long long>(1, config.running_avg_window / batch);

  TrainResult result;
  std::deque<double> window;
  double window_sum = 0.0;
  double reward_total = 0.0;
  result.peak_running_avg = -std::numeric_limits<double>::infinity();

  std::vector<GradientEstimate> grads(batch);
  std::vector<double> rewards(batch);
  WorkerPool pool(std::min(config.threads, batch) - 1);
  std::vector<GradientEstimate> partials;

  for (long long b = 0; b < num_batches; ++b) {
    const long long base_episode = b * batch;
    GradientEstimate mean = GradientEstimate::zeros_like(params);
    if (config.deterministic) {
      // per-slot estimates, reduced in episode order: bit-reproducible for
      // any thread count
      pool.run(batch, [&](int, int e) {
        rewards[e] = run_episode(params, task, config.estimator,
                                 root.fork(std::uint64_t(base_episode + e)),
                                 &grads[e]);
      });
      for (const auto& g : grads) mean += g;
    } else {
      // throughput mode: per-worker partial sums; summation order follows
      // the work-stealing schedule, so runs are not bit-reproducible
      partials.assign(pool.width(), GradientEstimate::zeros_like(params));
      pool.run(batch, [&](int worker, int e) {
        rewards[e] = run_episode(params, task, config.estimator,
                                 root.fork(std::uint64_t(base_episode + e)),
                                 &grads[e]);
        partials[worker] += grads[e];
      });
      for (const auto& g : partials) mean += g;
    }
    mean *= 1.0 / double(batch);
    adam_step(params, adam, mean, config.step_size, config.adam,
              config.weight_decay);

    double batch_reward = 0.0;
    for (double r : rewards) batch_reward += r;
    batch_reward /= double(batch);
    reward_total += batch_reward;

    window.push_back(batch_reward);
    window_sum += batch_reward;
    if (static_cast<long long>(window.size()) > window_batches) {
      window_sum -= window.front();
      window.pop_front();
    }
    const double running_avg = window_sum / double(window.size());
    result.peak_running_avg = std::max(result.peak_running_avg, running_avg);
    result.final_running_avg = running_avg;

    if ((b + 1) % config.log_every == 0 || b + 1 == num_batches) {
      result.curve.points.push_back(
          CurvePoint{(b + 1) * batch, batch_reward, running_avg});
    }
  }

  result.average_reward = reward_total / double(num_batches);
  result.params = std::move(params);
  return result;
}

TrainResult train_run(const TrainConfig& config) {
  const auto task = make_task(config.task.name, config.task.k);
  return train_run(config, *task);
}

void write_curve_csv(std::ostream& out, const LearningCurve& curve) {
  out << "episode,batch_reward,running_avg\n";
  for (const auto& point : curve.points) {
    out << point.episode << ',' << point.batch_reward << ',' << point.running_avg
        << '\n';
  }
}

SweepResult sweep(const std::vector<SweepEntry>& entries, int runs_per_config) {
  if (runs_per_config < 1) {
    throw ConfigError("sweep: runs_per_config must be at least 1");
  }
  SweepResult result;
  for (const auto& entry : entries) {
    const std::string label =
        entry.label.empty() ? describe(entry.config.estimator) : entry.label;
    const int width =
        entry.config.hidden_layers.empty() ? 0 : entry.config.hidden_layers[0];

    std::vector<TrainResult> runs;
    runs.reserve(runs_per_config);
    for (int r = 0; r < runs_per_config; ++r) {
      TrainConfig config = entry.config;
      config.seed = entry.config.seed + std::uint64_t(r);
      runs.push_back(train_run(config));
    }

    auto mean_std = [&](auto&& get) {
      double mean = 0.0;
      for (const auto& run : runs) mean += get(run);
      mean /= double(runs.size());
      double var = 0.0;
      for (const auto& run : runs) {
        const double d = get(run) - mean;
        var += d * d;
      }
      const double stdev =
          runs.size() > 1 ? std::sqrt(var / double(runs.size() - 1)) : 0.0;
      return std::pair<double, double>(mean, stdev);
    };

    SweepRow row;
    row.estimator = label;
    row.width = width;
    row.runs = runs_per_config;
    std::tie(row.mean_avg_reward, row.std_avg_reward) =
        mean_std([](const TrainResult& r) { return r.average_reward; });
    std::tie(row.mean_final_running, row.std_final_running) =
        mean_std([](const TrainResult& r) { return r.final_running_avg; });
    result.rows.push_back(row);

    CurveAggregate agg;
    agg.estimator = label;
    agg.width = width;
    const std::size_t points = runs.front().curve.points.size();
    for (std::size_t i = 0; i < points; ++i) {
      agg.episode.push_back(runs.front().curve.points[i].episode);
      double mean = 0.0;
      for (const auto& run : runs) mean += run.curve.points[i].running_avg;
      mean /= double(runs.size());
      double var = 0.0;
      for (const auto& run : runs) {
        const double d = run.curve.points[i].running_avg - mean;
        var += d * d;
      }
      agg.mean_running_avg.push_back(mean);
      agg.std_running_avg.push_back(
          runs.size() > 1 ? std::sqrt(var / double(runs.size() - 1)) : 0.0);
    }
    result.curves.push_back(std::move(agg));
  }
  return result;
}

void write_sweep_summary_csv(std::ostream& out, const SweepResult& result) {
  out << "estimator,N,runs,mean_avg_reward,std_avg_reward,"
         "mean_final_running_avg,std_final_running_avg\n";
  for (const auto& row : result.rows) {
    out << row.estimator << ',' << row.width << ',' << row.runs << ','
        << row.mean_avg_reward << ',' << row.std_avg_reward << ','
        << row.mean_final_running << ',' << row.std_final_running << '\n';
  }
}

void write_sweep_curves_csv(std::ostream& out, const SweepResult& result) {
  out << "estimator,N,episode,mean_running_avg,std_running_avg\n";
  for (const auto& curve : result.curves) {
    for (std::size_t i = 0; i < curve.episode.size(); ++i) {
      out << curve.estimator << ',' << curve.width << ',' << curve.episode[i]
          << ',' << curve.mean_running_avg[i] << ',' << curve.std_running_avg[i]
          << '\n';
    }
  }
}

}  // namespace wmax
