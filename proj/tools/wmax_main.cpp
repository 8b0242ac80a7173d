// wmax: train networks of Bernoulli-logistic units with five gradient
// estimators, sweep configurations, and reproduce the bias/variance and
// figure data sets. All outputs are CSV plus JSON checkpoints; rendering is
// left to external tools.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wmax/checkpoint.hpp"
#include "wmax/errors.hpp"
#include "wmax/estimators.hpp"
#include "wmax/math_kernel.hpp"
#include "wmax/oracle.hpp"
#include "wmax/tasks.hpp"
#include "wmax/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using namespace wmax;

constexpr int kExitUsage = 2;
constexpr int kExitCapacity = 3;
constexpr int kExitIo = 4;

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open output file: " + path.string());
  }
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create output directory " + dir.string() + ": " +
                  ec.message());
  }
}

// Options shared by train/sweep/compare-backprop; only flags the user
// passed override the config file.
struct TrainCli {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  std::string estimator;
  int p = 0;
  std::string uwm_variant;
  bool chain_global_reward = false;
  std::vector<int> layers;
  std::string task;
  int k = 0;
  long long episodes = 0;
  int batch = 0;
  double step_size = 0;
  double weight_decay = 0;
  long long window = 0;
  int log_every = 0;
  int threads = 0;
  bool deterministic = true;
  double adam_beta1 = 0, adam_beta2 = 0, adam_eps = 0;
  std::string init_scheme;
  double init_range = 0;
};

void add_train_flags(CLI::App* cmd, TrainCli* cli) {
  cmd->add_option("--config", cli->config_path, "JSON config file (see README)");
  cmd->add_option("--out", cli->out_dir, "output directory")
      ->capture_default_str();
  cmd->add_option("--seed", cli->seed, "base RNG seed");
  cmd->add_option("--estimator", cli->estimator,
                  "reinforce|ste|weight_max|p_order|unbiased_wm|backprop");
  cmd->add_option("--p", cli->p, "Taylor order for p_order");
  cmd->add_option("--uwm-variant", cli->uwm_variant,
                  "unbiased_wm draw scheme: single|mc:M|rect:M");
  cmd->add_flag("--chain-global-reward", cli->chain_global_reward,
                "feed the raw reward downstream instead of chained rewards");
  cmd->add_option("--layers", cli->layers, "hidden layer widths, e.g. 64,64")
      ->delimiter(',');
  cmd->add_option("--task", cli->task, "task name (multiplexer)");
  cmd->add_option("--k", cli->k, "multiplexer address bits");
  cmd->add_option("--episodes", cli->episodes, "total episodes");
  cmd->add_option("--batch", cli->batch, "episodes per update");
  cmd->add_option("--step-size", cli->step_size, "Adam step size");
  cmd->add_option("--weight-decay", cli->weight_decay, "L2 strength (default 0)");
  cmd->add_option("--window", cli->window, "running-average window, episodes");
  cmd->add_option("--log-every", cli->log_every, "batches between curve rows");
  cmd->add_option("--threads", cli->threads, "worker threads per batch");
  cmd->add_flag("--deterministic,!--throughput", cli->deterministic,
                "fixed-order batch reduction (default on)");
  cmd->add_option("--adam-beta1", cli->adam_beta1, "Adam beta1");
  cmd->add_option("--adam-beta2", cli->adam_beta2, "Adam beta2");
  cmd->add_option("--adam-eps", cli->adam_eps, "Adam epsilon");
  cmd->add_option("--init", cli->init_scheme,
                  "uniform_fan_in|constant_zero|uniform_range");
  cmd->add_option("--init-range", cli->init_range,
                  "half-width C for --init uniform_range");
}

TrainConfig resolve_config(const CLI::App& cmd, const TrainCli& cli) {
  TrainConfig config;
  if (!cli.config_path.empty()) {
    config = load_train_config(cli.config_path);
  }
  const auto passed = [&](const std::string& flag) {
    return cmd.count(flag) > 0;
  };
  if (passed("--seed")) config.seed = cli.seed;
  if (passed("--estimator")) {
    config.estimator.kind = estimator_kind_from_string(cli.estimator);
  }
  if (passed("--p")) {
    config.estimator.order = cli.p;
    if (!passed("--estimator") && cli.config_path.empty()) {
      config.estimator.kind = EstimatorKind::p_order;
    }
  }
  if (passed("--uwm-variant")) {
    parse_uwm_variant(cli.uwm_variant, &config.estimator.uwm_variant,
                      &config.estimator.uwm_samples);
  }
  if (passed("--chain-global-reward")) {
    config.estimator.chain_global_reward = cli.chain_global_reward;
  }
  if (passed("--layers")) config.hidden_layers = cli.layers;
  if (passed("--task")) config.task.name = cli.task;
  if (passed("--k")) config.task.k = cli.k;
  if (passed("--episodes")) config.episodes = cli.episodes;
  if (passed("--batch")) config.batch_size = cli.batch;
  if (passed("--step-size")) config.step_size = cli.step_size;
  if (passed("--weight-decay")) config.weight_decay = cli.weight_decay;
  if (passed("--window")) config.running_avg_window = cli.window;
  if (passed("--log-every")) config.log_every = cli.log_every;
  if (passed("--threads")) config.threads = cli.threads;
  if (passed("--deterministic") || passed("--throughput")) {
    config.deterministic = cli.deterministic;
  }
  if (passed("--adam-beta1")) config.adam.beta1 = cli.adam_beta1;
  if (passed("--adam-beta2")) config.adam.beta2 = cli.adam_beta2;
  if (passed("--adam-eps")) config.adam.epsilon = cli.adam_eps;
  if (passed("--init")) {
    if (cli.init_scheme == "uniform_fan_in") {
      config.init = InitScheme::uniform_fan_in();
    } else if (cli.init_scheme == "constant_zero") {
      config.init = InitScheme::constant_zero();
    } else if (cli.init_scheme == "uniform_range") {
      config.init = InitScheme::uniform_range(
          passed("--init-range") ? cli.init_range : 1.0);
    } else {
      throw ConfigError("unknown init scheme: " + cli.init_scheme);
    }
  }
  config.validate();
  return config;
}

int cmd_train(const CLI::App& cmd, const TrainCli& cli) {
  const TrainConfig config = resolve_config(cmd, cli);
  ensure_dir(cli.out_dir);

  const TrainResult result = train_run(config);

  const fs::path out(cli.out_dir);
  {
    auto csv = open_output(out / "learning_curve.csv");
    write_curve_csv(csv, result.curve);
  }
  save_checkpoint((out / "checkpoint.json").string(), result.params, config.seed);
  {
    auto cfg = open_output(out / "config.json");
    cfg << train_config_to_json(config) << "\n";
  }

  std::cout << "estimator            " << describe(config.estimator) << "\n"
            << "episodes             " << (config.episodes / config.batch_size) *
                                              config.batch_size << "\n"
            << "average reward       " << result.average_reward << "\n"
            << "final running avg    " << result.final_running_avg << "\n"
            << "peak running avg     " << result.peak_running_avg << "\n"
            << "curve                " << (out / "learning_curve.csv").string() << "\n"
            << "checkpoint           " << (out / "checkpoint.json").string() << "\n";
  return 0;
}

// "name", "name:arg" estimator grammar for sweep lists; p_order takes the
// order, unbiased_wm optionally a variant (unbiased_wm:mc:5).
EstimatorConfig parse_estimator_spec(const std::string& spec) {
  EstimatorConfig config;
  const auto colon = spec.find(':');
  const std::string head = spec.substr(0, colon);
  config.kind = estimator_kind_from_string(head);
  if (colon == std::string::npos) {
    if (config.kind == EstimatorKind::p_order) config.order = 2;
    return config;
  }
  const std::string rest = spec.substr(colon + 1);
  if (config.kind == EstimatorKind::p_order) {
    config.order = std::stoi(rest);
  } else if (config.kind == EstimatorKind::unbiased_wm) {
    parse_uwm_variant(rest, &config.uwm_variant, &config.uwm_samples);
  } else {
    throw ConfigError("estimator " + head + " takes no argument");
  }
  return config;
}

struct SweepCli {
  TrainCli train;
  std::vector<std::string> estimators = {"reinforce", "ste", "weight_max",
                                         "p_order:2", "unbiased_wm"};
  std::vector<int> widths = {8, 16, 32, 48, 64, 96};
  int runs = 5;
};

void add_sweep_flags(CLI::App* cmd, SweepCli* cli) {
  add_train_flags(cmd, &cli->train);
  cmd->add_option("--estimators", cli->estimators,
                  "estimator specs, e.g. reinforce,p_order:2,unbiased_wm:mc:5")
      ->delimiter(',')
      ->capture_default_str();
  cmd->add_option("--widths", cli->widths, "hidden widths N to sweep")
      ->delimiter(',')
      ->capture_default_str();
  cmd->add_option("--runs", cli->runs, "independent runs per configuration")
      ->capture_default_str();
}

SweepResult run_sweep(const CLI::App& cmd, const SweepCli& cli,
                      bool include_backprop) {
  const TrainConfig base = resolve_config(cmd, cli.train);
  std::vector<EstimatorConfig> estimators;
  for (const auto& spec : cli.estimators) {
    estimators.push_back(parse_estimator_spec(spec));
  }
  if (include_backprop) {
    bool present = false;
    for (const auto& est : estimators) {
      present = present || est.kind == EstimatorKind::backprop;
    }
    if (!present) {
      EstimatorConfig baseline;
      baseline.kind = EstimatorKind::backprop;
      estimators.push_back(baseline);
    }
  }

  std::vector<SweepEntry> entries;
  for (const auto& est : estimators) {
    for (int width : cli.widths) {
      SweepEntry entry;
      entry.config = base;
      entry.config.estimator = est;
      entry.config.hidden_layers.assign(base.hidden_layers.size(), width);
      entries.push_back(std::move(entry));
    }
  }
  return sweep(entries, cli.runs);
}

int cmd_sweep(const CLI::App& cmd, const SweepCli& cli) {
  ensure_dir(cli.train.out_dir);
  const SweepResult result = run_sweep(cmd, cli, /*include_backprop=*/false);
  const fs::path out(cli.train.out_dir);
  {
    auto csv = open_output(out / "sweep_summary.csv");
    write_sweep_summary_csv(csv, result);
  }
  {
    auto csv = open_output(out / "sweep_curves.csv");
    write_sweep_curves_csv(csv, result);
  }
  std::cout << "wrote " << (out / "sweep_summary.csv").string() << " ("
            << result.rows.size() << " rows) and "
            << (out / "sweep_curves.csv").string() << "\n";
  return 0;
}

int cmd_compare_backprop(const CLI::App& cmd, const SweepCli& cli) {
  ensure_dir(cli.train.out_dir);
  const SweepResult result = run_sweep(cmd, cli, /*include_backprop=*/true);
  const fs::path out(cli.train.out_dir);
  {
    auto csv = open_output(out / "compare_summary.csv");
    write_sweep_summary_csv(csv, result);
  }
  {
    auto csv = open_output(out / "compare_curves.csv");
    write_sweep_curves_csv(csv, result);
  }
  // Wide view: one row per N, one column per estimator (final running avg),
  // the backprop baseline alongside.
  {
    auto csv = open_output(out / "compare_wide.csv");
    std::vector<std::string> names;
    for (const auto& row : result.rows) {
      if (names.empty() || row.estimator != names.front()) {
        bool seen = false;
        for (const auto& n : names) seen = seen || n == row.estimator;
        if (!seen) names.push_back(row.estimator);
      }
    }
    csv << "N";
    for (const auto& name : names) csv << ',' << name;
    csv << '\n';
    for (int width : cli.widths) {
      csv << width;
      for (const auto& name : names) {
        for (const auto& row : result.rows) {
          if (row.width == width && row.estimator == name) {
            csv << ',' << row.mean_final_running;
          }
        }
      }
      csv << '\n';
    }
  }
  std::cout << "wrote " << (out / "compare_summary.csv").string() << ", "
            << (out / "compare_curves.csv").string() << " and "
            << (out / "compare_wide.csv").string() << "\n";
  return 0;
}

struct AnalyzeCli {
  std::vector<double> c_grid = {0.25, 0.5, 1.0, 2.0, 4.0};
  int trials = 20;
  std::uint64_t seed = 7;
  int quad_nodes = 64;
  std::vector<int> layers = {1, 4, 4, 4, 1};  // unit layers, no input
  std::string out_dir = ".";
};

int cmd_analyze(const AnalyzeCli& cli) {
  ensure_dir(cli.out_dir);
  StudyOptions options;
  options.quad_nodes = cli.quad_nodes;
  options.layer_sizes = {0};
  options.layer_sizes.insert(options.layer_sizes.end(), cli.layers.begin(),
                             cli.layers.end());
  const auto reports = bias_variance_study(cli.c_grid, cli.trials, cli.seed, options);
  const fs::path out(cli.out_dir);
  {
    auto csv = open_output(out / "bias_variance.csv");
    write_bias_variance_csv(csv, reports);
  }

  // Per (estimator, C): mean |bias| and mean variance over trials.
  std::map<std::string, std::map<double, std::pair<double, double>>> table;
  std::map<std::string, std::map<double, int>> counts;
  for (const auto& report : reports) {
    auto& cell = table[describe(report.estimator)][report.c_range];
    cell.first += std::abs(report.bias);
    cell.second += report.variance;
    counts[describe(report.estimator)][report.c_range] += 1;
  }
  std::cout << "mean |bias| (top) and mean variance (bottom) over "
            << cli.trials << " trials\n";
  std::cout << std::left << std::setw(22) << "estimator";
  for (double c : cli.c_grid) std::cout << std::setw(13) << ("C=" + std::to_string(c).substr(0, 4));
  std::cout << '\n';
  for (const auto& [name, cells] : table) {
    std::cout << std::left << std::setw(22) << name;
    for (double c : cli.c_grid) {
      std::cout << std::setw(13) << cells.at(c).first / counts.at(name).at(c);
    }
    std::cout << '\n' << std::left << std::setw(22) << "";
    for (double c : cli.c_grid) {
      std::cout << std::setw(13) << cells.at(c).second / counts.at(name).at(c);
    }
    std::cout << '\n';
  }
  std::cout << "wrote " << (out / "bias_variance.csv").string() << "\n";
  return 0;
}

struct FiguresCli {
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  int outgoing = 8;   // m for the natural-extension curves
  int curves = 4;
  std::vector<int> p_list = {1, 2, 4, 8, 12};
};

int cmd_figures(const FiguresCli& cli) {
  ensure_dir(cli.out_dir);
  const fs::path out(cli.out_dir);

  // Natural-extension curves: one hidden unit feeding m outgoing output
  // units, random parameters and rewards per curve.
  {
    auto csv = open_output(out / "fig1a_natural_extension.csv");
    csv << "curve,u,value\n";
    Rng root(cli.seed);
    for (int curve = 0; curve < cli.curves; ++curve) {
      Rng rng = root.fork(std::uint64_t(curve));
      const std::vector<int> sizes = {0, 1, cli.outgoing};
      NetworkParams params =
          init_params(sizes, InitScheme::uniform_range(2.0), rng.next_u64());
      EnumerableTask task;
      task.input = VectorXd(0);
      task.reward_table.resize(std::size_t(1) << cli.outgoing);
      for (auto& r : task.reward_table) r = rng.uniform(-1.0, 1.0);
      for (int step = 0; step <= 100; ++step) {
        const double u = step / 100.0;
        csv << curve << ',' << u << ','
            << natural_extension_value(params, task, {0, 0}, u) << '\n';
      }
    }
  }

  // Sigmoid derivative magnitudes.
  {
    auto csv = open_output(out / "fig2a_sigmoid_derivatives.csv");
    csv << "p,x,value\n";
    for (int p : cli.p_list) {
      for (double x = -8.0; x <= 8.0 + 1e-9; x += 0.05) {
        csv << p << ',' << x << ',' << sigmoid_derivative(p, x) << '\n';
      }
    }
  }

  // Taylor-approximation error about 0.
  {
    auto csv = open_output(out / "fig2b_taylor_error.csv");
    csv << "p,x,error\n";
    for (int p : cli.p_list) {
      for (double x = 0.0; x <= 6.0 + 1e-9; x += 0.05) {
        csv << p << ',' << x << ',' << taylor_error_sigmoid(p, x) << '\n';
      }
    }
  }

  std::cout << "wrote fig1a_natural_extension.csv, fig2a_sigmoid_derivatives.csv,"
               " fig2b_taylor_error.csv under " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training and analysis of Bernoulli-logistic networks under "
               "five gradient estimators"};
  app.require_subcommand(1);

  TrainCli train_cli;
  CLI::App* train = app.add_subcommand("train", "run one training configuration");
  add_train_flags(train, &train_cli);

  SweepCli sweep_cli;
  CLI::App* sweep_cmd = app.add_subcommand(
      "sweep", "train estimator x width grids and aggregate over seeds");
  add_sweep_flags(sweep_cmd, &sweep_cli);

  AnalyzeCli analyze_cli;
  CLI::App* analyze = app.add_subcommand(
      "analyze", "exact estimator bias/variance over a parameter-range grid");
  analyze->add_option("--c-grid", analyze_cli.c_grid, "parameter ranges C")
      ->delimiter(',')
      ->capture_default_str();
  analyze->add_option("--trials", analyze_cli.trials, "random draws per C")
      ->capture_default_str();
  analyze->add_option("--seed", analyze_cli.seed, "RNG seed")
      ->capture_default_str();
  analyze->add_option("--quad-nodes", analyze_cli.quad_nodes,
                      "Gauss-Legendre nodes per uniform draw")
      ->capture_default_str();
  analyze->add_option("--layers", analyze_cli.layers,
                      "unit layer widths of the probed network (no input)")
      ->delimiter(',')
      ->capture_default_str();
  analyze->add_option("--out", analyze_cli.out_dir, "output directory")
      ->capture_default_str();

  FiguresCli figures_cli;
  CLI::App* figures = app.add_subcommand(
      "figures", "emit natural-extension, sigmoid-derivative and Taylor-error data");
  figures->add_option("--out", figures_cli.out_dir, "output directory")
      ->capture_default_str();
  figures->add_option("--seed", figures_cli.seed, "RNG seed")
      ->capture_default_str();
  figures->add_option("--m", figures_cli.outgoing, "outgoing units per curve")
      ->capture_default_str();
  figures->add_option("--curves", figures_cli.curves, "number of random curves")
      ->capture_default_str();
  figures->add_option("--p-list", figures_cli.p_list, "derivative orders")
      ->delimiter(',')
      ->capture_default_str();

  SweepCli compare_cli;
  compare_cli.estimators = {"reinforce", "ste", "weight_max", "p_order:2",
                            "unbiased_wm"};
  compare_cli.widths = {8, 64};
  CLI::App* compare = app.add_subcommand(
      "compare-backprop",
      "sweep the discrete estimators against the continuous backprop baseline");
  add_sweep_flags(compare, &compare_cli);

  try {
    app.parse(argc, argv);
    if (train->parsed()) return cmd_train(*train, train_cli);
    if (sweep_cmd->parsed()) return cmd_sweep(*sweep_cmd, sweep_cli);
    if (analyze->parsed()) return cmd_analyze(analyze_cli);
    if (figures->parsed()) return cmd_figures(figures_cli);
    if (compare->parsed()) return cmd_compare_backprop(*compare, compare_cli);
    return kExitUsage;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CapacityError& e) {
    std::cerr << "capacity error: " << e.what() << "\n";
    return kExitCapacity;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
