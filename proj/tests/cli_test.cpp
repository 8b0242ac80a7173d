#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <doctest.h>

namespace {

namespace fs = std::filesystem;

int run(const std::string& args) {
  const std::string cmd =
      std::string(WMAX_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string first_line(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  return line;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run("--help") == 0);
  CHECK(run("train --help") == 0);
  CHECK(run("") == 2);                    // missing subcommand
  CHECK(run("transmogrify") == 2);        // unknown subcommand
  CHECK(run("train --no-such-flag 1") == 2);
  CHECK(run("train --estimator bogus --task multiplexer --k 1 --layers 2 "
            "--episodes 32 --batch 16") == 2);
}

TEST_CASE("config, capacity and io exit codes") {
  // a config file that cannot be opened is a usage problem
  CHECK(run("train --config /nonexistent/config.json") == 2);
  CHECK(run("analyze --layers 13,13 --trials 1 --c-grid 1 --out " +
            (fs::temp_directory_path() / "wmax_cap").string()) == 3);
  // unwritable output directory
  CHECK(run("train --task multiplexer --k 1 --layers 2 --episodes 32 "
            "--batch 16 --out /proc/nonexistent/out") == 4);
}

TEST_CASE("train writes curve, checkpoint and config; reruns are identical") {
  const fs::path dir = fresh_dir("wmax_cli_train");
  const std::string args =
      "train --task multiplexer --k 1 --layers 3,3 --estimator unbiased_wm "
      "--episodes 480 --batch 16 --seed 5 --out " + dir.string();
  REQUIRE(run(args) == 0);
  CHECK(fs::exists(dir / "learning_curve.csv"));
  CHECK(fs::exists(dir / "checkpoint.json"));
  CHECK(fs::exists(dir / "config.json"));
  CHECK(first_line(dir / "learning_curve.csv") ==
        "episode,batch_reward,running_avg");

  const std::string curve = read_file(dir / "learning_curve.csv");
  const std::string ckpt = read_file(dir / "checkpoint.json");
  REQUIRE(run(args) == 0);
  CHECK(read_file(dir / "learning_curve.csv") == curve);
  CHECK(read_file(dir / "checkpoint.json") == ckpt);
}

TEST_CASE("config file with flag overrides") {
  const fs::path dir = fresh_dir("wmax_cli_config");
  const fs::path config = dir / "run.json";
  {
    std::ofstream out(config);
    out << R"({"task": {"name": "multiplexer", "k": 1},
               "layers": [2, 2],
               "estimator": {"kind": "reinforce"},
               "episodes": 320,
               "seed": 3})";
  }
  REQUIRE(run("train --config " + config.string() + " --estimator ste --out " +
              dir.string()) == 0);
  const std::string saved = read_file(dir / "config.json");
  CHECK(saved.find("\"kind\": \"ste\"") != std::string::npos);
  CHECK(saved.find("\"episodes\": 320") != std::string::npos);
}

TEST_CASE("analyze emits the study CSV deterministically") {
  const fs::path dir = fresh_dir("wmax_cli_analyze");
  const std::string args =
      "analyze --trials 1 --seed 7 --c-grid 0.5,1 --layers 1,2,1 --out " +
      dir.string();
  REQUIRE(run(args) == 0);
  CHECK(first_line(dir / "bias_variance.csv") ==
        "estimator,C,trial,bias,variance,quadrature_error");
  const std::string first = read_file(dir / "bias_variance.csv");
  REQUIRE(run(args) == 0);
  CHECK(read_file(dir / "bias_variance.csv") == first);
}

TEST_CASE("figures emits plottable data") {
  const fs::path dir = fresh_dir("wmax_cli_figures");
  REQUIRE(run("figures --seed 2 --curves 2 --out " + dir.string()) == 0);
  CHECK(first_line(dir / "fig1a_natural_extension.csv") == "curve,u,value");
  CHECK(first_line(dir / "fig2a_sigmoid_derivatives.csv") == "p,x,value");
  CHECK(first_line(dir / "fig2b_taylor_error.csv") == "p,x,error");
}

TEST_CASE("sweep writes summary and curves") {
  const fs::path dir = fresh_dir("wmax_cli_sweep");
  REQUIRE(run("sweep --task multiplexer --k 1 --layers 2,2 "
              "--estimators reinforce,ste --widths 2,3 --runs 2 "
              "--episodes 320 --batch 16 --seed 1 --out " + dir.string()) == 0);
  const std::string summary = read_file(dir / "sweep_summary.csv");
  // one row per (estimator, N) plus the header
  int lines = 0;
  for (char c : summary) lines += c == '\n';
  CHECK(lines == 1 + 2 * 2);
  CHECK(fs::exists(dir / "sweep_curves.csv"));
}

TEST_CASE("compare-backprop includes the baseline column") {
  const fs::path dir = fresh_dir("wmax_cli_compare");
  REQUIRE(run("compare-backprop --task multiplexer --k 1 --layers 2,2 "
              "--estimators reinforce --widths 2 --runs 1 --episodes 320 "
              "--batch 16 --seed 1 --out " + dir.string()) == 0);
  const std::string wide = read_file(dir / "compare_wide.csv");
  CHECK(wide.find("backprop") != std::string::npos);
  const std::string summary = read_file(dir / "compare_summary.csv");
  CHECK(summary.find("backprop") != std::string::npos);
}
