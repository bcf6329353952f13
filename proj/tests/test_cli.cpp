#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hsi/cli.hpp"
#include "hsi/config.hpp"
#include "hsi/errors.hpp"

using namespace hsi;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code;
  std::string out, err;
};

RunResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() /
           ("hsi_cli_test_" + std::to_string(static_cast<long>(::getpid())));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(root, ec);
  }
  std::string path(const std::string& rel) const { return (root / rel).string(); }
};

// A complete small-run configuration; overrides patch individual keys.
std::string write_config(const Workspace& ws, const std::string& name,
                         const std::map<std::string, std::string>& overrides) {
  std::map<std::string, std::string> kv = {
      {"seed", "3"},
      {"task", "forward"},
      {"mode", "ode"},
      {"schedule.b", "0.01"},
      {"timechange.family", "poly_both"},
      {"diffusion.epsilon", "b/2"},
      {"solver.scheme", "em2"},
      {"solver.steps", "16"},
      {"solver.paths", "1"},
      {"model.n_modes", "4"},
      {"model.width", "8"},
      {"model.n_layers", "2"},
      {"train.steps", "40"},
      {"train.batch", "4"},
      {"train.lr", "0.001"},
      {"train.ema_half_life", "20"},
      {"data.n_train", "24"},
      {"data.n_eval", "8"},
      {"data.n_points", "33"},
      {"data.length_scale", "0.05"},
      {"data.dir", ws.path("data")},
      {"run.dir", ws.path("run")},
  };
  for (const auto& [k, v] : overrides) kv[k] = v;
  const std::string path = ws.path(name);
  std::ofstream os(path);
  for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
  return path;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s)
    if (c == '\n') ++n;
  return n;
}

// value of the "mean,<x>" line printed by evaluate
double parse_mean(const std::string& out) {
  const auto pos = out.rfind("mean,");
  REQUIRE(pos != std::string::npos);
  return std::strtod(out.c_str() + pos + 5, nullptr);
}

struct EnvSeed {
  explicit EnvSeed(const char* v) { ::setenv("HSI_SEED", v, 1); }
  ~EnvSeed() { ::unsetenv("HSI_SEED"); }
};

}  // namespace

TEST_CASE("malformed invocations and configs exit with code 1") {
  Workspace ws;
  RunResult r = run({"no-such-command"});
  CHECK(r.code == 1);

  r = run({"train"});  // missing --config
  CHECK(r.code == 1);

  r = run({"train", "--config", ws.path("missing.cfg")});
  CHECK(r.code == 1);
  CHECK(r.err.find("cannot open") != std::string::npos);

  const std::string bad_key = write_config(ws, "bad_key.cfg", {{"bogus.key", "1"}});
  r = run({"train", "--config", bad_key});
  CHECK(r.code == 1);
  CHECK(r.err.find("unknown key 'bogus.key'") != std::string::npos);

  const std::string bad_value = write_config(ws, "bad_value.cfg", {{"train.lr", "abc"}});
  r = run({"train", "--config", bad_value});
  CHECK(r.code == 1);
  CHECK(r.err.find("expects a number") != std::string::npos);

  const std::string bad_mode = write_config(ws, "bad_mode.cfg", {{"mode", "both"}});
  r = run({"train", "--config", bad_mode});
  CHECK(r.code == 1);
  CHECK(r.err.find("mode must be") != std::string::npos);

  std::ofstream(ws.path("noeq.cfg")) << "seed = 1\nthis line has no equals\n";
  r = run({"train", "--config", ws.path("noeq.cfg")});
  CHECK(r.code == 1);
  CHECK(r.err.find("line 2") != std::string::npos);
}

TEST_CASE("resolved config echo parses back to an identical config") {
  Workspace ws;
  const std::string path = write_config(ws, "a.cfg", {{"seed", "42"}, {"train.lr", "0.0025"}});
  RunConfig cfg = RunConfig::from_file(path);
  CHECK(cfg.seed == 42);
  CHECK(cfg.train_lr == 0.0025);

  const std::string echo_path = ws.path("echo.cfg");
  cfg.write_resolved(echo_path);
  RunConfig round = RunConfig::from_file(echo_path);
  CHECK(round.resolved_text() == cfg.resolved_text());
}

TEST_CASE("the seed environment override wins over the config file") {
  Workspace ws;
  const std::string path = write_config(ws, "seeded.cfg", {{"seed", "42"}});
  {
    EnvSeed env("777");
    RunConfig cfg = RunConfig::from_file(path);
    CHECK(cfg.seed == 777);
    CHECK(cfg.resolved_text().find("seed = 777\n") != std::string::npos);
  }
  {
    EnvSeed env("not-a-number");
    CHECK_THROWS_AS(RunConfig::from_file(path), usage_error);
  }
  RunConfig cfg = RunConfig::from_file(path);
  CHECK(cfg.seed == 42);
}

TEST_CASE("small pipeline: generate, train, sample, evaluate, ablate, verify") {
  Workspace ws;
  const std::string cfg = write_config(ws, "run.cfg", {});

  RunResult r = run({"generate-data", "--config", cfg});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(ws.path("data/train.bin")));
  CHECK(fs::exists(ws.path("data/train.meta")));
  CHECK(fs::exists(ws.path("data/eval.bin")));
  CHECK(fs::exists(ws.path("data/generate-data.config")));
  CHECK(r.out.find("24 samples") != std::string::npos);
  CHECK(r.out.find("8 samples") != std::string::npos);

  // the echoed config reproduces the effective configuration exactly
  RunConfig parsed = RunConfig::from_file(cfg);
  RunConfig echoed = RunConfig::from_file(ws.path("data/generate-data.config"));
  CHECK(echoed.resolved_text() == parsed.resolved_text());

  r = run({"train", "--config", cfg});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(ws.path("run/velocity.ckpt")));
  CHECK(fs::exists(ws.path("run/denoiser.ckpt")));
  const std::string trace = read_file(ws.path("run/loss_trace.csv"));
  CHECK(count_lines(trace) == 41);  // header + one line per step
  CHECK(trace.rfind("step,velocity_loss,denoiser_loss\n", 0) == 0);

  r = run({"sample", "--config", cfg, "--checkpoint", ws.path("run")});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(ws.path("run/predictions.bin")));
  CHECK(fs::exists(ws.path("run/targets.bin")));

  r = run({"evaluate", "--pred", ws.path("run/predictions"), "--truth",
           ws.path("run/targets")});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("sample,rel_l2_percent\n", 0) == 0);
  const double mean = parse_mean(r.out);
  CHECK(std::isfinite(mean));
  CHECK(mean > 0.0);

  // a dataset compared against itself scores exactly zero
  r = run({"evaluate", "--pred", ws.path("run/targets"), "--truth", ws.path("run/targets")});
  REQUIRE(r.code == 0);
  CHECK(parse_mean(r.out) == 0.0);

  // shape mismatch is a usage error
  r = run({"evaluate", "--pred", ws.path("data/train"), "--truth", ws.path("run/targets")});
  CHECK(r.code == 1);
  CHECK(r.err.find("different shapes") != std::string::npos);

  // stochastic sampling is reproducible: identical bytes from identical seeds
  const std::string sde_a = write_config(
      ws, "sde_a.cfg",
      {{"mode", "sde"}, {"timechange.family", "poly_right"}, {"run.dir", ws.path("run2")}});
  const std::string sde_b = write_config(
      ws, "sde_b.cfg",
      {{"mode", "sde"}, {"timechange.family", "poly_right"}, {"run.dir", ws.path("run3")}});
  r = run({"sample", "--config", sde_a, "--checkpoint", ws.path("run")});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  r = run({"sample", "--config", sde_b, "--checkpoint", ws.path("run")});
  REQUIRE(r.code == 0);
  CHECK(read_file(ws.path("run2/predictions.bin")) ==
        read_file(ws.path("run3/predictions.bin")));
  CHECK(read_file(ws.path("run2/predictions.bin")).size() == 8 * 2 * 33 * 8);

  // full ablation table: fixed 8-row layout in a fixed order
  r = run({"ablate-timechange", "--config", cfg});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(ws.path("run/ablation.csv")));
  std::istringstream table(read_file(ws.path("run/ablation.csv")));
  std::string line;
  std::getline(table, line);
  CHECK(line == "mode,timechange,mean_rel_l2_percent,first_nonfinite_step");
  const char* want_rows[8] = {"ode,identity",  "ode,poly_both",  "ode,exp_both",
                              "sde,identity",  "sde,poly_right", "sde,poly_both",
                              "sde,exp_right", "sde,exp_both"};
  for (int i = 0; i < 8; ++i) {
    REQUIRE(std::getline(table, line));
    CHECK(line.rfind(want_rows[i], 0) == 0);
    // last field is an integer step index (or -1)
    const auto comma = line.rfind(',');
    const int step = std::atoi(line.c_str() + comma + 1);
    CHECK(step >= -1);
  }
  CHECK(!std::getline(table, line));

  // closed-form property suite passes end to end
  r = run({"verify-gaussian", "--config", cfg});
  CAPTURE(r.out);
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);

  // a checkpoint directory without model files is a usage error
  r = run({"sample", "--config", cfg, "--checkpoint", ws.path("data")});
  CHECK(r.code == 1);
}
