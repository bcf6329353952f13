#include "hsi/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "hsi/errors.hpp"

namespace hsi {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(value.c_str(), &end);
  if (end != value.c_str() + value.size() || value.empty() || errno == ERANGE)
    throw usage_error("config: key '" + key + "' expects a number, got '" + value + "'");
  return x;
}

long long parse_int(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const long long x = std::strtoll(value.c_str(), &end, 10);
  if (end != value.c_str() + value.size() || value.empty() || errno == ERANGE)
    throw usage_error("config: key '" + key + "' expects an integer, got '" + value + "'");
  return x;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const unsigned long long x = std::strtoull(value.c_str(), &end, 10);
  if (end != value.c_str() + value.size() || value.empty() || errno == ERANGE ||
      value.find('-') != std::string::npos)
    throw usage_error("config: key '" + key + "' expects a non-negative integer, got '" +
                      value + "'");
  return x;
}

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw usage_error("config: cannot open '" + path + "'");

  RunConfig cfg;
  // Dispatch table keyed by the flat config names.
  const std::map<std::string, std::function<void(const std::string&, const std::string&)>>
      setters = {
          {"seed", [&](const std::string& k, const std::string& v) { cfg.seed = parse_u64(k, v); }},
          {"task", [&](const std::string&, const std::string& v) { cfg.task = v; }},
          {"mode", [&](const std::string&, const std::string& v) { cfg.mode = v; }},
          {"schedule.b",
           [&](const std::string& k, const std::string& v) { cfg.schedule_b = parse_double(k, v); }},
          {"timechange.family",
           [&](const std::string&, const std::string& v) { cfg.timechange_family = v; }},
          {"diffusion.epsilon",
           [&](const std::string&, const std::string& v) { cfg.diffusion_epsilon = v; }},
          {"solver.scheme",
           [&](const std::string&, const std::string& v) { cfg.solver_scheme = v; }},
          {"solver.steps",
           [&](const std::string& k, const std::string& v) {
             cfg.solver_steps = static_cast<int>(parse_int(k, v));
           }},
          {"solver.paths",
           [&](const std::string& k, const std::string& v) {
             cfg.solver_paths = static_cast<int>(parse_int(k, v));
           }},
          {"model.n_modes",
           [&](const std::string& k, const std::string& v) {
             cfg.model_n_modes = static_cast<int>(parse_int(k, v));
           }},
          {"model.width",
           [&](const std::string& k, const std::string& v) {
             cfg.model_width = static_cast<int>(parse_int(k, v));
           }},
          {"model.n_layers",
           [&](const std::string& k, const std::string& v) {
             cfg.model_n_layers = static_cast<int>(parse_int(k, v));
           }},
          {"train.steps",
           [&](const std::string& k, const std::string& v) {
             cfg.train_steps = static_cast<int>(parse_int(k, v));
           }},
          {"train.batch",
           [&](const std::string& k, const std::string& v) {
             cfg.train_batch = static_cast<int>(parse_int(k, v));
           }},
          {"train.lr",
           [&](const std::string& k, const std::string& v) { cfg.train_lr = parse_double(k, v); }},
          {"train.ema_half_life",
           [&](const std::string& k, const std::string& v) {
             cfg.train_ema_half_life = static_cast<int>(parse_int(k, v));
           }},
          {"data.n_train",
           [&](const std::string& k, const std::string& v) {
             cfg.data_n_train = static_cast<int>(parse_int(k, v));
           }},
          {"data.n_eval",
           [&](const std::string& k, const std::string& v) {
             cfg.data_n_eval = static_cast<int>(parse_int(k, v));
           }},
          {"data.n_points",
           [&](const std::string& k, const std::string& v) {
             cfg.data_n_points = static_cast<int>(parse_int(k, v));
           }},
          {"data.length_scale",
           [&](const std::string& k, const std::string& v) {
             cfg.data_length_scale = parse_double(k, v);
           }},
          {"data.dir", [&](const std::string&, const std::string& v) { cfg.data_dir = v; }},
          {"run.dir", [&](const std::string&, const std::string& v) { cfg.run_dir = v; }},
      };

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw usage_error("config: line " + std::to_string(lineno) +
                        " is not 'key = value': " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end())
      throw usage_error("config: unknown key '" + key + "' on line " + std::to_string(lineno));
    it->second(key, value);
  }

  if (const char* env = std::getenv("HSI_SEED")) cfg.seed = parse_u64("HSI_SEED", env);
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  if (task != "forward" && task != "inverse")
    throw usage_error("config: task must be 'forward' or 'inverse', got '" + task + "'");
  if (mode != "ode" && mode != "sde")
    throw usage_error("config: mode must be 'ode' or 'sde', got '" + mode + "'");
  if (!(schedule_b > 0.0))
    throw usage_error("config: schedule.b must be positive");
  try {
    (void)parse_time_change_family(timechange_family);
  } catch (const std::exception& e) {
    throw usage_error(std::string("config: timechange.family: ") + e.what());
  }
  if (diffusion_epsilon != "b/2") {
    const double eps = parse_double("diffusion.epsilon", diffusion_epsilon);
    if (eps < 0.0) throw usage_error("config: diffusion.epsilon must be >= 0");
  }
  try {
    (void)parse_stepper(solver_scheme);
  } catch (const std::exception& e) {
    throw usage_error(std::string("config: solver.scheme: ") + e.what());
  }
  if (solver_steps < 1) throw usage_error("config: solver.steps must be >= 1");
  if (solver_paths < 1) throw usage_error("config: solver.paths must be >= 1");
  if (model_n_modes < 1 || model_width < 1 || model_n_layers < 1)
    throw usage_error("config: model.n_modes, model.width, model.n_layers must be >= 1");
  if (train_steps < 0) throw usage_error("config: train.steps must be >= 0");
  if (train_batch < 1) throw usage_error("config: train.batch must be >= 1");
  if (!(train_lr > 0.0)) throw usage_error("config: train.lr must be positive");
  if (train_ema_half_life < 1) throw usage_error("config: train.ema_half_life must be >= 1");
  if (data_n_train < 1 || data_n_eval < 1)
    throw usage_error("config: data.n_train and data.n_eval must be >= 1");
  if (data_n_points < 3) throw usage_error("config: data.n_points must be >= 3");
  if (!(data_length_scale > 0.0))
    throw usage_error("config: data.length_scale must be positive");
  if (data_dir.empty() || run_dir.empty())
    throw usage_error("config: data.dir and run.dir must be non-empty");
}

double RunConfig::epsilon_value() const {
  if (diffusion_epsilon == "b/2") return 0.5 * schedule_b;
  return parse_double("diffusion.epsilon", diffusion_epsilon);
}

DiffusionParam RunConfig::diffusion() const {
  if (mode == "ode") return DiffusionParam::ode();
  if (diffusion_epsilon == "b/2") return DiffusionParam::half_b(schedules());
  return DiffusionParam(epsilon_value());
}

ScheduleSet RunConfig::schedules() const { return ScheduleSet(schedule_b); }

TimeChange RunConfig::time_change() const {
  return make_time_change(parse_time_change_family(timechange_family), schedules(), diffusion());
}

Stepper RunConfig::stepper() const { return parse_stepper(solver_scheme); }

ModelConfig RunConfig::model_config(int out_channels) const {
  ModelConfig mc;
  mc.in_channels = 2 * out_channels;
  mc.out_channels = out_channels;
  mc.n_modes = model_n_modes;
  mc.width = model_width;
  mc.n_layers = model_n_layers;
  return mc;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig tc;
  tc.batch_size = train_batch;
  tc.learning_rate = train_lr;
  tc.total_steps = train_steps;
  tc.ema_half_life = train_ema_half_life;
  tc.seed = seed;
  return tc;
}

std::string RunConfig::resolved_text() const {
  std::ostringstream out;
  out << "# resolved configuration (reusable as a config file)\n";
  out << "seed = " << seed << "\n";
  out << "task = " << task << "\n";
  out << "mode = " << mode << "\n";
  out << "schedule.b = " << fmt_double(schedule_b) << "\n";
  out << "timechange.family = " << timechange_family << "\n";
  out << "diffusion.epsilon = " << diffusion_epsilon << "\n";
  out << "solver.scheme = " << solver_scheme << "\n";
  out << "solver.steps = " << solver_steps << "\n";
  out << "solver.paths = " << solver_paths << "\n";
  out << "model.n_modes = " << model_n_modes << "\n";
  out << "model.width = " << model_width << "\n";
  out << "model.n_layers = " << model_n_layers << "\n";
  out << "train.steps = " << train_steps << "\n";
  out << "train.batch = " << train_batch << "\n";
  out << "train.lr = " << fmt_double(train_lr) << "\n";
  out << "train.ema_half_life = " << train_ema_half_life << "\n";
  out << "data.n_train = " << data_n_train << "\n";
  out << "data.n_eval = " << data_n_eval << "\n";
  out << "data.n_points = " << data_n_points << "\n";
  out << "data.length_scale = " << fmt_double(data_length_scale) << "\n";
  out << "data.dir = " << data_dir << "\n";
  out << "run.dir = " << run_dir << "\n";
  return out.str();
}

void RunConfig::write_resolved(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("config: cannot write '" + path + "'");
  out << resolved_text();
  if (!out) throw std::runtime_error("config: short write to '" + path + "'");
}

}  // namespace hsi
