#include "hsi/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hsi/bridge.hpp"
#include "hsi/config.hpp"
#include "hsi/darcy1d.hpp"
#include "hsi/dataset.hpp"
#include "hsi/errors.hpp"
#include "hsi/function_space.hpp"
#include "hsi/gaussian_field.hpp"
#include "hsi/models.hpp"
#include "hsi/random.hpp"
#include "hsi/schedules.hpp"
#include "hsi/solvers.hpp"
#include "hsi/verify.hpp"

namespace fs = std::filesystem;

namespace hsi {

namespace {

std::string fmt6(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

// The stored pair files hold [input function, output function] per sample.
// Bridging runs in the two-channel product space, where the source occupies
// channel 0 and the target channel 1: x0' = (input, 0), x1' = (0, output).
Dataset embed_endpoint(const Dataset& pairs, bool source_side) {
  if (pairs.n_channels != 2)
    throw usage_error("expected a two-channel paired dataset, got " +
                      std::to_string(pairs.n_channels) + " channels");
  Dataset out(pairs.grid, 2, pairs.n_samples);
  const int n = pairs.grid.n();
  for (int i = 0; i < pairs.n_samples; ++i) {
    const double* src = pairs.channel(i, source_side ? 0 : 1);
    double* dst = out.channel(i, source_side ? 0 : 1);
    std::copy(src, src + n, dst);
  }
  out.stats = pairs.stats;
  return out;
}

GridFunction denormalized(const Dataset& d, int sample, int channel) {
  GridFunction f = d.function(sample, channel);
  const NormalizationStats& st = d.stats[channel];
  for (double& v : f.values) v = v * st.std + st.mean;
  return f;
}

int cmd_generate_data(const RunConfig& cfg, std::ostream& out) {
  fs::create_directories(cfg.data_dir);
  cfg.write_resolved(cfg.data_dir + "/generate-data.config");

  const Grid grid(cfg.data_n_points, 1.0);
  DarcyGenerationReport rep;
  Dataset all = generate_darcy_dataset(grid, cfg.data_n_train + cfg.data_n_eval, cfg.seed,
                                       cfg.data_length_scale, &rep);
  normalize_dataset(all);

  // Both splits share the pooled normalization stats, so values move between
  // files without rescaling.
  Dataset train(grid, 2, cfg.data_n_train);
  Dataset evalset(grid, 2, cfg.data_n_eval);
  const std::size_t row = static_cast<std::size_t>(2) * grid.n();
  std::copy(all.values.begin(), all.values.begin() + row * cfg.data_n_train,
            train.values.begin());
  std::copy(all.values.begin() + row * cfg.data_n_train, all.values.end(),
            evalset.values.begin());
  train.stats = all.stats;
  evalset.stats = all.stats;

  write_dataset(train, cfg.data_dir + "/train");
  write_dataset(evalset, cfg.data_dir + "/eval");
  out << "wrote " << cfg.data_dir << "/train (" << train.n_samples << " samples) and "
      << cfg.data_dir << "/eval (" << evalset.n_samples << " samples), grid n="
      << grid.n() << "\n";
  out << "resampled draws: " << rep.n_resampled
      << ", max solver iterations: " << rep.max_iterations << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  Dataset train = read_dataset(cfg.data_dir + "/train");
  if (cfg.task == "inverse") train.swap_channels();
  fs::create_directories(cfg.run_dir);
  cfg.write_resolved(cfg.run_dir + "/train.config");

  const Dataset x0set = embed_endpoint(train, true);
  const Dataset x1set = embed_endpoint(train, false);
  const GaussianField noise(train.grid, RbfKernel(cfg.data_length_scale));

  RandomStream root(cfg.seed);
  SpectralModel velocity(cfg.model_config(2), root.split(101).seed());
  SpectralModel denoiser(cfg.model_config(2), root.split(102).seed());
  TrainConfig tc = cfg.train_config();
  tc.seed = root.split(103).seed();
  tc.log_every = std::max(1, cfg.train_steps / 20);
  tc.log = &out;

  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult res = train_models(velocity, denoiser, x0set, x1set, cfg.schedules(),
                                       noise, tc);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  save_model(velocity, res.velocity_ema, cfg.run_dir + "/velocity.ckpt");
  save_model(denoiser, res.denoiser_ema, cfg.run_dir + "/denoiser.ckpt");

  std::ofstream csv(cfg.run_dir + "/loss_trace.csv", std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + cfg.run_dir + "/loss_trace.csv");
  csv << "step,velocity_loss,denoiser_loss\n";
  for (std::size_t i = 0; i < res.velocity_loss.size(); ++i)
    csv << i << ',' << fmt6(res.velocity_loss[i]) << ',' << fmt6(res.denoiser_loss[i])
        << '\n';

  out << "trained " << cfg.train_steps << " steps in " << fmt6(secs) << "s; wrote "
      << cfg.run_dir << "/velocity.ckpt, " << cfg.run_dir << "/denoiser.ckpt, "
      << cfg.run_dir << "/loss_trace.csv\n";
  return 0;
}

struct LoadedPair {
  LoadedModel velocity, denoiser;
};

// Checkpointed models with the averaged weights installed for inference.
LoadedPair load_pair(const std::string& dir) {
  LoadedPair p{load_model(dir + "/velocity.ckpt"), load_model(dir + "/denoiser.ckpt")};
  p.velocity.model.params() = p.velocity.ema;
  p.denoiser.model.params() = p.denoiser.ema;
  for (const LoadedModel* m : {&p.velocity, &p.denoiser})
    if (m->model.config().in_channels != 4 || m->model.config().out_channels != 2)
      throw usage_error("checkpoint in " + dir +
                        " is not a two-channel conditional model (in=4, out=2)");
  return p;
}

struct PredictOutcome {
  std::vector<double> predictions;  // flat [sample][sensor], normalized units
  int first_nonfinite_step = -1;
  int n_nonfinite_paths = 0;
};

// Integrates the bridge for every sample of `evalset` (condition = channel 0)
// and returns the terminal target-channel states, averaged over
// cfg.solver_paths independent paths per sample.
PredictOutcome predict_set(const RunConfig& cfg, const Dataset& evalset,
                           const SpectralModel& velocity, const SpectralModel& denoiser,
                           const GaussianField& noise, const DiffusionParam& d,
                           TimeChangeFamily family, bool throw_on_nonfinite,
                           const std::string& traj_dir) {
  const Grid& grid = evalset.grid;
  const int n = grid.n();
  const ScheduleSet s = cfg.schedules();
  const TimeChange tc = make_time_change(family, s, d);
  const bool admissible = validate_time_change(tc, s, d).valid();

  const ModelField vel_field(velocity, grid);
  const ModelField den_field(denoiser, grid);
  BridgeDynamics dyn(vel_field, den_field, s, d, tc);
  dyn.noise = &noise;
  dyn.unchecked_coefficients = !admissible;

  SolverOptions opt;
  opt.steps = cfg.solver_steps;
  opt.stepper = cfg.stepper();
  opt.throw_on_nonfinite = throw_on_nonfinite;

  PredictOutcome res;
  res.predictions.assign(static_cast<std::size_t>(evalset.n_samples) * n, 0.0);
  const RandomStream base(cfg.seed);
  std::vector<double> x0(2 * n, 0.0);

  for (int i = 0; i < evalset.n_samples; ++i) {
    const double* cond = evalset.channel(i, 0);
    std::copy(cond, cond + n, x0.begin());
    std::fill(x0.begin() + n, x0.end(), 0.0);
    const RandomStream per_sample = base.split(i);

    std::vector<double> acc(n, 0.0);
    for (int p = 0; p < cfg.solver_paths; ++p) {
      RandomStream rp = per_sample.split(p);
      SolverOptions o = opt;
      o.keep_path = (!traj_dir.empty() && p == 0);
      const Trajectory tr = sample_trajectory(dyn, x0, o, rp);
      if (!tr.finite()) {
        ++res.n_nonfinite_paths;
        if (res.first_nonfinite_step < 0 || tr.nonfinite_step < res.first_nonfinite_step)
          res.first_nonfinite_step = tr.nonfinite_step;
      }
      const std::vector<double>& term = tr.terminal();
      for (int j = 0; j < n; ++j) acc[j] += term[n + j];
      if (o.keep_path) {
        Dataset traj(grid, 2, static_cast<int>(tr.states.size()));
        for (std::size_t k = 0; k < tr.states.size(); ++k)
          std::copy(tr.states[k].begin(), tr.states[k].end(),
                    traj.sample(static_cast<int>(k)));
        char name[48];
        std::snprintf(name, sizeof name, "/trajectory_%04d", i);
        write_dataset(traj, traj_dir + name);
      }
    }
    for (int j = 0; j < n; ++j)
      res.predictions[static_cast<std::size_t>(i) * n + j] = acc[j] / cfg.solver_paths;
  }
  return res;
}

int cmd_sample(const RunConfig& cfg, const std::string& ckpt_dir, bool dump_trajectories,
               std::ostream& out) {
  Dataset evalset = read_dataset(cfg.data_dir + "/eval");
  if (cfg.task == "inverse") evalset.swap_channels();
  fs::create_directories(cfg.run_dir);
  cfg.write_resolved(cfg.run_dir + "/sample.config");

  const LoadedPair models = load_pair(ckpt_dir);
  const GaussianField noise(evalset.grid, RbfKernel(cfg.data_length_scale));
  const PredictOutcome po =
      predict_set(cfg, evalset, models.velocity.model, models.denoiser.model, noise,
                  cfg.diffusion(), parse_time_change_family(cfg.timechange_family),
                  /*throw_on_nonfinite=*/true, dump_trajectories ? cfg.run_dir : "");

  // Predictions and matching targets in physical units: channel 0 carries the
  // conditioning input, channel 1 the predicted / true output.
  const Grid& grid = evalset.grid;
  const int n = grid.n();
  Dataset pred(grid, 2, evalset.n_samples);
  Dataset truth(grid, 2, evalset.n_samples);
  for (int i = 0; i < evalset.n_samples; ++i) {
    const GridFunction cond = denormalized(evalset, i, 0);
    const GridFunction target = denormalized(evalset, i, 1);
    std::copy(cond.values.begin(), cond.values.end(), pred.channel(i, 0));
    std::copy(cond.values.begin(), cond.values.end(), truth.channel(i, 0));
    std::copy(target.values.begin(), target.values.end(), truth.channel(i, 1));
    const NormalizationStats& st = evalset.stats[1];
    double* pc = pred.channel(i, 1);
    for (int j = 0; j < n; ++j)
      pc[j] = po.predictions[static_cast<std::size_t>(i) * n + j] * st.std + st.mean;
  }
  write_dataset(pred, cfg.run_dir + "/predictions");
  write_dataset(truth, cfg.run_dir + "/targets");
  out << "wrote " << cfg.run_dir << "/predictions and " << cfg.run_dir << "/targets ("
      << evalset.n_samples << " samples, " << cfg.solver_paths << " path(s) each)\n";
  if (dump_trajectories)
    out << "wrote per-sample trajectories to " << cfg.run_dir << "/trajectory_*.bin\n";
  return 0;
}

int cmd_evaluate(const std::string& pred_path, const std::string& truth_path,
                 std::ostream& out) {
  const Dataset pred = read_dataset(pred_path);
  const Dataset truth = read_dataset(truth_path);
  if (pred.grid != truth.grid || pred.n_samples != truth.n_samples ||
      pred.n_channels != truth.n_channels)
    throw usage_error("evaluate: prediction and truth datasets have different shapes");
  const int c = pred.n_channels - 1;  // the output channel, by convention the last
  out << "sample,rel_l2_percent\n";
  double sum = 0.0;
  for (int i = 0; i < pred.n_samples; ++i) {
    const GridFunction p = denormalized(pred, i, c);
    const GridFunction t = denormalized(truth, i, c);
    const double r = 100.0 * relative_l2_error(p, t);
    sum += r;
    out << i << ',' << fmt6(r) << '\n';
  }
  out << "mean," << fmt6(sum / pred.n_samples) << '\n';
  return 0;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  Dataset evalset = read_dataset(cfg.data_dir + "/eval");
  if (cfg.task == "inverse") evalset.swap_channels();
  fs::create_directories(cfg.run_dir);
  cfg.write_resolved(cfg.run_dir + "/ablate-timechange.config");

  const LoadedPair models = load_pair(cfg.run_dir);
  const GaussianField noise(evalset.grid, RbfKernel(cfg.data_length_scale));
  const ScheduleSet s = cfg.schedules();

  struct Row {
    const char* mode;
    TimeChangeFamily family;
  };
  // Noise-free rows need two-sided decay to be admissible, so only the
  // two-sided families (plus the identity baseline) appear there; with
  // eps = b/2 the left endpoint cancels and all right-decaying families
  // qualify.
  const std::vector<Row> rows = {
      {"ode", TimeChangeFamily::identity},  {"ode", TimeChangeFamily::poly_both},
      {"ode", TimeChangeFamily::exp_both},  {"sde", TimeChangeFamily::identity},
      {"sde", TimeChangeFamily::poly_right}, {"sde", TimeChangeFamily::poly_both},
      {"sde", TimeChangeFamily::exp_right}, {"sde", TimeChangeFamily::exp_both},
  };

  std::ostringstream csv;
  csv << "mode,timechange,mean_rel_l2_percent,first_nonfinite_step\n";
  const int n = evalset.grid.n();
  for (const Row& row : rows) {
    const DiffusionParam d = (std::string(row.mode) == "ode") ? DiffusionParam::ode()
                                                              : DiffusionParam::half_b(s);
    const PredictOutcome po =
        predict_set(cfg, evalset, models.velocity.model, models.denoiser.model, noise, d,
                    row.family, /*throw_on_nonfinite=*/false, "");
    // Plain-loop error so rows whose paths diverged report inf/nan instead of
    // tripping the finite-value guard of GridFunction and aborting the table.
    double sum = 0.0;
    const NormalizationStats& st = evalset.stats[1];
    for (int i = 0; i < evalset.n_samples; ++i) {
      const GridFunction t = denormalized(evalset, i, 1);
      double num = 0.0, den = 0.0;
      for (int j = 0; j < n; ++j) {
        const double pj =
            po.predictions[static_cast<std::size_t>(i) * n + j] * st.std + st.mean;
        const double diff = pj - t.values[j];
        num += diff * diff;
        den += t.values[j] * t.values[j];
      }
      sum += 100.0 * std::sqrt(num / den);
    }
    csv << row.mode << ',' << time_change_family_name(row.family) << ','
        << fmt6(sum / evalset.n_samples) << ',' << po.first_nonfinite_step << '\n';
  }

  std::ofstream file(cfg.run_dir + "/ablation.csv", std::ios::trunc);
  if (!file) throw std::runtime_error("cannot write " + cfg.run_dir + "/ablation.csv");
  file << csv.str();
  out << csv.str();
  return 0;
}

int cmd_verify(const RunConfig& cfg, std::ostream& out) {
  fs::create_directories(cfg.run_dir);
  cfg.write_resolved(cfg.run_dir + "/verify-gaussian.config");
  return run_verification_suite(cfg, out) ? 0 : 3;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"conditional bridge sampling between function-valued distributions"};
  app.name("hsi");
  app.require_subcommand(1);

  std::string gen_cfg, train_cfg, sample_cfg, sample_ckpt, ablate_cfg, verify_cfg;
  std::string pred_path, truth_path;
  bool dump_trajectories = false;

  CLI::App* gen = app.add_subcommand(
      "generate-data", "draw forcing/solution pairs and write train/eval datasets");
  gen->add_option("--config", gen_cfg, "config file")->required();

  CLI::App* train = app.add_subcommand(
      "train", "fit velocity and denoiser models on the training pairs");
  train->add_option("--config", train_cfg, "config file")->required();

  CLI::App* sample = app.add_subcommand(
      "sample", "integrate the bridge over the eval set and write predictions");
  sample->add_option("--config", sample_cfg, "config file")->required();
  sample->add_option("--checkpoint", sample_ckpt, "directory holding velocity.ckpt/denoiser.ckpt")
      ->required();
  sample->add_flag("--dump-trajectories", dump_trajectories,
                   "also write the full path of each sample");

  CLI::App* eva = app.add_subcommand(
      "evaluate", "per-sample relative L2 error (percent) between two dataset files");
  eva->add_option("--pred", pred_path, "prediction dataset base path")->required();
  eva->add_option("--truth", truth_path, "ground-truth dataset base path")->required();

  CLI::App* ablate = app.add_subcommand(
      "ablate-timechange", "error table over reparameterization families and noise modes");
  ablate->add_option("--config", ablate_cfg, "config file")->required();

  CLI::App* verify = app.add_subcommand(
      "verify-gaussian", "closed-form property suite; nonzero exit on any FAIL");
  verify->add_option("--config", verify_cfg, "config file")->required();

  std::vector<const char*> argv;
  argv.push_back("hsi");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate_data(RunConfig::from_file(gen_cfg), out);
    if (train->parsed()) return cmd_train(RunConfig::from_file(train_cfg), out);
    if (sample->parsed())
      return cmd_sample(RunConfig::from_file(sample_cfg), sample_ckpt, dump_trajectories,
                        out);
    if (eva->parsed()) return cmd_evaluate(pred_path, truth_path, out);
    if (ablate->parsed()) return cmd_ablate(RunConfig::from_file(ablate_cfg), out);
    if (verify->parsed()) return cmd_verify(RunConfig::from_file(verify_cfg), out);
  } catch (const usage_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const numerical_error& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::runtime_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "unexpected failure: " << e.what() << "\n";
    return 2;
  }
  err << "error: no command selected\n";
  return 1;
}

}  // namespace hsi
