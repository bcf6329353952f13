#pragma once

#include <cstdint>
#include <string>

#include "hsi/models.hpp"
#include "hsi/schedules.hpp"
#include "hsi/solvers.hpp"

namespace hsi {

// Flat "key = value" run configuration ('#' starts a comment; blank lines
// ignored). Unknown keys are rejected so typos fail loudly. Every command
// writes the fully resolved configuration next to its outputs; that echo is
// itself a valid config file that reproduces the run.
//
// The environment variable HSI_SEED, when set, overrides the seed key.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string task = "forward";    // forward | inverse (inverse swaps the pair roles)
  std::string mode = "sde";        // sde | ode (ode forces the noise level to zero)

  double schedule_b = 0.01;                  // schedule.b
  std::string timechange_family = "poly_both";  // timechange.family
  std::string diffusion_epsilon = "b/2";     // diffusion.epsilon: number or literal "b/2"

  std::string solver_scheme = "em2";  // solver.scheme: em1 | em2 | heun
  int solver_steps = 100;             // solver.steps
  int solver_paths = 1;               // solver.paths: trajectories per input, terminal states averaged

  int model_n_modes = 16;   // model.n_modes
  int model_width = 32;     // model.width
  int model_n_layers = 3;   // model.n_layers

  int train_steps = 20000;        // train.steps
  int train_batch = 8;            // train.batch
  double train_lr = 1e-3;         // train.lr
  int train_ema_half_life = 4000; // train.ema_half_life

  int data_n_train = 2000;        // data.n_train
  int data_n_eval = 200;          // data.n_eval
  int data_n_points = 128;        // data.n_points
  double data_length_scale = 0.05;  // data.length_scale
  std::string data_dir = "data";  // data.dir
  std::string run_dir = "run";    // run.dir: checkpoints, CSVs, config echoes

  // Parses, validates, and applies the HSI_SEED override. Throws
  // hsi::usage_error on unreadable files, malformed lines, unknown keys, or
  // out-of-range values.
  static RunConfig from_file(const std::string& path);

  // Same validation for an already-constructed config (used by defaults too).
  void validate() const;

  // Typed views of the raw fields.
  double epsilon_value() const;       // resolves the "b/2" literal against schedule.b
  DiffusionParam diffusion() const;   // zero in ode mode, epsilon_value() in sde mode
  ScheduleSet schedules() const;
  TimeChange time_change() const;
  Stepper stepper() const;
  ModelConfig model_config(int out_channels) const;  // in_channels = 2 * out_channels
  TrainConfig train_config() const;

  // Canonical echo: every key, one per line, parseable by from_file and
  // reproducing this config exactly (doubles emitted round-trippably).
  std::string resolved_text() const;
  void write_resolved(const std::string& path) const;
};

}  // namespace hsi
