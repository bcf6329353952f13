#pragma once

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hsi/bridge.hpp"
#include "hsi/dataset.hpp"
#include "hsi/function_space.hpp"
#include "hsi/gaussian_field.hpp"
#include "hsi/random.hpp"
#include "hsi/schedules.hpp"

namespace hsi {

// Architecture of the learned operator. The model itself is resolution
// agnostic: the sensor count enters only at call time. Sensors are treated as
// one period of length (n-1) plus a wrapped copy of sensor 0, so spectra
// computed at different resolutions describe the same modes.
struct ModelConfig {
  int in_channels;
  int out_channels;
  int n_modes = 16;
  int width = 32;
  int n_layers = 3;
};

enum class ObjectiveKind { velocity, denoiser };

// Small spectral operator: lift -> n_layers x [truncated-FFT complex mode
// multiply + pointwise channel mix, GELU, per-channel degree-3 time gate]
// -> project. Gradients are hand-derived reverse mode over the same graph.
//
// FFT convention: forward real transform unnormalized, inverse scaled by
// 1/(n-1); mode weights therefore transfer across resolutions.
class SpectralModel {
 public:
  SpectralModel(ModelConfig cfg, std::uint64_t seed);  // random init
  explicit SpectralModel(ModelConfig cfg);             // zero parameters
  ~SpectralModel();
  SpectralModel(SpectralModel&&) noexcept;
  SpectralModel& operator=(SpectralModel&&) noexcept;
  SpectralModel(const SpectralModel&) = delete;
  SpectralModel& operator=(const SpectralModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  std::size_t n_params() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // x is flat [in_channels][n_sensors]; out flat [out_channels][n_sensors].
  // n_sensors is inferred from x.size() and must satisfy n_sensors - 1 >=
  // 2*n_modes so the retained modes are represented.
  void forward(double t, std::span<const double> x, std::span<double> out) const;

  // Batch objective (1/B) sum_b (1/n) sum_{c,j} (out - target)^2 and its
  // parameter gradient (accumulated into `grad`, which is zeroed first).
  // inputs: flat [sample][in_channel][sensor]; targets likewise with
  // out_channels. Returns the loss.
  double loss_and_gradient(std::span<const double> ts, std::span<const double> inputs,
                           std::span<const double> targets, int batch, int n_sensors,
                           std::vector<double>& grad) const;

  double loss_and_gradient(const std::vector<InterpolantSample>& batch, ObjectiveKind kind,
                           std::vector<double>& grad) const;
  double loss_and_gradient(const std::vector<PairedInterpolantSample>& batch,
                           ObjectiveKind kind, std::vector<double>& grad) const;

  // Offsets into params() for each parameter block, [begin, end).
  std::pair<std::size_t, std::size_t> lift_block() const;
  std::pair<std::size_t, std::size_t> project_block() const;
  std::pair<std::size_t, std::size_t> mix_block(int layer) const;
  std::pair<std::size_t, std::size_t> gate_block(int layer) const;
  std::pair<std::size_t, std::size_t> mode_block_re(int layer) const;
  std::pair<std::size_t, std::size_t> mode_block_im(int layer) const;

  struct Fft;  // FFT plan cache; public so file-local helpers can take it

 private:
  void init_layout();
  ModelConfig cfg_;
  std::vector<double> params_;
  std::unique_ptr<Fft> fft_;
  // per-sample forward/backward workspaces (reused, not thread-safe)
  mutable std::vector<double> ws_;
  mutable std::vector<std::complex<double>> wsz_;
};

// Adapter exposing a model as a conditional drift field: the conditioning
// function occupies the first half of the input channels, the state the
// second half; in_channels must equal 2*out_channels.
class ModelField : public FieldMap {
 public:
  ModelField(const SpectralModel& m, Grid grid);
  const Grid& grid() const override { return grid_; }
  int n_channels() const override;
  void eval(double t, std::span<const double> x0, std::span<const double> x,
            std::span<double> out) const override;

 private:
  const SpectralModel* model_;
  Grid grid_;
  mutable std::vector<double> input_;
};

// Adaptive-moment optimizer, bias-corrected, beta1=0.9 beta2=0.999 eps=1e-8.
class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t n_params, double learning_rate);
  void step(std::span<double> params, std::span<const double> grad);
  long steps_taken() const { return t_; }

 private:
  double lr_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

// Exponential moving average with decay 2^(-1/half_life) per step.
class EmaTracker {
 public:
  EmaTracker(const std::vector<double>& init, int half_life_steps);
  void update(std::span<const double> params);
  const std::vector<double>& values() const { return ema_; }
  double decay() const { return decay_; }

 private:
  double decay_;
  std::vector<double> ema_;
};

struct TrainConfig {
  int batch_size = 8;
  double learning_rate = 1e-3;
  int total_steps = 20000;
  int ema_half_life = 4000;
  std::uint64_t seed = 0;
  int log_every = 0;            // 0 disables progress lines
  std::ostream* log = nullptr;  // progress destination when log_every > 0
};

struct TrainResult {
  std::vector<double> velocity_loss, denoiser_loss;  // one entry per step
  std::vector<double> velocity_ema, denoiser_ema;    // EMA parameter blobs
};

// One bridge-regression run (velocity and denoiser trained side by side on
// shared batches): per step, draw pairs from (x0set, x1set), t ~ U[0,1] and a
// fresh noise draw per item and channel, build the interpolant, and take one
// optimizer step per model. Throws hsi::numerical_error if a loss goes
// non-finite.
TrainResult train_models(SpectralModel& velocity, SpectralModel& denoiser,
                         const Dataset& x0set, const Dataset& x1set,
                         const ScheduleSet& schedules, const GaussianField& noise,
                         const TrainConfig& cfg);

// Checkpoint: little-endian header (schema 1, architecture) + raw parameter
// blob + EMA blob.
void save_model(const SpectralModel& m, const std::vector<double>& ema,
                const std::string& path);
struct LoadedModel {
  SpectralModel model;
  std::vector<double> ema;
};
LoadedModel load_model(const std::string& path);

// Common-random-number estimate of the gap between the regression loss of
// `model` (against raw targets) and its distance to the exact conditional
// expectation `oracle`: per draw, D = |y - f|^2 - |o - f|^2. The mean of D is
// model-independent, which is what the acceptance check exercises.
struct DecompositionResult {
  double loss = 0.0;        // mean |y - f|^2
  double oracle_mse = 0.0;  // mean |o - f|^2
  double constant = 0.0;    // mean D
  double constant_se = 0.0;
  std::vector<double> per_sample;  // D values, for paired comparisons
};
DecompositionResult loss_decomposition_check(const FieldMap& model, const FieldMap& oracle,
                                             const GaussianCoupling& coupling,
                                             const ScheduleSet& schedules, ObjectiveKind kind,
                                             int n_samples, RandomStream& rng);

}  // namespace hsi
