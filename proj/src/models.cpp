#include "hsi/models.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "hsi/errors.hpp"

namespace hsi {

namespace {

constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / kSqrt2)); }
double dgelu(double x) {
  return 0.5 * (1.0 + std::erf(x / kSqrt2)) + x * std::exp(-0.5 * x * x) * kInvSqrt2Pi;
}

using cplx = std::complex<double>;

}  // namespace

// FFTW plans per transform length, with owned aligned buffers. Plans are
// created with ESTIMATE so construction is cheap and deterministic.
struct SpectralModel::Fft {
  struct Entry {
    fftw_plan r2c = nullptr, c2r = nullptr;
    double* real = nullptr;
    fftw_complex* spec = nullptr;
    int nb = 0;
    ~Entry() {
      if (r2c) fftw_destroy_plan(r2c);
      if (c2r) fftw_destroy_plan(c2r);
      if (real) fftw_free(real);
      if (spec) fftw_free(spec);
    }
  };
  std::map<int, std::unique_ptr<Entry>> entries;

  Entry& at(int nb) {
    auto it = entries.find(nb);
    if (it != entries.end()) return *it->second;
    auto e = std::make_unique<Entry>();
    e->nb = nb;
    e->real = fftw_alloc_real(nb);
    e->spec = fftw_alloc_complex(nb / 2 + 1);
    e->r2c = fftw_plan_dft_r2c_1d(nb, e->real, e->spec, FFTW_ESTIMATE);
    e->c2r = fftw_plan_dft_c2r_1d(nb, e->spec, e->real, FFTW_ESTIMATE);
    if (!e->r2c || !e->c2r) throw numerical_error("fftw plan creation failed");
    return *entries.emplace(nb, std::move(e)).first->second;
  }
};

SpectralModel::SpectralModel(ModelConfig cfg) : cfg_(cfg), fft_(std::make_unique<Fft>()) {
  init_layout();
}

SpectralModel::SpectralModel(ModelConfig cfg, std::uint64_t seed)
    : cfg_(cfg), fft_(std::make_unique<Fft>()) {
  init_layout();
  RandomStream rng(seed);
  const int in = cfg_.in_channels, out = cfg_.out_channels, w = cfg_.width;
  const double s_in = 1.0 / std::sqrt(static_cast<double>(in));
  const double s_w = 1.0 / std::sqrt(static_cast<double>(w));
  auto fill = [&](std::pair<std::size_t, std::size_t> blk, double sd) {
    for (std::size_t i = blk.first; i < blk.second; ++i) params_[i] = sd * rng.normal();
  };
  fill(lift_block(), s_in);
  fill(project_block(), s_w);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    fill(mix_block(l), s_w);
    fill(mode_block_re(l), s_w);
    fill(mode_block_im(l), s_w);
    auto [ab, ae] = gate_block(l);
    for (std::size_t i = ab; i < ae; ++i) {
      const bool constant_term = ((i - ab) % 4) == 0;
      params_[i] = constant_term ? 1.0 : 0.1 * rng.normal();
    }
  }
  (void)out;
}

SpectralModel::~SpectralModel() = default;
SpectralModel::SpectralModel(SpectralModel&&) noexcept = default;
SpectralModel& SpectralModel::operator=(SpectralModel&&) noexcept = default;

void SpectralModel::init_layout() {
  const auto& c = cfg_;
  if (c.in_channels < 1 || c.out_channels < 1 || c.n_modes < 1 || c.width < 1 ||
      c.n_layers < 1)
    throw std::invalid_argument("model config: all dimensions must be positive");
  const std::size_t w = c.width, k = c.n_modes, l = c.n_layers;
  params_.assign(static_cast<std::size_t>(c.in_channels) * w + w * c.out_channels +
                     l * (w * w + 4 * w + 2 * w * w * k),
                 0.0);
}

std::pair<std::size_t, std::size_t> SpectralModel::lift_block() const {
  const std::size_t sz = static_cast<std::size_t>(cfg_.in_channels) * cfg_.width;
  return {0, sz};
}
std::pair<std::size_t, std::size_t> SpectralModel::project_block() const {
  const std::size_t b = lift_block().second;
  return {b, b + static_cast<std::size_t>(cfg_.width) * cfg_.out_channels};
}
std::pair<std::size_t, std::size_t> SpectralModel::mix_block(int layer) const {
  const std::size_t w = cfg_.width;
  const std::size_t b = project_block().second + layer * w * w;
  return {b, b + w * w};
}
std::pair<std::size_t, std::size_t> SpectralModel::gate_block(int layer) const {
  const std::size_t w = cfg_.width;
  const std::size_t b = mix_block(cfg_.n_layers - 1).second + layer * 4 * w;
  return {b, b + 4 * w};
}
std::pair<std::size_t, std::size_t> SpectralModel::mode_block_re(int layer) const {
  const std::size_t w = cfg_.width, k = cfg_.n_modes;
  const std::size_t b = gate_block(cfg_.n_layers - 1).second + layer * 2 * w * w * k;
  return {b, b + w * w * k};
}
std::pair<std::size_t, std::size_t> SpectralModel::mode_block_im(int layer) const {
  const auto re = mode_block_re(layer);
  return {re.second, re.second + (re.second - re.first)};
}

namespace {

// Per-sample forward state shared between forward() and the backward pass.
struct Activations {
  // layer l caches
  std::vector<std::vector<cplx>> hh;   // width x n_modes, input spectrum
  std::vector<std::vector<double>> u;  // width x n, pre-nonlinearity
  std::vector<std::vector<double>> g;  // width, time gate value
  std::vector<std::vector<double>> h;  // h[0] = lifted input; h[l+1] = layer l output
  double tp[4];
};

}  // namespace

// Single-sample forward pass. When `acts` is non-null every intermediate is
// cached for the backward sweep.
static void forward_impl(const ModelConfig& cfg, const std::vector<double>& params,
                         const SpectralModel& self, SpectralModel::Fft& fft, double t,
                         std::span<const double> x, std::span<double> out,
                         Activations* acts) {
  const int in = cfg.in_channels, outc = cfg.out_channels, w = cfg.width, km = cfg.n_modes,
            nl = cfg.n_layers;
  if (x.size() % static_cast<std::size_t>(in) != 0)
    throw std::invalid_argument("model forward: input size not divisible by channel count");
  const int n = static_cast<int>(x.size()) / in;
  const int nb = n - 1;
  // need all km modes representable: km <= nb/2 + 1
  if (nb < 2 || nb < 2 * km - 2)
    throw std::invalid_argument("model forward: grid too coarse for the retained modes");
  if (out.size() != static_cast<std::size_t>(outc) * n)
    throw std::invalid_argument("model forward: output size mismatch");

  const double tp[4] = {1.0, t, t * t, t * t * t};

  // lift: h[wc][j] = sum_i win[i*w + wc] x[i][j]
  std::vector<double> h(static_cast<std::size_t>(w) * n, 0.0);
  {
    const double* win = params.data() + self.lift_block().first;
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        xm(x.data(), in, n), wm(win, in, w);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> hm(
        h.data(), w, n);
    hm.noalias() = wm.transpose() * xm;
  }
  if (acts) {
    acts->tp[0] = tp[0]; acts->tp[1] = tp[1]; acts->tp[2] = tp[2]; acts->tp[3] = tp[3];
    acts->hh.assign(nl, {});
    acts->u.assign(nl, {});
    acts->g.assign(nl, {});
    acts->h.clear();
    acts->h.push_back(h);
  }

  auto& plan = fft.at(nb);
  std::vector<cplx> hh(static_cast<std::size_t>(w) * km);
  std::vector<cplx> sh(static_cast<std::size_t>(w) * km);
  std::vector<double> u(static_cast<std::size_t>(w) * n);
  for (int l = 0; l < nl; ++l) {
    // spectra of the first nb sensors of every hidden channel
    for (int c = 0; c < w; ++c) {
      std::memcpy(plan.real, h.data() + static_cast<std::size_t>(c) * n,
                  sizeof(double) * nb);
      fftw_execute(plan.r2c);
      for (int k = 0; k < km; ++k)
        hh[static_cast<std::size_t>(c) * km + k] = cplx(plan.spec[k][0], plan.spec[k][1]);
    }
    // per-mode complex channel mixing: sh[o][k] = sum_i R[i][o][k] hh[i][k]
    const double* rre = params.data() + self.mode_block_re(l).first;
    const double* rim = params.data() + self.mode_block_im(l).first;
    std::fill(sh.begin(), sh.end(), cplx(0.0, 0.0));
    for (int i = 0; i < w; ++i) {
      const cplx* hi = hh.data() + static_cast<std::size_t>(i) * km;
      for (int o = 0; o < w; ++o) {
        const std::size_t base = (static_cast<std::size_t>(i) * w + o) * km;
        cplx* so = sh.data() + static_cast<std::size_t>(o) * km;
        for (int k = 0; k < km; ++k)
          so[k] += cplx(rre[base + k], rim[base + k]) * hi[k];
      }
    }
    // back to sensor space (inverse scaled by 1/nb), wrap the last sensor
    for (int o = 0; o < w; ++o) {
      const int nspec = nb / 2 + 1;
      for (int k = 0; k < nspec; ++k) {
        if (k < km) {
          plan.spec[k][0] = sh[static_cast<std::size_t>(o) * km + k].real();
          plan.spec[k][1] = sh[static_cast<std::size_t>(o) * km + k].imag();
        } else {
          plan.spec[k][0] = plan.spec[k][1] = 0.0;
        }
      }
      fftw_execute(plan.c2r);
      double* uo = u.data() + static_cast<std::size_t>(o) * n;
      const double inv = 1.0 / nb;
      for (int j = 0; j < nb; ++j) uo[j] = plan.real[j] * inv;
      uo[n - 1] = uo[0];
    }
    // pointwise mix on top: u += M^T h
    {
      const double* m = params.data() + self.mix_block(l).first;
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
          mm(m, w, w), hm(h.data(), w, n);
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> um(
          u.data(), w, n);
      um.noalias() += mm.transpose() * hm;
    }
    // gated nonlinearity
    const double* a = params.data() + self.gate_block(l).first;
    std::vector<double> gate(w);
    for (int c = 0; c < w; ++c)
      gate[c] = a[c * 4 + 0] * tp[0] + a[c * 4 + 1] * tp[1] + a[c * 4 + 2] * tp[2] +
                a[c * 4 + 3] * tp[3];
    if (acts) {
      acts->hh[l] = hh;
      acts->u[l] = u;
      acts->g[l] = gate;
    }
    for (int c = 0; c < w; ++c) {
      const double gc = gate[c];
      double* hc = h.data() + static_cast<std::size_t>(c) * n;
      const double* uc = u.data() + static_cast<std::size_t>(c) * n;
      for (int j = 0; j < n; ++j) hc[j] = gc * gelu(uc[j]);
    }
    if (acts) acts->h.push_back(h);
  }
  // project
  {
    const double* p = params.data() + self.project_block().first;
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        pm(p, w, outc), hm(h.data(), w, n);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> om(
        out.data(), outc, n);
    om.noalias() = pm.transpose() * hm;
  }
}

void SpectralModel::forward(double t, std::span<const double> x, std::span<double> out) const {
  forward_impl(cfg_, params_, *this, *fft_, t, x, out, nullptr);
}

double SpectralModel::loss_and_gradient(std::span<const double> ts,
                                        std::span<const double> inputs,
                                        std::span<const double> targets, int batch,
                                        int n_sensors, std::vector<double>& grad) const {
  const int in = cfg_.in_channels, outc = cfg_.out_channels, w = cfg_.width,
            km = cfg_.n_modes, nl = cfg_.n_layers;
  const int n = n_sensors, nb = n - 1;
  if (batch < 1) throw std::invalid_argument("loss_and_gradient: empty batch");
  if (ts.size() != static_cast<std::size_t>(batch) ||
      inputs.size() != static_cast<std::size_t>(batch) * in * n ||
      targets.size() != static_cast<std::size_t>(batch) * outc * n)
    throw std::invalid_argument("loss_and_gradient: shape mismatch");
  grad.assign(params_.size(), 0.0);

  auto& plan = fft_->at(nb);
  const double scale = 1.0 / (static_cast<double>(batch) * n);
  double loss = 0.0;

  Activations acts;
  std::vector<double> out(static_cast<std::size_t>(outc) * n);
  std::vector<double> go(static_cast<std::size_t>(outc) * n);
  std::vector<double> gh(static_cast<std::size_t>(w) * n);
  std::vector<double> gu(static_cast<std::size_t>(w) * n);
  std::vector<double> ghm(static_cast<std::size_t>(w) * n);
  std::vector<cplx> gsh(static_cast<std::size_t>(w) * km);
  std::vector<cplx> ghh(static_cast<std::size_t>(w) * km);

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  for (int b = 0; b < batch; ++b) {
    auto xb = inputs.subspan(static_cast<std::size_t>(b) * in * n,
                             static_cast<std::size_t>(in) * n);
    auto yb = targets.subspan(static_cast<std::size_t>(b) * outc * n,
                              static_cast<std::size_t>(outc) * n);
    forward_impl(cfg_, params_, *this, *fft_, ts[b], xb, out, &acts);

    for (std::size_t i = 0; i < out.size(); ++i) {
      const double d = out[i] - yb[i];
      loss += d * d * scale;
      go[i] = 2.0 * d * scale;
    }

    // head: grad P and pullback to the last hidden state
    {
      Eigen::Map<RowMat> gpm(grad.data() + project_block().first, w, outc);
      Eigen::Map<const RowMat> hm(acts.h[nl].data(), w, n), gom(go.data(), outc, n);
      gpm.noalias() += hm * gom.transpose();
      Eigen::Map<const RowMat> pm(params_.data() + project_block().first, w, outc);
      Eigen::Map<RowMat> ghmat(gh.data(), w, n);
      ghmat.noalias() = pm * gom;
    }

    for (int l = nl - 1; l >= 0; --l) {
      const auto& u = acts.u[l];
      const auto& gate = acts.g[l];
      const auto& h_in = acts.h[l];
      const auto& hh = acts.hh[l];
      // through the gated nonlinearity
      double* ga = grad.data() + gate_block(l).first;
      for (int c = 0; c < w; ++c) {
        const double gc = gate[c];
        const double* uc = u.data() + static_cast<std::size_t>(c) * n;
        const double* ghc = gh.data() + static_cast<std::size_t>(c) * n;
        double* guc = gu.data() + static_cast<std::size_t>(c) * n;
        double gac = 0.0;
        for (int j = 0; j < n; ++j) {
          guc[j] = ghc[j] * gc * dgelu(uc[j]);
          gac += ghc[j] * gelu(uc[j]);
        }
        ga[c * 4 + 0] += gac * acts.tp[0];
        ga[c * 4 + 1] += gac * acts.tp[1];
        ga[c * 4 + 2] += gac * acts.tp[2];
        ga[c * 4 + 3] += gac * acts.tp[3];
      }
      // pointwise mix: grad M and its pullback
      {
        Eigen::Map<RowMat> gmm(grad.data() + mix_block(l).first, w, w);
        Eigen::Map<const RowMat> him(h_in.data(), w, n), gum(gu.data(), w, n);
        gmm.noalias() += him * gum.transpose();
        Eigen::Map<const RowMat> mm(params_.data() + mix_block(l).first, w, w);
        Eigen::Map<RowMat> ghmm(ghm.data(), w, n);
        ghmm.noalias() = mm * gum;
      }
      // spectral pullback: fold the wrapped sensor back, transform, truncate
      for (int c = 0; c < w; ++c) {
        const double* guc = gu.data() + static_cast<std::size_t>(c) * n;
        std::memcpy(plan.real, guc, sizeof(double) * nb);
        plan.real[0] += guc[nb];
        fftw_execute(plan.r2c);
        for (int k = 0; k < km; ++k) {
          // bins shared with their conjugate mirror count twice; DC (and a
          // retained Nyquist bin on even lengths) count once
          const double dk = (k == 0 || (nb % 2 == 0 && k == nb / 2)) ? 1.0 : 2.0;
          gsh[static_cast<std::size_t>(c) * km + k] =
              (dk / nb) * cplx(plan.spec[k][0], plan.spec[k][1]);
        }
      }
      // grad of the complex mode weights and pullback to the input spectrum
      double* grre = grad.data() + mode_block_re(l).first;
      double* grim = grad.data() + mode_block_im(l).first;
      const double* rre = params_.data() + mode_block_re(l).first;
      const double* rim = params_.data() + mode_block_im(l).first;
      std::fill(ghh.begin(), ghh.end(), cplx(0.0, 0.0));
      for (int i = 0; i < w; ++i) {
        const cplx* hi = hh.data() + static_cast<std::size_t>(i) * km;
        cplx* gi = ghh.data() + static_cast<std::size_t>(i) * km;
        for (int o = 0; o < w; ++o) {
          const std::size_t base = (static_cast<std::size_t>(i) * w + o) * km;
          const cplx* gso = gsh.data() + static_cast<std::size_t>(o) * km;
          for (int k = 0; k < km; ++k) {
            const cplx gr = gso[k] * std::conj(hi[k]);
            grre[base + k] += gr.real();
            grim[base + k] += gr.imag();
            gi[k] += std::conj(cplx(rre[base + k], rim[base + k])) * gso[k];
          }
        }
      }
      // pull the spectrum gradient back to sensors: unnormalized inverse of
      // ghh/dk (the dk doubling cancels the one applied on the way in)
      for (int c = 0; c < w; ++c) {
        const int nspec = nb / 2 + 1;
        for (int k = 0; k < nspec; ++k) {
          if (k < km) {
            const double dk = (k == 0 || (nb % 2 == 0 && k == nb / 2)) ? 1.0 : 2.0;
            const cplx v = ghh[static_cast<std::size_t>(c) * km + k] / dk;
            plan.spec[k][0] = v.real();
            plan.spec[k][1] = v.imag();
          } else {
            plan.spec[k][0] = plan.spec[k][1] = 0.0;
          }
        }
        fftw_execute(plan.c2r);
        double* ghc = ghm.data() + static_cast<std::size_t>(c) * n;
        for (int j = 0; j < nb; ++j) ghc[j] += plan.real[j];
      }
      gh.swap(ghm);
    }
    // lift: grad Win
    {
      Eigen::Map<RowMat> gwm(grad.data() + lift_block().first, in, w);
      Eigen::Map<const RowMat> xm(xb.data(), in, n), ghmat(gh.data(), w, n);
      gwm.noalias() += xm * ghmat.transpose();
    }
  }
  return loss;
}

namespace {

void append_values(const GridFunction& f, std::vector<double>& out) {
  out.insert(out.end(), f.values.begin(), f.values.end());
}
void append_values(const PairedFunction& f, std::vector<double>& out) {
  append_values(f.channel0, out);
  append_values(f.channel1, out);
}

template <typename Sample>
double loss_from_samples(const SpectralModel& m, const std::vector<Sample>& batch,
                         ObjectiveKind kind, int n, std::vector<double>& grad) {
  std::vector<double> ts, inputs, targets;
  ts.reserve(batch.size());
  for (const auto& s : batch) {
    ts.push_back(s.t);
    append_values(s.x0, inputs);
    append_values(s.xt, inputs);
    append_values(kind == ObjectiveKind::velocity ? s.velocity_target : s.z, targets);
  }
  return m.loss_and_gradient(ts, inputs, targets, static_cast<int>(batch.size()), n, grad);
}

}  // namespace

double SpectralModel::loss_and_gradient(const std::vector<InterpolantSample>& batch,
                                        ObjectiveKind kind, std::vector<double>& grad) const {
  if (batch.empty()) throw std::invalid_argument("loss_and_gradient: empty batch");
  return loss_from_samples(*this, batch, kind, batch.front().x0.grid.n(), grad);
}

double SpectralModel::loss_and_gradient(const std::vector<PairedInterpolantSample>& batch,
                                        ObjectiveKind kind, std::vector<double>& grad) const {
  if (batch.empty()) throw std::invalid_argument("loss_and_gradient: empty batch");
  return loss_from_samples(*this, batch, kind, batch.front().x0.grid().n(), grad);
}

ModelField::ModelField(const SpectralModel& m, Grid grid)
    : model_(&m), grid_(std::move(grid)) {
  if (m.config().in_channels != 2 * m.config().out_channels)
    throw std::invalid_argument(
        "ModelField: model must consume condition and state channel blocks of equal size");
}

int ModelField::n_channels() const { return model_->config().out_channels; }

void ModelField::eval(double t, std::span<const double> x0, std::span<const double> x,
                      std::span<double> out) const {
  const std::size_t half = static_cast<std::size_t>(n_channels()) * grid_.n();
  if (x0.size() != half || x.size() != half)
    throw std::invalid_argument("ModelField::eval: state size mismatch");
  input_.resize(2 * half);
  std::memcpy(input_.data(), x0.data(), half * sizeof(double));
  std::memcpy(input_.data() + half, x.data(), half * sizeof(double));
  model_->forward(t, input_, out);
}

AdamOptimizer::AdamOptimizer(std::size_t n_params, double learning_rate)
    : lr_(learning_rate), m_(n_params, 0.0), v_(n_params, 0.0) {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("adam: learning rate must be > 0");
}

void AdamOptimizer::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw std::invalid_argument("adam: parameter size mismatch");
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
  }
}

EmaTracker::EmaTracker(const std::vector<double>& init, int half_life_steps)
    : decay_(std::pow(2.0, -1.0 / half_life_steps)), ema_(init) {
  if (half_life_steps < 1) throw std::invalid_argument("ema: half life must be >= 1 step");
}

void EmaTracker::update(std::span<const double> params) {
  if (params.size() != ema_.size()) throw std::invalid_argument("ema: size mismatch");
  for (std::size_t i = 0; i < ema_.size(); ++i)
    ema_[i] = decay_ * ema_[i] + (1.0 - decay_) * params[i];
}

TrainResult train_models(SpectralModel& velocity, SpectralModel& denoiser,
                         const Dataset& x0set, const Dataset& x1set,
                         const ScheduleSet& schedules, const GaussianField& noise,
                         const TrainConfig& cfg) {
  if (x0set.n_samples != x1set.n_samples || x0set.n_samples < 1)
    throw std::invalid_argument("train: endpoint datasets must pair up");
  if (x0set.grid != x1set.grid || x0set.grid != noise.grid())
    throw std::invalid_argument("train: grids differ");
  if (x0set.n_channels != x1set.n_channels)
    throw std::invalid_argument("train: channel counts differ");
  const int c = x0set.n_channels;
  const int n = x0set.grid.n();
  if (velocity.config().out_channels != c || velocity.config().in_channels != 2 * c ||
      denoiser.config().out_channels != c || denoiser.config().in_channels != 2 * c)
    throw std::invalid_argument("train: model channel counts do not match the data");
  if (cfg.batch_size < 1 || cfg.total_steps < 0)
    throw std::invalid_argument("train: bad batch size or step count");

  RandomStream rng(cfg.seed);
  const int b = cfg.batch_size;
  std::vector<double> ts(b);
  std::vector<double> inputs(static_cast<std::size_t>(b) * 2 * c * n);
  std::vector<double> vel_tgt(static_cast<std::size_t>(b) * c * n);
  std::vector<double> den_tgt(static_cast<std::size_t>(b) * c * n);
  std::vector<double> grad_v, grad_e;

  AdamOptimizer opt_v(velocity.n_params(), cfg.learning_rate);
  AdamOptimizer opt_e(denoiser.n_params(), cfg.learning_rate);
  EmaTracker ema_v(velocity.params(), cfg.ema_half_life);
  EmaTracker ema_e(denoiser.params(), cfg.ema_half_life);

  TrainResult res;
  res.velocity_loss.reserve(cfg.total_steps);
  res.denoiser_loss.reserve(cfg.total_steps);

  for (int step = 0; step < cfg.total_steps; ++step) {
    for (int i = 0; i < b; ++i) {
      int idx = static_cast<int>(rng.uniform() * x0set.n_samples);
      if (idx >= x0set.n_samples) idx = x0set.n_samples - 1;
      const double t = rng.uniform();
      ts[i] = t;
      const double al = schedules.alpha(t), be = schedules.beta(t), ga = schedules.gamma(t);
      const double ad = schedules.alpha_dot(t), bd = schedules.beta_dot(t);
      double* inp = inputs.data() + static_cast<std::size_t>(i) * 2 * c * n;
      double* vt = vel_tgt.data() + static_cast<std::size_t>(i) * c * n;
      double* dt = den_tgt.data() + static_cast<std::size_t>(i) * c * n;
      for (int ch = 0; ch < c; ++ch) {
        const double* x0 = x0set.channel(idx, ch);
        const double* x1 = x1set.channel(idx, ch);
        double* z = dt + static_cast<std::size_t>(ch) * n;
        noise.sample_into(rng, std::span<double>(z, n));
        double* cond = inp + static_cast<std::size_t>(ch) * n;
        double* xt = inp + static_cast<std::size_t>(c + ch) * n;
        for (int j = 0; j < n; ++j) {
          cond[j] = x0[j];
          xt[j] = al * x0[j] + be * x1[j] + ga * z[j];
          vt[static_cast<std::size_t>(ch) * n + j] = ad * x0[j] + bd * x1[j];
        }
      }
    }
    const double lv = velocity.loss_and_gradient(ts, inputs, vel_tgt, b, n, grad_v);
    const double le = denoiser.loss_and_gradient(ts, inputs, den_tgt, b, n, grad_e);
    if (!std::isfinite(lv) || !std::isfinite(le)) {
      std::ostringstream msg;
      msg << "training diverged at step " << step << " (velocity loss " << lv
          << ", denoiser loss " << le << ")";
      throw numerical_error(msg.str());
    }
    opt_v.step(velocity.params(), grad_v);
    opt_e.step(denoiser.params(), grad_e);
    ema_v.update(velocity.params());
    ema_e.update(denoiser.params());
    res.velocity_loss.push_back(lv);
    res.denoiser_loss.push_back(le);
    if (cfg.log && cfg.log_every > 0 &&
        (step % cfg.log_every == 0 || step + 1 == cfg.total_steps))
      *cfg.log << "step " << step << "  velocity_loss " << lv << "  denoiser_loss " << le
               << "\n";
  }
  res.velocity_ema = ema_v.values();
  res.denoiser_ema = ema_e.values();
  return res;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64_block(std::ostream& os, const std::vector<double>& v) {
  for (double x : v) {
    auto bits = std::bit_cast<std::uint64_t>(x);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    os.write(reinterpret_cast<const char*>(&bits), 8);
  }
}

void get_f64_block(std::istream& is, std::vector<double>& v) {
  for (double& x : v) {
    std::uint64_t bits = 0;
    is.read(reinterpret_cast<char*>(&bits), 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    x = std::bit_cast<double>(bits);
  }
}

constexpr std::uint32_t kCheckpointSchema = 1;

}  // namespace

void save_model(const SpectralModel& m, const std::vector<double>& ema,
                const std::string& path) {
  if (ema.size() != m.n_params())
    throw std::invalid_argument("save_model: EMA blob size does not match the model");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::invalid_argument("save_model: cannot open '" + path + "'");
  put_u32(os, kCheckpointSchema);
  put_u32(os, static_cast<std::uint32_t>(m.config().n_modes));
  put_u32(os, static_cast<std::uint32_t>(m.config().width));
  put_u32(os, static_cast<std::uint32_t>(m.config().n_layers));
  put_u32(os, static_cast<std::uint32_t>(m.config().in_channels));
  put_u32(os, static_cast<std::uint32_t>(m.config().out_channels));
  put_u32(os, static_cast<std::uint32_t>(m.n_params()));
  put_f64_block(os, m.params());
  put_f64_block(os, ema);
  if (!os) throw numerical_error("save_model: write failed for '" + path + "'");
}

LoadedModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::invalid_argument("load_model: cannot open '" + path + "'");
  const std::uint32_t schema = get_u32(is);
  if (schema != kCheckpointSchema)
    throw std::invalid_argument("load_model: unsupported checkpoint schema");
  ModelConfig cfg;
  cfg.n_modes = static_cast<int>(get_u32(is));
  cfg.width = static_cast<int>(get_u32(is));
  cfg.n_layers = static_cast<int>(get_u32(is));
  cfg.in_channels = static_cast<int>(get_u32(is));
  cfg.out_channels = static_cast<int>(get_u32(is));
  const std::uint32_t count = get_u32(is);
  SpectralModel model(cfg);
  if (model.n_params() != count)
    throw std::invalid_argument("load_model: parameter count does not match the header");
  get_f64_block(is, model.params());
  LoadedModel out{std::move(model), std::vector<double>(count)};
  get_f64_block(is, out.ema);
  if (!is) throw std::invalid_argument("load_model: truncated checkpoint");
  for (double v : out.model.params())
    if (!std::isfinite(v)) throw std::invalid_argument("load_model: non-finite parameter");
  for (double v : out.ema)
    if (!std::isfinite(v)) throw std::invalid_argument("load_model: non-finite EMA parameter");
  return out;
}

DecompositionResult loss_decomposition_check(const FieldMap& model, const FieldMap& oracle,
                                             const GaussianCoupling& coupling,
                                             const ScheduleSet& schedules, ObjectiveKind kind,
                                             int n_samples, RandomStream& rng) {
  if (n_samples < 2) throw std::invalid_argument("loss_decomposition_check: need >= 2 samples");
  const int n = coupling.grid().n();
  if (model.grid() != coupling.grid() || oracle.grid() != coupling.grid())
    throw std::invalid_argument("loss_decomposition_check: grid mismatch");
  if (model.n_channels() != 1 || oracle.n_channels() != 1)
    throw std::invalid_argument("loss_decomposition_check: scalar fields expected");

  DecompositionResult res;
  res.per_sample.reserve(n_samples);
  std::vector<double> xt(n), y(n), f(n), o(n);
  double sum_l = 0.0, sum_e = 0.0, sum_d = 0.0, sum_d2 = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    auto [x0, x1] = coupling.sample_pair(rng);
    GridFunction z = coupling.noise().sample(rng);
    const double t = rng.uniform();
    const double al = schedules.alpha(t), be = schedules.beta(t), ga = schedules.gamma(t);
    const double ad = schedules.alpha_dot(t), bd = schedules.beta_dot(t);
    for (int j = 0; j < n; ++j) {
      xt[j] = al * x0.values[j] + be * x1.values[j] + ga * z.values[j];
      y[j] = (kind == ObjectiveKind::velocity) ? ad * x0.values[j] + bd * x1.values[j]
                                               : z.values[j];
    }
    model.eval(t, x0.values, xt, f);
    oracle.eval(t, x0.values, xt, o);
    double li = 0.0, ei = 0.0;
    for (int j = 0; j < n; ++j) {
      li += (y[j] - f[j]) * (y[j] - f[j]);
      ei += (o[j] - f[j]) * (o[j] - f[j]);
    }
    li /= n;
    ei /= n;
    const double di = li - ei;
    res.per_sample.push_back(di);
    sum_l += li;
    sum_e += ei;
    sum_d += di;
    sum_d2 += di * di;
  }
  const double inv = 1.0 / n_samples;
  res.loss = sum_l * inv;
  res.oracle_mse = sum_e * inv;
  res.constant = sum_d * inv;
  const double var = std::max(0.0, (sum_d2 * inv - res.constant * res.constant)) *
                     (static_cast<double>(n_samples) / (n_samples - 1));
  res.constant_se = std::sqrt(var / n_samples);
  return res;
}

}  // namespace hsi
