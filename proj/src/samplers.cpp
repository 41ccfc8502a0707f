#include "sarsgs/samplers.hpp"

#include "sarsgs/cimg.hpp"
#include "sarsgs/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numbers>
#include <thread>

namespace sarsgs {

namespace {

void check_scene(SarOperator const &op, ComplexImage const &z, EchoData const &y)
{
  if (z.rows() != op.P() || z.cols() != op.Q()) { throw DimensionError("image shape does not match the operator"); }
  if (y.rows() != op.N() || y.cols() != op.M()) { throw DimensionError("echo shape does not match the operator"); }
  if (!y.allFinite()) { throw InputError("echo contains non-finite values"); }
}

Tensor gaussian_tensor(int c, int h, int w, Rng &rng)
{
  Tensor t(c, h, w);
  for (auto &v : t.values()) { v = rng.normal(); }
  return t;
}

ComplexImage complex_noise(Eigen::Index rows, Eigen::Index cols, Rng &rng)
{
  ComplexImage n(rows, cols);
  for (Eigen::Index k = 0; k < n.size(); ++k) { n.data()[k] = rng.complex_normal(); }
  return n;
}

bool finite(Tensor const &t)
{
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

double clamp_r(double r)
{
  if (!(r >= -1e-12 && r <= 1.0 + 1e-12)) {
    throw ParameterError("noise level maps to r = " + std::to_string(r) + ", outside [0, 1]");
  }
  return std::clamp(r, 0.0, 1.0);
}

// The pair of r values for one residual step, validated.
std::pair<double, double> step_r(double lambda, double alpha_i, double alpha_prev)
{
  if (!(lambda > 0.0)) { throw ParameterError("lambda must be positive"); }
  if (!(alpha_prev >= alpha_i)) { throw ParameterError("alpha_prev must not be below alpha_i"); }
  return {clamp_r(r_of_alpha_bar(alpha_i, lambda)), clamp_r(r_of_alpha_bar(alpha_prev, lambda))};
}

// Network query point √ᾱ z + λ²√(rᾱ) ζ / ((λ²-1)r + 1).
Tensor query_point(Tensor const &zeta, Tensor const &z_k, double lambda, double alpha, double r)
{
  double const l2 = lambda * lambda;
  double const c = (l2 - 1.0) * r + 1.0;
  return std::sqrt(alpha) * z_k + (l2 * std::sqrt(r * alpha) / c) * zeta;
}

Tensor ddim_step_r(Tensor const &zeta, Tensor const &z_k, double lambda, double r_i, double r_p, double alpha_i,
                   ScoreModel const &model)
{
  if (!zeta.same_shape(z_k)) { throw DimensionError("residual and anchor differ in shape"); }
  if (r_i == r_p) { return zeta; }
  double const l2 = lambda * lambda;
  double const c_i = (l2 - 1.0) * r_i + 1.0;
  double const c_p = (l2 - 1.0) * r_p + 1.0;
  // arctan(λ/√(1/r - 1)) written as atan2 so that r = 0 and r = 1 are exact.
  double const angle = std::atan2(lambda * std::sqrt(r_i), std::sqrt(1.0 - r_i)) -
                       std::atan2(lambda * std::sqrt(r_p), std::sqrt(1.0 - r_p));
  Tensor const eps = model.predict_noise(query_point(zeta, z_k, lambda, alpha_i, r_i), alpha_i);
  return std::sqrt(c_p / c_i) * zeta + (std::sqrt(c_p) * angle) * eps;
}

Tensor ddpm_step_r(Tensor const &zeta, Tensor const &z_k, double lambda, double r_t, double r_s, double alpha_i,
                   ScoreModel const &model, Tensor const &noise)
{
  if (!zeta.same_shape(z_k) || !zeta.same_shape(noise)) { throw DimensionError("residual operands differ in shape"); }
  if (r_t == r_s) { return zeta; }
  double const l2 = lambda * lambda;
  double const c = (l2 - 1.0) * r_t + 1.0;
  Tensor const eps = model.predict_noise(query_point(zeta, z_k, lambda, alpha_i, r_t), alpha_i);
  // Tweedie estimate of ζ^(0) for the residual process ζ_r = √r ζ0 + √(1-r) n.
  Tensor const zeta0 = (l2 * std::sqrt(r_t) / c) * zeta + (-lambda * std::sqrt((1.0 - r_t) * c) / c) * eps;
  if (r_s == 1.0) { return zeta0; }
  double const a = r_t / r_s;
  double const mean0 = std::sqrt(r_s) * (1.0 - a) / (1.0 - r_t);
  double const mean_t = std::sqrt(a) * (1.0 - r_s) / (1.0 - r_t);
  double const var = (1.0 - r_s) * (1.0 - a) / (1.0 - r_t);
  return mean0 * zeta0 + mean_t * zeta + std::sqrt(var) * noise;
}

using PriorDraw = ComplexImage (*)(ComplexImage const &, double, ScoreModel const &, int, Rng &, RGrid);

ComplexImage split_gibbs(SarOperator const &op, EchoData const &y, ScoreModel const &model,
                         AnnealingSchedule const &schedule, SgsConfig const &cfg, Rng &rng,
                         OuterObserver const &observer, PriorDraw draw)
{
  schedule.validate();
  cfg.validate();
  check_scene(op, ComplexImage::Zero(op.P(), op.Q()), y);

  ChainState s;
  s.x = std::sqrt(schedule.lambda0 / 4.0) * complex_noise(op.P(), op.Q(), rng);
  for (s.k = 1; s.k <= schedule.K; ++s.k) {
    double const lambda = lambda_at(schedule, s.k);
    double const kappa = cfg.kappa(lambda);
    s.z = s.x;
    for (int t = 0; t < cfg.langevin_steps; ++t) {
      ComplexImage const noise = complex_noise(op.P(), op.Q(), rng);
      s.z = langevin_step(s.z, s.x, lambda, kappa, likelihood_grad(op, s.z, y), noise);
      if (!all_finite(s.z)) { throw DivergenceError("likelihood step diverged", s.k, t); }
    }
    // The z-step samples exp(-‖x - z‖²/λ²) over complex entries, i.e. a coupling
    // of variance λ²/2 per real component. The prior step must use the same joint.
    s.x = draw(s.z, lambda / std::numbers::sqrt2, model, cfg.ddim_steps, rng, cfg.grid);
    if (!all_finite(s.x)) { throw DivergenceError("prior step diverged", s.k); }
    if (observer) { observer(s.k, lambda, kappa, (y - op.forward(s.z)).norm(), s.x); }
  }
  return s.x;
}

} // namespace

// ---------------------------------------------------------------------------

void AnnealingSchedule::validate() const
{
  if (!(lambda0 > 0.0) || !(lambdaK > 0.0)) { throw ParameterError("lambda0 and lambdaK must be positive"); }
  if (K0 < 0 || K <= K0) { throw ParameterError("schedule needs 0 <= K0 < K"); }
}

double lambda_at(AnnealingSchedule const &s, int k)
{
  s.validate();
  if (k < 0 || k > s.K) { throw ParameterError("outer index " + std::to_string(k) + " outside [0, K]"); }
  if (k <= s.K0) { return s.lambda0; }
  if (k == s.K) { return s.lambdaK; }
  double const e = static_cast<double>(k - s.K0) / (s.K - s.K0);
  return s.lambda0 * std::pow(s.lambdaK / s.lambda0, e);
}

std::string to_string(RGrid g)
{
  switch (g) {
  case RGrid::Cosine: return "cosine";
  case RGrid::Angle: return "angle";
  default: return "uniform";
  }
}

RGrid parse_r_grid(std::string const &s)
{
  if (s == "uniform") { return RGrid::Uniform; }
  if (s == "cosine") { return RGrid::Cosine; }
  if (s == "angle") { return RGrid::Angle; }
  throw ConfigError("unknown r grid '" + s + "' (expected uniform, cosine or angle)");
}

void SgsConfig::validate() const
{
  if (langevin_steps < 1 || ddim_steps < 1) { throw ConfigError("langevin_steps and ddim_steps must be at least 1"); }
  if (!(kappa_cap > 0.0) || !(kappa_scale > 0.0)) { throw ConfigError("kappa_cap and kappa_scale must be positive"); }
}

ComplexImage likelihood_grad(SarOperator const &op, ComplexImage const &z, EchoData const &y)
{
  check_scene(op, z, y);
  return op.adjoint(op.forward(z) - y);
}

ComplexImage langevin_step(ComplexImage const &z, ComplexImage const &x_k, double lambda, double kappa,
                           ComplexImage const &grad, ComplexImage const &noise)
{
  if (!(lambda > 0.0) || !(kappa > 0.0)) { throw ParameterError("lambda and kappa must be positive"); }
  if (x_k.rows() != z.rows() || x_k.cols() != z.cols() || grad.rows() != z.rows() || grad.cols() != z.cols() ||
      noise.rows() != z.rows() || noise.cols() != z.cols()) {
    throw DimensionError("Langevin step operands differ in shape");
  }
  if (!all_finite(z) || !all_finite(x_k) || !all_finite(grad) || !all_finite(noise)) {
    throw DivergenceError("non-finite input to the Langevin step");
  }
  double const l2 = lambda * lambda;
  double const decay = std::exp(-kappa / l2);
  double const gain = -std::expm1(-kappa / l2);           // 1 - e^{-κ/λ²}
  double const spread = std::sqrt(-std::expm1(-2.0 * kappa / l2));
  return decay * z + gain * x_k - (l2 * gain) * grad + (lambda * spread) * noise;
}

double r_of_alpha_bar(double alpha_bar, double lambda)
{
  double const l2 = lambda * lambda;
  if (alpha_bar == 1.0) { return 1.0; }
  return ((l2 + 1.0) * alpha_bar - 1.0) / (l2 + alpha_bar - 1.0);
}

double alpha_bar_of_r(double r, double lambda)
{
  double const l2 = lambda * lambda;
  if (r == 1.0) { return 1.0; }
  if (r == 0.0) { return 1.0 / (l2 + 1.0); }
  return 1.0 - l2 * (1.0 - r) / (l2 + 1.0 - r);
}

std::vector<double> r_grid(int N, double lambda, RGrid grid)
{
  if (N < 1) { throw ParameterError("the residual sampler needs at least one step"); }
  std::vector<double> r(N + 1);
  for (int m = 0; m <= N; ++m) {
    double const s = static_cast<double>(m) / N;
    if (grid == RGrid::Cosine) {
      r[m] = 0.5 * (1.0 - std::cos(std::numbers::pi * s));
    } else if (grid == RGrid::Angle) {
      // θ = arctan(λ√r/√(1-r)) uniform on [0, π/2]; r = tan²θ/(λ² + tan²θ).
      double const t = std::tan(0.5 * std::numbers::pi * s);
      r[m] = t * t / (lambda * lambda + t * t);
    } else {
      r[m] = s;
    }
  }
  r.front() = 0.0;
  r.back() = 1.0;
  return r;
}

std::vector<double> alpha_bar_grid(double lambda, int N, RGrid grid)
{
  if (!(lambda > 0.0)) { throw ParameterError("lambda must be positive"); }
  std::vector<double> alphas;
  for (double const r : r_grid(N, lambda, grid)) { alphas.push_back(alpha_bar_of_r(r, lambda)); }
  return alphas;
}

Tensor ddim_residual_step(Tensor const &zeta, Tensor const &z_k, double lambda, double alpha_i, double alpha_prev,
                          ScoreModel const &model)
{
  auto const [r_i, r_p] = step_r(lambda, alpha_i, alpha_prev);
  return ddim_step_r(zeta, z_k, lambda, r_i, r_p, alpha_i, model);
}

Tensor ddpm_residual_step(Tensor const &zeta, Tensor const &z_k, double lambda, double alpha_i, double alpha_prev,
                          ScoreModel const &model, Tensor const &noise)
{
  auto const [r_i, r_p] = step_r(lambda, alpha_i, alpha_prev);
  return ddpm_step_r(zeta, z_k, lambda, r_i, r_p, alpha_i, model, noise);
}

ComplexImage prior_sample(ComplexImage const &z_k, double lambda, ScoreModel const &model, int N, Rng &rng,
                          RGrid grid)
{
  if (!(lambda > 0.0)) { throw ParameterError("lambda must be positive"); }
  std::vector<double> const r = r_grid(N, lambda, grid);
  Tensor const              anchor = to_two_channel(z_k);
  Tensor                    zeta = gaussian_tensor(2, z_k.rows(), z_k.cols(), rng);
  for (int m = 0; m < N; ++m) {
    zeta = ddim_step_r(zeta, anchor, lambda, r[m], r[m + 1], alpha_bar_of_r(r[m], lambda), model);
    if (!finite(zeta)) { throw DivergenceError("residual sampler diverged", -1, m); }
  }
  return z_k + from_two_channel(zeta);
}

ComplexImage prior_sample_ddpm(ComplexImage const &z_k, double lambda, ScoreModel const &model, int N, Rng &rng,
                               RGrid grid)
{
  if (!(lambda > 0.0)) { throw ParameterError("lambda must be positive"); }
  std::vector<double> const r = r_grid(N, lambda, grid);
  Tensor const              anchor = to_two_channel(z_k);
  Tensor                    zeta = gaussian_tensor(2, z_k.rows(), z_k.cols(), rng);
  for (int m = 0; m < N; ++m) {
    Tensor const noise = gaussian_tensor(2, z_k.rows(), z_k.cols(), rng);
    zeta = ddpm_step_r(zeta, anchor, lambda, r[m], r[m + 1], alpha_bar_of_r(r[m], lambda), model, noise);
    if (!finite(zeta)) { throw DivergenceError("residual sampler diverged", -1, m); }
  }
  return z_k + from_two_channel(zeta);
}

ComplexImage sgs_run(SarOperator const &op, EchoData const &y, ScoreModel const &model,
                     AnnealingSchedule const &schedule, SgsConfig const &cfg, Rng &rng, OuterObserver const &observer)
{
  return split_gibbs(op, y, model, schedule, cfg, rng, observer, &prior_sample);
}

ComplexImage sgs_ddpm_run(SarOperator const &op, EchoData const &y, ScoreModel const &model,
                          AnnealingSchedule const &schedule, SgsConfig const &cfg, Rng &rng,
                          OuterObserver const &observer)
{
  return split_gibbs(op, y, model, schedule, cfg, rng, observer, &prior_sample_ddpm);
}

void DpsConfig::validate() const
{
  if (steps < 0) { throw ConfigError("DPS steps must be non-negative (0 = full schedule)"); }
  if (!(guidance_scale >= 0.0)) { throw ConfigError("guidance_scale must be non-negative"); }
}

ComplexImage dps_run(SarOperator const &op, EchoData const &y, ScoreModel const &model, DpsConfig const &cfg,
                     Rng &rng)
{
  cfg.validate();
  check_scene(op, ComplexImage::Zero(op.P(), op.Q()), y);
  std::vector<double> const ab = model.training_alpha_bars();
  int const                 T = static_cast<int>(ab.size());
  int const                 steps = cfg.steps == 0 ? T : cfg.steps;
  if (steps > T) { throw ConfigError("DPS steps exceed the model's training schedule"); }

  std::vector<int> ts(steps);
  for (int m = 0; m < steps; ++m) { ts[m] = T - static_cast<int>(static_cast<long long>(m) * T / steps); }

  Tensor x = gaussian_tensor(2, op.P(), op.Q(), rng);
  for (int m = 0; m < steps; ++m) {
    double const a_t = ab[ts[m] - 1];
    double const a_prev = m + 1 < steps ? ab[ts[m + 1] - 1] : 1.0;
    Tensor const eps = model.predict_noise(x, a_t);
    Tensor const x0 = (1.0 / std::sqrt(a_t)) * (x - std::sqrt(1.0 - a_t) * eps);

    Tensor guidance(2, op.P(), op.Q());
    if (cfg.guidance_scale > 0.0) {
      ComplexImage const grad = op.adjoint(op.forward(from_two_channel(x0)) - y);
      double const       res = (y - op.forward(from_two_channel(x0))).norm();
      if (res > 0.0) {
        // ∇‖r‖ over the real representation of x̂0 is A^H(Ax̂0 - y)/‖r‖; pull it
        // back through x̂0(x_t) = (x_t - √(1-ᾱ) ε̂(x_t))/√ᾱ.
        Tensor const g = (1.0 / res) * to_two_channel(grad);
        guidance = (1.0 / std::sqrt(a_t)) * (g - std::sqrt(1.0 - a_t) * model.noise_vjp(x, a_t, g));
      }
    }

    double const alpha = a_t / a_prev;
    double const beta = 1.0 - alpha;
    double const c0 = std::sqrt(a_prev) * beta / (1.0 - a_t);
    double const ct = std::sqrt(alpha) * (1.0 - a_prev) / (1.0 - a_t);
    double const sd = std::sqrt(beta * (1.0 - a_prev) / (1.0 - a_t));
    Tensor       next = c0 * x0 + ct * x;
    if (sd > 0.0) { next += sd * gaussian_tensor(2, op.P(), op.Q(), rng); }
    next -= cfg.guidance_scale * guidance;
    x = std::move(next);
    if (!finite(x)) { throw DivergenceError("DPS diverged", m); }
  }
  return from_two_channel(x);
}

ComplexImage langevin_posterior_run(SarOperator const &op, EchoData const &y, ScoreModel const &model, int steps,
                                    double step_size, Rng &rng, double temperature)
{
  if (steps < 0) { throw ParameterError("steps must be non-negative"); }
  if (!(step_size > 0.0)) { throw ParameterError("step_size must be positive"); }
  if (!(temperature >= 0.0)) { throw ParameterError("temperature must be non-negative"); }
  check_scene(op, ComplexImage::Zero(op.P(), op.Q()), y);
  double const clean = model.clean_alpha_bar();
  double const spread = std::sqrt(2.0 * step_size * temperature);
  Tensor       x = to_two_channel(op.adjoint(y));
  for (int s = 0; s < steps; ++s) {
    Tensor const data_grad = 2.0 * to_two_channel(op.adjoint(op.forward(from_two_channel(x)) - y));
    Tensor const drift = data_grad - model.score(x, clean);
    x -= step_size * drift;
    if (spread > 0.0) { x += spread * gaussian_tensor(2, op.P(), op.Q(), rng); }
    if (!finite(x)) { throw DivergenceError("Langevin posterior sampler diverged", s); }
  }
  return from_two_channel(x);
}

std::vector<ComplexImage> run_chains(int chains, std::uint64_t master_seed,
                                     std::function<ComplexImage(Rng &)> const &sampler, int threads)
{
  if (chains < 0) { throw ParameterError("chain count must be non-negative"); }
  std::vector<ComplexImage> out(chains);
  if (threads <= 0) { threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }
  threads = std::min(threads, std::max(chains, 1));

  std::atomic<int>   next{0};
  std::exception_ptr failure;
  std::mutex         failure_mutex;
  auto               work = [&] {
    for (int c = next++; c < chains; c = next++) {
      try {
        Rng rng(derive_seed(master_seed, {static_cast<std::uint64_t>(c)}));
        out[c] = sampler(rng);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) { failure = std::current_exception(); }
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) { pool.emplace_back(work); }
  work();
  for (auto &th : pool) { th.join(); }
  if (failure) { std::rethrow_exception(failure); }
  return out;
}

TraceWriter::TraceWriter(std::filesystem::path dir, int snapshot_every)
  : dir_(std::move(dir))
  , snapshot_every_(snapshot_every)
{
  std::filesystem::create_directories(dir_);
  csv_.open(dir_ / "trace.csv", std::ios::trunc);
  if (!csv_) { throw IoError("cannot open " + (dir_ / "trace.csv").string()); }
  csv_ << "k,lambda,kappa,residual\n";
  csv_.precision(17);
}

void TraceWriter::operator()(int k, double lambda, double kappa, double residual, ComplexImage const &x)
{
  csv_ << k << ',' << lambda << ',' << kappa << ',' << residual << '\n';
  csv_.flush();
  if (snapshot_every_ > 0 && k % snapshot_every_ == 0) {
    char name[32];
    std::snprintf(name, sizeof name, "x_%04d.cimg", k);
    write_cimg(dir_ / name, x);
  }
}

OuterObserver TraceWriter::observer()
{
  return [this](int k, double lambda, double kappa, double residual, ComplexImage const &x) {
    (*this)(k, lambda, kappa, residual, x);
  };
}

} // namespace sarsgs
