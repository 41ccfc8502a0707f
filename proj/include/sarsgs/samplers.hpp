#pragma once

#include "sarsgs/forward_model.hpp"
#include "sarsgs/priors.hpp"
#include "sarsgs/random.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

namespace sarsgs {

/// λ_k = λ0·(λK/λ0)^max(0, (k-K0)/(K-K0)).
struct AnnealingSchedule
{
  double lambda0 = 0.35;
  double lambdaK = 0.05;
  int    K0 = 15;
  int    K = 60;

  void validate() const;
};

double lambda_at(AnnealingSchedule const &s, int k);

/// How the r coordinate of the residual sampler is discretized on [0, 1].
/// Angle places the steps uniformly in θ = arctan(λ/√(1/r - 1)), the variable
/// the update integrates over; it stays accurate when λ is small.
enum class RGrid
{
  Uniform,
  Cosine,
  Angle
};

std::string to_string(RGrid g);
RGrid       parse_r_grid(std::string const &s);

struct SgsConfig
{
  int    langevin_steps = 50; // T
  int    ddim_steps = 50;     // N
  double kappa_cap = 0.15;
  double kappa_scale = 0.8;
  RGrid  grid = RGrid::Angle;

  void   validate() const;
  double kappa(double lambda) const { return kappa_scale * std::min(lambda * lambda, kappa_cap); }
};

struct ChainState
{
  ComplexImage x; // outer iterate x_k
  ComplexImage z; // inner Langevin iterate
  int          k = 0;
};

/// Per-outer-iteration callback: (k, λ_k, κ, ‖y - A z_k‖, x_k).
using OuterObserver = std::function<void(int, double, double, double, ComplexImage const &)>;

/// Wirtinger gradient A^H(Az - y) of ‖y - Az‖².
ComplexImage likelihood_grad(SarOperator const &op, ComplexImage const &z, EchoData const &y);

/// One exponential-integrator step of the z-Langevin dynamics; `noise` holds
/// CN(0, 1) entries drawn by the caller.
ComplexImage langevin_step(ComplexImage const &z, ComplexImage const &x_k, double lambda, double kappa,
                           ComplexImage const &grad, ComplexImage const &noise);

/// r = ((λ²+1)ᾱ - 1)/(λ² + ᾱ - 1) and its inverse ᾱ = (rλ² - r + 1)/(λ² + 1 - r).
double r_of_alpha_bar(double alpha_bar, double lambda);
double alpha_bar_of_r(double r, double lambda);

/// The r grid r_N = 0 < ... < r_0 = 1, returned in sampling order (r_N first).
/// lambda is only used by the angle grid.
std::vector<double> r_grid(int N, double lambda, RGrid grid = RGrid::Uniform);

/// ᾱ_N ... ᾱ_0 (sampling order): the r grid mapped through alpha_bar_of_r.
std::vector<double> alpha_bar_grid(double lambda, int N, RGrid grid = RGrid::Uniform);

/// Deterministic residual update ζ^(i) → ζ^(i-1) between noise levels
/// alpha_i < alpha_prev. Tensors are in two-channel form.
Tensor ddim_residual_step(Tensor const &zeta, Tensor const &z_k, double lambda, double alpha_i, double alpha_prev,
                          ScoreModel const &model);

/// Stochastic counterpart: ancestral step of the residual diffusion using the
/// Tweedie estimate of ζ^(0). `noise` holds N(0, 1) entries.
Tensor ddpm_residual_step(Tensor const &zeta, Tensor const &z_k, double lambda, double alpha_i, double alpha_prev,
                          ScoreModel const &model, Tensor const &noise);

/// Draws x ~ q(x | z_k) ∝ N(z_k; x, λ²I)·p(x) with λ per real component.
ComplexImage prior_sample(ComplexImage const &z_k, double lambda, ScoreModel const &model, int N, Rng &rng,
                          RGrid grid = RGrid::Uniform);
ComplexImage prior_sample_ddpm(ComplexImage const &z_k, double lambda, ScoreModel const &model, int N, Rng &rng,
                               RGrid grid = RGrid::Uniform);

/// Split Gibbs sampler with the deterministic residual prior sampler.
ComplexImage sgs_run(SarOperator const &op, EchoData const &y, ScoreModel const &model,
                     AnnealingSchedule const &schedule, SgsConfig const &cfg, Rng &rng,
                     OuterObserver const &observer = {});

/// Same outer loop with the ancestral residual prior sampler.
ComplexImage sgs_ddpm_run(SarOperator const &op, EchoData const &y, ScoreModel const &model,
                          AnnealingSchedule const &schedule, SgsConfig const &cfg, Rng &rng,
                          OuterObserver const &observer = {});

struct DpsConfig
{
  int    steps = 0;             // 0 = every step of the model's training schedule
  double guidance_scale = 1.0;

  void validate() const;
};

/// Diffusion posterior sampling with residual-norm-normalized guidance.
ComplexImage dps_run(SarOperator const &op, EchoData const &y, ScoreModel const &model, DpsConfig const &cfg,
                     Rng &rng);

/// Unadjusted Langevin on ‖y - Ax‖² - log p(x) in the two-channel real
/// representation, started at A^H y. temperature scales the injected noise
/// (1 = exact dynamics, 0 = gradient descent).
ComplexImage langevin_posterior_run(SarOperator const &op, EchoData const &y, ScoreModel const &model, int steps,
                                    double step_size, Rng &rng, double temperature = 1.0);

/// Runs `chains` independent samplers with streams derived from
/// (master_seed, chain index). Results are ordered by chain index regardless
/// of thread scheduling. threads = 0 picks the hardware concurrency.
std::vector<ComplexImage> run_chains(int chains, std::uint64_t master_seed,
                                     std::function<ComplexImage(Rng &)> const &sampler, int threads = 0);

/// Streams sampler traces: trace.csv (k, lambda, kappa, residual) plus
/// x_<k>.cimg every `snapshot_every` outer iterations (0 disables snapshots).
class TraceWriter
{
public:
  TraceWriter(std::filesystem::path dir, int snapshot_every);

  void operator()(int k, double lambda, double kappa, double residual, ComplexImage const &x);

  OuterObserver observer();

private:
  std::filesystem::path dir_;
  int                   snapshot_every_;
  std::ofstream         csv_;
};

} // namespace sarsgs
