#pragma once

#include "sarsgs/tensor.hpp"

#include <filesystem>
#include <vector>

namespace sarsgs {

/// Cumulative products Π(1 - β_s) for a linear β ramp; entry t-1 holds ᾱ_t.
std::vector<double> linear_beta_alpha_bars(int T, double beta_first = 1e-4, double beta_last = 0.02);

/// Throws ParameterError unless alpha_bar lies in (0, 1].
void check_alpha_bar(double alpha_bar);

/// Noise predictor ε̂(x_t, ᾱ) for x_t = √ᾱ x₀ + √(1-ᾱ) ε. Related to the score
/// of the diffused marginal by ε̂ = -√(1-ᾱ) ∇log p_ᾱ(x).
class ScoreModel
{
public:
  virtual ~ScoreModel() = default;

  virtual Tensor predict_noise(Tensor const &x, double alpha_bar) const = 0;

  /// Vector-Jacobian product (∂ε̂/∂x)^T v. The default uses central finite
  /// differences, which costs two predictions per input entry.
  virtual Tensor noise_vjp(Tensor const &x, double alpha_bar, Tensor const &v) const;

  /// ᾱ_t for t = 1..T, used by samplers that walk the training chain.
  virtual std::vector<double> training_alpha_bars() const { return linear_beta_alpha_bars(1000); }

  /// The noise level closest to clean data at which the score is defined.
  virtual double clean_alpha_bar() const { return 1.0 - 1e-8; }

  /// ∇log p_ᾱ(x) = -ε̂ / √(1-ᾱ); requires ᾱ < 1.
  Tensor score(Tensor const &x, double alpha_bar) const;
};

/// ε̂ ≡ 0: a flat prior. Useful as a reference for likelihood-only sampling.
class FlatPrior final : public ScoreModel
{
public:
  Tensor predict_noise(Tensor const &x, double alpha_bar) const override;
  Tensor noise_vjp(Tensor const &x, double alpha_bar, Tensor const &v) const override;
};

/// x₀ ~ N(0, σ_p² I) per real component.
class GaussianPrior final : public ScoreModel
{
public:
  explicit GaussianPrior(double sigma_p);

  double sigma() const { return sigma_; }

  Tensor predict_noise(Tensor const &x, double alpha_bar) const override;
  Tensor noise_vjp(Tensor const &x, double alpha_bar, Tensor const &v) const override;

private:
  double sigma_;
};

/// Isotropic Gaussian mixture Σ w_j N(μ_j, v_j I).
class GmmPrior final : public ScoreModel
{
public:
  GmmPrior(std::vector<double> weights, std::vector<Tensor> means, std::vector<double> variances);

  std::size_t components() const { return weights_.size(); }
  std::vector<double> const &weights() const { return weights_; }
  std::vector<Tensor> const &means() const { return means_; }
  std::vector<double> const &variances() const { return variances_; }

  /// Posterior component probabilities γ_j(x) under the diffused marginal at ᾱ.
  std::vector<double> responsibilities(Tensor const &x, double alpha_bar) const;

  Tensor predict_noise(Tensor const &x, double alpha_bar) const override;
  Tensor noise_vjp(Tensor const &x, double alpha_bar, Tensor const &v) const override;

private:
  std::vector<double> weights_;
  std::vector<Tensor> means_;
  std::vector<double> variances_;
};

/// JSON: {"shape": [C,H,W], "weights": [...], "variances": [...], "means": [[flat], ...]}.
GmmPrior load_gmm(std::filesystem::path const &path);

} // namespace sarsgs
