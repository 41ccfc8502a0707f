#include "sarsgs/priors.hpp"

#include "sarsgs/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace sarsgs {

std::vector<double> linear_beta_alpha_bars(int T, double beta_first, double beta_last)
{
  if (T < 1) { throw ParameterError("diffusion schedule needs at least one step"); }
  if (!(beta_first > 0.0 && beta_first < 1.0 && beta_last > 0.0 && beta_last < 1.0)) {
    throw ParameterError("beta values must lie in (0, 1)");
  }
  std::vector<double> alpha_bars(T);
  double              prod = 1.0;
  for (int t = 0; t < T; ++t) {
    double const beta = T == 1 ? beta_first : beta_first + (beta_last - beta_first) * t / (T - 1);
    prod *= 1.0 - beta;
    alpha_bars[t] = prod;
  }
  return alpha_bars;
}

void check_alpha_bar(double alpha_bar)
{
  if (!(alpha_bar > 0.0 && alpha_bar <= 1.0)) {
    throw ParameterError("alpha_bar must lie in (0, 1], got " + std::to_string(alpha_bar));
  }
}

Tensor ScoreModel::noise_vjp(Tensor const &x, double alpha_bar, Tensor const &v) const
{
  if (!x.same_shape(v)) { throw DimensionError("cotangent shape differs from input shape"); }
  Tensor out(x.channels(), x.height(), x.width());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double const h = 1e-5 * std::max(1.0, std::abs(x[i]));
    probe[i] = x[i] + h;
    Tensor const plus = predict_noise(probe, alpha_bar);
    probe[i] = x[i] - h;
    Tensor const minus = predict_noise(probe, alpha_bar);
    probe[i] = x[i];
    double acc = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) { acc += v[k] * (plus[k] - minus[k]); }
    out[i] = acc / (2.0 * h);
  }
  return out;
}

Tensor ScoreModel::score(Tensor const &x, double alpha_bar) const
{
  check_alpha_bar(alpha_bar);
  if (alpha_bar >= 1.0) { throw ParameterError("the score is undefined at alpha_bar = 1"); }
  return (-1.0 / std::sqrt(1.0 - alpha_bar)) * predict_noise(x, alpha_bar);
}

Tensor FlatPrior::predict_noise(Tensor const &x, double alpha_bar) const
{
  check_alpha_bar(alpha_bar);
  return Tensor(x.channels(), x.height(), x.width());
}

Tensor FlatPrior::noise_vjp(Tensor const &x, double alpha_bar, Tensor const &v) const
{
  if (!x.same_shape(v)) { throw DimensionError("cotangent shape differs from input shape"); }
  check_alpha_bar(alpha_bar);
  return Tensor(x.channels(), x.height(), x.width());
}

GaussianPrior::GaussianPrior(double sigma_p)
  : sigma_(sigma_p)
{
  if (!(sigma_p > 0.0) || !std::isfinite(sigma_p)) { throw ParameterError("Gaussian prior needs sigma_p > 0"); }
}

Tensor GaussianPrior::predict_noise(Tensor const &x, double alpha_bar) const
{
  check_alpha_bar(alpha_bar);
  double const gain = std::sqrt(1.0 - alpha_bar) / (alpha_bar * sigma_ * sigma_ + 1.0 - alpha_bar);
  return gain * x;
}

Tensor GaussianPrior::noise_vjp(Tensor const &x, double alpha_bar, Tensor const &v) const
{
  if (!x.same_shape(v)) { throw DimensionError("cotangent shape differs from input shape"); }
  check_alpha_bar(alpha_bar);
  double const gain = std::sqrt(1.0 - alpha_bar) / (alpha_bar * sigma_ * sigma_ + 1.0 - alpha_bar);
  return gain * v;
}

GmmPrior::GmmPrior(std::vector<double> weights, std::vector<Tensor> means, std::vector<double> variances)
  : weights_(std::move(weights))
  , means_(std::move(means))
  , variances_(std::move(variances))
{
  if (weights_.empty() || weights_.size() != means_.size() || weights_.size() != variances_.size()) {
    throw ParameterError("mixture needs matching, non-empty weight/mean/variance lists");
  }
  double const total = std::accumulate(weights_.begin(), weights_.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-12 ||
      std::any_of(weights_.begin(), weights_.end(), [](double w) { return !(w > 0.0); })) {
    throw ParameterError("mixture weights must be positive and sum to 1");
  }
  if (std::any_of(variances_.begin(), variances_.end(), [](double v) { return !(v > 0.0); })) {
    throw ParameterError("mixture variances must be positive");
  }
  for (auto const &m : means_) {
    if (!m.same_shape(means_.front())) { throw ParameterError("mixture means must share one shape"); }
  }
}

std::vector<double> GmmPrior::responsibilities(Tensor const &x, double alpha_bar) const
{
  check_alpha_bar(alpha_bar);
  if (!x.same_shape(means_.front())) { throw DimensionError("input shape differs from mixture shape"); }
  double const        root = std::sqrt(alpha_bar);
  double const        d = static_cast<double>(x.size());
  std::vector<double> logp(weights_.size());
  for (std::size_t j = 0; j < weights_.size(); ++j) {
    double const s = alpha_bar * variances_[j] + 1.0 - alpha_bar;
    double       dist = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      double const r = x[k] - root * means_[j][k];
      dist += r * r;
    }
    logp[j] = std::log(weights_[j]) - 0.5 * d * std::log(2.0 * std::numbers::pi * s) - 0.5 * dist / s;
  }
  double const top = *std::max_element(logp.begin(), logp.end());
  double       sum = 0.0;
  for (auto &l : logp) {
    l = std::exp(l - top);
    sum += l;
  }
  for (auto &l : logp) { l /= sum; }
  return logp;
}

Tensor GmmPrior::predict_noise(Tensor const &x, double alpha_bar) const
{
  std::vector<double> const gamma = responsibilities(x, alpha_bar);
  double const              root = std::sqrt(alpha_bar);
  Tensor                    out(x.channels(), x.height(), x.width());
  for (std::size_t j = 0; j < gamma.size(); ++j) {
    double const s = alpha_bar * variances_[j] + 1.0 - alpha_bar;
    double const c = gamma[j] / s;
    for (std::size_t k = 0; k < x.size(); ++k) { out[k] += c * (x[k] - root * means_[j][k]); }
  }
  return std::sqrt(1.0 - alpha_bar) * out;
}

Tensor GmmPrior::noise_vjp(Tensor const &x, double alpha_bar, Tensor const &v) const
{
  if (!x.same_shape(v)) { throw DimensionError("cotangent shape differs from input shape"); }
  // ε̂ = -√(1-ᾱ) Σ γ_j g_j with g_j = -(x - √ᾱ μ_j)/s_j, so the Jacobian is
  // √(1-ᾱ) [Σ γ_j/s_j I - Σ γ_j g_j g_j^T + ḡ ḡ^T], which is symmetric.
  std::vector<double> const gamma = responsibilities(x, alpha_bar);
  double const              root = std::sqrt(alpha_bar);
  std::size_t const         n = gamma.size();
  std::vector<Tensor>       g(n, Tensor(x.channels(), x.height(), x.width()));
  std::vector<double>       gv(n, 0.0);
  Tensor                    gbar(x.channels(), x.height(), x.width());
  double                    diag = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double const s = alpha_bar * variances_[j] + 1.0 - alpha_bar;
    diag += gamma[j] / s;
    for (std::size_t k = 0; k < x.size(); ++k) {
      g[j][k] = -(x[k] - root * means_[j][k]) / s;
      gv[j] += g[j][k] * v[k];
      gbar[k] += gamma[j] * g[j][k];
    }
  }
  double const gbar_v = dot(gbar, v);
  Tensor       out = diag * v;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < x.size(); ++k) { out[k] -= gamma[j] * gv[j] * g[j][k]; }
  }
  for (std::size_t k = 0; k < x.size(); ++k) { out[k] += gbar_v * gbar[k]; }
  return std::sqrt(1.0 - alpha_bar) * out;
}

GmmPrior load_gmm(std::filesystem::path const &path)
{
  std::ifstream is(path);
  if (!is) { throw IoError("cannot open " + path.string()); }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
    auto const shape = doc.at("shape").get<std::vector<int>>();
    if (shape.size() != 3) { throw FormatError(path.string() + ": shape must be [C, H, W]"); }
    auto                weights = doc.at("weights").get<std::vector<double>>();
    auto                variances = doc.at("variances").get<std::vector<double>>();
    std::vector<Tensor> means;
    for (auto const &m : doc.at("means")) {
      auto const flat = m.get<std::vector<double>>();
      Tensor     t(shape[0], shape[1], shape[2]);
      if (flat.size() != t.size()) { throw FormatError(path.string() + ": mean length does not match shape"); }
      std::copy(flat.begin(), flat.end(), t.values().begin());
      means.push_back(std::move(t));
    }
    return GmmPrior(std::move(weights), std::move(means), std::move(variances));
  } catch (nlohmann::json::exception const &e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

} // namespace sarsgs
