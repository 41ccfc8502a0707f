#include "sarsgs/baselines.hpp"

#include "sarsgs/error.hpp"

#include <cmath>

namespace sarsgs {

namespace {

ComplexImage shrink(ComplexImage const &z, double tau)
{
  ComplexImage out(z.rows(), z.cols());
  for (Eigen::Index k = 0; k < z.size(); ++k) { out.data()[k] = sarsgs::soft_threshold(z.data()[k], tau); }
  return out;
}

void check_echo(SarOperator const &op, EchoData const &y)
{
  if (y.rows() != op.N() || y.cols() != op.M()) { throw DimensionError("echo shape does not match the operator"); }
}

} // namespace

void SparseSolverConfig::validate(bool need_rho) const
{
  if (!(mu >= 0.0)) { throw ConfigError("mu must be non-negative"); }
  if (max_iters < 1) { throw ConfigError("max_iters must be at least 1"); }
  if (!(tol > 0.0)) { throw ConfigError("tol must be positive"); }
  if (need_rho && !(rho > 0.0)) { throw ConfigError("rho must be positive"); }
}

ComplexImage matched_filter(SarOperator const &op, EchoData const &y)
{
  check_echo(op, y);
  return op.adjoint(y);
}

Cx soft_threshold(Cx z, double tau)
{
  double const mag = std::abs(z);
  if (mag <= tau || mag == 0.0) { return {0.0, 0.0}; }
  return z * (1.0 - tau / mag);
}

double l1_objective(SarOperator const &op, EchoData const &y, ComplexImage const &x, double mu)
{
  return (y - op.forward(x)).squaredNorm() + mu * x.cwiseAbs().sum();
}

ComplexImage fista_l1(SarOperator const &op, EchoData const &y, SparseSolverConfig const &cfg)
{
  cfg.validate(false);
  check_echo(op, y);
  // Step 1/L with L = 2: the gradient of ‖y - Ax‖² is 2A^H(Ax - y).
  double const tau = cfg.mu / 2.0;
  ComplexImage x = op.adjoint(y);
  ComplexImage v = x;
  double       t = 1.0;
  for (int it = 0; it < cfg.max_iters; ++it) {
    ComplexImage const x_next = shrink(v - op.adjoint(op.forward(v) - y), tau);
    if (!all_finite(x_next)) { throw DivergenceError("FISTA produced a non-finite iterate", it); }
    double const t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    double const change = (x_next - x).norm();
    double const scale = std::max(x.norm(), 1e-300);
    v = x_next + ((t - 1.0) / t_next) * (x_next - x);
    x = x_next;
    t = t_next;
    if (change / scale < cfg.tol) { break; }
  }
  return x;
}

ComplexImage admm_l1(SarOperator const &op, EchoData const &y, SparseSolverConfig const &cfg)
{
  cfg.validate(true);
  check_echo(op, y);
  // Augmented Lagrangian ‖y - Ax‖² + μ‖z‖₁ + ρ‖x - z + u‖². Stationarity in x gives
  // (A^H A + ρI)x = A^H y + ρ(z - u); A^H A is the spectral mask.
  double const          rho = cfg.rho;
  Eigen::MatrixXd const denom = op.spectral_mask().array() + rho;
  Eigen::MatrixXcd const aty_spec = spectrum(op.adjoint(y));
  double const           sqrt_n = std::sqrt(static_cast<double>(op.P()) * op.Q());

  ComplexImage z = op.adjoint(y);
  ComplexImage u = ComplexImage::Zero(op.P(), op.Q());
  ComplexImage x = z;
  for (int it = 0; it < cfg.max_iters; ++it) {
    Eigen::MatrixXcd const rhs = aty_spec + rho * spectrum(z - u);
    x = inverse_spectrum((rhs.array() / denom.array().cast<Cx>()).matrix());
    ComplexImage const z_prev = z;
    z = shrink(x + u, cfg.mu / (2.0 * rho));
    u += x - z;
    if (!all_finite(x) || !all_finite(z)) { throw DivergenceError("ADMM produced a non-finite iterate", it); }
    double const primal = (x - z).norm();
    double const dual = 2.0 * rho * (z - z_prev).norm();
    double const eps_primal = cfg.tol * (sqrt_n + std::max(x.norm(), z.norm()));
    double const eps_dual = cfg.tol * (sqrt_n + 2.0 * rho * u.norm());
    if (primal <= eps_primal && dual <= eps_dual) { break; }
  }
  return z;
}

} // namespace sarsgs
