#pragma once

#include "sarsgs/forward_model.hpp"

namespace sarsgs {

struct SparseSolverConfig
{
  double mu = 0.1;        // ℓ1 weight
  int    max_iters = 500;
  double tol = 1e-6;      // relative-change (FISTA) or residual (ADMM) tolerance
  double rho = 1.0;       // ADMM penalty

  void validate(bool need_rho) const;
};

/// A^H y.
ComplexImage matched_filter(SarOperator const &op, EchoData const &y);

/// Complex proximal map of tau·|·|: z·max(1 - tau/|z|, 0).
Cx soft_threshold(Cx z, double tau);

/// ‖y - Ax‖² + μ‖x‖₁.
double l1_objective(SarOperator const &op, EchoData const &y, ComplexImage const &x, double mu);

/// Proximal gradient with Nesterov momentum on ‖y - Ax‖² + μ‖x‖₁, warm-started
/// at the matched filter. Lipschitz constant 2 (‖A‖ ≤ 1).
ComplexImage fista_l1(SarOperator const &op, EchoData const &y, SparseSolverConfig const &cfg);

/// ADMM on the same objective with the x-update solved exactly in the
/// spectrum basis, where A^H A + ρI is diagonal.
ComplexImage admm_l1(SarOperator const &op, EchoData const &y, SparseSolverConfig const &cfg);

} // namespace sarsgs
