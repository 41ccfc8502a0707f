#pragma once

#include "sarsgs/tensor.hpp"

#include <Eigen/Dense>

#include <complex>
#include <vector>

namespace sarsgs {

using Cx = std::complex<double>;

/// P×Q complex reflectivity grid (a scene or a reconstruction).
using ComplexImage = Eigen::MatrixXcd;
/// N×M complex echo samples.
using EchoData = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using RealImage = Eigen::MatrixXd;

/// A row-selected unitary DFT: rows `rows` of the n_cols×n_cols unitary DFT.
struct DftFactor
{
  int              n_cols = 0;
  std::vector<int> rows;

  int n_rows() const { return static_cast<int>(rows.size()); }

  /// Every row of the DFT, in order.
  static DftFactor full(int n);

  /// Throws DimensionError unless rows are unique, in range and n_rows <= n_cols.
  void validate() const;

  /// Materialized n_rows×n_cols matrix (test oracle and small problems only).
  Eigen::MatrixXcd dense() const;
};

/// Unitary DFT matrix with entries exp(-j2πkl/n)/√n.
Eigen::MatrixXcd unitary_dft(int n);

/// Y = Φ X Ψ^H with Φ, Ψ the row-selected unitary DFTs, evaluated with FFTs.
EchoData apply_forward(DftFactor const &phi, DftFactor const &psi, ComplexImage const &x);

/// X = Φ^H Y Ψ, the adjoint of apply_forward.
ComplexImage apply_adjoint(DftFactor const &phi, DftFactor const &psi, EchoData const &y);

/// Full 2-D unitary transform F_P X F_Q^H (apply_forward with every row kept).
Eigen::MatrixXcd spectrum(ComplexImage const &x);

/// Inverse of spectrum().
ComplexImage inverse_spectrum(Eigen::MatrixXcd const &s);

/// Dense Kronecker-structured matrix conj(Ψ) ⊗ Φ acting on column-major vec(X).
/// Refuses problems with P·Q above 4096.
Eigen::MatrixXcd kronecker_operator(DftFactor const &phi, DftFactor const &psi);

/// Column-major stacking.
ComplexVector vec(ComplexImage const &x);
ComplexImage  unvec(ComplexVector const &v, int P, int Q);

/// Channel 0 holds the real part, channel 1 the imaginary part.
Tensor       to_two_channel(ComplexImage const &x);
ComplexImage from_two_channel(Tensor const &t);

bool all_finite(Eigen::MatrixXcd const &m);

/// Complex inner product Σ a·conj(b).
Cx inner(Eigen::MatrixXcd const &a, Eigen::MatrixXcd const &b);

} // namespace sarsgs
