#include "sarsgs/signal.hpp"

#include "sarsgs/error.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <numbers>
#include <string>
#include <unordered_set>

namespace sarsgs {

namespace {

enum class Direction
{
  Forward, // exp(-j...)
  Inverse  // exp(+j...)
};

// Unitary 1-D transform of every column of m, in place.
void transform_columns(Eigen::MatrixXcd &m, Direction dir)
{
  Eigen::Index const n = m.rows();
  if (n == 0) { return; }
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::Unscaled);
  double const     scale = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<Cx>  in(n), out(n);
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < n; ++r) { in[r] = m(r, c); }
    if (dir == Direction::Forward) {
      fft.fwd(out, in);
    } else {
      fft.inv(out, in);
    }
    for (Eigen::Index r = 0; r < n; ++r) { m(r, c) = out[r] * scale; }
  }
}

void transform_rows(Eigen::MatrixXcd &m, Direction dir)
{
  Eigen::MatrixXcd t = m.transpose();
  transform_columns(t, dir);
  m = t.transpose();
}

void check_factors(DftFactor const &phi, DftFactor const &psi)
{
  phi.validate();
  psi.validate();
}

} // namespace

DftFactor DftFactor::full(int n)
{
  if (n < 1) { throw DimensionError("DFT size must be positive"); }
  DftFactor f;
  f.n_cols = n;
  f.rows.resize(n);
  for (int i = 0; i < n; ++i) { f.rows[i] = i; }
  return f;
}

void DftFactor::validate() const
{
  if (n_cols < 1) { throw DimensionError("DFT factor has no columns"); }
  if (n_rows() > n_cols) { throw DimensionError("DFT factor selects more rows than it has"); }
  std::unordered_set<int> seen;
  for (int const r : rows) {
    if (r < 0 || r >= n_cols) { throw DimensionError("DFT row index " + std::to_string(r) + " out of range"); }
    if (!seen.insert(r).second) { throw DimensionError("duplicate DFT row index " + std::to_string(r)); }
  }
}

Eigen::MatrixXcd DftFactor::dense() const
{
  validate();
  Eigen::MatrixXcd const F = unitary_dft(n_cols);
  Eigen::MatrixXcd       out(n_rows(), n_cols);
  for (int i = 0; i < n_rows(); ++i) { out.row(i) = F.row(rows[i]); }
  return out;
}

Eigen::MatrixXcd unitary_dft(int n)
{
  if (n < 1) { throw DimensionError("DFT size must be positive"); }
  Eigen::MatrixXcd F(n, n);
  double const     scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (int k = 0; k < n; ++k) {
    for (int l = 0; l < n; ++l) {
      // Reduce k·l mod n first so the phase stays accurate for large n.
      long long const kl = (static_cast<long long>(k) * l) % n;
      double const    ang = -2.0 * std::numbers::pi * static_cast<double>(kl) / n;
      F(k, l) = std::polar(scale, ang);
    }
  }
  return F;
}

EchoData apply_forward(DftFactor const &phi, DftFactor const &psi, ComplexImage const &x)
{
  check_factors(phi, psi);
  if (x.rows() != phi.n_cols || x.cols() != psi.n_cols) {
    throw DimensionError("scene is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                         " but operator expects " + std::to_string(phi.n_cols) + "x" + std::to_string(psi.n_cols));
  }
  Eigen::MatrixXcd t = x;
  transform_columns(t, Direction::Forward);
  Eigen::MatrixXcd sel(phi.n_rows(), t.cols());
  for (int i = 0; i < phi.n_rows(); ++i) { sel.row(i) = t.row(phi.rows[i]); }
  // Right multiplication by Ψ^H = F_Q^H Π_a^T: inverse transform along rows, then gather columns.
  transform_rows(sel, Direction::Inverse);
  EchoData y(phi.n_rows(), psi.n_rows());
  for (int j = 0; j < psi.n_rows(); ++j) { y.col(j) = sel.col(psi.rows[j]); }
  return y;
}

ComplexImage apply_adjoint(DftFactor const &phi, DftFactor const &psi, EchoData const &y)
{
  check_factors(phi, psi);
  if (y.rows() != phi.n_rows() || y.cols() != psi.n_rows()) {
    throw DimensionError("echo is " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()) +
                         " but operator produces " + std::to_string(phi.n_rows()) + "x" +
                         std::to_string(psi.n_rows()));
  }
  Eigen::MatrixXcd z = Eigen::MatrixXcd::Zero(phi.n_cols, y.cols());
  for (int i = 0; i < phi.n_rows(); ++i) { z.row(phi.rows[i]) = y.row(i); }
  transform_columns(z, Direction::Inverse);
  Eigen::MatrixXcd w = Eigen::MatrixXcd::Zero(phi.n_cols, psi.n_cols);
  for (int j = 0; j < psi.n_rows(); ++j) { w.col(psi.rows[j]) = z.col(j); }
  transform_rows(w, Direction::Forward);
  return w;
}

Eigen::MatrixXcd spectrum(ComplexImage const &x)
{
  Eigen::MatrixXcd t = x;
  transform_columns(t, Direction::Forward);
  transform_rows(t, Direction::Inverse);
  return t;
}

ComplexImage inverse_spectrum(Eigen::MatrixXcd const &s)
{
  Eigen::MatrixXcd t = s;
  transform_columns(t, Direction::Inverse);
  transform_rows(t, Direction::Forward);
  return t;
}

Eigen::MatrixXcd kronecker_operator(DftFactor const &phi, DftFactor const &psi)
{
  long long const pq = static_cast<long long>(phi.n_cols) * psi.n_cols;
  if (pq > 4096) { throw DimensionError("dense operator materialization is limited to P·Q <= 4096"); }
  Eigen::MatrixXcd const Phi = phi.dense();
  Eigen::MatrixXcd const PsiConj = psi.dense().conjugate();
  Eigen::MatrixXcd       A(Phi.rows() * PsiConj.rows(), Phi.cols() * PsiConj.cols());
  for (Eigen::Index i = 0; i < PsiConj.rows(); ++i) {
    for (Eigen::Index j = 0; j < PsiConj.cols(); ++j) {
      A.block(i * Phi.rows(), j * Phi.cols(), Phi.rows(), Phi.cols()) = PsiConj(i, j) * Phi;
    }
  }
  return A;
}

ComplexVector vec(ComplexImage const &x)
{
  // Eigen's default storage is column-major, so the raw buffer is already vec(X).
  return Eigen::Map<ComplexVector const>(x.data(), x.size());
}

ComplexImage unvec(ComplexVector const &v, int P, int Q)
{
  if (P < 1 || Q < 1) { throw DimensionError("unvec needs positive dimensions"); }
  if (v.size() != static_cast<Eigen::Index>(P) * Q) {
    throw DimensionError("vector of length " + std::to_string(v.size()) + " cannot be reshaped to " +
                         std::to_string(P) + "x" + std::to_string(Q));
  }
  return Eigen::Map<ComplexImage const>(v.data(), P, Q);
}

Tensor to_two_channel(ComplexImage const &x)
{
  Tensor t(2, static_cast<int>(x.rows()), static_cast<int>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      t(0, i, j) = x(i, j).real();
      t(1, i, j) = x(i, j).imag();
    }
  }
  return t;
}

ComplexImage from_two_channel(Tensor const &t)
{
  if (t.channels() != 2) {
    throw DimensionError("expected a two-channel tensor, got " + std::to_string(t.channels()) + " channels");
  }
  ComplexImage x(t.height(), t.width());
  for (int i = 0; i < t.height(); ++i) {
    for (int j = 0; j < t.width(); ++j) { x(i, j) = Cx(t(0, i, j), t(1, i, j)); }
  }
  return x;
}

bool all_finite(Eigen::MatrixXcd const &m)
{
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    if (!std::isfinite(m.data()[k].real()) || !std::isfinite(m.data()[k].imag())) { return false; }
  }
  return true;
}

Cx inner(Eigen::MatrixXcd const &a, Eigen::MatrixXcd const &b)
{
  if (a.rows() != b.rows() || a.cols() != b.cols()) { throw DimensionError("inner product shape mismatch"); }
  return (a.array() * b.array().conjugate()).sum();
}

} // namespace sarsgs
