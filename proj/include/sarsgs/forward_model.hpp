#pragma once

#include "sarsgs/random.hpp"
#include "sarsgs/signal.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>

namespace sarsgs {

enum class RowSelection
{
  UniformRandom,
  Decimation
};

std::string  to_string(RowSelection s);
RowSelection parse_row_selection(std::string const &s);

/// Row-subsampled 2-D Fourier measurement operator A = conj(Ψ) ⊗ Φ, applied
/// implicitly as Y = Φ X Ψ^H.
struct SarOperator
{
  DftFactor     phi; // range
  DftFactor     psi; // azimuth
  RowSelection  selection = RowSelection::UniformRandom;
  std::uint64_t seed = 0;

  int P() const { return phi.n_cols; }
  int Q() const { return psi.n_cols; }
  int N() const { return phi.n_rows(); }
  int M() const { return psi.n_rows(); }

  EchoData     forward(ComplexImage const &x) const { return apply_forward(phi, psi, x); }
  ComplexImage adjoint(EchoData const &y) const { return apply_adjoint(phi, psi, y); }

  /// P×Q indicator of the spectrum entries the operator observes; A^H A is
  /// this mask in the spectrum() basis.
  Eigen::MatrixXd spectral_mask() const;

  void validate() const;
};

SarOperator build_operator(int P, int Q, int n_range, int n_azimuth, RowSelection selection, std::uint64_t seed);

/// Text manifest with explicit row lists so a run can be reproduced exactly.
void        write_operator_manifest(std::filesystem::path const &path, SarOperator const &op);
SarOperator read_operator_manifest(std::filesystem::path const &path);

/// X = I0 ⊙ exp(jφ) with φ i.i.d. uniform on [-π, π).
ComplexImage synthesize_scene(RealImage const &intensity, std::uint64_t seed);

struct SimulatedEcho
{
  EchoData echo;
  double   sigma = 0.0; // std of the complex noise, CN(0, sigma^2) per sample
};

inline constexpr double kNoiseless = std::numeric_limits<double>::infinity();

/// Y = A X + W with W i.i.d. CN(0, σ²) and σ² = ‖AX‖² / (N·M·10^(snr/10)).
/// Pass kNoiseless for an exact echo.
SimulatedEcho simulate_echo(SarOperator const &op, ComplexImage const &x, double snr_db, std::uint64_t seed);

} // namespace sarsgs
