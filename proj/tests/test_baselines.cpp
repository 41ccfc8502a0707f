#include "support.hpp"

#include "sarsgs/baselines.hpp"
#include "sarsgs/error.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace sarsgs;
using testing::random_image;
using testing::rel_err;

namespace {

struct Instance
{
  SarOperator  op;
  ComplexImage x;
  EchoData     y;
};

// Sparse 8×8 scene, 6×6 samples, 10 dB.
Instance small_instance(std::uint64_t seed)
{
  Instance in;
  in.op = build_operator(8, 8, 6, 6, RowSelection::UniformRandom, seed);
  RealImage inten = RealImage::Zero(8, 8);
  Rng       rng(seed + 1);
  for (int k = 0; k < 6; ++k) { inten(int(rng.uniform() * 8), int(rng.uniform() * 8)) = 0.5 + 0.5 * rng.uniform(); }
  in.x = synthesize_scene(inten, seed + 2);
  in.y = simulate_echo(in.op, in.x, 10.0, seed + 3).echo;
  return in;
}

// Largest violation of 0 ∈ 2A^H(Ax - y) + μ∂‖x‖₁.
double kkt_residual(SarOperator const &op, EchoData const &y, ComplexImage const &x, double mu)
{
  ComplexImage const g = 2.0 * op.adjoint(op.forward(x) - y);
  double             worst = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    double const a = std::abs(x(k));
    if (a > 1e-9) {
      worst = std::max(worst, std::abs(g(k) + mu * x(k) / a));
    } else {
      worst = std::max(worst, std::abs(g(k)) - mu);
    }
  }
  return worst;
}

} // namespace

TEST_CASE("matched filter")
{
  SarOperator const  full = build_operator(8, 8, 8, 8, RowSelection::UniformRandom, 0);
  ComplexImage const X = random_image(8, 8, 1);
  CHECK(rel_err(matched_filter(full, full.forward(X)), X) < 1e-10);

  SarOperator const op = build_operator(8, 8, 3, 5, RowSelection::UniformRandom, 2);
  CHECK(matched_filter(op, EchoData::Zero(3, 5)).norm() == 0.0);
  CHECK_THROWS_AS(matched_filter(op, EchoData::Zero(5, 3)), DimensionError);
}

TEST_CASE("matched filter of a point target is the 2-D Dirichlet pattern")
{
  int const          P = 16, Q = 12, p0 = 5, q0 = 7;
  SarOperator const  op = build_operator(P, Q, 6, 5, RowSelection::UniformRandom, 3);
  ComplexImage       X = ComplexImage::Zero(P, Q);
  X(p0, q0) = 1.0;
  ComplexImage const mf = matched_filter(op, op.forward(X));
  double const       tau = 2 * std::numbers::pi;
  for (int p = 0; p < P; ++p) {
    for (int q = 0; q < Q; ++q) {
      Cx a = 0, b = 0;
      for (int k : op.phi.rows) { a += std::exp(Cx(0, tau * k * (p - p0) / P)); }
      for (int l : op.psi.rows) { b += std::exp(Cx(0, -tau * l * (q - q0) / Q)); }
      CHECK(std::abs(mf(p, q) - a * b / double(P * Q)) < 1e-12);
    }
  }
  Eigen::Index pi, qi;
  mf.cwiseAbs().maxCoeff(&pi, &qi);
  CHECK(pi == p0);
  CHECK(qi == q0);
}

TEST_CASE("soft threshold")
{
  Cx const z = soft_threshold(Cx(3, 4), 1.0);
  CHECK(std::abs(z - Cx(2.4, 3.2)) < 1e-15);
  CHECK(soft_threshold(Cx(3, 4), 0.0) == Cx(3, 4));
  CHECK(soft_threshold(Cx(0.3, 0.4), 0.5) == Cx(0, 0));
  CHECK(soft_threshold(Cx(0.3, 0.4), 0.7) == Cx(0, 0));
  CHECK(soft_threshold(Cx(0, 0), 0.0) == Cx(0, 0));

  Rng rng(5);
  for (int k = 0; k < 1000; ++k) {
    Cx const     a = 2.0 * rng.complex_normal(), b = 2.0 * rng.complex_normal();
    double const tau = rng.uniform();
    CHECK(std::abs(soft_threshold(a, tau) - soft_threshold(b, tau)) <= std::abs(a - b) + 1e-15);
  }
}

TEST_CASE("solver config validation")
{
  SparseSolverConfig c;
  c.mu = -1;
  CHECK_THROWS_AS(c.validate(false), ConfigError);
  c = {};
  c.rho = 0;
  CHECK_NOTHROW(c.validate(false));
  CHECK_THROWS_AS(c.validate(true), ConfigError);
  c = {};
  c.max_iters = 0;
  CHECK_THROWS_AS(c.validate(false), ConfigError);
  c = {};
  c.tol = 0;
  CHECK_THROWS_AS(c.validate(false), ConfigError);

  SarOperator const op = build_operator(4, 4, 4, 4, RowSelection::UniformRandom, 0);
  SparseSolverConfig bad;
  bad.rho = -1;
  CHECK_THROWS_AS(admm_l1(op, EchoData::Zero(4, 4), bad), ConfigError);
}

TEST_CASE("FISTA limits")
{
  SarOperator const  full = build_operator(8, 8, 8, 8, RowSelection::UniformRandom, 0);
  ComplexImage const X = random_image(8, 8, 3);
  EchoData const     y = full.forward(X);
  SparseSolverConfig c;
  c.mu = 0.0;
  CHECK(rel_err(fista_l1(full, y, c), matched_filter(full, y)) < 1e-6);

  Instance const in = small_instance(4);
  c.mu = 2.0 * matched_filter(in.op, in.y).cwiseAbs().maxCoeff() * 1.01;
  CHECK(fista_l1(in.op, in.y, c).norm() == 0.0);
  CHECK(admm_l1(in.op, in.y, c).norm() < 1e-9);
}

TEST_CASE("FISTA and ADMM solve the same l1 problem")
{
  for (std::uint64_t seed : {1, 2, 3}) {
    Instance const     in = small_instance(seed * 10);
    double const       mu = 0.1 * 2.0 * matched_filter(in.op, in.y).cwiseAbs().maxCoeff();
    SparseSolverConfig c;
    c.mu = mu;
    c.max_iters = 20000;
    c.tol = 1e-12;
    ComplexImage const xf = fista_l1(in.op, in.y, c);
    ComplexImage const xa = admm_l1(in.op, in.y, c);
    CHECK(rel_err(xf, xa) < 1e-3);
    CHECK(kkt_residual(in.op, in.y, xf, mu) < 1e-4);
    CHECK(kkt_residual(in.op, in.y, xa, mu) < 1e-4);
    CHECK(l1_objective(in.op, in.y, xf, mu) <= l1_objective(in.op, in.y, matched_filter(in.op, in.y), mu));
  }
}

TEST_CASE("ADMM special cases")
{
  Instance const     in = small_instance(7);
  SparseSolverConfig c;
  c.mu = 0.0;
  c.max_iters = 5000;
  c.tol = 1e-12;
  CHECK(rel_err(admm_l1(in.op, in.y, c), matched_filter(in.op, in.y)) < 1e-6);
  c.mu = 0.1;
  CHECK(admm_l1(in.op, EchoData::Zero(6, 6), c).norm() == 0.0);
  CHECK(fista_l1(in.op, EchoData::Zero(6, 6), c).norm() == 0.0);
}
