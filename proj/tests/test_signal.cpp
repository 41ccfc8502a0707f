#include "support.hpp"

#include "sarsgs/cimg.hpp"
#include "sarsgs/error.hpp"
#include "sarsgs/tensor.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>

using namespace sarsgs;
using testing::random_image;
using testing::rel_err;

TEST_CASE("derive_seed is deterministic and separates streams")
{
  CHECK(derive_seed(7, {1, 2}) == derive_seed(7, {1, 2}));
  CHECK(derive_seed(7, {1, 2}) != derive_seed(7, {2, 1}));
  CHECK(derive_seed(7, {1}) != derive_seed(8, {1}));
  Rng a(derive_seed(3, {0})), b(derive_seed(3, {0}));
  for (int k = 0; k < 10; ++k) { CHECK(a.normal() == b.normal()); }
}

TEST_CASE("complex_normal has unit total variance split evenly")
{
  Rng          rng(11);
  int const    n = 200000;
  double       re2 = 0, im2 = 0, cross = 0;
  for (int k = 0; k < n; ++k) {
    auto const z = rng.complex_normal();
    re2 += z.real() * z.real();
    im2 += z.imag() * z.imag();
    cross += z.real() * z.imag();
  }
  CHECK(re2 / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(im2 / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::abs(cross / n) < 0.01);
}

TEST_CASE("tensor arithmetic")
{
  Tensor a(2, 3, 4, 1.0), b(2, 3, 4, 2.0);
  CHECK((a + b)[5] == 3.0);
  CHECK((b - a)[0] == 1.0);
  CHECK((2.0 * b)[23] == 4.0);
  CHECK(dot(a, b) == 48.0);
  CHECK(b.squared_norm() == 96.0);
  CHECK_THROWS_AS(a += Tensor(1, 3, 4), DimensionError);
  CHECK_THROWS_AS(Tensor(-1, 1, 1), DimensionError);
  a(1, 2, 3) = 9.0;
  CHECK(a[23] == 9.0);
}

TEST_CASE("unitary_dft small cases")
{
  auto const F1 = unitary_dft(1);
  CHECK(F1.rows() == 1);
  CHECK(std::abs(F1(0, 0) - Cx(1, 0)) < 1e-15);

  auto const F2 = unitary_dft(2);
  double const s = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(F2(0, 0) - Cx(s, 0)) < 1e-15);
  CHECK(std::abs(F2(0, 1) - Cx(s, 0)) < 1e-15);
  CHECK(std::abs(F2(1, 0) - Cx(s, 0)) < 1e-15);
  CHECK(std::abs(F2(1, 1) - Cx(-s, 0)) < 1e-15);

  auto const F8 = unitary_dft(8);
  CHECK((F8.adjoint() * F8 - Eigen::MatrixXcd::Identity(8, 8)).norm() < 1e-12);
  // entry convention exp(-j2πkl/n)/√n
  Cx const expect = std::exp(Cx(0, -2.0 * std::numbers::pi * 3 * 5 / 8)) / std::sqrt(8.0);
  CHECK(std::abs(F8(3, 5) - expect) < 1e-14);

  CHECK_THROWS_AS(unitary_dft(0), DimensionError);
}

TEST_CASE("DftFactor validation")
{
  DftFactor f{4, {0, 2}};
  CHECK_NOTHROW(f.validate());
  CHECK_THROWS_AS((DftFactor{4, {0, 0}}.validate()), DimensionError);
  CHECK_THROWS_AS((DftFactor{4, {4}}.validate()), DimensionError);
  CHECK_THROWS_AS((DftFactor{2, {0, 1, 1}}.validate()), DimensionError);
  auto const d = f.dense();
  auto const F = unitary_dft(4);
  CHECK((d.row(1) - F.row(2)).norm() < 1e-15);
}

TEST_CASE("apply_forward on a basis image is an outer product of DFT columns")
{
  int const    P = 4, Q = 6;
  auto const   phi = DftFactor::full(P), psi = DftFactor::full(Q);
  ComplexImage X = ComplexImage::Zero(P, Q);
  X(1, 4) = 1.0;
  auto const Y = apply_forward(phi, psi, X);
  auto const FP = unitary_dft(P), FQ = unitary_dft(Q);
  Eigen::MatrixXcd const expect = FP.col(1) * FQ.col(4).adjoint();
  CHECK((Y - expect).norm() < 1e-14);
}

TEST_CASE("full sampling is unitary")
{
  auto const   phi = DftFactor::full(16), psi = DftFactor::full(12);
  ComplexImage X = random_image(16, 12, 5);
  CHECK(rel_err(apply_adjoint(phi, psi, apply_forward(phi, psi, X)), X) < 1e-10);
  CHECK(rel_err(apply_forward(phi, psi, apply_adjoint(phi, psi, X)), X) < 1e-10);
}

TEST_CASE("adjoint identity and energy contraction on subsampled operators")
{
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SarOperator const op = build_operator(12, 10, 7, 5, RowSelection::UniformRandom, seed);
    ComplexImage const X = random_image(12, 10, 100 + seed);
    EchoData const     Y = random_image(7, 5, 200 + seed);
    Cx const           lhs = inner(op.forward(X), Y);
    Cx const           rhs = inner(X, op.adjoint(Y));
    CHECK(std::abs(lhs - rhs) / std::abs(lhs) < 1e-10);
    CHECK(op.forward(X).norm() <= X.norm() * (1 + 1e-12));
  }
}

TEST_CASE("adjoint of zero echo is zero")
{
  SarOperator const op = build_operator(8, 8, 3, 3, RowSelection::UniformRandom, 1);
  CHECK(op.adjoint(EchoData::Zero(3, 3)).norm() == 0.0);
}

TEST_CASE("A^H A is the orthogonal projector onto the selected rows")
{
  // P = Q = 4, N = M = 2: explicit 4×16 operator and its pseudo-inverse.
  DftFactor const        phi{4, {0, 3}}, psi{4, {1, 2}};
  Eigen::MatrixXcd const A = kronecker_operator(phi, psi);
  REQUIRE(A.rows() == 4);
  REQUIRE(A.cols() == 16);
  Eigen::MatrixXcd const pinv = A.completeOrthogonalDecomposition().pseudoInverse();
  Eigen::MatrixXcd const proj = pinv * A;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ComplexImage const X = random_image(4, 4, seed);
    ComplexImage const got = apply_adjoint(phi, psi, apply_forward(phi, psi, X));
    ComplexImage const expect = unvec(proj * vec(X), 4, 4);
    CHECK((got - expect).norm() < 1e-12);
  }
}

TEST_CASE("apply_forward matches the dense Kronecker operator")
{
  DftFactor const        phi{4, {0, 1, 3}}, psi{4, {2, 0}};
  Eigen::MatrixXcd const A = kronecker_operator(phi, psi);
  // conj(Ψ) ⊗ Φ built independently from the dense factors
  Eigen::MatrixXcd const Phi = phi.dense(), Psi = psi.dense();
  Eigen::MatrixXcd       K(Psi.rows() * Phi.rows(), Psi.cols() * Phi.cols());
  for (Eigen::Index a = 0; a < Psi.rows(); ++a) {
    for (Eigen::Index b = 0; b < Psi.cols(); ++b) {
      K.block(a * Phi.rows(), b * Phi.cols(), Phi.rows(), Phi.cols()) = std::conj(Psi(a, b)) * Phi;
    }
  }
  CHECK((A - K).norm() < 1e-12);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ComplexImage const X = random_image(4, 4, seed);
    EchoData const     Y = apply_forward(phi, psi, X);
    CHECK((Y - unvec(K * vec(X), 3, 2)).norm() < 1e-12);
  }
  CHECK_THROWS_AS(kronecker_operator(DftFactor::full(65), DftFactor::full(64)), DimensionError);
}

TEST_CASE("dimension mismatches are rejected")
{
  auto const phi = DftFactor::full(4), psi = DftFactor::full(5);
  CHECK_THROWS_AS(apply_forward(phi, psi, ComplexImage::Zero(5, 4)), DimensionError);
  CHECK_THROWS_AS(apply_adjoint(phi, psi, EchoData::Zero(4, 4)), DimensionError);
}

TEST_CASE("vec and unvec")
{
  ComplexImage one(1, 1);
  one(0, 0) = Cx(2, 3);
  CHECK(vec(one).size() == 1);

  ComplexImage const X = random_image(3, 5, 9);
  ComplexVector const v = vec(X);
  CHECK(v(1) == X(1, 0)); // column-major
  CHECK(v(3) == X(0, 1));
  CHECK(unvec(v, 3, 5) == X);
  CHECK_THROWS_AS(unvec(v, 4, 4), DimensionError);
}

TEST_CASE("two-channel conversion")
{
  ComplexImage j(1, 1);
  j(0, 0) = Cx(0, 1);
  Tensor const t = to_two_channel(j);
  CHECK(t.channels() == 2);
  CHECK(t(0, 0, 0) == 0.0);
  CHECK(t(1, 0, 0) == 1.0);

  ComplexImage const X = random_image(4, 7, 3);
  CHECK(from_two_channel(to_two_channel(X)) == X);

  ComplexImage const R = X.real().cast<Cx>();
  Tensor const       tr = to_two_channel(R);
  for (int i = 0; i < 4; ++i) {
    for (int k = 0; k < 7; ++k) { CHECK(tr(1, i, k) == 0.0); }
  }
  CHECK_THROWS_AS(from_two_channel(Tensor(3, 2, 2)), DimensionError);
}

TEST_CASE("CIMG round trip and byte layout")
{
  auto const dir = testing::scratch_dir("cimg");
  ComplexImage X(1, 2);
  X(0, 0) = Cx(1.5, -2.0);
  X(0, 1) = Cx(0.25, 4.0);
  write_cimg(dir / "a.cimg", X);
  std::string const bytes = testing::slurp(dir / "a.cimg");
  REQUIRE(bytes.size() == 16 + 2 * 8);
  CHECK(bytes.substr(0, 4) == "CIMG");
  auto u32 = [&](std::size_t off) {
    return std::uint32_t(std::uint8_t(bytes[off])) | std::uint32_t(std::uint8_t(bytes[off + 1])) << 8 |
           std::uint32_t(std::uint8_t(bytes[off + 2])) << 16 | std::uint32_t(std::uint8_t(bytes[off + 3])) << 24;
  };
  CHECK(u32(4) == 1);
  CHECK(u32(8) == 1);
  CHECK(u32(12) == 2);
  auto f32 = [&](std::size_t off) {
    std::uint32_t const bits = u32(off);
    float               f;
    std::memcpy(&f, &bits, 4);
    return f;
  };
  CHECK(f32(16) == 1.5f);
  CHECK(f32(20) == -2.0f);
  CHECK(f32(24) == 0.25f);
  CHECK(f32(28) == 4.0f);
  CHECK(read_cimg(dir / "a.cimg") == X);

  ComplexImage const big = random_image(9, 4, 1);
  write_cimg(dir / "b.cimg", big);
  CHECK(rel_err(read_cimg(dir / "b.cimg"), big) < 1e-7);
}

TEST_CASE("CIMG rejects corrupt files")
{
  auto const dir = testing::scratch_dir("cimg_bad");
  write_cimg(dir / "ok.cimg", random_image(3, 3, 2));
  std::string bytes = testing::slurp(dir / "ok.cimg");

  auto put = [&](std::string const &name, std::string const &content) {
    std::ofstream(dir / name, std::ios::binary) << content;
    return dir / name;
  };
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(read_cimg(put("magic.cimg", magic)), FormatError);
  std::string version = bytes;
  version[4] = 7;
  CHECK_THROWS_AS(read_cimg(put("version.cimg", version)), FormatError);
  CHECK_THROWS_AS(read_cimg(put("short.cimg", bytes.substr(0, bytes.size() - 3))), IoError);
  CHECK_THROWS_AS(read_cimg(put("head.cimg", bytes.substr(0, 6))), IoError);
  CHECK_THROWS_AS(read_cimg(dir / "missing.cimg"), IoError);
}
