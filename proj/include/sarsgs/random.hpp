#pragma once

#include <complex>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace sarsgs {

/// Mixes a master seed with a list of indices into an independent stream seed
/// (splitmix64 finalizer applied per component).
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> indices);

/// Seeded random stream. Every stochastic routine takes one of these by
/// reference so that results are a pure function of the seed.
class Rng
{
public:
  explicit Rng(std::uint64_t seed)
    : engine_(seed)
  {
  }

  double normal() { return normal_(engine_); }

  /// Uniform on [0, 1).
  double uniform() { return uniform_(engine_); }

  /// Circularly symmetric CN(0, 1): real and imaginary parts each N(0, 1/2).
  std::complex<double> complex_normal();

  std::mt19937_64 &engine() { return engine_; }

private:
  std::mt19937_64                  engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

} // namespace sarsgs
