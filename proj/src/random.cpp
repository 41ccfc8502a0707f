#include "sarsgs/random.hpp"

#include <cmath>

namespace sarsgs {

namespace {

std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

} // namespace

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> indices)
{
  std::uint64_t h = splitmix64(master);
  for (auto const i : indices) {
    h = splitmix64(h ^ splitmix64(i + 0x632be59bd9b4e019ULL));
  }
  return h;
}

std::complex<double> Rng::complex_normal()
{
  static double const scale = 1.0 / std::sqrt(2.0);
  double const        re = normal();
  double const        im = normal();
  return {scale * re, scale * im};
}

} // namespace sarsgs
