#pragma once

#include "sarsgs/forward_model.hpp"
#include "sarsgs/random.hpp"
#include "sarsgs/signal.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace testing {

using namespace sarsgs;

inline ComplexImage random_image(int P, int Q, std::uint64_t seed)
{
  Rng          rng(seed);
  ComplexImage x(P, Q);
  for (Eigen::Index k = 0; k < x.size(); ++k) { x(k) = rng.complex_normal(); }
  return x;
}

inline double rel_err(Eigen::MatrixXcd const &a, Eigen::MatrixXcd const &b) { return (a - b).norm() / b.norm(); }

inline std::filesystem::path fixture(std::string const &name) { return std::filesystem::path(SARSGS_FIXTURES) / name; }

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(std::string const &name)
{
  auto p = std::filesystem::temp_directory_path() / ("sarsgs_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(std::filesystem::path const &p)
{
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

} // namespace testing
