#pragma once

#include "sarsgs/signal.hpp"

#include <filesystem>

namespace sarsgs {

// CIMG container: "CIMG", u32 version, u32 P, u32 Q, then P·Q (re, im) pairs
// of little-endian f32 in column-major order.
inline constexpr std::uint32_t kCimgVersion = 1;

void         write_cimg(std::filesystem::path const &path, ComplexImage const &x);
ComplexImage read_cimg(std::filesystem::path const &path);

} // namespace sarsgs
