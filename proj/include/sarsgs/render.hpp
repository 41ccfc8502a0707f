#pragma once

#include "sarsgs/signal.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sarsgs {

struct GrayImage
{
  int                       rows = 0;
  int                       cols = 0;
  std::vector<std::uint8_t> pixels; // row-major
  std::string               warning;

  std::uint8_t operator()(int i, int j) const { return pixels[static_cast<std::size_t>(i) * cols + j]; }
};

/// 20·log10(|X|/max|X|) clipped to [db_floor, 0] and mapped linearly onto
/// 0..255, rounding down. An all-zero image renders black with a warning.
GrayImage render_magnitude(ComplexImage const &x, double db_floor = -40.0);

void write_png(std::filesystem::path const &path, GrayImage const &image);

} // namespace sarsgs
