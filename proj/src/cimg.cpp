#include "sarsgs/cimg.hpp"

#include "sarsgs/binary_io.hpp"
#include "sarsgs/error.hpp"

#include <fstream>

namespace sarsgs {

using detail::read_le;
using detail::write_le;

void write_cimg(std::filesystem::path const &path, ComplexImage const &x)
{
  if (x.rows() < 1 || x.cols() < 1) { throw DimensionError("cannot write an empty image"); }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) { throw IoError("cannot open " + path.string() + " for writing"); }
  os.write("CIMG", 4);
  write_le<std::uint32_t>(os, kCimgVersion);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(x.rows()));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(x.cols()));
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    write_le<float>(os, static_cast<float>(x.data()[k].real()));
    write_le<float>(os, static_cast<float>(x.data()[k].imag()));
  }
  if (!os) { throw IoError("write to " + path.string() + " failed"); }
}

ComplexImage read_cimg(std::filesystem::path const &path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is) { throw IoError("cannot open " + path.string()); }
  char magic[4];
  if (!is.read(magic, 4)) { throw IoError(path.string() + ": truncated header"); }
  if (std::string(magic, 4) != "CIMG") { throw FormatError(path.string() + ": bad magic, not a CIMG file"); }
  std::uint32_t version = 0, P = 0, Q = 0;
  if (!read_le(is, version) || !read_le(is, P) || !read_le(is, Q)) {
    throw IoError(path.string() + ": truncated header");
  }
  if (version != kCimgVersion) {
    throw FormatError(path.string() + ": unsupported CIMG version " + std::to_string(version));
  }
  if (P == 0 || Q == 0) { throw FormatError(path.string() + ": zero dimension"); }
  ComplexImage x(P, Q);
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    float re = 0, im = 0;
    if (!read_le(is, re) || !read_le(is, im)) { throw IoError(path.string() + ": truncated payload"); }
    x.data()[k] = Cx(re, im);
  }
  if (!all_finite(x)) { throw FormatError(path.string() + ": non-finite samples"); }
  return x;
}

} // namespace sarsgs
