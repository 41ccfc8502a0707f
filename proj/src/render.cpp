#include "sarsgs/render.hpp"

#include "sarsgs/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace sarsgs {

GrayImage render_magnitude(ComplexImage const &x, double db_floor)
{
  if (!(db_floor < 0.0)) { throw ParameterError("db_floor must be negative"); }
  GrayImage img;
  img.rows = static_cast<int>(x.rows());
  img.cols = static_cast<int>(x.cols());
  img.pixels.assign(static_cast<std::size_t>(img.rows) * img.cols, 0);
  RealImage const mag = x.cwiseAbs();
  double const    peak = mag.size() ? mag.maxCoeff() : 0.0;
  if (!(peak > 0.0)) {
    img.warning = "image is identically zero; rendered black";
    return img;
  }
  for (int i = 0; i < img.rows; ++i) {
    for (int j = 0; j < img.cols; ++j) {
      double const m = mag(i, j);
      double const db = m > 0.0 ? std::max(20.0 * std::log10(m / peak), db_floor) : db_floor;
      double const level = std::floor(255.0 * (db - db_floor) / -db_floor);
      img.pixels[static_cast<std::size_t>(i) * img.cols + j] = static_cast<std::uint8_t>(std::clamp(level, 0.0, 255.0));
    }
  }
  return img;
}

void write_png(std::filesystem::path const &path, GrayImage const &image)
{
  if (image.rows < 1 || image.cols < 1) { throw DimensionError("cannot write an empty image"); }
  std::unique_ptr<FILE, int (*)(FILE *)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) { throw IoError("cannot open " + path.string() + " for writing"); }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop   info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.cols, image.rows, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int i = 0; i < image.rows; ++i) {
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + static_cast<std::size_t>(i) * image.cols));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

} // namespace sarsgs
