#include "sarsgs/metrics.hpp"

#include "sarsgs/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace sarsgs {

namespace {

void check_shapes(ComplexImage const &a, ComplexImage const &b)
{
  if (a.rows() != b.rows() || a.cols() != b.cols()) { throw DimensionError("images differ in shape"); }
}

void check_support(ComplexImage const &x, SupportSet const &s)
{
  if (s.mask.rows() != x.rows() || s.mask.cols() != x.cols()) { throw DimensionError("support differs in shape"); }
  if (s.degenerate()) { throw MetricError("sidelobe metrics need a non-empty target region and background"); }
}

double to_db(double ratio, double factor)
{
  if (ratio <= 0.0) { return kDbFloor; }
  return std::clamp(factor * std::log10(ratio), kDbFloor, kDbCeiling);
}

// Local means of `img` under a truncated, renormalized Gaussian window.
RealImage local_mean(RealImage const &img, std::vector<double> const &w)
{
  int const r = static_cast<int>(w.size()) / 2;
  RealImage out(img.rows(), img.cols());
  for (Eigen::Index i = 0; i < img.rows(); ++i) {
    for (Eigen::Index j = 0; j < img.cols(); ++j) {
      double acc = 0.0, norm = 0.0;
      for (int di = -r; di <= r; ++di) {
        Eigen::Index const ii = i + di;
        if (ii < 0 || ii >= img.rows()) { continue; }
        for (int dj = -r; dj <= r; ++dj) {
          Eigen::Index const jj = j + dj;
          if (jj < 0 || jj >= img.cols()) { continue; }
          double const k = w[di + r] * w[dj + r];
          acc += k * img(ii, jj);
          norm += k;
        }
      }
      out(i, j) = acc / norm;
    }
  }
  return out;
}

} // namespace

double nmse_db(ComplexImage const &truth, ComplexImage const &estimate)
{
  check_shapes(truth, estimate);
  double const energy = truth.squaredNorm();
  if (energy <= 0.0) { throw MetricError("NMSE is undefined for a zero-energy truth"); }
  return to_db((truth - estimate).squaredNorm() / energy, 10.0);
}

double psnr_db(ComplexImage const &truth, ComplexImage const &estimate)
{
  check_shapes(truth, estimate);
  RealImage const mt = truth.cwiseAbs();
  RealImage const me = estimate.cwiseAbs();
  double const    mse = (mt - me).squaredNorm() / static_cast<double>(mt.size());
  if (mse == 0.0) { return kDbCeiling; }
  double const peak = mt.maxCoeff();
  if (peak <= 0.0) { throw MetricError("PSNR is undefined for a zero-peak truth"); }
  return std::clamp(20.0 * std::log10(peak / std::sqrt(mse)), kDbFloor, kDbCeiling);
}

double ssim(ComplexImage const &truth, ComplexImage const &estimate)
{
  check_shapes(truth, estimate);
  if (truth.size() == 0) { throw MetricError("SSIM of an empty image"); }
  RealImage const x = truth.cwiseAbs();
  RealImage const y = estimate.cwiseAbs();
  double          L = x.maxCoeff();
  if (L <= 0.0) { L = 1.0; }
  double const c1 = (0.01 * L) * (0.01 * L);
  double const c2 = (0.03 * L) * (0.03 * L);

  std::vector<double> w(11);
  for (int k = 0; k < 11; ++k) { w[k] = std::exp(-0.5 * (k - 5) * (k - 5) / (1.5 * 1.5)); }

  RealImage const mx = local_mean(x, w);
  RealImage const my = local_mean(y, w);
  RealImage const sxx = local_mean(x.cwiseProduct(x), w) - mx.cwiseProduct(mx);
  RealImage const syy = local_mean(y.cwiseProduct(y), w) - my.cwiseProduct(my);
  RealImage const sxy = local_mean(x.cwiseProduct(y), w) - mx.cwiseProduct(my);
  double          total = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    double const num = (2.0 * mx(k) * my(k) + c1) * (2.0 * sxy(k) + c2);
    double const den = (mx(k) * mx(k) + my(k) * my(k) + c1) * (sxx(k) + syy(k) + c2);
    total += num / den;
  }
  return total / static_cast<double>(x.size());
}

SupportSet support_from_truth(ComplexImage const &truth, double threshold)
{
  if (!(threshold >= 0.0)) { throw ParameterError("support threshold must be non-negative"); }
  SupportSet s;
  s.mask = (truth.cwiseAbs().array() > threshold).matrix();
  if (s.inside() == 0) {
    s.warning = "support is empty (threshold at or above the peak magnitude)";
  } else if (s.outside() == 0) {
    s.warning = "support covers the whole image";
  }
  return s;
}

double mpslr_db(ComplexImage const &estimate, SupportSet const &support)
{
  check_support(estimate, support);
  double main = 0.0, side = 0.0;
  for (Eigen::Index k = 0; k < estimate.size(); ++k) {
    double const a = std::abs(estimate(k));
    if (support.mask(k)) {
      main = std::max(main, a);
    } else {
      side = std::max(side, a);
    }
  }
  if (main <= 0.0) { throw MetricError("MPSLR is undefined when the target region is zero"); }
  return to_db(side / main, 20.0);
}

double mislr_db(ComplexImage const &estimate, SupportSet const &support)
{
  check_support(estimate, support);
  double main = 0.0, side = 0.0;
  for (Eigen::Index k = 0; k < estimate.size(); ++k) { (support.mask(k) ? main : side) += std::norm(estimate(k)); }
  if (main <= 0.0) { throw MetricError("MISLR is undefined when the target region is zero"); }
  return to_db(side / main, 10.0);
}

MetricsReport evaluate(ComplexImage const &truth, ComplexImage const &estimate, SupportSet const &support)
{
  MetricsReport r;
  double const  nan = std::numeric_limits<double>::quiet_NaN();
  auto          guard = [&](double &slot, char const *name, auto &&fn) {
    try {
      slot = fn();
      if (std::abs(slot) == kDbCeiling) { r.sentinel = true; }
    } catch (MetricError const &e) {
      slot = nan;
      r.warnings.push_back(std::string(name) + ": " + e.what());
    }
  };
  guard(r.nmse_db, "nmse", [&] { return nmse_db(truth, estimate); });
  guard(r.psnr_db, "psnr", [&] { return psnr_db(truth, estimate); });
  guard(r.ssim, "ssim", [&] { return ssim(truth, estimate); });
  if (!support.warning.empty()) { r.warnings.push_back(support.warning); }
  guard(r.mpslr_db, "mpslr", [&] { return mpslr_db(estimate, support); });
  guard(r.mislr_db, "mislr", [&] { return mislr_db(estimate, support); });
  return r;
}

std::string format_number(double v)
{
  if (std::isnan(v)) { return "nan"; }
  if (std::isinf(v)) { return v > 0 ? "inf" : "-inf"; }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_csv_row(std::ostream &os, std::string const &method, std::uint64_t seed, double snr_db, int points,
                   MetricsReport const &report)
{
  os << method << ',' << seed << ',' << format_number(snr_db) << ',' << points << ',' << format_number(report.nmse_db)
     << ',' << format_number(report.psnr_db) << ',' << format_number(report.ssim) << ','
     << format_number(report.mpslr_db) << ',' << format_number(report.mislr_db) << '\n';
}

} // namespace sarsgs
