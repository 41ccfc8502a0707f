#pragma once

#include "sarsgs/signal.hpp"

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace sarsgs {

// Values reported in place of ±∞ dB so that CSV outputs stay finite.
inline constexpr double kDbFloor = -300.0;
inline constexpr double kDbCeiling = 300.0;

/// 10·log10(‖X - X̂‖²/‖X‖²). Throws MetricError for a zero-energy truth.
double nmse_db(ComplexImage const &truth, ComplexImage const &estimate);

/// 20·log10(max|X| / RMSE(|X|, |X̂|)).
double psnr_db(ComplexImage const &truth, ComplexImage const &estimate);

/// Mean local SSIM of the magnitude images: 11×11 Gaussian window (σ = 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range L = max|X|. Near the border the window
/// is truncated and renormalized, so images of any size are accepted.
double ssim(ComplexImage const &truth, ComplexImage const &estimate);

/// Target region Λ (true entries).
struct SupportSet
{
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask;
  std::string                                         warning; // non-empty when Λ or its complement is empty

  Eigen::Index inside() const { return mask.count(); }
  Eigen::Index outside() const { return mask.size() - mask.count(); }
  bool         degenerate() const { return inside() == 0 || outside() == 0; }
};

/// Λ = {|X| > threshold}.
SupportSet support_from_truth(ComplexImage const &truth, double threshold);

/// 20·log10(max_{Λᶜ}|X̂| / max_Λ|X̂|) (side over main, so lower is better).
double mpslr_db(ComplexImage const &estimate, SupportSet const &support);

/// 10·log10(Σ_{Λᶜ}|X̂|² / Σ_Λ|X̂|²).
double mislr_db(ComplexImage const &estimate, SupportSet const &support);

struct MetricsReport
{
  double                   nmse_db = 0.0;
  double                   psnr_db = 0.0;
  double                   ssim = 0.0;
  double                   mpslr_db = 0.0;
  double                   mislr_db = 0.0;
  std::uint64_t            seed = 0;
  std::string              config_hash;
  bool                     sentinel = false; // some value was clamped to ±300 dB
  std::vector<std::string> warnings;
};

/// All five metrics. A metric that is undefined for this input is reported as
/// NaN with a warning instead of throwing.
MetricsReport evaluate(ComplexImage const &truth, ComplexImage const &estimate, SupportSet const &support);

/// Fixed CSV layout shared by every report writer.
inline constexpr char const *kRunsCsvHeader = "method,seed,snr_db,points,nmse_db,psnr_db,ssim,mpslr_db,mislr_db";

/// Number formatting used in every CSV: NaN as "nan", infinities as "inf"/"-inf".
std::string format_number(double v);

void write_csv_row(std::ostream &os, std::string const &method, std::uint64_t seed, double snr_db, int points,
                   MetricsReport const &report);

} // namespace sarsgs
