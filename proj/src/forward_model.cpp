#include "sarsgs/forward_model.hpp"

#include "sarsgs/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace sarsgs {

namespace {

std::vector<int> select_rows(int n, int count, RowSelection selection, Rng &rng)
{
  std::vector<int> rows;
  if (selection == RowSelection::Decimation) {
    int const step = n / count;
    for (int i = 0; i < count; ++i) { rows.push_back(i * step); }
    return rows;
  }
  // Partial Fisher-Yates: the first `count` entries are a uniform draw without replacement.
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng.engine())]);
  }
  rows.assign(pool.begin(), pool.begin() + count);
  std::sort(rows.begin(), rows.end());
  return rows;
}

void write_rows(std::ostream &os, char const *key, std::vector<int> const &rows)
{
  os << key << ' ' << rows.size() << ':';
  for (int const r : rows) { os << ' ' << r; }
  os << '\n';
}

std::vector<int> read_rows(std::istringstream &line, std::string const &where)
{
  std::size_t count = 0;
  char        colon = 0;
  if (!(line >> count >> colon) || colon != ':') { throw FormatError(where + ": malformed row list"); }
  std::vector<int> rows(count);
  for (auto &r : rows) {
    if (!(line >> r)) { throw FormatError(where + ": row list shorter than declared"); }
  }
  return rows;
}

} // namespace

std::string to_string(RowSelection s)
{
  return s == RowSelection::Decimation ? "decimation" : "uniform-random";
}

RowSelection parse_row_selection(std::string const &s)
{
  if (s == "uniform-random") { return RowSelection::UniformRandom; }
  if (s == "decimation") { return RowSelection::Decimation; }
  throw ConfigError("unknown row selection '" + s + "' (expected uniform-random or decimation)");
}

Eigen::MatrixXd SarOperator::spectral_mask() const
{
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(P(), Q());
  for (int const r : phi.rows) {
    for (int const c : psi.rows) { mask(r, c) = 1.0; }
  }
  return mask;
}

void SarOperator::validate() const
{
  phi.validate();
  psi.validate();
}

SarOperator build_operator(int P, int Q, int n_range, int n_azimuth, RowSelection selection, std::uint64_t seed)
{
  if (P < 1 || Q < 1) { throw ConfigError("scene dimensions must be positive"); }
  if (n_range < 1 || n_range > P) {
    throw ConfigError("range sample count " + std::to_string(n_range) + " outside [1, " + std::to_string(P) + "]");
  }
  if (n_azimuth < 1 || n_azimuth > Q) {
    throw ConfigError("azimuth sample count " + std::to_string(n_azimuth) + " outside [1, " + std::to_string(Q) +
                      "]");
  }
  Rng         rng(seed);
  SarOperator op;
  op.selection = selection;
  op.seed = seed;
  op.phi.n_cols = P;
  op.phi.rows = select_rows(P, n_range, selection, rng);
  op.psi.n_cols = Q;
  op.psi.rows = select_rows(Q, n_azimuth, selection, rng);
  return op;
}

void write_operator_manifest(std::filesystem::path const &path, SarOperator const &op)
{
  op.validate();
  std::ofstream os(path, std::ios::trunc);
  if (!os) { throw IoError("cannot open " + path.string() + " for writing"); }
  os << "sarsgs-operator 1\n";
  os << "P " << op.P() << '\n';
  os << "Q " << op.Q() << '\n';
  os << "selection " << to_string(op.selection) << '\n';
  os << "seed " << op.seed << '\n';
  write_rows(os, "range_rows", op.phi.rows);
  write_rows(os, "azimuth_rows", op.psi.rows);
  if (!os) { throw IoError("write to " + path.string() + " failed"); }
}

SarOperator read_operator_manifest(std::filesystem::path const &path)
{
  std::ifstream is(path);
  if (!is) { throw IoError("cannot open " + path.string()); }
  std::string header;
  std::getline(is, header);
  if (header != "sarsgs-operator 1") { throw FormatError(path.string() + ": not an operator manifest"); }
  SarOperator op;
  bool        have_range = false, have_azimuth = false;
  int         P = 0, Q = 0;
  std::string text;
  while (std::getline(is, text)) {
    if (text.empty()) { continue; }
    std::istringstream line(text);
    std::string        key;
    line >> key;
    if (key == "P") {
      line >> P;
    } else if (key == "Q") {
      line >> Q;
    } else if (key == "selection") {
      std::string s;
      line >> s;
      op.selection = parse_row_selection(s);
    } else if (key == "seed") {
      line >> op.seed;
    } else if (key == "range_rows") {
      op.phi.rows = read_rows(line, path.string());
      have_range = true;
    } else if (key == "azimuth_rows") {
      op.psi.rows = read_rows(line, path.string());
      have_azimuth = true;
    } else {
      throw FormatError(path.string() + ": unknown key '" + key + "'");
    }
    if (line.fail()) { throw FormatError(path.string() + ": malformed line '" + text + "'"); }
  }
  if (P < 1 || Q < 1 || !have_range || !have_azimuth) {
    throw FormatError(path.string() + ": incomplete operator manifest");
  }
  op.phi.n_cols = P;
  op.psi.n_cols = Q;
  op.validate();
  return op;
}

ComplexImage synthesize_scene(RealImage const &intensity, std::uint64_t seed)
{
  for (Eigen::Index k = 0; k < intensity.size(); ++k) {
    double const v = intensity.data()[k];
    if (!(v >= 0.0 && v <= 1.0)) { throw InputError("intensity values must lie in [0, 1]"); }
  }
  Rng          rng(seed);
  ComplexImage x(intensity.rows(), intensity.cols());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    double const phase = -std::numbers::pi + 2.0 * std::numbers::pi * rng.uniform();
    x.data()[k] = std::polar(intensity.data()[k], phase);
  }
  return x;
}

SimulatedEcho simulate_echo(SarOperator const &op, ComplexImage const &x, double snr_db, std::uint64_t seed)
{
  if (!all_finite(x)) { throw InputError("scene contains non-finite values"); }
  if (std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity()) {
    throw InputError("SNR must be finite or +inf (noiseless)");
  }
  SimulatedEcho out;
  out.echo = op.forward(x);
  if (std::isinf(snr_db)) { return out; }
  double const energy = out.echo.squaredNorm();
  if (energy <= 0.0) { throw DegenerateSignalError("zero-energy echo cannot be scaled to a finite SNR"); }
  double const samples = static_cast<double>(out.echo.size());
  double const variance = energy / (samples * std::pow(10.0, snr_db / 10.0));
  out.sigma = std::sqrt(variance);
  Rng rng(seed);
  for (Eigen::Index k = 0; k < out.echo.size(); ++k) { out.echo.data()[k] += out.sigma * rng.complex_normal(); }
  return out;
}

} // namespace sarsgs
