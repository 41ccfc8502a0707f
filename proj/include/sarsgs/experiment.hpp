#pragma once

#include "sarsgs/baselines.hpp"
#include "sarsgs/forward_model.hpp"
#include "sarsgs/metrics.hpp"
#include "sarsgs/priors.hpp"
#include "sarsgs/samplers.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace sarsgs {

enum class Method
{
  Mf,
  Fista,
  Admm,
  Dps,
  SgsDdim,
  SgsDdpm
};

std::string to_string(Method m);
Method      parse_method(std::string const &s); // ConfigError on unknown names
bool        needs_prior(Method m);
bool        uses_mu(Method m);

struct PriorSpec
{
  std::string           type = "gaussian"; // gaussian | gmm | neural
  double                sigma = 1.0;       // gaussian only
  std::filesystem::path path;              // gmm JSON or SGSW weights
};

struct ExperimentConfig
{
  std::string                        dataset = "synthetic-phase"; // or scene-files
  std::vector<std::filesystem::path> scene_files;
  int                                rows = 32;
  int                                cols = 32;
  std::vector<double>                snr_db{-5, -3, -2, 0, 2, 3, 5};
  std::vector<int>                   points{12, 16, 20, 24, 28, 32}; // rows kept on each axis
  std::vector<Method>                methods{Method::Mf, Method::Fista, Method::Admm,
                                             Method::Dps, Method::SgsDdim, Method::SgsDdpm};
  int                                repeats = 20;
  std::uint64_t                      seed = 0;
  RowSelection                       selection = RowSelection::UniformRandom;
  PriorSpec                          prior;
  AnnealingSchedule                  schedule;
  SgsConfig                          sgs;
  DpsConfig                          dps;
  SparseSolverConfig                 fista;
  SparseSolverConfig                 admm;
  std::vector<double>                mu_grid; // empty: use fista.mu / admm.mu as given
  double                             support_threshold = 0.0;
  bool                               render = true;
  double                             db_floor = -40.0;
  bool                               save_cimg = false;
  int                                threads = 0;
  std::filesystem::path              output = "results";

  /// Throws ConfigError. Does not touch the filesystem.
  void validate() const;
};

/// Missing keys keep their defaults; unknown keys are rejected. SNR entries
/// may be numbers or "inf" / "noiseless".
ExperimentConfig config_from_json(nlohmann::json const &j);
nlohmann::json   to_json(ExperimentConfig const &cfg);
ExperimentConfig load_config(std::filesystem::path const &path);

/// Hex FNV-1a of the resolved config.
std::string config_hash(ExperimentConfig const &cfg);

/// Builds the configured prior, checking it against the scene size.
/// Every failure surfaces as ConfigError.
std::unique_ptr<ScoreModel> make_prior(PriorSpec const &spec, int rows, int cols);

/// Handwriting-like stroke intensity in [0, 1]: a few thick line segments on
/// a zero background. Stands in for digit images when no dataset is given.
RealImage pattern_intensity(int rows, int cols, std::uint64_t seed);

struct ProblemInstance
{
  ComplexImage  truth;
  SarOperator   op;
  SimulatedEcho echo;
};

/// Scenes depend on the repeat only, operators on (points, repeat), noise on
/// (snr, points, repeat), so every method in a cell sees the same problem.
class ProblemFactory
{
public:
  /// Reads scene files up front; a missing or malformed file is a ConfigError.
  explicit ProblemFactory(ExperimentConfig const &cfg);

  ComplexImage    scene(int repeat) const;
  ProblemInstance make(int snr_index, int points_index, int repeat) const;

private:
  ExperimentConfig const   &cfg_;
  std::vector<ComplexImage> files_;
};

std::uint64_t run_seed(std::uint64_t master, int snr_index, int points_index, Method m, int repeat);

/// One reconstruction. `prior` may be null for methods that do not use it;
/// `mu` is the ℓ1 weight for fista/admm. `observer` is forwarded to SGS.
ComplexImage reconstruct(Method m, SarOperator const &op, EchoData const &y, ScoreModel const *prior,
                         ExperimentConfig const &cfg, double mu, std::uint64_t seed,
                         OuterObserver const &observer = {});

struct ExperimentResult
{
  std::filesystem::path dir;
  int                   runs = 0;
  int                   failures = 0;
};

/// Full sweep. Writes runs.csv, summary.csv, mu_selection.csv (when a μ grid
/// is set), config_resolved.json, manifest.json, renders/ and cimg/.
ExperimentResult run_experiment(ExperimentConfig const &cfg);

inline constexpr char const *kSummaryCsvHeader =
  "method,snr_db,points,runs,failures,sentinels,nmse_db,psnr_db,ssim,mpslr_db,mislr_db";

} // namespace sarsgs
