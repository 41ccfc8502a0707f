#include "sarsgs/experiment.hpp"

#include "sarsgs/cimg.hpp"
#include "sarsgs/error.hpp"
#include "sarsgs/render.hpp"
#include "sarsgs/unet.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace sarsgs {

using nlohmann::json;

namespace {

// Stream tags for the problem-instance seeds. Large enough never to coincide
// with a snr index in the leading position of run_seed.
constexpr std::uint64_t kSceneStream = 0x5ce0000001ull;
constexpr std::uint64_t kPhaseStream = 0x5ce0000002ull;
constexpr std::uint64_t kOperatorStream = 0x5ce0000003ull;
constexpr std::uint64_t kNoiseStream = 0x5ce0000004ull;

constexpr Method kAllMethods[] = {Method::Mf,  Method::Fista,   Method::Admm,
                                  Method::Dps, Method::SgsDdim, Method::SgsDdpm};

void reject_unknown(json const &j, std::set<std::string> const &known, std::string const &where)
{
  if (!j.is_object()) { throw ConfigError(where + " must be a JSON object"); }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) { throw ConfigError("unknown key '" + it.key() + "' in " + where); }
  }
}

template <class T> void read(json const &j, char const *key, T &out)
{
  if (j.contains(key)) { out = j.at(key).get<T>(); }
}

double parse_snr(json const &v)
{
  if (v.is_number()) { return v.get<double>(); }
  if (v.is_string()) {
    std::string const s = v.get<std::string>();
    if (s == "inf" || s == "noiseless") { return kNoiseless; }
    try {
      std::size_t used = 0;
      double const d = std::stod(s, &used);
      if (used == s.size()) { return d; }
    } catch (std::exception const &) {
    }
  }
  throw ConfigError("bad snr_db entry " + v.dump());
}

json snr_to_json(double s)
{
  if (std::isinf(s)) { return "inf"; }
  return s;
}

void read_solver(json const &j, SparseSolverConfig &c, bool rho, std::string const &where)
{
  std::set<std::string> keys{"mu", "max_iters", "tol"};
  if (rho) { keys.insert("rho"); }
  reject_unknown(j, keys, where);
  read(j, "mu", c.mu);
  read(j, "max_iters", c.max_iters);
  read(j, "tol", c.tol);
  if (rho) { read(j, "rho", c.rho); }
}

json solver_json(SparseSolverConfig const &c, bool rho)
{
  json j{{"mu", c.mu}, {"max_iters", c.max_iters}, {"tol", c.tol}};
  if (rho) { j["rho"] = c.rho; }
  return j;
}

template <class F> void as_config_error(F &&fn)
{
  try {
    fn();
  } catch (ConfigError const &) {
    throw;
  } catch (Error const &e) {
    throw ConfigError(e.what());
  }
}

double dist_to_segment(double y, double x, double y0, double x0, double y1, double x1)
{
  double const dy = y1 - y0, dx = x1 - x0;
  double const len2 = dy * dy + dx * dx;
  double       t = len2 > 0 ? ((y - y0) * dy + (x - x0) * dx) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(y - (y0 + t * dy), x - (x0 + t * dx));
}

enum Metric
{
  kNmse,
  kPsnr,
  kSsim,
  kMpslr,
  kMislr,
  kMetricCount
};

constexpr char const *kMetricNames[] = {"nmse_db", "psnr_db", "ssim", "mpslr_db", "mislr_db"};
constexpr bool        kLowerIsBetter[] = {true, false, false, true, true};

double metric_value(MetricsReport const &r, int m)
{
  switch (m) {
  case kNmse: return r.nmse_db;
  case kPsnr: return r.psnr_db;
  case kSsim: return r.ssim;
  case kMpslr: return r.mpslr_db;
  default: return r.mislr_db;
  }
}

void set_metric(MetricsReport &r, int m, double v)
{
  switch (m) {
  case kNmse: r.nmse_db = v; break;
  case kPsnr: r.psnr_db = v; break;
  case kSsim: r.ssim = v; break;
  case kMpslr: r.mpslr_db = v; break;
  default: r.mislr_db = v;
  }
}

struct Attempt
{
  MetricsReport report;
  bool          failed = false;
  std::string   reason;
  ComplexImage  image; // kept only when it is needed for output
};

struct Task
{
  int si, pi, mi, rep;
};

std::ofstream open_out(std::filesystem::path const &p)
{
  std::ofstream os(p, std::ios::binary);
  if (!os) { throw IoError("cannot open " + p.string() + " for writing"); }
  return os;
}

std::string snr_tag(double s) { return std::isinf(s) ? "inf" : format_number(s); }

} // namespace

std::string to_string(Method m)
{
  switch (m) {
  case Method::Mf: return "mf";
  case Method::Fista: return "fista";
  case Method::Admm: return "admm";
  case Method::Dps: return "dps";
  case Method::SgsDdim: return "sgs-ddim";
  case Method::SgsDdpm: return "sgs-ddpm";
  }
  return "?";
}

Method parse_method(std::string const &s)
{
  for (Method m : kAllMethods) {
    if (to_string(m) == s) { return m; }
  }
  throw ConfigError("unknown method '" + s + "' (expected mf, fista, admm, dps, sgs-ddim or sgs-ddpm)");
}

bool needs_prior(Method m) { return m == Method::Dps || m == Method::SgsDdim || m == Method::SgsDdpm; }
bool uses_mu(Method m) { return m == Method::Fista || m == Method::Admm; }

void ExperimentConfig::validate() const
{
  if (dataset != "synthetic-phase" && dataset != "scene-files") {
    throw ConfigError("dataset must be synthetic-phase or scene-files, got '" + dataset + "'");
  }
  if (dataset == "scene-files" && scene_files.empty()) { throw ConfigError("scene-files dataset needs scene_files"); }
  if (rows < 1 || cols < 1) { throw ConfigError("scene dimensions must be positive"); }
  if (snr_db.empty()) { throw ConfigError("snr_db list is empty"); }
  for (double s : snr_db) {
    if (std::isnan(s) || s == -std::numeric_limits<double>::infinity()) { throw ConfigError("bad snr_db entry"); }
  }
  if (points.empty()) { throw ConfigError("points list is empty"); }
  for (int p : points) {
    if (p < 1 || p > std::min(rows, cols)) {
      throw ConfigError("points entry " + std::to_string(p) + " outside [1, " + std::to_string(std::min(rows, cols)) +
                        "]");
    }
  }
  if (methods.empty()) { throw ConfigError("methods list is empty"); }
  if (std::set<Method>(methods.begin(), methods.end()).size() != methods.size()) {
    throw ConfigError("methods list has duplicates");
  }
  if (repeats < 1) { throw ConfigError("repeats must be at least 1"); }
  if (prior.type == "gaussian") {
    if (!(prior.sigma > 0.0) || !std::isfinite(prior.sigma)) { throw ConfigError("prior sigma must be positive"); }
  } else if (prior.type == "gmm" || prior.type == "neural") {
    if (prior.path.empty()) { throw ConfigError(prior.type + " prior needs a path"); }
  } else {
    throw ConfigError("unknown prior type '" + prior.type + "' (expected gaussian, gmm or neural)");
  }
  as_config_error([&] {
    schedule.validate();
    sgs.validate();
    dps.validate();
    fista.validate(false);
    admm.validate(true);
  });
  for (double mu : mu_grid) {
    if (!(mu > 0.0) || !std::isfinite(mu)) { throw ConfigError("mu_grid entries must be positive"); }
  }
  if (!(support_threshold >= 0.0)) { throw ConfigError("support_threshold must be non-negative"); }
  if (!(db_floor < 0.0)) { throw ConfigError("db_floor must be negative"); }
  if (threads < 0) { throw ConfigError("threads must be non-negative"); }
}

ExperimentConfig config_from_json(json const &j)
{
  ExperimentConfig c;
  try {
    reject_unknown(j,
                   {"dataset", "scene_files", "rows", "cols", "snr_db", "points", "methods", "repeats", "seed",
                    "selection", "prior", "schedule", "sgs", "dps", "fista", "admm", "mu_grid", "support_threshold",
                    "render", "db_floor", "save_cimg", "threads", "output"},
                   "config");
    read(j, "dataset", c.dataset);
    if (j.contains("scene_files")) {
      c.scene_files.clear();
      for (auto const &f : j.at("scene_files")) { c.scene_files.emplace_back(f.get<std::string>()); }
    }
    read(j, "rows", c.rows);
    read(j, "cols", c.cols);
    if (j.contains("snr_db")) {
      json const &s = j.at("snr_db");
      c.snr_db.clear();
      if (s.is_array()) {
        for (auto const &v : s) { c.snr_db.push_back(parse_snr(v)); }
      } else {
        c.snr_db.push_back(parse_snr(s));
      }
    }
    if (j.contains("points")) {
      json const &p = j.at("points");
      c.points = p.is_array() ? p.get<std::vector<int>>() : std::vector<int>{p.get<int>()};
    }
    if (j.contains("methods")) {
      json const &m = j.at("methods");
      c.methods.clear();
      if (m.is_array()) {
        for (auto const &v : m) { c.methods.push_back(parse_method(v.get<std::string>())); }
      } else {
        c.methods.push_back(parse_method(m.get<std::string>()));
      }
    }
    read(j, "repeats", c.repeats);
    read(j, "seed", c.seed);
    if (j.contains("selection")) { c.selection = parse_row_selection(j.at("selection").get<std::string>()); }
    if (j.contains("prior")) {
      json const &p = j.at("prior");
      reject_unknown(p, {"type", "sigma", "path"}, "prior");
      read(p, "type", c.prior.type);
      read(p, "sigma", c.prior.sigma);
      if (p.contains("path")) { c.prior.path = p.at("path").get<std::string>(); }
    }
    if (j.contains("schedule")) {
      json const &s = j.at("schedule");
      reject_unknown(s, {"lambda0", "lambdaK", "K0", "K"}, "schedule");
      read(s, "lambda0", c.schedule.lambda0);
      read(s, "lambdaK", c.schedule.lambdaK);
      read(s, "K0", c.schedule.K0);
      read(s, "K", c.schedule.K);
    }
    if (j.contains("sgs")) {
      json const &s = j.at("sgs");
      reject_unknown(s, {"langevin_steps", "ddim_steps", "kappa_cap", "kappa_scale", "grid"}, "sgs");
      read(s, "langevin_steps", c.sgs.langevin_steps);
      read(s, "ddim_steps", c.sgs.ddim_steps);
      read(s, "kappa_cap", c.sgs.kappa_cap);
      read(s, "kappa_scale", c.sgs.kappa_scale);
      if (s.contains("grid")) {
        as_config_error([&] { c.sgs.grid = parse_r_grid(s.at("grid").get<std::string>()); });
      }
    }
    if (j.contains("dps")) {
      json const &s = j.at("dps");
      reject_unknown(s, {"steps", "guidance_scale"}, "dps");
      read(s, "steps", c.dps.steps);
      read(s, "guidance_scale", c.dps.guidance_scale);
    }
    if (j.contains("fista")) { read_solver(j.at("fista"), c.fista, false, "fista"); }
    if (j.contains("admm")) { read_solver(j.at("admm"), c.admm, true, "admm"); }
    read(j, "mu_grid", c.mu_grid);
    read(j, "support_threshold", c.support_threshold);
    read(j, "render", c.render);
    read(j, "db_floor", c.db_floor);
    read(j, "save_cimg", c.save_cimg);
    read(j, "threads", c.threads);
    if (j.contains("output")) { c.output = j.at("output").get<std::string>(); }
  } catch (json::exception const &e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(ExperimentConfig const &c)
{
  json j;
  j["dataset"] = c.dataset;
  j["scene_files"] = json::array();
  for (auto const &f : c.scene_files) { j["scene_files"].push_back(f.string()); }
  j["rows"] = c.rows;
  j["cols"] = c.cols;
  j["snr_db"] = json::array();
  for (double s : c.snr_db) { j["snr_db"].push_back(snr_to_json(s)); }
  j["points"] = c.points;
  j["methods"] = json::array();
  for (Method m : c.methods) { j["methods"].push_back(to_string(m)); }
  j["repeats"] = c.repeats;
  j["seed"] = c.seed;
  j["selection"] = to_string(c.selection);
  j["prior"] = {{"type", c.prior.type}, {"sigma", c.prior.sigma}, {"path", c.prior.path.string()}};
  j["schedule"] = {{"lambda0", c.schedule.lambda0},
                   {"lambdaK", c.schedule.lambdaK},
                   {"K0", c.schedule.K0},
                   {"K", c.schedule.K}};
  j["sgs"] = {{"langevin_steps", c.sgs.langevin_steps},
              {"ddim_steps", c.sgs.ddim_steps},
              {"kappa_cap", c.sgs.kappa_cap},
              {"kappa_scale", c.sgs.kappa_scale},
              {"grid", to_string(c.sgs.grid)}};
  j["dps"] = {{"steps", c.dps.steps}, {"guidance_scale", c.dps.guidance_scale}};
  j["fista"] = solver_json(c.fista, false);
  j["admm"] = solver_json(c.admm, true);
  j["mu_grid"] = c.mu_grid;
  j["support_threshold"] = c.support_threshold;
  j["render"] = c.render;
  j["db_floor"] = c.db_floor;
  j["save_cimg"] = c.save_cimg;
  j["threads"] = c.threads;
  j["output"] = c.output.string();
  return j;
}

ExperimentConfig load_config(std::filesystem::path const &path)
{
  std::ifstream is(path);
  if (!is) { throw ConfigError("cannot read config " + path.string()); }
  json j;
  try {
    j = json::parse(is);
  } catch (json::exception const &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  ExperimentConfig c = config_from_json(j);
  // file references are relative to the config file
  auto const base = path.parent_path();
  for (auto &f : c.scene_files) {
    if (f.is_relative()) { f = base / f; }
  }
  if (!c.prior.path.empty() && c.prior.path.is_relative()) { c.prior.path = base / c.prior.path; }
  return c;
}

namespace {

// The config without threads and output, neither of which changes a result.
json result_config(ExperimentConfig const &cfg)
{
  json j = to_json(cfg);
  j.erase("threads");
  j.erase("output");
  return j;
}

} // namespace

std::string config_hash(ExperimentConfig const &cfg)
{
  std::string const s = result_config(cfg).dump();
  std::uint64_t     h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::unique_ptr<ScoreModel> make_prior(PriorSpec const &spec, int rows, int cols)
{
  if (spec.type == "gaussian") {
    if (!(spec.sigma > 0.0) || !std::isfinite(spec.sigma)) { throw ConfigError("prior sigma must be positive"); }
    return std::make_unique<GaussianPrior>(spec.sigma);
  }
  if (spec.type == "gmm") {
    try {
      auto g = std::make_unique<GmmPrior>(load_gmm(spec.path));
      Tensor const &m = g->means().front();
      if (m.channels() != 2 || m.height() != rows || m.width() != cols) {
        throw ConfigError("gmm prior " + spec.path.string() + " does not match a " + std::to_string(rows) + "x" +
                          std::to_string(cols) + " scene");
      }
      return g;
    } catch (ConfigError const &) {
      throw;
    } catch (Error const &e) {
      throw ConfigError("gmm prior " + spec.path.string() + ": " + e.what());
    }
  }
  if (spec.type == "neural") {
    try {
      auto         net = std::make_unique<NeuralDenoiser>(load_weights(spec.path));
      int const    levels = static_cast<int>(net->arch().encoder_depths.size());
      int const    factor = 1 << levels;
      if (net->arch().in_channels != 2) { throw ConfigError("neural prior must take 2 input channels"); }
      if (rows % factor != 0 || cols % factor != 0) {
        throw ConfigError("scene size " + std::to_string(rows) + "x" + std::to_string(cols) +
                          " is not divisible by " + std::to_string(factor) + " as the network requires");
      }
      return net;
    } catch (ConfigError const &) {
      throw;
    } catch (Error const &e) {
      throw ConfigError("neural prior " + spec.path.string() + ": " + e.what());
    }
  }
  throw ConfigError("unknown prior type '" + spec.type + "'");
}

RealImage pattern_intensity(int rows, int cols, std::uint64_t seed)
{
  if (rows < 1 || cols < 1) { throw DimensionError("pattern needs positive dimensions"); }
  Rng          rng(seed);
  RealImage    img = RealImage::Zero(rows, cols);
  int const    strokes = 2 + static_cast<int>(rng.uniform() * 3.0); // 2..4
  double const half_width = std::max(0.6, 0.06 * std::min(rows, cols));
  auto         coord = [&](int n) { return (0.2 + 0.6 * rng.uniform()) * (n - 1); };
  double       y = coord(rows), x = coord(cols);
  for (int s = 0; s < strokes; ++s) {
    // connected strokes, like a pen that rarely lifts
    double const y1 = coord(rows), x1 = coord(cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        double const d = dist_to_segment(i, j, y, x, y1, x1);
        img(i, j) = std::max(img(i, j), std::clamp(half_width + 0.5 - d, 0.0, 1.0));
      }
    }
    y = y1;
    x = x1;
  }
  return img;
}

ProblemFactory::ProblemFactory(ExperimentConfig const &cfg)
  : cfg_(cfg)
{
  if (cfg.dataset != "scene-files") { return; }
  for (auto const &f : cfg.scene_files) {
    ComplexImage x;
    try {
      x = read_cimg(f);
    } catch (Error const &e) {
      throw ConfigError("scene file " + f.string() + ": " + e.what());
    }
    if (x.rows() != cfg.rows || x.cols() != cfg.cols) {
      throw ConfigError("scene file " + f.string() + " is " + std::to_string(x.rows()) + "x" +
                        std::to_string(x.cols()) + ", config says " + std::to_string(cfg.rows) + "x" +
                        std::to_string(cfg.cols));
    }
    files_.push_back(std::move(x));
  }
}

ComplexImage ProblemFactory::scene(int repeat) const
{
  if (!files_.empty()) { return files_[static_cast<std::size_t>(repeat) % files_.size()]; }
  RealImage const inten = pattern_intensity(cfg_.rows, cfg_.cols, derive_seed(cfg_.seed, {kSceneStream, std::uint64_t(repeat)}));
  return synthesize_scene(inten, derive_seed(cfg_.seed, {kPhaseStream, std::uint64_t(repeat)}));
}

ProblemInstance ProblemFactory::make(int snr_index, int points_index, int repeat) const
{
  ProblemInstance p;
  p.truth = scene(repeat);
  int const n = cfg_.points.at(points_index);
  p.op = build_operator(cfg_.rows, cfg_.cols, n, n, cfg_.selection,
                        derive_seed(cfg_.seed, {kOperatorStream, std::uint64_t(points_index), std::uint64_t(repeat)}));
  p.echo = simulate_echo(
    p.op, p.truth, cfg_.snr_db.at(snr_index),
    derive_seed(cfg_.seed, {kNoiseStream, std::uint64_t(snr_index), std::uint64_t(points_index), std::uint64_t(repeat)}));
  return p;
}

std::uint64_t run_seed(std::uint64_t master, int snr_index, int points_index, Method m, int repeat)
{
  return derive_seed(master, {std::uint64_t(snr_index), std::uint64_t(points_index), std::uint64_t(m),
                              std::uint64_t(repeat)});
}

ComplexImage reconstruct(Method m, SarOperator const &op, EchoData const &y, ScoreModel const *prior,
                         ExperimentConfig const &cfg, double mu, std::uint64_t seed, OuterObserver const &observer)
{
  if (needs_prior(m) && !prior) { throw ConfigError(to_string(m) + " needs a prior"); }
  Rng          rng(seed);
  ComplexImage x;
  switch (m) {
  case Method::Mf: x = matched_filter(op, y); break;
  case Method::Fista: {
    SparseSolverConfig c = cfg.fista;
    c.mu = mu;
    x = fista_l1(op, y, c);
    break;
  }
  case Method::Admm: {
    SparseSolverConfig c = cfg.admm;
    c.mu = mu;
    x = admm_l1(op, y, c);
    break;
  }
  case Method::Dps: x = dps_run(op, y, *prior, cfg.dps, rng); break;
  case Method::SgsDdim: x = sgs_run(op, y, *prior, cfg.schedule, cfg.sgs, rng, observer); break;
  case Method::SgsDdpm: x = sgs_ddpm_run(op, y, *prior, cfg.schedule, cfg.sgs, rng, observer); break;
  }
  if (!all_finite(x)) { throw DivergenceError(to_string(m) + " produced a non-finite reconstruction"); }
  return x;
}

ExperimentResult run_experiment(ExperimentConfig const &cfg)
{
  cfg.validate();
  // resolved even when no method uses it, so a bad prior never slips through
  std::unique_ptr<ScoreModel> const prior = make_prior(cfg.prior, cfg.rows, cfg.cols);
  ProblemFactory const factory(cfg);
  std::string const    hash = config_hash(cfg);

  std::filesystem::path const dir = cfg.output;
  try {
    std::filesystem::create_directories(dir);
    if (cfg.render) { std::filesystem::create_directories(dir / "renders"); }
    if (cfg.save_cimg) { std::filesystem::create_directories(dir / "cimg"); }
  } catch (std::filesystem::filesystem_error const &e) {
    throw IoError(e.what());
  }

  int const nS = static_cast<int>(cfg.snr_db.size());
  int const nP = static_cast<int>(cfg.points.size());
  int const nM = static_cast<int>(cfg.methods.size());
  int const R = cfg.repeats;

  auto mus_for = [&](Method m) -> std::vector<double> {
    if (!uses_mu(m)) { return {std::numeric_limits<double>::quiet_NaN()}; }
    if (!cfg.mu_grid.empty()) { return cfg.mu_grid; }
    return {m == Method::Fista ? cfg.fista.mu : cfg.admm.mu};
  };

  std::vector<Task> tasks;
  for (int si = 0; si < nS; ++si) {
    for (int pi = 0; pi < nP; ++pi) {
      for (int mi = 0; mi < nM; ++mi) {
        for (int rep = 0; rep < R; ++rep) { tasks.push_back({si, pi, mi, rep}); }
      }
    }
  }
  std::vector<std::vector<Attempt>> results(tasks.size());

  auto execute = [&](std::size_t ti) {
    Task const           &t = tasks[ti];
    Method const          m = cfg.methods[t.mi];
    ProblemInstance const prob = factory.make(t.si, t.pi, t.rep);
    SupportSet const      support = support_from_truth(prob.truth, cfg.support_threshold);
    std::uint64_t const   seed = run_seed(cfg.seed, t.si, t.pi, m, t.rep);
    bool const            keep = cfg.save_cimg || (cfg.render && t.rep == 0);
    auto                 &out = results[ti];
    for (double mu : mus_for(m)) {
      Attempt a;
      try {
        ComplexImage x = reconstruct(m, prob.op, prob.echo.echo, prior.get(), cfg, mu, seed);
        a.report = evaluate(prob.truth, x, support);
        if (keep) { a.image = std::move(x); }
      } catch (DivergenceError const &e) {
        a.failed = true;
        a.reason = e.what();
        for (int k = 0; k < kMetricCount; ++k) { set_metric(a.report, k, std::numeric_limits<double>::quiet_NaN()); }
      }
      a.report.seed = seed;
      a.report.config_hash = hash;
      out.push_back(std::move(a));
    }
  };

  int threads = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, static_cast<int>(std::max<std::size_t>(tasks.size(), 1)));
  std::atomic<std::size_t>  next{0};
  std::mutex                err_mu;
  std::size_t               err_index = tasks.size();
  std::exception_ptr        err;
  auto                      worker = [&] {
    for (std::size_t ti; (ti = next.fetch_add(1)) < tasks.size();) {
      try {
        execute(ti);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (ti < err_index) {
          err_index = ti;
          err = std::current_exception();
        }
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) { pool.emplace_back(worker); }
    for (auto &th : pool) { th.join(); }
  }
  if (err) { std::rethrow_exception(err); }

  // Everything below runs on this thread, in task order.
  std::ofstream runs = open_out(dir / "runs.csv");
  std::ofstream summary = open_out(dir / "summary.csv");
  std::ofstream failures = open_out(dir / "failures.csv");
  runs << kRunsCsvHeader << '\n';
  summary << kSummaryCsvHeader << '\n';
  failures << "method,seed,snr_db,points,repeat,mu,reason\n";
  std::ofstream mu_sel;
  if (!cfg.mu_grid.empty()) {
    mu_sel = open_out(dir / "mu_selection.csv");
    mu_sel << "method,snr_db,points,metric,mu,mean\n";
  }

  std::set<std::string> warnings;
  std::vector<std::string> files{"runs.csv", "summary.csv", "failures.csv", "config_resolved.json"};
  if (!cfg.mu_grid.empty()) { files.push_back("mu_selection.csv"); }

  auto render_to = [&](std::string const &name, ComplexImage const &x) {
    GrayImage const img = render_magnitude(x, cfg.db_floor);
    if (!img.warning.empty()) { warnings.insert(name + ": " + img.warning); }
    write_png(dir / "renders" / name, img);
    files.push_back("renders/" + name);
  };
  auto save = [&](std::string const &name, ComplexImage const &x) {
    write_cimg(dir / "cimg" / name, x);
    files.push_back("cimg/" + name);
  };

  if (cfg.render) { render_to("truth_r000.png", factory.scene(0)); }
  if (cfg.save_cimg) {
    for (int rep = 0; rep < R; ++rep) {
      char name[48];
      std::snprintf(name, sizeof name, "truth_r%03d.cimg", rep);
      save(name, factory.scene(rep));
    }
  }

  ExperimentResult res;
  res.dir = dir;
  double const nan = std::numeric_limits<double>::quiet_NaN();
  std::size_t  base = 0;
  for (int si = 0; si < nS; ++si) {
    for (int pi = 0; pi < nP; ++pi) {
      for (int mi = 0; mi < nM; ++mi, base += R) {
        Method const              m = cfg.methods[mi];
        double const              snr = cfg.snr_db[si];
        int const                 pts = cfg.points[pi];
        std::vector<double> const mus = mus_for(m);
        std::string const         cell = to_string(m) + "_snr" + snr_tag(snr) + "_pts" + std::to_string(pts);

        // oracle μ per metric: best mean over the cell's repeats
        int choice[kMetricCount] = {};
        for (int k = 0; k < kMetricCount; ++k) {
          double best = nan;
          for (std::size_t u = 0; u < mus.size(); ++u) {
            double sum = 0.0;
            int    n = 0;
            for (int rep = 0; rep < R; ++rep) {
              double const v = metric_value(results[base + rep][u].report, k);
              if (!std::isnan(v)) {
                sum += v;
                ++n;
              }
            }
            if (n == 0) { continue; }
            double const mean = sum / n;
            if (std::isnan(best) || (kLowerIsBetter[k] ? mean < best : mean > best)) {
              best = mean;
              choice[k] = static_cast<int>(u);
            }
          }
          if (mu_sel.is_open() && uses_mu(m)) {
            mu_sel << to_string(m) << ',' << format_number(snr) << ',' << pts << ',' << kMetricNames[k] << ','
                   << format_number(mus[choice[k]]) << ',' << format_number(best) << '\n';
          }
        }

        int    failed = 0, sentinels = 0;
        double sum[kMetricCount] = {};
        int    count[kMetricCount] = {};
        for (int rep = 0; rep < R; ++rep) {
          auto const   &attempts = results[base + rep];
          MetricsReport row = attempts[choice[kNmse]].report;
          bool          row_failed = false;
          for (int k = 0; k < kMetricCount; ++k) {
            Attempt const &a = attempts[choice[k]];
            set_metric(row, k, metric_value(a.report, k));
            row_failed = row_failed || a.failed;
          }
          for (std::size_t u = 0; u < attempts.size(); ++u) {
            Attempt const &a = attempts[u];
            if (a.failed) {
              failures << to_string(m) << ',' << a.report.seed << ',' << format_number(snr) << ',' << pts << ','
                       << rep << ',' << format_number(mus[u]) << ',' << '"' << a.reason << '"' << '\n';
            }
            for (auto const &w : a.report.warnings) { warnings.insert(w); }
          }
          write_csv_row(runs, to_string(m), row.seed, snr, pts, row);
          ++res.runs;
          if (row_failed) {
            ++failed;
            ++res.failures;
          }
          bool sentinel = false;
          for (int k = 0; k < kMetricCount; ++k) {
            double const v = metric_value(row, k);
            if (std::abs(v) == kDbCeiling) { sentinel = true; }
            if (!std::isnan(v)) {
              sum[k] += v;
              ++count[k];
            }
          }
          sentinels += sentinel;

          Attempt const &shown = attempts[choice[kNmse]];
          if (shown.failed) { continue; }
          if (cfg.render && rep == 0) { render_to(cell + ".png", shown.image); }
          if (cfg.save_cimg) {
            char suffix[32];
            std::snprintf(suffix, sizeof suffix, "_r%03d.cimg", rep);
            save(cell + suffix, shown.image);
          }
        }
        summary << to_string(m) << ',' << format_number(snr) << ',' << pts << ',' << R << ',' << failed << ','
                << sentinels;
        for (int k = 0; k < kMetricCount; ++k) { summary << ',' << format_number(count[k] ? sum[k] / count[k] : nan); }
        summary << '\n';
      }
    }
  }

  {
    std::ofstream os = open_out(dir / "config_resolved.json");
    os << result_config(cfg).dump(2) << '\n';
  }
  files.push_back("manifest.json");
  std::sort(files.begin(), files.end());
  json manifest{{"config_hash", hash},
                {"runs", res.runs},
                {"failures", res.failures},
                {"files", files},
                {"warnings", std::vector<std::string>(warnings.begin(), warnings.end())}};
  std::ofstream os = open_out(dir / "manifest.json");
  os << manifest.dump(2) << '\n';
  if (!runs || !summary || !failures || !os) { throw IoError("failed writing results to " + dir.string()); }
  return res;
}

} // namespace sarsgs
