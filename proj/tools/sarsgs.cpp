// Command-line driver: simulate, reconstruct, sweep, render, metrics.

#include "sarsgs/cimg.hpp"
#include "sarsgs/error.hpp"
#include "sarsgs/experiment.hpp"
#include "sarsgs/render.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>

using namespace sarsgs;
using nlohmann::json;

namespace {

// Flags that mirror config keys. Only flags actually given override the file.
struct ConfigFlags
{
  std::string              config;
  std::vector<std::string> sets;

  std::optional<std::string>              dataset, selection, prior, prior_path, output, grid;
  std::optional<std::vector<std::string>> scene_files, snr, methods;
  std::optional<std::vector<int>>         points;
  std::optional<std::vector<double>>      mu_grid;
  std::optional<int>                      rows, cols, repeats, threads, langevin_steps, ddim_steps, dps_steps, K, K0;
  std::optional<double>                   prior_sigma, db_floor, support_threshold, lambda0, lambdaK, guidance;
  std::optional<std::uint64_t>            seed;
  bool                                    no_render = false, save_cimg = false;

  void attach(CLI::App *app, bool sweep_flags)
  {
    app->add_option("-c,--config", config, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "Override any config key, e.g. --set sgs.ddim_steps=20");
    app->add_option("--dataset", dataset, "synthetic-phase or scene-files");
    app->add_option("--scene-files", scene_files, "CIMG scenes");
    app->add_option("--rows", rows);
    app->add_option("--cols", cols);
    app->add_option("--snr", snr, "SNR list in dB (\"inf\" for noiseless)");
    app->add_option("--points", points, "Rows kept per axis");
    app->add_option("--seed", seed, "Master seed");
    app->add_option("--selection", selection, "uniform-random or decimation");
    app->add_option("--prior", prior, "gaussian, gmm or neural");
    app->add_option("--prior-sigma", prior_sigma);
    app->add_option("--prior-path", prior_path, "GMM JSON or SGSW weights");
    app->add_option("--lambda0", lambda0);
    app->add_option("--lambdaK", lambdaK);
    app->add_option("--K0", K0);
    app->add_option("--K", K);
    app->add_option("--langevin-steps", langevin_steps);
    app->add_option("--ddim-steps", ddim_steps);
    app->add_option("--grid", grid, "r grid: uniform, cosine or angle");
    app->add_option("--dps-steps", dps_steps);
    app->add_option("--guidance-scale", guidance);
    app->add_option("--mu-grid", mu_grid, "l1 weights to sweep for fista/admm");
    if (sweep_flags) {
      app->add_option("--methods", methods);
      app->add_option("--repeats", repeats);
      app->add_option("--threads", threads, "0 = all cores");
      app->add_option("-o,--output", output, "Results directory");
      app->add_option("--db-floor", db_floor);
      app->add_option("--support-threshold", support_threshold);
      app->add_flag("--no-render", no_render);
      app->add_flag("--save-cimg", save_cimg);
    }
  }

  ExperimentConfig resolve() const
  {
    json j = json::object();
    if (!config.empty()) {
      std::ifstream is(config);
      try {
        j = json::parse(is);
      } catch (json::exception const &e) {
        throw ConfigError(config + ": " + e.what());
      }
      // paths inside the file are relative to the file
      auto const base = std::filesystem::path(config).parent_path();
      auto       rebase = [&](json &v) {
        std::filesystem::path p = v.get<std::string>();
        if (p.is_relative() && !p.empty()) { v = (base / p).string(); }
      };
      if (j.contains("scene_files")) {
        for (auto &f : j["scene_files"]) { rebase(f); }
      }
      if (j.contains("prior") && j["prior"].contains("path")) { rebase(j["prior"]["path"]); }
    }
    auto put = [&](char const *key, auto const &opt) {
      if (opt) { j[key] = *opt; }
    };
    auto put_in = [&](char const *section, char const *key, auto const &opt) {
      if (opt) { j[section][key] = *opt; }
    };
    put("dataset", dataset);
    put("scene_files", scene_files);
    put("rows", rows);
    put("cols", cols);
    put("points", points);
    put("methods", methods);
    put("repeats", repeats);
    put("seed", seed);
    put("selection", selection);
    put("threads", threads);
    put("output", output);
    put("db_floor", db_floor);
    put("support_threshold", support_threshold);
    put("mu_grid", mu_grid);
    if (snr) {
      j["snr_db"] = json::array();
      for (auto const &s : *snr) { j["snr_db"].push_back(s); }
    }
    put_in("prior", "type", prior);
    put_in("prior", "sigma", prior_sigma);
    put_in("prior", "path", prior_path);
    put_in("schedule", "lambda0", lambda0);
    put_in("schedule", "lambdaK", lambdaK);
    put_in("schedule", "K0", K0);
    put_in("schedule", "K", K);
    put_in("sgs", "langevin_steps", langevin_steps);
    put_in("sgs", "ddim_steps", ddim_steps);
    put_in("sgs", "grid", grid);
    put_in("dps", "steps", dps_steps);
    put_in("dps", "guidance_scale", guidance);
    if (no_render) { j["render"] = false; }
    if (save_cimg) { j["save_cimg"] = true; }
    for (auto const &s : sets) { apply_set(j, s); }
    return config_from_json(j);
  }

  static void apply_set(json &j, std::string const &kv)
  {
    auto const eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) { throw ConfigError("--set expects key=value, got '" + kv + "'"); }
    std::string const key = kv.substr(0, eq);
    std::string const raw = kv.substr(eq + 1);
    json              value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) { value = raw; } // bare strings need no quotes
    json       *node = &j;
    std::size_t start = 0;
    for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1) {
      node = &(*node)[key.substr(start, dot - start)];
    }
    (*node)[key.substr(start)] = value;
  }
};

void print_report(MetricsReport const &r)
{
  json out{{"nmse_db", r.nmse_db},   {"psnr_db", r.psnr_db},   {"ssim", r.ssim},
           {"mpslr_db", r.mpslr_db}, {"mislr_db", r.mislr_db}, {"sentinel", r.sentinel},
           {"warnings", r.warnings}};
  // json has no NaN; print them as null
  std::cout << out.dump(2) << '\n';
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Split Gibbs SAR imaging: simulation, reconstruction and evaluation"};
  app.require_subcommand(1);

  // simulate
  ConfigFlags sim_flags;
  std::string sim_out = "sim";
  int         sim_repeat = 0;
  auto       *sim = app.add_subcommand("simulate", "Write a scene, its echo and the operator manifest");
  sim_flags.attach(sim, false);
  sim->add_option("-o,--output", sim_out, "Output directory");
  sim->add_option("--repeat", sim_repeat, "Repeat index (selects the scene and noise draw)");

  // reconstruct
  ConfigFlags rec_flags;
  std::string rec_echo, rec_op, rec_out = "reconstruction.cimg", rec_method = "sgs-ddim", rec_truth, rec_trace;
  std::optional<double> rec_mu;
  int                   rec_snapshots = 0;
  auto *rec = app.add_subcommand("reconstruct", "Run one method on one echo");
  rec_flags.attach(rec, false);
  rec->add_option("--echo", rec_echo, "Echo CIMG")->required()->check(CLI::ExistingFile);
  rec->add_option("--operator", rec_op, "Operator manifest")->required()->check(CLI::ExistingFile);
  rec->add_option("-m,--method", rec_method, "mf, fista, admm, dps, sgs-ddim or sgs-ddpm");
  rec->add_option("--mu", rec_mu, "l1 weight (fista/admm)");
  rec->add_option("-o,--output", rec_out, "Output CIMG");
  rec->add_option("--truth", rec_truth, "Ground-truth CIMG; prints metrics")->check(CLI::ExistingFile);
  rec->add_option("--trace", rec_trace, "Directory for the outer-loop trace (SGS only)");
  rec->add_option("--snapshot-every", rec_snapshots, "Write x_k every n outer iterations to the trace");

  // sweep
  ConfigFlags sw_flags;
  auto       *sw = app.add_subcommand("sweep", "Run the full SNR x points x method x repeat grid");
  sw_flags.attach(sw, true);

  // render
  std::string ren_in, ren_out;
  double      ren_floor = -40.0;
  auto       *ren = app.add_subcommand("render", "Render a CIMG as a dB-scaled PNG");
  ren->add_option("input", ren_in)->required()->check(CLI::ExistingFile);
  ren->add_option("output", ren_out)->required();
  ren->add_option("--db-floor", ren_floor);

  // metrics
  std::string met_truth, met_est;
  double      met_thr = 0.0;
  auto       *met = app.add_subcommand("metrics", "Score a reconstruction against ground truth");
  met->add_option("truth", met_truth)->required()->check(CLI::ExistingFile);
  met->add_option("estimate", met_est)->required()->check(CLI::ExistingFile);
  met->add_option("--support-threshold", met_thr);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      ExperimentConfig const cfg = sim_flags.resolve();
      if (sim_repeat < 0) { throw ConfigError("--repeat must be non-negative"); }
      ProblemFactory const  factory(cfg);
      ProblemInstance const p = factory.make(0, 0, sim_repeat);
      std::filesystem::create_directories(sim_out);
      std::filesystem::path const dir = sim_out;
      write_cimg(dir / "scene.cimg", p.truth);
      write_cimg(dir / "echo.cimg", p.echo.echo);
      write_operator_manifest(dir / "operator.txt", p.op);
      json info{{"snr_db", std::isinf(cfg.snr_db[0]) ? json("inf") : json(cfg.snr_db[0])},
                {"points", cfg.points[0]},
                {"noise_sigma", p.echo.sigma},
                {"repeat", sim_repeat},
                {"config_hash", config_hash(cfg)}};
      std::ofstream(dir / "simulate.json") << info.dump(2) << '\n';
      std::cout << "wrote " << dir.string() << "/{scene.cimg,echo.cimg,operator.txt,simulate.json}\n";
    } else if (*rec) {
      SarOperator const op = read_operator_manifest(rec_op);
      EchoData const    y = read_cimg(rec_echo);
      ConfigFlags       f = rec_flags;
      f.rows = op.P();
      f.cols = op.Q();
      f.points = std::vector<int>{std::min(op.P(), op.Q())}; // unused here
      ExperimentConfig const cfg = f.resolve();
      Method const           m = parse_method(rec_method);
      double const mu = rec_mu ? *rec_mu : (m == Method::Admm ? cfg.admm.mu : cfg.fista.mu);
      std::unique_ptr<ScoreModel> prior;
      if (needs_prior(m)) { prior = make_prior(cfg.prior, op.P(), op.Q()); }
      std::optional<TraceWriter> trace;
      if (!rec_trace.empty()) { trace.emplace(rec_trace, rec_snapshots); }
      ComplexImage const x =
        reconstruct(m, op, y, prior.get(), cfg, mu, cfg.seed, trace ? trace->observer() : OuterObserver{});
      write_cimg(rec_out, x);
      std::cout << "wrote " << rec_out << '\n';
      if (!rec_truth.empty()) {
        ComplexImage const truth = read_cimg(rec_truth);
        print_report(evaluate(truth, x, support_from_truth(truth, cfg.support_threshold)));
      }
    } else if (*sw) {
      ExperimentConfig const cfg = sw_flags.resolve();
      ExperimentResult const r = run_experiment(cfg);
      std::cout << r.runs << " runs, " << r.failures << " failed; results in " << r.dir.string() << '\n';
    } else if (*ren) {
      GrayImage const img = render_magnitude(read_cimg(ren_in), ren_floor);
      if (!img.warning.empty()) { std::cerr << "warning: " << img.warning << '\n'; }
      write_png(ren_out, img);
    } else if (*met) {
      ComplexImage const truth = read_cimg(met_truth);
      ComplexImage const est = read_cimg(met_est);
      print_report(evaluate(truth, est, support_from_truth(truth, met_thr)));
    }
  } catch (ConfigError const &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (DivergenceError const &e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return 3;
  } catch (std::exception const &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
