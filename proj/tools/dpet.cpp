// dpet: simulate, reconstruct and fit dynamic PET data from one TOML config.

#include "dpet/config.hpp"
#include "dpet/io.hpp"
#include "dpet/metrics.hpp"
#include "dpet/parallel.hpp"
#include "dpet/recon.hpp"
#include "dpet/simulate.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace dpet;

namespace {

// Bad user input; exits with status 1.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

struct Setup {
  RunConfig cfg;
  fs::path out;
};

Setup setup(const Common& c) {
  Setup s{load_run_config(c.config), {}};
  if (!c.out.empty()) s.cfg.output_dir = c.out;
  if (c.seed) s.cfg.simulation.seed = *c.seed;
  if (c.threads) s.cfg.threads = *c.threads;
  if (s.cfg.threads < 0) throw ValidationError("--threads must be >= 0");
  set_num_threads(s.cfg.threads);
  s.out = s.cfg.output_dir;
  fs::create_directories(s.out);
  return s;
}

void write_manifest(const Setup& s, const std::string& command, const nlohmann::json& extra = {}) {
  nlohmann::json m{{"tool", "dpet"}, {"version", DPET_VERSION}, {"command", command}, {"config", to_json(s.cfg)}};
  if (!extra.is_null()) m["results"] = extra;
  std::ofstream os(s.out / "run-manifest.json", std::ios::binary);
  os << m.dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write " + (s.out / "run-manifest.json").string());
}

std::string checkpoint_name(const std::string& stem, int cycle) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d.dpt", stem.c_str(), cycle);
  return buf;
}

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError(std::string("bad ") + what + " entry '" + item + "'");
    }
  }
  return out;
}

std::vector<int> parse_checkpoints(const std::string& text) {
  std::vector<int> out;
  for (double v : parse_list(text, "checkpoint")) {
    if (v < 1 || v != std::floor(v)) throw ValidationError("checkpoints must be positive integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

struct Problem {
  SystemMatrix a;
  Phantom phantom;
  KineticModel model;
};

Problem build_problem(const RunConfig& cfg) {
  return {load_or_build_system_matrix(cfg.geometry, cfg.cache_dir()),
          build_phantom(cfg.geometry.width, cfg.geometry.height, cfg.regions),
          KineticModel(cfg.input, cfg.schedule)};
}

GroundTruth make_truth(const Problem& p) {
  return {synthesize_dynamic_image(p.phantom, p.model), p.phantom.maps(), p.phantom.gm_roi(), p.phantom.tissue_mask()};
}

void check_schedule(const FrameSchedule& data, const FrameSchedule& cfg, const std::string& what) {
  if (data == cfg) return;
  throw ValidationError("schedule mismatch: " + what + " has " + std::to_string(data.size()) +
                        " frames that differ from the config schedule (" + std::to_string(cfg.size()) + " frames)");
}

RunHistory run_history(const ReconResult& r, const std::string& algorithm, double beta) {
  RunHistory h{algorithm, beta, {}};
  for (const auto& c : r.history)
    if (!c.targets.empty()) h.iterations.push_back({c.cycle, c.targets});
  return h;
}

// ---- subcommands ----

int cmd_simulate(const Common& c) {
  Setup s = setup(c);
  const Problem p = build_problem(s.cfg);
  const DynamicImage truth = synthesize_dynamic_image(p.phantom, p.model);
  const SinogramSeries sino = simulate_sinograms(truth, p.a, s.cfg.simulation.total_counts,
                                                 s.cfg.simulation.background_fraction, s.cfg.simulation.seed);
  write_dpt(s.out / "truth.dpt", truth);
  write_dpt(s.out / "sinogram.dpt", sino);
  write_pgm(s.out / "phantom.pgm", p.phantom.width(), p.phantom.height(), p.phantom.preview());
  write_csv(s.out / "tacs.csv", region_tacs_csv(p.phantom, p.model));
  write_manifest(s, "simulate", {{"total_counts", sino.counts().sum()}});
  std::cout << "simulate: " << static_cast<long long>(sino.counts().sum()) << " counts in " << sino.n_frames()
            << " frames -> " << s.out.string() << '\n';
  return 0;
}

struct ReconArgs {
  std::string sinogram;
  std::string algorithm;
  std::optional<double> beta;
  std::string checkpoints;
  bool no_truth = false;
};

void apply_recon_args(RunConfig& cfg, const ReconArgs& r) {
  if (!r.algorithm.empty()) {
    try {
      cfg.recon.algorithm = parse_algorithm(r.algorithm);
    } catch (const std::invalid_argument& e) {
      throw ValidationError(e.what());
    }
  }
  if (r.beta) cfg.recon.beta = *r.beta;
  if (!r.checkpoints.empty()) cfg.recon.checkpoints = parse_checkpoints(r.checkpoints);
  cfg.recon.validate();
}

SinogramSeries load_sinogram(const RunConfig& cfg, const std::string& explicit_path) {
  const fs::path path = explicit_path.empty() ? cfg.output_dir / "sinogram.dpt" : fs::path(explicit_path);
  if (!fs::exists(path)) throw std::runtime_error("missing input: " + path.string());
  SinogramSeries y = read_sinogram_dpt(path);
  check_schedule(y.schedule(), cfg.schedule, path.string());
  if (y.n_bins() != cfg.geometry.n_bins())
    throw ValidationError("sinogram " + path.string() + " has " + std::to_string(y.n_bins()) +
                          " bins, config geometry has " + std::to_string(cfg.geometry.n_bins()));
  return y;
}

int cmd_recon(const Common& c, const ReconArgs& r) {
  Setup s = setup(c);
  const fs::path data_dir = load_run_config(c.config).output_dir;
  apply_recon_args(s.cfg, r);
  RunConfig input_cfg = s.cfg;
  input_cfg.output_dir = data_dir;
  const SinogramSeries y = load_sinogram(input_cfg, r.sinogram);
  const Problem p = build_problem(s.cfg);
  std::optional<GroundTruth> truth;
  if (!r.no_truth) truth = make_truth(p);
  ReconOptions opts;
  if (truth) opts.truth = &*truth;

  const ReconResult res = reconstruct(y, p.a, p.model, s.cfg.recon, opts);
  write_csv(s.out / "history.csv", history_csv(res.history));
  for (const auto& snap : res.snapshots) {
    write_dpt(s.out / checkpoint_name("image", snap.cycle), snap.image);
    if (snap.maps) write_dpt(s.out / checkpoint_name("maps", snap.cycle), *snap.maps);
  }
  write_dpt(s.out / "image.dpt", res.image);
  write_dpt(s.out / "maps.dpt", res.maps);
  const std::string algo(to_string(s.cfg.recon.algorithm));
  if (truth) write_csv(s.out / "metrics.csv", to_csv(tradeoff_table({run_history(res, algo, s.cfg.recon.beta)})));
  nlohmann::json results{{"cycles", res.history.size()}};
  if (!res.history.empty()) {
    results["final_loglik"] = res.history.back().poisson_loglik;
    if (truth) results["final_bias_db"] = res.history.back().bias_db;
  }
  write_manifest(s, "recon", results);
  std::cout << "recon: " << algo << " beta=" << s.cfg.recon.beta << ", " << res.history.size() << " cycles -> "
            << s.out.string() << '\n';
  return 0;
}

int cmd_sweep(const Common& c, ReconArgs r, const std::string& betas_text) {
  const std::vector<double> betas = parse_list(betas_text, "beta");
  if (betas.empty()) throw ValidationError("sweep-beta: empty beta list");
  std::set<double> seen;
  for (double b : betas) {
    if (!seen.insert(b).second) throw ValidationError("sweep-beta: duplicate beta value " + format_double(b));
    if (!(b >= 0.0)) throw ValidationError("sweep-beta: beta must be >= 0");
  }
  Setup s = setup(c);
  const fs::path data_dir = load_run_config(c.config).output_dir;
  r.algorithm = r.algorithm.empty() ? "pgm-pet" : r.algorithm;
  apply_recon_args(s.cfg, r);
  RunConfig input_cfg = s.cfg;
  input_cfg.output_dir = data_dir;
  const SinogramSeries y = load_sinogram(input_cfg, r.sinogram);
  const Problem p = build_problem(s.cfg);
  const GroundTruth truth = make_truth(p);
  ReconOptions opts;
  opts.truth = &truth;

  std::vector<RunHistory> runs;
  const std::string algo(to_string(s.cfg.recon.algorithm));
  for (double b : betas) {
    ReconConfig rc = s.cfg.recon;
    rc.beta = b;
    const ReconResult res = reconstruct(y, p.a, p.model, rc, opts);
    write_csv(s.out / ("history_beta_" + format_double(b) + ".csv"), history_csv(res.history));
    runs.push_back(run_history(res, algo, b));
    std::cout << "sweep-beta: beta=" << b << " final bias " << res.history.back().bias_db << " dB\n";
  }
  write_csv(s.out / "tradeoff.csv", to_csv(tradeoff_table(runs)));
  write_manifest(s, "sweep-beta", {{"betas", betas}});
  return 0;
}

int cmd_fit(const Common& c, const std::string& image_path, std::optional<double> gamma) {
  Setup s = setup(c);
  if (gamma) s.cfg.fit.prior.gamma = *gamma;
  s.cfg.fit.prior.validate();
  if (!fs::exists(image_path)) throw std::runtime_error("missing input: " + image_path);
  const DynamicImage image = read_image_dpt(image_path);
  check_schedule(image.schedule(), s.cfg.schedule, image_path);
  const KineticModel model(s.cfg.input, s.cfg.schedule);
  LMOptions lm = s.cfg.recon.lm;
  lm.max_iters = s.cfg.fit.max_iters;
  const Eigen::MatrixXd start = lm.box.center().transpose().replicate(image.n_voxels(), 1);
  const ParametricMaps maps(image.width(), image.height(),
                            fit_maps(image.values(), image.width(), image.height(), model, s.cfg.fit.prior,
                                     s.cfg.recon.sigma, lm, s.cfg.fit.sweeps, start));
  write_dpt(s.out / "maps.dpt", maps);
  for (int p = 0; p < kNumParams; ++p)
    write_map_csv(s.out / (std::string(kParamNames[static_cast<std::size_t>(p)]) + ".csv"), maps.width(),
                  maps.height(), maps.values().col(p));
  write_map_csv(s.out / "Ki.csv", maps.width(), maps.height(), maps.ki_map());
  write_manifest(s, "fit", {{"image", image_path}});
  std::cout << "fit: " << image.n_voxels() << " voxels -> " << s.out.string() << '\n';
  return 0;
}

int cmd_metrics(const Common& c, const std::string& image_path, const std::string& maps_path,
                const std::string& label, double beta, int iteration) {
  Setup s = setup(c);
  const Problem p = build_problem(s.cfg);
  const GroundTruth truth = make_truth(p);
  std::vector<TargetMetric> targets;
  if (!image_path.empty()) {
    if (!fs::exists(image_path)) throw std::runtime_error("missing input: " + image_path);
    const DynamicImage img = read_image_dpt(image_path);
    check_schedule(img.schedule(), s.cfg.schedule, image_path);
    if (img.n_voxels() != truth.image.n_voxels()) throw ValidationError("image grid does not match the config");
    targets = evaluate_image(img.values(), truth.image, truth.roi);
  }
  if (!maps_path.empty()) {
    if (!fs::exists(maps_path)) throw std::runtime_error("missing input: " + maps_path);
    const ParametricMaps maps = read_maps_dpt(maps_path);
    if (maps.n_voxels() != truth.maps.n_voxels()) throw ValidationError("maps grid does not match the config");
    const auto m = evaluate_maps(maps.values(), truth.maps, truth.roi, truth.tissue);
    targets.insert(targets.end(), m.begin(), m.end());
  }
  if (targets.empty()) throw ValidationError("metrics: give --image and/or --maps");
  const RunHistory run{label, beta, {{iteration, targets}}};
  write_csv(s.out / "metrics.csv", to_csv(tradeoff_table({run})));
  write_manifest(s, "metrics");
  for (const auto& t : targets) std::cout << t.target << " bias " << t.bias_db << " dB, noise " << t.noise << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dpet: dynamic PET simulation, reconstruction and kinetic fitting"};
  app.set_version_flag("--version", std::string(DPET_VERSION));
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Run config (TOML, or a run-manifest.json)")->required();
    sub->add_option("--out", common.out, "Output directory (overrides output_dir)");
    sub->add_option("--seed", common.seed, "Simulation seed");
    sub->add_option("--threads", common.threads, "Worker threads, 0 = all cores");
  };
  ReconArgs recon;
  auto add_recon = [&](CLI::App* sub) {
    sub->add_option("--sinogram", recon.sinogram, "Input sinogram (default <output_dir>/sinogram.dpt)");
    sub->add_option("--checkpoints", recon.checkpoints, "Snapshot cycles, e.g. 10,50,100");
    sub->add_flag("--no-truth", recon.no_truth, "Skip ground-truth metrics");
  };

  auto* sim = app.add_subcommand("simulate", "Simulate phantom, truth image and Poisson sinograms");
  add_common(sim);

  auto* rec = app.add_subcommand("recon", "Reconstruct a dynamic image and parametric maps");
  add_common(rec);
  add_recon(rec);
  rec->add_option("--algorithm", recon.algorithm, "mlem | map-osl | pgm-pet | icm-em | pgd");
  rec->add_option("--beta", recon.beta, "Kinetic prior weight");

  std::string betas;
  auto* sweep = app.add_subcommand("sweep-beta", "Run pgm-pet over several beta values");
  add_common(sweep);
  add_recon(sweep);
  sweep->add_option("--betas", betas, "Comma-separated beta list")->required();
  sweep->add_option("--algorithm", recon.algorithm, "Penalised algorithm (default pgm-pet)");

  std::string image_path, maps_path;
  std::optional<double> gamma;
  auto* fit = app.add_subcommand("fit", "Fit kinetic maps to a reconstructed dynamic image");
  add_common(fit);
  fit->add_option("--image", image_path, "Dynamic image .dpt")->required();
  fit->add_option("--gamma", gamma, "Map smoothness weight, 0 = independent voxels");

  std::string label = "external";
  double metric_beta = 0.0;
  int iteration = 0;
  auto* met = app.add_subcommand("metrics", "Bias and ROI noise against the config phantom");
  add_common(met);
  met->add_option("--image", image_path, "Dynamic image .dpt");
  met->add_option("--maps", maps_path, "Parametric maps .dpt");
  met->add_option("--label", label, "Algorithm label for the table");
  met->add_option("--beta", metric_beta, "Beta recorded in the table");
  met->add_option("--iteration", iteration, "Iteration recorded in the table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*sim) return cmd_simulate(common);
    if (*rec) return cmd_recon(common, recon);
    if (*sweep) return cmd_sweep(common, recon, betas);
    if (*fit) return cmd_fit(common, image_path, gamma);
    if (*met) return cmd_metrics(common, image_path, maps_path, label, metric_beta, iteration);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
