#pragma once

#include "dpet/core.hpp"
#include "dpet/fitting.hpp"
#include "dpet/kinetics.hpp"
#include "dpet/projector.hpp"
#include "dpet/recon.hpp"
#include "dpet/simulate.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace dpet {

/// Invalid or unreadable run configuration. The message carries file and line
/// where known.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimulationConfig {
  double total_counts = 5e6;
  double background_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct FitConfig {
  HuberSpec prior{0.1, 0.0};
  int sweeps = 5;
  int max_iters = 100;
};

struct RunConfig {
  std::filesystem::path output_dir = "out";
  /// 0 picks the hardware concurrency.
  int threads = 0;
  Geometry2D geometry;
  FrameSchedule schedule = standard_fdg_schedule();
  InputFunction input;
  RegionParams regions = default_region_params();
  SimulationConfig simulation;
  ReconConfig recon;
  FitConfig fit;
  /// System matrix cache; empty means `<output_dir>/cache`.
  std::filesystem::path matrix_cache;

  std::filesystem::path cache_dir() const { return matrix_cache.empty() ? output_dir / "cache" : matrix_cache; }
  void validate() const;
};

/// Parses TOML text. Unknown keys, wrong types and a missing simulation.seed
/// are errors. `origin` names the source in messages.
RunConfig parse_run_config(const std::string& text, const std::string& origin = "config");

/// Reads a TOML config, or the `config` object of a run-manifest.json.
RunConfig load_run_config(const std::filesystem::path& path);

/// Fully resolved config in the same key layout as the TOML file.
nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j, const std::string& origin = "config");

}  // namespace dpet
