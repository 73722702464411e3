#pragma once

#include "dpet/core.hpp"
#include "dpet/fitting.hpp"
#include "dpet/kinetics.hpp"
#include "dpet/metrics.hpp"
#include "dpet/projector.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dpet {

enum class Algorithm { mlem, map_osl, pgm_pet, icm_em, pgd };

std::string_view to_string(Algorithm a);
/// Accepts mlem, map-osl, pgm-pet, icm-em, pgd. Throws std::invalid_argument otherwise.
Algorithm parse_algorithm(std::string_view name);

struct ReconConfig {
  Algorithm algorithm = Algorithm::pgm_pet;
  int n_outer_iters = 100;
  int n_inner_image_updates = 1;
  /// Kinetic prior weight; only beta / sigma^2 matters.
  double beta = 0.0;
  /// Spread of voxel TACs around the kinetic model, kBq/mL.
  double sigma = 200.0;
  HuberSpec map_prior{0.1, 1.0};
  /// Image-space Huber prior for map-osl.
  double spatial_beta = 0.0;
  double spatial_delta = 1.0;
  /// OSL denominator floor as a fraction of the largest effective sensitivity.
  double floor_fraction = 1e-6;
  /// Kinetic fitting; max_iters is the LM budget per voxel per cycle.
  LMOptions lm{.max_iters = 10};
  /// Indirect algorithms (mlem, map-osl) fit maps every this many cycles for
  /// the history; 0 fits only after the last cycle.
  int indirect_fit_every = 0;
  /// Cycles at which image/map snapshots are kept.
  std::vector<int> checkpoints{1, 10, 25, 50, 100};

  void validate() const;
};

/// Reference data used to score each cycle.
struct GroundTruth {
  DynamicImage image;
  ParametricMaps maps;
  RoiMask roi;
  std::vector<bool> tissue;
};

struct CycleRecord {
  int cycle = 0;
  double poisson_loglik = 0.0;
  /// sum (x - f(theta))^2; NaN when no maps exist yet.
  double km_residual = 0.0;
  /// Whole-volume bias and mean per-frame ROI noise; NaN without ground truth.
  double bias_db = 0.0;
  double roi_noise = 0.0;
  double floored_fraction = 0.0;
  long lm_iterations = 0;
  long image_updates = 0;
  std::vector<TargetMetric> targets;
};

struct Snapshot {
  int cycle = 0;
  DynamicImage image;
  std::optional<ParametricMaps> maps;
};

struct ReconResult {
  DynamicImage image;
  ParametricMaps maps;
  std::vector<CycleRecord> history;
  std::vector<Snapshot> snapshots;
};

struct ReconOptions {
  const GroundTruth* truth = nullptr;
  /// Warm starts; defaults are a count-matched uniform image and box-centre maps.
  const Eigen::MatrixXd* initial_image = nullptr;
  const Eigen::MatrixXd* initial_maps = nullptr;
};

/// Poisson log-likelihood of one frame including the log(y!) term.
double poisson_log_likelihood(const SystemMatrix& a, const Eigen::Ref<const Eigen::VectorXd>& x,
                              const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& r,
                              double scale = 1.0);

/// x' = x / s * A^T (y / (scale A x + r)); voxels with s_j == 0 are left as they are.
/// Throws std::domain_error where the expected count is zero but y > 0.
Eigen::VectorXd mlem_update(const Eigen::Ref<const Eigen::VectorXd>& x, const SystemMatrix& a,
                            const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& r,
                            double scale = 1.0);

/// Gradient of the Gaussian kinetic log-density: -(x - f) / sigma^2.
Eigen::MatrixXd kinetic_prior_gradient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& f, double sigma);

/// Gradient of -sum_pairs H(x_j - x_k) over the 4-neighbourhood of a width x height frame.
Eigen::VectorXd spatial_prior_gradient(const Eigen::Ref<const Eigen::VectorXd>& frame, Index width, Index height,
                                       double delta);

struct OslDiagnostics {
  Index floored = 0;
  Index voxels = 0;
};

/// One-step-late MAP update:
///   x' = x * scale A^T(y / (scale A x + r)) / max(scale s - beta grad, eps)
/// beta == 0 is exactly mlem_update.
Eigen::VectorXd osl_penalized_update(const Eigen::Ref<const Eigen::VectorXd>& x, const SystemMatrix& a,
                                     const Eigen::Ref<const Eigen::VectorXd>& y,
                                     const Eigen::Ref<const Eigen::VectorXd>& r,
                                     const Eigen::Ref<const Eigen::VectorXd>& prior_grad, double beta, double eps,
                                     double scale = 1.0, OslDiagnostics* diag = nullptr);

/// Uniform per-frame image whose forward projection carries the measured net counts.
Eigen::MatrixXd initial_image(const SinogramSeries& y, const SystemMatrix& a);

/// Independent frame MLEM, n_outer_iters updates per frame.
ReconResult mlem_reconstruct(const SinogramSeries& y, const SystemMatrix& a, const KineticModel& model,
                             const ReconConfig& config, const ReconOptions& options = {});
/// Frame MAP-OSL with a spatial Huber prior.
ReconResult map_osl_reconstruct(const SinogramSeries& y, const SystemMatrix& a, const KineticModel& model,
                                const ReconConfig& config, const ReconOptions& options = {});
/// Alternating (ICM) maps / image updates with the kinetic prior on the image.
ReconResult pgm_pet_reconstruct(const SinogramSeries& y, const SystemMatrix& a, const KineticModel& model,
                                const ReconConfig& config, const ReconOptions& options = {});
/// Deterministic direct baseline: EM step, fit, then x := f(theta).
ReconResult icm_em_reconstruct(const SinogramSeries& y, const SystemMatrix& a, const KineticModel& model,
                               const ReconConfig& config, const ReconOptions& options = {});
/// Simultaneous single-step variant: one LM step and one penalised image update
/// per cycle, both evaluated at the previous iterate.
ReconResult pgd_reconstruct(const SinogramSeries& y, const SystemMatrix& a, const KineticModel& model,
                            const ReconConfig& config, const ReconOptions& options = {});

ReconResult reconstruct(const SinogramSeries& y, const SystemMatrix& a, const KineticModel& model,
                        const ReconConfig& config, const ReconOptions& options = {});

/// Fits maps to a whole dynamic image with `sweeps` MAP-LM sweeps from `start`.
Eigen::MatrixXd fit_maps(const Eigen::MatrixXd& tacs, Index width, Index height, const KineticModel& model,
                         const HuberSpec& prior, double sigma, const LMOptions& opts, int sweeps,
                         const Eigen::MatrixXd& start, std::vector<VoxelFit>* diagnostics = nullptr);

/// Model TACs f(theta_j) for every voxel, J x M.
Eigen::MatrixXd model_image(const Eigen::MatrixXd& maps, const KineticModel& model);

/// history.csv: cycle, poisson_loglik, km_residual, bias_db, roi_noise,
/// floored_fraction, lm_iterations, image_updates.
CsvTable history_csv(const std::vector<CycleRecord>& history);

}  // namespace dpet
