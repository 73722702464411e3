#pragma once

#include "dpet/core.hpp"
#include "dpet/kinetics.hpp"

#include <cmath>
#include <vector>

namespace dpet {

/// Huber potential settings. For parametric maps `delta` is expressed as a
/// fraction of each parameter's box range; for images it is in activity units.
struct HuberSpec {
  double delta = 0.1;
  double gamma = 0.0;

  void validate() const;
};

template <class Scalar>
struct HuberValue {
  Scalar value;
  Scalar derivative;
};

/// d^2/2 inside |d| <= delta, delta (|d| - delta/2) outside.
template <class Scalar>
HuberValue<Scalar> huber(Scalar d, Scalar delta) {
  const Scalar ad = std::abs(d);
  if (ad <= delta) return {d * d / Scalar(2), d};
  return {delta * (ad - delta / Scalar(2)), d > Scalar(0) ? delta : -delta};
}

/// Admissible parameter box, [K1, k2, k3, fv].
struct ParamBox {
  Eigen::Vector4d lower{0.0, 0.0, 0.0, 0.0};
  Eigen::Vector4d upper{0.01, 0.01, 0.005, 1.0};

  Eigen::Vector4d center() const { return 0.5 * (lower + upper); }
  Eigen::Vector4d range() const { return upper - lower; }
  Eigen::Vector4d project(const Eigen::Vector4d& v) const { return v.cwiseMax(lower).cwiseMin(upper); }
  void validate() const;
};

struct LMOptions {
  int max_iters = 100;
  double lambda_init = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 0.1;
  /// Stop once an accepted step lowers the cost by less than this fraction.
  double tolerance = 1e-10;
  ParamBox box{};

  void validate() const;
};

struct FitResult {
  KineticParams params;
  double cost = 0.0;
  int iterations = 0;
  std::vector<double> accepted_costs;  // starts with the cost at init
};

/// Box-constrained Levenberg-Marquardt on sum_m (tac_m - f_m(theta))^2 with
/// Marquardt diagonal scaling and an active set for parameters held at a bound.
FitResult lm_fit(const Eigen::Ref<const Eigen::VectorXd>& tac, const KineticModel& model,
                 const KineticParams& init, const LMOptions& opts);
FitResult lm_fit(const Eigen::Ref<const Eigen::VectorXd>& tac, const FrameSchedule& schedule,
                 const InputFunction& cp, const KineticParams& init, const LMOptions& opts);

struct VoxelFit {
  int iterations = 0;
  double cost = 0.0;
};

/// Raw-matrix form of one MAP-LM sweep. `maps` is J x 4 (also the warm start and
/// the frozen neighbour snapshot), `tacs` is J x M.
Eigen::MatrixXd map_lm_sweep(const Eigen::MatrixXd& maps, const Eigen::MatrixXd& tacs, Index width,
                             Index height, const KineticModel& model, const HuberSpec& prior,
                             double sigma, const LMOptions& opts, std::vector<VoxelFit>* diagnostics = nullptr);

/// One sweep of penalised per-voxel fitting: minimises
///   (1/2 sigma^2) sum_m (x_jm - f_m(theta_j))^2 + gamma sum_{k in N4(j)} sum_p H((theta_jp - theta_kp)/range_p)
/// with neighbours frozen at their values in `maps`. Voxels whose TAC is all
/// zero are not fitted and get zero parameters.
ParametricMaps map_lm_fit(const ParametricMaps& maps, const DynamicImage& image, const KineticModel& model,
                          const HuberSpec& prior, double sigma, const LMOptions& opts,
                          std::vector<VoxelFit>* diagnostics = nullptr);

}  // namespace dpet
