#pragma once

#include "dpet/core.hpp"

#include <vector>

namespace dpet {

/// Feng-type arterial input:
///   Cp(t) = (a1 (t-d) - a2 - a3) e^{l1 (t-d)} + a2 e^{l2 (t-d)} + a3 e^{l3 (t-d)},  t >= d
/// and zero before the delay d. Rates are negative, time in seconds.
struct InputFunction {
  double a1 = 851.1 / 60.0;  // kBq/mL/s
  double a2 = 21.9;          // kBq/mL
  double a3 = 20.8;          // kBq/mL
  double lambda1 = -4.1339 / 60.0;
  double lambda2 = -0.1191 / 60.0;
  double lambda3 = -0.0104 / 60.0;
  double delay = 0.0;

  double operator()(double t) const;

  /// Throws std::invalid_argument if Cp goes negative on a `step` grid over [0, horizon].
  void validate(double horizon, double step = 0.1) const;
};

double input_value(const InputFunction& cp, double t);

/// Two-tissue irreversible model parameters; rates in 1/s.
struct KineticParams {
  double K1 = 0.0;
  double k2 = 0.0;
  double k3 = 0.0;
  double fv = 0.0;

  Eigen::Vector4d vector() const { return {K1, k2, k3, fv}; }
  static KineticParams from_vector(const Eigen::Ref<const Eigen::Vector4d>& v) {
    return {v(0), v(1), v(2), v(3)};
  }
  /// Throws std::invalid_argument outside K1,k2,k3 >= 0, 0 <= fv <= 1.
  void validate() const;

  bool operator==(const KineticParams&) const = default;
};

/// Net influx rate K1 k3 / (k2 + k3). Throws std::domain_error when k2 + k3 == 0.
double ki(const KineticParams& theta);

/// Uniform time grid t_n = n * step, n = 0 .. n_points-1.
struct TimeGrid {
  double step = 0.1;
  Index n_points = 0;
};

/// C_PET on the grid:
///   (1-fv) K1 [ k3/(k2+k3) int Cp + k2/(k2+k3) (e^{-(k2+k3)t} * Cp) ] + fv Cp,
/// with integral and convolution accumulated by the trapezoid rule. The grid
/// step must be <= 0.5 s.
Eigen::VectorXd tissue_curve(const KineticParams& theta, const InputFunction& cp, const TimeGrid& grid);

/// Frame-averaged model predictions for one input function and frame schedule.
///
/// Cp is sampled on a fine grid (`step`) and integrated there. The tissue term
/// is written as K1 (int Cp - k2 g) with g(t) = int Cp(s) (1 - e^{-k (t-s)}) / k ds,
/// k = k2+k3, which stays smooth through k -> 0. g is advanced on a coarser set
/// of nodes with an exponential integrator that is exact for piecewise-linear
/// int Cp; node spacing grows as `growth * t` (never below `step`, always
/// dividing each frame), so late long frames cost a few nodes each. growth = 0
/// keeps every fine sample as a node.
class KineticModel {
 public:
  static constexpr double kDefaultStep = 0.1;
  static constexpr double kDefaultGrowth = 0.02;
  using Jacobian = Eigen::Matrix<double, Eigen::Dynamic, kNumParams>;

  KineticModel(const InputFunction& cp, FrameSchedule schedule, double step = kDefaultStep,
               double growth = kDefaultGrowth);
  /// `samples[n]` is Cp(n * step); the grid must reach the end of the last frame.
  KineticModel(std::vector<double> samples, FrameSchedule schedule, double step = kDefaultStep,
               double growth = kDefaultGrowth);

  const FrameSchedule& schedule() const { return schedule_; }
  Index n_frames() const { return schedule_.size(); }
  double step() const { return step_; }
  /// Number of integration nodes after coarsening.
  Index n_nodes() const { return static_cast<Index>(node_icp_.size()); }

  /// Frame means of Cp.
  const Eigen::VectorXd& input_frame_means() const { return cp_mean_; }

  Eigen::VectorXd frame_values(const KineticParams& theta) const;
  void evaluate(const KineticParams& theta, Eigen::Ref<Eigen::VectorXd> values) const;
  void evaluate(const KineticParams& theta, Eigen::Ref<Eigen::VectorXd> values,
                Eigen::Ref<Jacobian> jacobian) const;

 private:
  void precompute();
  template <bool WithJacobian>
  void run(const KineticParams& theta, Eigen::Ref<Eigen::VectorXd> values, Jacobian* jacobian) const;

  FrameSchedule schedule_;
  double step_;
  double growth_;
  std::vector<double> cp_;
  std::vector<double> node_icp_;      // int Cp at each node
  std::vector<int> node_class_;       // index into widths_ of the step ending at each node
  std::vector<double> widths_;        // distinct node spacings (s)
  std::vector<Index> first_, last_;   // node range of each frame
  Eigen::VectorXd cp_mean_;
  Eigen::VectorXd int_mean_;
};

Eigen::VectorXd model_frame_values(const KineticParams& theta, const InputFunction& cp,
                                   const FrameSchedule& schedule);
KineticModel::Jacobian model_jacobian(const KineticParams& theta, const InputFunction& cp,
                                      const FrameSchedule& schedule);

}  // namespace dpet
