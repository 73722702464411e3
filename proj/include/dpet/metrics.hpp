#pragma once

#include "dpet/core.hpp"
#include "dpet/io.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpet {

/// Reported in place of -inf for an exact reconstruction.
inline constexpr double kBiasFloorDb = -300.0;

/// 10 log10(||estimate - truth|| / ||truth||). Works on any Eigen dense expression;
/// pass whole dynamic volumes, single frames or maps alike.
template <class DerivedA, class DerivedB>
double bias_db(const Eigen::DenseBase<DerivedA>& estimate, const Eigen::DenseBase<DerivedB>& truth) {
  if (estimate.size() != truth.size()) throw std::invalid_argument("bias_db: size mismatch");
  const double ref = truth.derived().template cast<double>().matrix().norm();
  if (!(ref > 0.0)) throw std::domain_error("bias_db: truth has zero norm");
  const double err = (estimate.derived().template cast<double>() - truth.derived().template cast<double>()).matrix().norm();
  if (err == 0.0) return kBiasFloorDb;
  return 10.0 * std::log10(err / ref);
}

/// Voxel selection for noise measurements.
class RoiMask {
 public:
  RoiMask() = default;
  /// Throws std::invalid_argument when fewer than two voxels are selected.
  explicit RoiMask(std::vector<bool> mask);

  Index size() const { return static_cast<Index>(mask_.size()); }
  Index count() const { return count_; }
  bool operator[](Index j) const { return mask_[static_cast<std::size_t>(j)]; }
  const std::vector<bool>& mask() const { return mask_; }

 private:
  std::vector<bool> mask_;
  Index count_ = 0;
};

/// Population variance of the masked voxels.
template <class Derived>
double roi_noise(const Eigen::DenseBase<Derived>& values, const RoiMask& roi) {
  if (values.size() != roi.size()) throw std::invalid_argument("roi_noise: size mismatch");
  if (roi.count() < 2) throw std::invalid_argument("roi_noise: ROI needs at least two voxels");
  double mean = 0.0;
  for (Index j = 0; j < values.size(); ++j)
    if (roi[j]) mean += static_cast<double>(values(j));
  mean /= static_cast<double>(roi.count());
  double var = 0.0;
  for (Index j = 0; j < values.size(); ++j)
    if (roi[j]) {
      const double d = static_cast<double>(values(j)) - mean;
      var += d * d;
    }
  return var / static_cast<double>(roi.count());
}

/// Bias and noise for one evaluation target ("0".."M-1" for frames, "volume",
/// or a map name K1, k2, k3, fv, Ki).
struct TargetMetric {
  std::string target;
  double bias_db = 0.0;
  double noise = 0.0;
};

/// Per-frame metrics plus the whole volume (noise = mean of per-frame ROI noise).
std::vector<TargetMetric> evaluate_image(const Eigen::MatrixXd& estimate, const DynamicImage& truth,
                                         const RoiMask& roi);

/// Per-map metrics for K1, k2, k3, fv and Ki. Bias is taken over `tissue` voxels only.
std::vector<TargetMetric> evaluate_maps(const Eigen::MatrixXd& estimate, const ParametricMaps& truth,
                                        const RoiMask& roi, const std::vector<bool>& tissue);

struct IterationMetrics {
  int iteration = 0;
  std::vector<TargetMetric> targets;
};

struct RunHistory {
  std::string algorithm;
  double beta = 0.0;
  std::vector<IterationMetrics> iterations;
};

struct TradeoffRow {
  std::string algorithm;
  double beta = 0.0;
  int iteration = 0;
  std::string target;
  double bias_db = 0.0;
  double noise = 0.0;

  bool operator==(const TradeoffRow&) const = default;
};

/// One row per (run, iteration, target), ordered by beta, then algorithm,
/// iteration and target order within the run.
std::vector<TradeoffRow> tradeoff_table(const std::vector<RunHistory>& runs);

/// metrics.csv layout: algorithm, beta, iteration, target, bias_db, noise.
CsvTable to_csv(const std::vector<TradeoffRow>& rows);
std::vector<TradeoffRow> tradeoff_from_csv(const CsvTable& table);

}  // namespace dpet
