#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dpet {

using Index = Eigen::Index;

/// Contiguous time frames of a dynamic acquisition (seconds).
class FrameSchedule {
 public:
  FrameSchedule() = default;
  FrameSchedule(std::vector<double> starts, std::vector<double> durations);

  /// Frames laid end to end from `t0`.
  static FrameSchedule from_durations(std::span<const double> durations, double t0 = 0.0);

  /// Parses run-length notation such as "12x10,2x30,3x60".
  static FrameSchedule parse(std::string_view text);

  Index size() const { return static_cast<Index>(starts_.size()); }
  const std::vector<double>& starts() const { return starts_; }
  const std::vector<double>& durations() const { return durations_; }
  double start(Index m) const { return starts_[static_cast<std::size_t>(m)]; }
  double duration(Index m) const { return durations_[static_cast<std::size_t>(m)]; }
  double end(Index m) const { return start(m) + duration(m); }

  bool operator==(const FrameSchedule&) const = default;

 private:
  std::vector<double> starts_;
  std::vector<double> durations_;
};

/// 24 frames over 40 minutes: 12x10s, 2x30s, 3x60s, 2x120s, 4x300s, 1x600s.
FrameSchedule standard_fdg_schedule();

std::vector<double> frame_mid_times(const FrameSchedule& schedule);
double total_scan_time(const FrameSchedule& schedule);

/// Nonnegative activity (kBq/mL), J voxels by M frames. Column m holds frame m,
/// so each frame is contiguous in memory.
class DynamicImage {
 public:
  DynamicImage() = default;
  DynamicImage(Index width, Index height, FrameSchedule schedule, Eigen::MatrixXd values);
  static DynamicImage zeros(Index width, Index height, FrameSchedule schedule);

  Index width() const { return width_; }
  Index height() const { return height_; }
  Index n_voxels() const { return width_ * height_; }
  Index n_frames() const { return schedule_.size(); }
  const FrameSchedule& schedule() const { return schedule_; }
  const Eigen::MatrixXd& values() const { return values_; }
  auto frame(Index m) const { return values_.col(m); }
  auto tac(Index j) const { return values_.row(j); }

 private:
  Index width_ = 0;
  Index height_ = 0;
  FrameSchedule schedule_;
  Eigen::MatrixXd values_;
};

/// Frame sinograms (I bins by M frames) with known background and the
/// per-frame calibration c_m such that E[counts] = c_m * A x_m + background.
class SinogramSeries {
 public:
  SinogramSeries() = default;
  /// Measured data: counts must be integral.
  SinogramSeries(FrameSchedule schedule, Eigen::MatrixXd counts, Eigen::MatrixXd background,
                 Eigen::VectorXd frame_scale);
  /// Noise-free expected data; counts may be fractional.
  static SinogramSeries expected(FrameSchedule schedule, Eigen::MatrixXd mean,
                                 Eigen::MatrixXd background, Eigen::VectorXd frame_scale);

  Index n_bins() const { return counts_.rows(); }
  Index n_frames() const { return counts_.cols(); }
  const FrameSchedule& schedule() const { return schedule_; }
  const Eigen::MatrixXd& counts() const { return counts_; }
  const Eigen::MatrixXd& background() const { return background_; }
  const Eigen::VectorXd& frame_scale() const { return frame_scale_; }
  bool is_expectation() const { return expectation_; }

 private:
  SinogramSeries(FrameSchedule schedule, Eigen::MatrixXd counts, Eigen::MatrixXd background,
                 Eigen::VectorXd frame_scale, bool expectation);

  FrameSchedule schedule_;
  Eigen::MatrixXd counts_;
  Eigen::MatrixXd background_;
  Eigen::VectorXd frame_scale_;
  bool expectation_ = false;
};

enum class Param : int { K1 = 0, k2 = 1, k3 = 2, fv = 3 };
inline constexpr int kNumParams = 4;
inline constexpr std::array<std::string_view, kNumParams> kParamNames{"K1", "k2", "k3", "fv"};

/// Kinetic parameter maps, J voxels by [K1, k2, k3, fv].
class ParametricMaps {
 public:
  ParametricMaps() = default;
  ParametricMaps(Index width, Index height, Eigen::MatrixXd values);
  static ParametricMaps zeros(Index width, Index height);

  Index width() const { return width_; }
  Index height() const { return height_; }
  Index n_voxels() const { return width_ * height_; }
  const Eigen::MatrixXd& values() const { return values_; }
  auto map(Param p) const { return values_.col(static_cast<Index>(p)); }

  /// K1*k3/(k2+k3) per voxel; the pure-trapping limit K1 where k2+k3 == 0.
  Eigen::VectorXd ki_map() const;

 private:
  Index width_ = 0;
  Index height_ = 0;
  Eigen::MatrixXd values_;
};

}  // namespace dpet
