#pragma once

#include "dpet/core.hpp"
#include "dpet/io.hpp"
#include "dpet/kinetics.hpp"
#include "dpet/metrics.hpp"
#include "dpet/projector.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace dpet {

enum class Region : std::uint8_t { background = 0, gm = 1, wm = 2, tumor = 3, blood = 4 };
inline constexpr int kNumRegions = 5;
inline constexpr std::array<std::string_view, kNumRegions> kRegionNames{"background", "gm", "wm", "tumor", "blood"};

/// Kinetic parameters for each labelled region. All four must be set.
struct RegionParams {
  std::optional<KineticParams> gm, wm, tumor, blood;
};

/// Per-second stand-in values for grey matter, white matter, tumour and a pure blood pool.
RegionParams default_region_params();

class Phantom {
 public:
  Phantom(Index width, Index height, std::vector<Region> labels, std::array<KineticParams, kNumRegions> params);

  Index width() const { return width_; }
  Index height() const { return height_; }
  Index n_voxels() const { return width_ * height_; }
  Region label(Index j) const { return labels_[static_cast<std::size_t>(j)]; }
  const std::vector<Region>& labels() const { return labels_; }
  const KineticParams& params(Region r) const { return params_[static_cast<std::size_t>(r)]; }
  Index count(Region r) const;

  /// Ground-truth maps; background voxels are zero.
  ParametricMaps maps() const;
  /// Every non-background voxel.
  std::vector<bool> tissue_mask() const;
  /// Grey-matter voxels whose four neighbours are also grey matter.
  RoiMask gm_roi() const;
  /// 8-bit label preview with evenly spaced grey levels.
  std::vector<std::uint8_t> preview() const;

 private:
  Index width_, height_;
  std::vector<Region> labels_;
  std::array<KineticParams, kNumRegions> params_;
};

/// Grey-matter ellipse, white-matter core, tumour disc and blood disc painted
/// in that order on normalised coordinates. Throws std::invalid_argument when a
/// region has no parameters or the grid is smaller than 8x8.
Phantom build_phantom(Index width, Index height, const RegionParams& params);

/// Noise-free dynamic image: each region carries its model TAC, background zero.
DynamicImage synthesize_dynamic_image(const Phantom& phantom, const KineticModel& model);
DynamicImage synthesize_dynamic_image(const Phantom& phantom, const InputFunction& cp, const FrameSchedule& schedule);

/// Expected data for a given calibration: mean = frame_scale A x + background.
SinogramSeries expected_sinograms(const DynamicImage& x, const SystemMatrix& a, const Eigen::VectorXd& frame_scale,
                                  const Eigen::MatrixXd& background);

/// Poisson sinograms with total expected counts `target_total_counts`, of which
/// `background_fraction` is a flat background spread over each frame's bins in
/// proportion to that frame's true counts. Frame m draws from its own stream
/// seeded by (seed, m).
SinogramSeries simulate_sinograms(const DynamicImage& x_true, const SystemMatrix& a, double target_total_counts,
                                  double background_fraction, std::uint64_t seed);

/// time (frame mid, s) plus one column per tissue region.
CsvTable region_tacs_csv(const Phantom& phantom, const KineticModel& model);

}  // namespace dpet
