#include "dpet/simulate.hpp"

#include "dpet/parallel.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>
#include <string>

namespace dpet {

namespace {

struct Ellipse {
  double cx, cy, rx, ry;
  bool contains(double u, double v) const {
    const double a = (u - cx) / rx, b = (v - cy) / ry;
    return a * a + b * b <= 1.0;
  }
};

KineticParams per_minute(double k1, double k2, double k3, double fv) {
  return {k1 / 60.0, k2 / 60.0, k3 / 60.0, fv};
}

}  // namespace

RegionParams default_region_params() {
  RegionParams p;
  p.gm = per_minute(0.102, 0.13, 0.062, 0.05);
  p.wm = per_minute(0.054, 0.109, 0.045, 0.03);
  p.tumor = per_minute(0.2, 0.12, 0.12, 0.08);
  p.blood = KineticParams{0.0, 0.0, 0.0, 1.0};
  return p;
}

Phantom::Phantom(Index width, Index height, std::vector<Region> labels, std::array<KineticParams, kNumRegions> params)
    : width_(width), height_(height), labels_(std::move(labels)), params_(params) {
  if (width <= 0 || height <= 0 || static_cast<Index>(labels_.size()) != width * height)
    throw std::invalid_argument("phantom: label image does not match the grid");
  for (const auto& p : params_) p.validate();
  if (!(params_[0] == KineticParams{})) throw std::invalid_argument("phantom: background parameters must be zero");
}

Index Phantom::count(Region r) const { return std::count(labels_.begin(), labels_.end(), r); }

ParametricMaps Phantom::maps() const {
  Eigen::MatrixXd v(n_voxels(), kNumParams);
  for (Index j = 0; j < n_voxels(); ++j) v.row(j) = params(label(j)).vector().transpose();
  return {width_, height_, std::move(v)};
}

std::vector<bool> Phantom::tissue_mask() const {
  std::vector<bool> m(labels_.size());
  for (std::size_t j = 0; j < labels_.size(); ++j) m[j] = labels_[j] != Region::background;
  return m;
}

RoiMask Phantom::gm_roi() const {
  std::vector<bool> m(labels_.size(), false);
  auto gm = [&](Index x, Index y) {
    return x >= 0 && y >= 0 && x < width_ && y < height_ && label(y * width_ + x) == Region::gm;
  };
  for (Index y = 0; y < height_; ++y)
    for (Index x = 0; x < width_; ++x)
      m[static_cast<std::size_t>(y * width_ + x)] =
          gm(x, y) && gm(x - 1, y) && gm(x + 1, y) && gm(x, y - 1) && gm(x, y + 1);
  return RoiMask(std::move(m));
}

std::vector<std::uint8_t> Phantom::preview() const {
  std::vector<std::uint8_t> px(labels_.size());
  for (std::size_t j = 0; j < labels_.size(); ++j)
    px[j] = static_cast<std::uint8_t>(static_cast<int>(labels_[j]) * 255 / (kNumRegions - 1));
  return px;
}

Phantom build_phantom(Index width, Index height, const RegionParams& params) {
  if (width < 8 || height < 8) throw std::invalid_argument("phantom: grid must be at least 8x8");
  auto need = [](const std::optional<KineticParams>& p, const char* name) {
    if (!p) throw std::invalid_argument(std::string("phantom: missing parameters for region '") + name + "'");
    return *p;
  };
  std::array<KineticParams, kNumRegions> table{KineticParams{}, need(params.gm, "gm"), need(params.wm, "wm"),
                                               need(params.tumor, "tumor"), need(params.blood, "blood")};

  const std::array<std::pair<Region, Ellipse>, 4> shapes{{
      {Region::gm, {0.0, 0.0, 0.8, 0.9}},
      {Region::wm, {0.0, 0.0, 0.5, 0.6}},
      {Region::tumor, {0.3, -0.25, 0.15, 0.15}},
      {Region::blood, {-0.55, -0.55, 0.1, 0.1}},
  }};
  std::vector<Region> labels(static_cast<std::size_t>(width * height), Region::background);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      const double u = 2.0 * (static_cast<double>(x) + 0.5) / static_cast<double>(width) - 1.0;
      const double v = 2.0 * (static_cast<double>(y) + 0.5) / static_cast<double>(height) - 1.0;
      for (const auto& [region, shape] : shapes)
        if (shape.contains(u, v)) labels[static_cast<std::size_t>(y * width + x)] = region;
    }
  return Phantom(width, height, std::move(labels), table);
}

DynamicImage synthesize_dynamic_image(const Phantom& phantom, const KineticModel& model) {
  std::array<Eigen::VectorXd, kNumRegions> tacs;
  for (int r = 0; r < kNumRegions; ++r)
    tacs[static_cast<std::size_t>(r)] = r == 0 ? Eigen::VectorXd::Zero(model.n_frames())
                                               : model.frame_values(phantom.params(static_cast<Region>(r)));
  Eigen::MatrixXd v(phantom.n_voxels(), model.n_frames());
  for (Index j = 0; j < phantom.n_voxels(); ++j)
    v.row(j) = tacs[static_cast<std::size_t>(phantom.label(j))].transpose();
  return {phantom.width(), phantom.height(), model.schedule(), std::move(v)};
}

DynamicImage synthesize_dynamic_image(const Phantom& phantom, const InputFunction& cp, const FrameSchedule& schedule) {
  return synthesize_dynamic_image(phantom, KineticModel(cp, schedule));
}

SinogramSeries expected_sinograms(const DynamicImage& x, const SystemMatrix& a, const Eigen::VectorXd& frame_scale,
                                  const Eigen::MatrixXd& background) {
  if (x.n_voxels() != a.n_voxels()) throw std::invalid_argument("expected_sinograms: image does not match the system matrix");
  if (frame_scale.size() != x.n_frames() || background.rows() != a.n_bins() || background.cols() != x.n_frames())
    throw std::invalid_argument("expected_sinograms: calibration shape mismatch");
  Eigen::MatrixXd mean(a.n_bins(), x.n_frames());
  for (Index m = 0; m < x.n_frames(); ++m)
    mean.col(m) = frame_scale(m) * forward_project(a, x.frame(m)) + background.col(m);
  return SinogramSeries::expected(x.schedule(), std::move(mean), background, frame_scale);
}

SinogramSeries simulate_sinograms(const DynamicImage& x_true, const SystemMatrix& a, double target_total_counts,
                                  double background_fraction, std::uint64_t seed) {
  if (!(target_total_counts > 0.0)) throw std::invalid_argument("simulate: target_total_counts must be > 0");
  if (!(background_fraction >= 0.0 && background_fraction < 1.0))
    throw std::invalid_argument("simulate: background_fraction must lie in [0, 1)");
  if (x_true.n_voxels() != a.n_voxels()) throw std::invalid_argument("simulate: image does not match the system matrix");

  const Index frames = x_true.n_frames(), bins = a.n_bins();
  const FrameSchedule& sched = x_true.schedule();
  Eigen::MatrixXd proj(bins, frames);
  double weighted = 0.0;
  for (Index m = 0; m < frames; ++m) {
    proj.col(m) = forward_project(a, x_true.frame(m));
    weighted += sched.duration(m) * proj.col(m).sum();
  }

  Eigen::VectorXd scale = Eigen::VectorXd::Ones(frames);
  Eigen::MatrixXd background = Eigen::MatrixXd::Zero(bins, frames);
  if (weighted > 0.0) {
    const double alpha = (1.0 - background_fraction) * target_total_counts / weighted;
    for (Index m = 0; m < frames; ++m) {
      scale(m) = alpha * sched.duration(m);
      const double true_counts = scale(m) * proj.col(m).sum();
      background.col(m).setConstant(background_fraction / (1.0 - background_fraction) * true_counts /
                                    static_cast<double>(bins));
    }
  } else if (background_fraction > 0.0) {
    throw std::invalid_argument("simulate: image projects to zero, background fraction is undefined");
  }

  Eigen::MatrixXd counts(bins, frames);
  parallel_for(frames, [&](Index m) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(m)};
    std::mt19937_64 rng(seq);
    for (Index i = 0; i < bins; ++i) {
      const double mean = scale(m) * proj(i, m) + background(i, m);
      if (mean > 0.0) {
        std::poisson_distribution<long long> pois(mean);
        counts(i, m) = static_cast<double>(pois(rng));
      } else {
        counts(i, m) = 0.0;
      }
    }
  });
  return SinogramSeries(sched, std::move(counts), std::move(background), std::move(scale));
}

CsvTable region_tacs_csv(const Phantom& phantom, const KineticModel& model) {
  CsvTable t;
  t.header = {"time"};
  std::vector<Eigen::VectorXd> cols;
  for (int r = 1; r < kNumRegions; ++r) {
    t.header.emplace_back(kRegionNames[static_cast<std::size_t>(r)]);
    cols.push_back(model.frame_values(phantom.params(static_cast<Region>(r))));
  }
  const auto mids = frame_mid_times(model.schedule());
  for (Index m = 0; m < model.n_frames(); ++m) {
    std::vector<std::string> row{format_double(mids[static_cast<std::size_t>(m)])};
    for (const auto& c : cols) row.push_back(format_double(c(m)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace dpet
