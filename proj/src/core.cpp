#include "dpet/core.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dpet {

namespace {

bool contiguous(double end, double next_start) {
  const double scale = std::max({1.0, std::abs(end), std::abs(next_start)});
  return std::abs(end - next_start) <= 1e-9 * scale;
}

double parse_number(std::string_view text) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw std::invalid_argument("frame schedule: bad number '" + std::string(text) + "'");
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

FrameSchedule::FrameSchedule(std::vector<double> starts, std::vector<double> durations)
    : starts_(std::move(starts)), durations_(std::move(durations)) {
  if (starts_.size() != durations_.size())
    throw std::invalid_argument("frame schedule: starts and durations differ in length");
  if (starts_.empty()) throw std::invalid_argument("frame schedule: no frames");
  if (!(starts_.front() >= 0.0)) throw std::invalid_argument("frame schedule: negative start");
  for (std::size_t m = 0; m < starts_.size(); ++m) {
    if (!(durations_[m] > 0.0) || !std::isfinite(durations_[m]))
      throw std::invalid_argument("frame schedule: frame " + std::to_string(m) +
                                  " has non-positive duration");
    if (m + 1 < starts_.size() && !contiguous(starts_[m] + durations_[m], starts_[m + 1]))
      throw std::invalid_argument("frame schedule: frames " + std::to_string(m) + " and " +
                                  std::to_string(m + 1) + " are not contiguous");
  }
}

FrameSchedule FrameSchedule::from_durations(std::span<const double> durations, double t0) {
  std::vector<double> starts;
  starts.reserve(durations.size());
  double t = t0;
  for (double d : durations) {
    starts.push_back(t);
    t += d;
  }
  return {std::move(starts), std::vector<double>(durations.begin(), durations.end())};
}

FrameSchedule FrameSchedule::parse(std::string_view text) {
  std::vector<double> durations;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const auto item = trim(text.substr(0, comma));
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    if (item.empty()) continue;
    const auto x = item.find_first_of("xX");
    std::size_t count = 1;
    std::string_view dur = item;
    if (x != std::string_view::npos) {
      const double c = parse_number(trim(item.substr(0, x)));
      if (c < 1 || c != std::floor(c))
        throw std::invalid_argument("frame schedule: bad repeat count in '" + std::string(item) + "'");
      count = static_cast<std::size_t>(c);
      dur = trim(item.substr(x + 1));
    }
    if (!dur.empty() && (dur.back() == 's' || dur.back() == 'S')) dur.remove_suffix(1);
    const double d = parse_number(dur);
    durations.insert(durations.end(), count, d);
  }
  return from_durations(durations);
}

FrameSchedule standard_fdg_schedule() { return FrameSchedule::parse("12x10,2x30,3x60,2x120,4x300,1x600"); }

std::vector<double> frame_mid_times(const FrameSchedule& schedule) {
  std::vector<double> mids(static_cast<std::size_t>(schedule.size()));
  for (Index m = 0; m < schedule.size(); ++m)
    mids[static_cast<std::size_t>(m)] = schedule.start(m) + schedule.duration(m) / 2.0;
  return mids;
}

double total_scan_time(const FrameSchedule& schedule) {
  const Index last = schedule.size() - 1;
  return schedule.start(last) + schedule.duration(last) - schedule.start(0);
}

DynamicImage::DynamicImage(Index width, Index height, FrameSchedule schedule, Eigen::MatrixXd values)
    : width_(width), height_(height), schedule_(std::move(schedule)), values_(std::move(values)) {
  if (width_ < 1 || height_ < 1) throw std::invalid_argument("dynamic image: empty grid");
  if (values_.rows() != width_ * height_)
    throw std::invalid_argument("dynamic image: value rows != width*height");
  if (values_.cols() != schedule_.size())
    throw std::invalid_argument("dynamic image: frame count does not match schedule");
  if (!values_.allFinite() || (values_.size() > 0 && values_.minCoeff() < 0.0))
    throw std::invalid_argument("dynamic image: activity must be finite and nonnegative");
}

DynamicImage DynamicImage::zeros(Index width, Index height, FrameSchedule schedule) {
  const Index m = schedule.size();
  return {width, height, std::move(schedule), Eigen::MatrixXd::Zero(width * height, m)};
}

SinogramSeries::SinogramSeries(FrameSchedule schedule, Eigen::MatrixXd counts,
                               Eigen::MatrixXd background, Eigen::VectorXd frame_scale)
    : SinogramSeries(std::move(schedule), std::move(counts), std::move(background),
                     std::move(frame_scale), false) {}

SinogramSeries SinogramSeries::expected(FrameSchedule schedule, Eigen::MatrixXd mean,
                                        Eigen::MatrixXd background, Eigen::VectorXd frame_scale) {
  return {std::move(schedule), std::move(mean), std::move(background), std::move(frame_scale), true};
}

SinogramSeries::SinogramSeries(FrameSchedule schedule, Eigen::MatrixXd counts,
                               Eigen::MatrixXd background, Eigen::VectorXd frame_scale,
                               bool expectation)
    : schedule_(std::move(schedule)),
      counts_(std::move(counts)),
      background_(std::move(background)),
      frame_scale_(std::move(frame_scale)),
      expectation_(expectation) {
  if (counts_.cols() != schedule_.size() || background_.cols() != schedule_.size() ||
      frame_scale_.size() != schedule_.size())
    throw std::invalid_argument("sinogram series: frame count does not match schedule");
  if (background_.rows() != counts_.rows())
    throw std::invalid_argument("sinogram series: background shape differs from counts");
  if (!counts_.allFinite() || !background_.allFinite() || !frame_scale_.allFinite())
    throw std::invalid_argument("sinogram series: non-finite values");
  if (counts_.size() > 0 && counts_.minCoeff() < 0.0)
    throw std::invalid_argument("sinogram series: negative counts");
  if (background_.size() > 0 && background_.minCoeff() < 0.0)
    throw std::invalid_argument("sinogram series: negative background");
  if (frame_scale_.size() > 0 && frame_scale_.minCoeff() <= 0.0)
    throw std::invalid_argument("sinogram series: frame scale must be positive");
  if (!expectation_ && (counts_.array() != counts_.array().floor()).any())
    throw std::invalid_argument("sinogram series: counts must be integral");
}

ParametricMaps::ParametricMaps(Index width, Index height, Eigen::MatrixXd values)
    : width_(width), height_(height), values_(std::move(values)) {
  if (width_ < 1 || height_ < 1) throw std::invalid_argument("parametric maps: empty grid");
  if (values_.rows() != width_ * height_ || values_.cols() != kNumParams)
    throw std::invalid_argument("parametric maps: expected J x 4 values");
  if (!values_.allFinite()) throw std::invalid_argument("parametric maps: non-finite values");
  if (values_.leftCols(3).minCoeff() < 0.0)
    throw std::invalid_argument("parametric maps: rate constants must be nonnegative");
  const auto fv = values_.col(3);
  if (fv.minCoeff() < 0.0 || fv.maxCoeff() > 1.0)
    throw std::invalid_argument("parametric maps: fv outside [0, 1]");
}

ParametricMaps ParametricMaps::zeros(Index width, Index height) {
  return {width, height, Eigen::MatrixXd::Zero(width * height, kNumParams)};
}

Eigen::VectorXd ParametricMaps::ki_map() const {
  Eigen::VectorXd ki(n_voxels());
  for (Index j = 0; j < n_voxels(); ++j) {
    const double k = values_(j, 1) + values_(j, 2);
    ki(j) = k > 0.0 ? values_(j, 0) * values_(j, 2) / k : values_(j, 0);
  }
  return ki;
}

}  // namespace dpet
