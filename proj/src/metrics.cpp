#include "dpet/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace dpet {

RoiMask::RoiMask(std::vector<bool> mask) : mask_(std::move(mask)) {
  count_ = std::count(mask_.begin(), mask_.end(), true);
  if (count_ < 2) throw std::invalid_argument("roi mask: needs at least two voxels");
}

std::vector<TargetMetric> evaluate_image(const Eigen::MatrixXd& estimate, const DynamicImage& truth,
                                         const RoiMask& roi) {
  const Eigen::MatrixXd& x = truth.values();
  if (estimate.rows() != x.rows() || estimate.cols() != x.cols())
    throw std::invalid_argument("evaluate_image: shape mismatch");
  std::vector<TargetMetric> out;
  out.reserve(static_cast<std::size_t>(x.cols() + 1));
  double noise_sum = 0.0;
  for (Index m = 0; m < x.cols(); ++m) {
    const double noise = roi_noise(estimate.col(m), roi);
    noise_sum += noise;
    const double bias = x.col(m).norm() > 0.0 ? bias_db(estimate.col(m), x.col(m)) : std::nan("");
    out.push_back({std::to_string(m), bias, noise});
  }
  out.push_back({"volume", bias_db(estimate, x), noise_sum / static_cast<double>(x.cols())});
  return out;
}

std::vector<TargetMetric> evaluate_maps(const Eigen::MatrixXd& estimate, const ParametricMaps& truth,
                                        const RoiMask& roi, const std::vector<bool>& tissue) {
  if (estimate.rows() != truth.n_voxels() || estimate.cols() != kNumParams)
    throw std::invalid_argument("evaluate_maps: shape mismatch");
  if (static_cast<Index>(tissue.size()) != truth.n_voxels())
    throw std::invalid_argument("evaluate_maps: tissue mask size mismatch");
  std::vector<Index> idx;
  for (Index j = 0; j < truth.n_voxels(); ++j)
    if (tissue[static_cast<std::size_t>(j)]) idx.push_back(j);

  const ParametricMaps est_maps(truth.width(), truth.height(), estimate);
  Eigen::MatrixXd est(truth.n_voxels(), kNumParams + 1), ref(truth.n_voxels(), kNumParams + 1);
  est << estimate, est_maps.ki_map();
  ref << truth.values(), truth.ki_map();

  std::vector<TargetMetric> out;
  for (int p = 0; p <= kNumParams; ++p) {
    Eigen::VectorXd e(static_cast<Index>(idx.size())), t(static_cast<Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      e(static_cast<Index>(k)) = est(idx[k], p);
      t(static_cast<Index>(k)) = ref(idx[k], p);
    }
    const std::string name = p < kNumParams ? std::string(kParamNames[static_cast<std::size_t>(p)]) : "Ki";
    const double bias = t.norm() > 0.0 ? bias_db(e, t) : std::nan("");
    out.push_back({name, bias, roi_noise(est.col(p), roi)});
  }
  return out;
}

std::vector<TradeoffRow> tradeoff_table(const std::vector<RunHistory>& runs) {
  std::vector<std::size_t> order(runs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (runs[a].beta != runs[b].beta) return runs[a].beta < runs[b].beta;
    return runs[a].algorithm < runs[b].algorithm;
  });
  std::vector<TradeoffRow> rows;
  for (std::size_t r : order) {
    const auto& run = runs[r];
    auto iters = run.iterations;
    std::stable_sort(iters.begin(), iters.end(),
                     [](const IterationMetrics& a, const IterationMetrics& b) { return a.iteration < b.iteration; });
    for (const auto& it : iters)
      for (const auto& t : it.targets) rows.push_back({run.algorithm, run.beta, it.iteration, t.target, t.bias_db, t.noise});
  }
  return rows;
}

CsvTable to_csv(const std::vector<TradeoffRow>& rows) {
  CsvTable t{{"algorithm", "beta", "iteration", "target", "bias_db", "noise"}, {}};
  for (const auto& r : rows)
    t.rows.push_back({r.algorithm, format_double(r.beta), std::to_string(r.iteration), r.target,
                      format_double(r.bias_db), format_double(r.noise)});
  return t;
}

std::vector<TradeoffRow> tradeoff_from_csv(const CsvTable& table) {
  const std::vector<std::string> expected{"algorithm", "beta", "iteration", "target", "bias_db", "noise"};
  if (table.header != expected) throw std::runtime_error("metrics csv: unexpected header");
  std::vector<TradeoffRow> rows;
  for (const auto& c : table.rows) {
    if (c.size() != expected.size()) throw std::runtime_error("metrics csv: ragged row");
    rows.push_back({c[0], std::stod(c[1]), std::stoi(c[2]), c[3], std::stod(c[4]), std::stod(c[5])});
  }
  return rows;
}

}  // namespace dpet
