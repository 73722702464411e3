#include "dpet/fitting.hpp"

#include "dpet/parallel.hpp"

#include <Eigen/Cholesky>

#include <array>
#include <stdexcept>

namespace dpet {

namespace {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

constexpr double kLambdaMax = 1e12;
constexpr int kMaxNeighbors = 4;

// Frozen neighbour values for one voxel. `weight` already includes 2 sigma^2 gamma
// so that the data term stays the plain sum of squares.
struct NeighborPrior {
  std::array<Vec4, kMaxNeighbors> values;
  int count = 0;
  double weight = 0.0;
  double delta = 0.1;
  Vec4 scale = Vec4::Ones();

  double value(const Vec4& theta) const {
    double e = 0.0;
    for (int k = 0; k < count; ++k)
      for (int p = 0; p < kNumParams; ++p) e += huber((theta(p) - values[k](p)) / scale(p), delta).value;
    return weight * e;
  }

  // Adds half the prior gradient (descent sign) and half a Huber majoriser
  // curvature to the normal equations.
  void add_to(const Vec4& theta, Mat4& h, Vec4& g) const {
    for (int k = 0; k < count; ++k)
      for (int p = 0; p < kNumParams; ++p) {
        const double d = (theta(p) - values[k](p)) / scale(p);
        const double ad = std::abs(d);
        g(p) -= 0.5 * weight * huber(d, delta).derivative / scale(p);
        h(p, p) += 0.5 * weight * (ad <= delta ? 1.0 : delta / ad) / (scale(p) * scale(p));
      }
  }
};

double objective(const Eigen::VectorXd& residual, const Vec4& theta, const NeighborPrior* prior) {
  const double data = residual.squaredNorm();
  return prior ? data + prior->value(theta) : data;
}

FitResult lm_minimize(const Eigen::Ref<const Eigen::VectorXd>& tac, const KineticModel& model,
                      const KineticParams& init, const LMOptions& opts, const NeighborPrior* prior) {
  const Index m = model.n_frames();
  if (tac.size() != m) throw std::invalid_argument("lm_fit: TAC length does not match the schedule");
  if (m < kNumParams) throw std::invalid_argument("lm_fit: need at least 4 frames");
  if (!tac.allFinite()) throw std::invalid_argument("lm_fit: non-finite TAC entries");

  const ParamBox& box = opts.box;
  Vec4 theta = box.project(init.vector());
  Eigen::VectorXd f(m), f_trial(m), r(m), r_trial(m);
  KineticModel::Jacobian jac(m, kNumParams), jac_trial(m, kNumParams);
  model.evaluate(KineticParams::from_vector(theta), f, jac);
  r = tac - f;
  double cost = objective(r, theta, prior);

  FitResult out;
  out.accepted_costs.push_back(cost);
  double lambda = opts.lambda_init;

  while (out.iterations < opts.max_iters && cost > 0.0) {
    Mat4 h = jac.transpose() * jac;
    Vec4 g = jac.transpose() * r;
    if (prior) prior->add_to(theta, h, g);

    // Parameters pinned at a bound with the descent direction pointing outward.
    for (int p = 0; p < kNumParams; ++p) {
      const bool pinned = (theta(p) <= box.lower(p) && g(p) < 0.0) || (theta(p) >= box.upper(p) && g(p) > 0.0);
      if (pinned) {
        h.row(p).setZero();
        h.col(p).setZero();
        h(p, p) = 1.0;
        g(p) = 0.0;
      }
    }
    const Vec4 diag = h.diagonal();
    const double floor = 1e-12 * std::max(diag.maxCoeff(), 1e-300);

    ++out.iterations;
    bool accepted = false, stalled = false;
    while (!accepted) {
      Mat4 a = h;
      a.diagonal() += lambda * diag.cwiseMax(floor);
      const Vec4 trial = box.project(theta + a.ldlt().solve(g));
      if (trial == theta || !trial.allFinite()) {
        stalled = true;
        break;
      }
      model.evaluate(KineticParams::from_vector(trial), f_trial, jac_trial);
      r_trial = tac - f_trial;
      const double trial_cost = objective(r_trial, trial, prior);
      if (trial_cost < cost) {
        const double decrease = (cost - trial_cost) / cost;
        theta = trial;
        f.swap(f_trial);
        r.swap(r_trial);
        jac.swap(jac_trial);
        cost = trial_cost;
        out.accepted_costs.push_back(cost);
        lambda = std::max(lambda * opts.lambda_down, 1e-15);
        accepted = true;
        if (decrease < opts.tolerance) stalled = true;
      } else {
        lambda *= opts.lambda_up;
        if (lambda > kLambdaMax) {
          stalled = true;
          break;
        }
      }
    }
    if (stalled) break;
  }
  out.params = KineticParams::from_vector(theta);
  out.cost = cost;
  return out;
}

}  // namespace

void HuberSpec::validate() const {
  if (!(delta > 0.0)) throw std::invalid_argument("huber: delta must be positive");
  if (!(gamma >= 0.0)) throw std::invalid_argument("huber: gamma must be nonnegative");
}

void ParamBox::validate() const {
  if (!(lower.array() <= upper.array()).all()) throw std::invalid_argument("parameter box: lower > upper");
  if (lower.minCoeff() < 0.0 || upper(3) > 1.0)
    throw std::invalid_argument("parameter box: must lie inside K1,k2,k3 >= 0, 0 <= fv <= 1");
}

void LMOptions::validate() const {
  if (max_iters < 0) throw std::invalid_argument("lm options: max_iters < 0");
  if (!(lambda_init > 0.0)) throw std::invalid_argument("lm options: lambda_init must be positive");
  if (!(lambda_up > 1.0) || !(lambda_down > 0.0 && lambda_down < 1.0))
    throw std::invalid_argument("lm options: need lambda_up > 1 > lambda_down > 0");
  box.validate();
}

FitResult lm_fit(const Eigen::Ref<const Eigen::VectorXd>& tac, const KineticModel& model,
                 const KineticParams& init, const LMOptions& opts) {
  return lm_minimize(tac, model, init, opts, nullptr);
}

FitResult lm_fit(const Eigen::Ref<const Eigen::VectorXd>& tac, const FrameSchedule& schedule,
                 const InputFunction& cp, const KineticParams& init, const LMOptions& opts) {
  return lm_fit(tac, KineticModel(cp, schedule), init, opts);
}

Eigen::MatrixXd map_lm_sweep(const Eigen::MatrixXd& maps, const Eigen::MatrixXd& tacs, Index width,
                             Index height, const KineticModel& model, const HuberSpec& prior,
                             double sigma, const LMOptions& opts, std::vector<VoxelFit>* diagnostics) {
  const Index j_count = width * height;
  if (maps.rows() != j_count || maps.cols() != kNumParams || tacs.rows() != j_count)
    throw std::invalid_argument("map_lm_fit: maps and image do not share the voxel grid");
  if (tacs.cols() != model.n_frames()) throw std::invalid_argument("map_lm_fit: frame count mismatch");
  if (!(sigma > 0.0)) throw std::invalid_argument("map_lm_fit: sigma must be positive");
  prior.validate();

  Eigen::MatrixXd out(j_count, kNumParams);
  if (diagnostics) diagnostics->assign(static_cast<std::size_t>(j_count), VoxelFit{});
  const Vec4 scale = opts.box.range().cwiseMax(1e-300);

  parallel_for(j_count, [&](Index j) {
    const Eigen::VectorXd tac = tacs.row(j).transpose();
    if ((tac.array() == 0.0).all()) {
      out.row(j).setZero();
      return;
    }
    NeighborPrior np;
    np.weight = 2.0 * sigma * sigma * prior.gamma;
    np.delta = prior.delta;
    np.scale = scale;
    const Index x = j % width, y = j / width;
    if (x > 0) np.values[np.count++] = maps.row(j - 1).transpose();
    if (x + 1 < width) np.values[np.count++] = maps.row(j + 1).transpose();
    if (y > 0) np.values[np.count++] = maps.row(j - width).transpose();
    if (y + 1 < height) np.values[np.count++] = maps.row(j + width).transpose();
    const bool use_prior = prior.gamma > 0.0 && np.count > 0;

    const FitResult fit = lm_minimize(tac, model, KineticParams::from_vector(maps.row(j).transpose()), opts,
                                      use_prior ? &np : nullptr);
    out.row(j) = fit.params.vector().transpose();
    if (diagnostics) (*diagnostics)[static_cast<std::size_t>(j)] = {fit.iterations, fit.cost};
  });
  return out;
}

ParametricMaps map_lm_fit(const ParametricMaps& maps, const DynamicImage& image, const KineticModel& model,
                          const HuberSpec& prior, double sigma, const LMOptions& opts,
                          std::vector<VoxelFit>* diagnostics) {
  if (maps.width() != image.width() || maps.height() != image.height())
    throw std::invalid_argument("map_lm_fit: maps and image do not share the voxel grid");
  return {maps.width(), maps.height(),
          map_lm_sweep(maps.values(), image.values(), image.width(), image.height(), model, prior, sigma,
                       opts, diagnostics)};
}

}  // namespace dpet
