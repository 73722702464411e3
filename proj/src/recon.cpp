#include "dpet/recon.hpp"

#include "dpet/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dpet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kIndirectFitIters = 100;
constexpr int kIndirectFitSweeps = 2;

// Shared state and bookkeeping for the outer-loop drivers.
class Run {
 public:
  Run(const SinogramSeries& y, const SystemMatrix& a, const KineticModel& model, const ReconConfig& cfg,
      const ReconOptions& opt)
      : y_(y), a_(a), model_(model), cfg_(cfg), opt_(opt) {
    cfg.validate();
    const auto& g = a.geometry();
    width_ = g.width;
    height_ = g.height;
    if (y.n_bins() != a.n_bins()) throw std::invalid_argument("reconstruct: sinogram bins do not match the system matrix");
    if (y.n_frames() != model.n_frames()) throw std::invalid_argument("reconstruct: frame count mismatch");
    if (!(y.schedule() == model.schedule())) throw std::invalid_argument("reconstruct: schedule mismatch");
    x_ = opt.initial_image ? *opt.initial_image : initial_image(y, a);
    if (x_.rows() != a.n_voxels() || x_.cols() != y.n_frames())
      throw std::invalid_argument("reconstruct: initial image has the wrong shape");
    if (opt.initial_maps) {
      theta_ = *opt.initial_maps;
      if (theta_.rows() != a.n_voxels() || theta_.cols() != kNumParams)
        throw std::invalid_argument("reconstruct: initial maps have the wrong shape");
      have_maps_ = true;
    } else {
      theta_ = cfg.lm.box.center().transpose().replicate(a.n_voxels(), 1);
    }
    if (opt.truth && (opt.truth->image.n_voxels() != a.n_voxels() || opt.truth->image.n_frames() != y.n_frames()))
      throw std::invalid_argument("reconstruct: ground truth does not match the data");
  }

  Index frames() const { return y_.n_frames(); }

  double eps(Index m) const {
    return cfg_.floor_fraction * y_.frame_scale()(m) * a_.sensitivity().maxCoeff();
  }

  void mlem_step() {
    parallel_for(frames(), [&](Index m) {
      x_.col(m) = mlem_update(x_.col(m), a_, y_.counts().col(m), y_.background().col(m), y_.frame_scale()(m));
    });
    image_updates_ += 1;
  }

  // grad(m) must return the prior gradient of frame m at the current iterate.
  template <class GradFn>
  void osl_step(double beta, GradFn&& grad) {
    std::vector<OslDiagnostics> d(static_cast<std::size_t>(frames()));
    parallel_for(frames(), [&](Index m) {
      const Eigen::VectorXd g = grad(m);
      x_.col(m) = osl_penalized_update(x_.col(m), a_, y_.counts().col(m), y_.background().col(m), g, beta, eps(m),
                                       y_.frame_scale()(m), &d[static_cast<std::size_t>(m)]);
    });
    for (const auto& e : d) {
      floored_ += e.floored;
      voxels_ += e.voxels;
    }
    image_updates_ += 1;
  }

  Eigen::MatrixXd sweep(const Eigen::MatrixXd& tacs, const LMOptions& lm) {
    std::vector<VoxelFit> diag;
    Eigen::MatrixXd out =
        map_lm_sweep(theta_, tacs, width_, height_, model_, cfg_.map_prior, cfg_.sigma, lm, &diag);
    for (const auto& v : diag) lm_iterations_ += v.iterations;
    return out;
  }

  void set_maps(Eigen::MatrixXd theta, Eigen::MatrixXd f) {
    theta_ = std::move(theta);
    f_ = std::move(f);
    have_maps_ = true;
    maps_current_ = true;
  }

  void indirect_fit() {
    LMOptions lm = cfg_.lm;
    lm.max_iters = std::max(lm.max_iters, kIndirectFitIters);
    for (int s = 0; s < kIndirectFitSweeps; ++s) theta_ = sweep(x_, lm);
    f_ = model_image(theta_, model_);
    have_maps_ = true;
    maps_current_ = true;
  }

  void record(int cycle) {
    CycleRecord rec;
    rec.cycle = cycle;
    double ll = 0.0;
    for (Index m = 0; m < frames(); ++m)
      ll += poisson_log_likelihood(a_, x_.col(m), y_.counts().col(m), y_.background().col(m), y_.frame_scale()(m));
    rec.poisson_loglik = ll;
    rec.km_residual = maps_current_ ? (x_ - f_).squaredNorm() : kNaN;
    rec.floored_fraction = voxels_ > 0 ? static_cast<double>(floored_) / static_cast<double>(voxels_) : 0.0;
    rec.lm_iterations = lm_iterations_;
    rec.image_updates = image_updates_;
    rec.bias_db = kNaN;
    rec.roi_noise = kNaN;
    if (opt_.truth) {
      rec.targets = evaluate_image(x_, opt_.truth->image, opt_.truth->roi);
      rec.bias_db = rec.targets.back().bias_db;
      rec.roi_noise = rec.targets.back().noise;
      if (maps_current_) {
        auto maps = evaluate_maps(theta_, opt_.truth->maps, opt_.truth->roi, opt_.truth->tissue);
        rec.targets.insert(rec.targets.end(), maps.begin(), maps.end());
      }
    }
    out_.history.push_back(std::move(rec));
    if (std::find(cfg_.checkpoints.begin(), cfg_.checkpoints.end(), cycle) != cfg_.checkpoints.end()) {
      Snapshot s{cycle, image(), std::nullopt};
      if (maps_current_) s.maps = maps();
      out_.snapshots.push_back(std::move(s));
    }
    floored_ = voxels_ = 0;
    lm_iterations_ = 0;
    image_updates_ = 0;
  }

  // Maps describe the image only until the next image update.
  void image_changed() { maps_current_ = false; }

  ReconResult finish() {
    if (!have_maps_) indirect_fit();
    out_.image = image();
    out_.maps = maps();
    return std::move(out_);
  }

  DynamicImage image() const { return {width_, height_, y_.schedule(), x_.cwiseMax(0.0)}; }
  ParametricMaps maps() const { return {width_, height_, theta_}; }

  Eigen::MatrixXd& x() { return x_; }
  const Eigen::MatrixXd& theta() const { return theta_; }
  const Eigen::MatrixXd& f() const { return f_; }
  const ReconConfig& cfg() const { return cfg_; }
  const KineticModel& model() const { return model_; }
  Index width() const { return width_; }
  Index height() const { return height_; }

 private:
  const SinogramSeries& y_;
  const SystemMatrix& a_;
  const KineticModel& model_;
  const ReconConfig& cfg_;
  const ReconOptions& opt_;
  Index width_ = 0, height_ = 0;
  Eigen::MatrixXd x_, theta_, f_;
  bool have_maps_ = false;
  bool maps_current_ = false;
  Index floored_ = 0, voxels_ = 0;
  long lm_iterations_ = 0, image_updates_ = 0;
  ReconResult out_;
};

Eigen::VectorXd kinetic_frame_gradient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& f, Index m, double sigma) {
  return -(x.col(m) - f.col(m)) / (sigma * sigma);
}

}  // namespace

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::mlem: return "mlem";
    case Algorithm::map_osl: return "map-osl";
    case Algorithm::pgm_pet: return "pgm-pet";
    case Algorithm::icm_em: return "icm-em";
    case Algorithm::pgd: return "pgd";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view name) {
  for (Algorithm a : {Algorithm::mlem, Algorithm::map_osl, Algorithm::pgm_pet, Algorithm::icm_em, Algorithm::pgd})
    if (to_string(a) == name) return a;
  throw std::invalid_argument("unknown algorithm '" + std::string(name) +
                              "' (expected mlem, map-osl, pgm-pet, icm-em or pgd)");
}

void ReconConfig::validate() const {
  if (n_outer_iters < 0) throw std::invalid_argument("recon: iterations must be >= 0");
  if (n_inner_image_updates < 1) throw std::invalid_argument("recon: inner image updates must be >= 1");
  if (!(beta >= 0.0)) throw std::invalid_argument("recon: beta must be >= 0");
  if (!(sigma > 0.0)) throw std::invalid_argument("recon: sigma must be > 0");
  if (!(spatial_beta >= 0.0)) throw std::invalid_argument("recon: spatial_beta must be >= 0");
  if (!(spatial_delta > 0.0)) throw std::invalid_argument("recon: spatial_delta must be > 0");
  if (!(floor_fraction > 0.0)) throw std::invalid_argument("recon: denominator floor must be > 0");
  if (indirect_fit_every < 0) throw std::invalid_argument("recon: indirect_fit_every must be >= 0");
  map_prior.validate();
  lm.validate();
}

double poisson_log_likelihood(const SystemMatrix& a, const Eigen::Ref<const Eigen::VectorXd>& x,
                              const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& r,
                              double scale) {
  const Eigen::VectorXd mean = scale * forward_project(a, x) + r;
  long double ll = 0.0L;
  for (Index i = 0; i < mean.size(); ++i) {
    const double yi = y(i);
    if (yi > 0.0) {
      if (!(mean(i) > 0.0)) return -std::numeric_limits<double>::infinity();
      ll += static_cast<long double>(yi) * std::log(static_cast<long double>(mean(i))) - mean(i) -
            std::lgamma(static_cast<long double>(yi) + 1.0L);
    } else {
      ll -= mean(i);
    }
  }
  return static_cast<double>(ll);
}

namespace {

Eigen::VectorXd em_ratio(const SystemMatrix& a, const Eigen::Ref<const Eigen::VectorXd>& x,
                         const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& r,
                         double scale) {
  if (y.size() != a.n_bins() || r.size() != a.n_bins()) throw std::invalid_argument("em update: sinogram size mismatch");
  const Eigen::VectorXd mean = scale * forward_project(a, x) + r;
  Eigen::VectorXd ratio(mean.size());
  for (Index i = 0; i < mean.size(); ++i) {
    if (y(i) > 0.0) {
      if (!(mean(i) > 0.0))
        throw std::domain_error("em update: zero expected counts in bin " + std::to_string(i) +
                                " with nonzero data (data/model inconsistency)");
      ratio(i) = y(i) / mean(i);
    } else {
      ratio(i) = 0.0;
    }
  }
  return back_project(a, ratio);
}

}  // namespace

Eigen::VectorXd mlem_update(const Eigen::Ref<const Eigen::VectorXd>& x, const SystemMatrix& a,
                            const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& r,
                            double scale) {
  if (x.size() != a.n_voxels()) throw std::invalid_argument("mlem_update: image size mismatch");
  const Eigen::VectorXd bp = em_ratio(a, x, y, r, scale);
  const Eigen::VectorXd& s = a.sensitivity();
  Eigen::VectorXd out(x.size());
  for (Index j = 0; j < x.size(); ++j) out(j) = s(j) > 0.0 ? x(j) * bp(j) / s(j) : x(j);
  return out;
}

Eigen::MatrixXd kinetic_prior_gradient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& f, double sigma) {
  if (x.rows() != f.rows() || x.cols() != f.cols()) throw std::invalid_argument("kinetic_prior_gradient: shape mismatch");
  return -(x - f) / (sigma * sigma);
}

Eigen::VectorXd spatial_prior_gradient(const Eigen::Ref<const Eigen::VectorXd>& frame, Index width, Index height,
                                       double delta) {
  if (frame.size() != width * height) throw std::invalid_argument("spatial_prior_gradient: size mismatch");
  Eigen::VectorXd g = Eigen::VectorXd::Zero(frame.size());
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      const Index j = y * width + x;
      double s = 0.0;
      if (x > 0) s += huber(frame(j) - frame(j - 1), delta).derivative;
      if (x + 1 < width) s += huber(frame(j) - frame(j + 1), delta).derivative;
      if (y > 0) s += huber(frame(j) - frame(j - width), delta).derivative;
      if (y + 1 < height) s += huber(frame(j) - frame(j + width), delta).derivative;
      g(j) = -s;
    }
  return g;
}

Eigen::VectorXd osl_penalized_update(const Eigen::Ref<const Eigen::VectorXd>& x, const SystemMatrix& a,
                                     const Eigen::Ref<const Eigen::VectorXd>& y,
                                     const Eigen::Ref<const Eigen::VectorXd>& r,
                                     const Eigen::Ref<const Eigen::VectorXd>& prior_grad, double beta, double eps,
                                     double scale, OslDiagnostics* diag) {
  if (x.size() != a.n_voxels() || prior_grad.size() != a.n_voxels())
    throw std::invalid_argument("osl_penalized_update: image size mismatch");
  const Eigen::VectorXd& s = a.sensitivity();
  if (beta == 0.0) {
    if (diag) *diag = {0, (s.array() > 0.0).count()};
    return mlem_update(x, a, y, r, scale);
  }
  const Eigen::VectorXd bp = em_ratio(a, x, y, r, scale);
  Eigen::VectorXd out(x.size());
  OslDiagnostics d;
  for (Index j = 0; j < x.size(); ++j) {
    if (!(s(j) > 0.0)) {
      out(j) = x(j);
      continue;
    }
    ++d.voxels;
    double denom = scale * s(j) - beta * prior_grad(j);
    if (!(denom >= eps)) {
      denom = eps;
      ++d.floored;
    }
    out(j) = x(j) * (scale * bp(j)) / denom;
  }
  if (diag) *diag = d;
  return out;
}

Eigen::MatrixXd initial_image(const SinogramSeries& y, const SystemMatrix& a) {
  const Eigen::VectorXd& s = a.sensitivity();
  const double s_total = s.sum();
  Eigen::MatrixXd x(a.n_voxels(), y.n_frames());
  for (Index m = 0; m < y.n_frames(); ++m) {
    double v = (y.counts().col(m).sum() - y.background().col(m).sum()) / (y.frame_scale()(m) * s_total);
    if (!(v > 0.0) || !std::isfinite(v)) v = 1e-6;
    for (Index j = 0; j < x.rows(); ++j) x(j, m) = s(j) > 0.0 ? v : 0.0;
  }
  return x;
}

Eigen::MatrixXd model_image(const Eigen::MatrixXd& maps, const KineticModel& model) {
  Eigen::MatrixXd f(maps.rows(), model.n_frames());
  parallel_for(maps.rows(), [&](Index j) {
    if (maps(j, 0) == 0.0 && maps(j, 3) == 0.0) {
      f.row(j).setZero();
      return;
    }
    Eigen::VectorXd v(model.n_frames());
    model.evaluate(KineticParams::from_vector(maps.row(j).transpose()), v);
    f.row(j) = v.transpose();
  });
  return f;
}

Eigen::MatrixXd fit_maps(const Eigen::MatrixXd& tacs, Index width, Index height, const KineticModel& model,
                         const HuberSpec& prior, double sigma, const LMOptions& opts, int sweeps,
                         const Eigen::MatrixXd& start, std::vector<VoxelFit>* diagnostics) {
  Eigen::MatrixXd maps = start;
  for (int s = 0; s < sweeps; ++s)
    maps = map_lm_sweep(maps, tacs, width, height, model, prior, sigma, opts, diagnostics);
  return maps;
}

ReconResult mlem_reconstruct(const SinogramSeries& y, const SystemMatrix& a, const KineticModel& model,
                             const ReconConfig& config, const ReconOptions& options) {
  Run run(y, a, model, config, options);
  for (int c = 1; c <= config.n_outer_iters; ++c) {
    run.mlem_step();
    run.image_changed();
    if (config.indirect_fit_every > 0 && c % config.indirect_fit_every == 0) run.indirect_fit();
    run.record(c);
  }
  return run.finish();
}

ReconResult map_osl_reconstruct(const SinogramSeries& y, const SystemMatrix& a, const KineticModel& model,
                                const ReconConfig& config, const ReconOptions& options) {
  Run run(y, a, model, config, options);
  for (int c = 1; c <= config.n_outer_iters; ++c) {
    run.osl_step(config.spatial_beta, [&](Index m) {
      return spatial_prior_gradient(run.x().col(m), run.width(), run.height(), config.spatial_delta);
    });
    run.image_changed();
    if (config.indirect_fit_every > 0 && c % config.indirect_fit_every == 0) run.indirect_fit();
    run.record(c);
  }
  return run.finish();
}

ReconResult pgm_pet_reconstruct(const SinogramSeries& y, const SystemMatrix& a, const KineticModel& model,
                                const ReconConfig& config, const ReconOptions& options) {
  Run run(y, a, model, config, options);
  for (int c = 1; c <= config.n_outer_iters; ++c) {
    Eigen::MatrixXd theta = run.sweep(run.x(), config.lm);
    Eigen::MatrixXd f = model_image(theta, model);
    run.set_maps(std::move(theta), std::move(f));
    for (int k = 0; k < config.n_inner_image_updates; ++k)
      run.osl_step(config.beta, [&](Index m) { return kinetic_frame_gradient(run.x(), run.f(), m, config.sigma); });
    run.record(c);
  }
  return run.finish();
}

ReconResult icm_em_reconstruct(const SinogramSeries& y, const SystemMatrix& a, const KineticModel& model,
                               const ReconConfig& config, const ReconOptions& options) {
  Run run(y, a, model, config, options);
  for (int c = 1; c <= config.n_outer_iters; ++c) {
    run.mlem_step();
    Eigen::MatrixXd theta = run.sweep(run.x(), config.lm);
    Eigen::MatrixXd f = model_image(theta, model);
    run.x() = f;
    run.set_maps(std::move(theta), std::move(f));
    run.record(c);
  }
  return run.finish();
}

ReconResult pgd_reconstruct(const SinogramSeries& y, const SystemMatrix& a, const KineticModel& model,
                            const ReconConfig& config, const ReconOptions& options) {
  Run run(y, a, model, config, options);
  LMOptions one_step = config.lm;
  one_step.max_iters = 1;
  Eigen::MatrixXd f_prev = model_image(run.theta(), model);
  for (int c = 1; c <= config.n_outer_iters; ++c) {
    Eigen::MatrixXd theta = run.sweep(run.x(), one_step);
    run.osl_step(config.beta, [&](Index m) { return kinetic_frame_gradient(run.x(), f_prev, m, config.sigma); });
    f_prev = model_image(theta, model);
    run.set_maps(std::move(theta), f_prev);
    run.record(c);
  }
  return run.finish();
}

ReconResult reconstruct(const SinogramSeries& y, const SystemMatrix& a, const KineticModel& model,
                        const ReconConfig& config, const ReconOptions& options) {
  switch (config.algorithm) {
    case Algorithm::mlem: return mlem_reconstruct(y, a, model, config, options);
    case Algorithm::map_osl: return map_osl_reconstruct(y, a, model, config, options);
    case Algorithm::pgm_pet: return pgm_pet_reconstruct(y, a, model, config, options);
    case Algorithm::icm_em: return icm_em_reconstruct(y, a, model, config, options);
    case Algorithm::pgd: return pgd_reconstruct(y, a, model, config, options);
  }
  throw std::invalid_argument("reconstruct: unknown algorithm");
}

CsvTable history_csv(const std::vector<CycleRecord>& history) {
  CsvTable t{{"cycle", "poisson_loglik", "km_residual", "bias_db", "roi_noise", "floored_fraction", "lm_iterations",
              "image_updates"},
             {}};
  for (const auto& r : history)
    t.rows.push_back({std::to_string(r.cycle), format_double(r.poisson_loglik), format_double(r.km_residual),
                      format_double(r.bias_db), format_double(r.roi_noise), format_double(r.floored_fraction),
                      std::to_string(r.lm_iterations), std::to_string(r.image_updates)});
  return t;
}

}  // namespace dpet
