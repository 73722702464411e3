#include "dpet/recon.hpp"

#include "scene.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

using namespace dpet;
using dpet::testing::Scene;

namespace {

Eigen::VectorXd random_positive(Index n, std::uint64_t seed, double lo = 0.5, double hi = 2.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (auto& e : v) e = u(rng);
  return v;
}

SystemMatrix tiny_matrix() { return build_system_matrix({4, 4, 1.0, 5, 6, 1.0}); }

// Dense reference for x * c A^T(y / (c A x + r)) / (c s - beta g), floored at eps.
Eigen::VectorXd dense_osl(const SystemMatrix& sm, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& r, const Eigen::VectorXd& g, double beta, double eps, double c) {
  const Eigen::MatrixXd a = Eigen::MatrixXd(sm.matrix());
  Eigen::VectorXd out(x.size());
  for (Index j = 0; j < x.size(); ++j) {
    double num = 0.0, s = 0.0;
    for (Index i = 0; i < a.rows(); ++i) {
      double mean = r(i);
      for (Index k = 0; k < a.cols(); ++k) mean += c * a(i, k) * x(k);
      num += a(i, j) * y(i) / mean;
      s += a(i, j);
    }
    out(j) = x(j) * c * num / std::max(c * s - beta * g(j), eps);
  }
  return out;
}

double max_rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

ReconConfig config(Algorithm alg, int iters, double beta = 0.0) {
  ReconConfig c;
  c.algorithm = alg;
  c.n_outer_iters = iters;
  c.beta = beta;
  c.checkpoints = {};
  return c;
}

}  // namespace

TEST_SUITE("recon") {

TEST_CASE("algorithm names") {
  for (Algorithm a : {Algorithm::mlem, Algorithm::map_osl, Algorithm::pgm_pet, Algorithm::icm_em, Algorithm::pgd})
    CHECK(parse_algorithm(to_string(a)) == a);
  CHECK_THROWS_AS(parse_algorithm("osem"), std::invalid_argument);
}

TEST_CASE("config validation") {
  ReconConfig c;
  CHECK_NOTHROW(c.validate());
  c.sigma = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.beta = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.n_inner_image_updates = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.floor_fraction = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("em update fixed point and zero data") {
  const SystemMatrix a = build_system_matrix({8, 8, 2.0, 10, 12, 2.0});
  const Eigen::VectorXd x = random_positive(a.n_voxels(), 1);
  const Eigen::VectorXd r = Eigen::VectorXd::Constant(a.n_bins(), 0.3);
  const double c = 7.5;
  const Eigen::VectorXd y = c * forward_project(a, x) + r;
  const Eigen::VectorXd next = mlem_update(x, a, y, r, c);
  for (Index j = 0; j < x.size(); ++j)
    if (a.sensitivity()(j) > 0.0) CHECK(std::abs(next(j) - x(j)) <= 1e-12 * x(j));

  const Eigen::VectorXd zero = mlem_update(x, a, Eigen::VectorXd::Zero(a.n_bins()), r, c);
  for (Index j = 0; j < x.size(); ++j)
    if (a.sensitivity()(j) > 0.0) CHECK(zero(j) == 0.0);
}

TEST_CASE("em update flags data the model cannot explain") {
  const SystemMatrix a = tiny_matrix();
  const Eigen::VectorXd y = Eigen::VectorXd::Ones(a.n_bins());
  CHECK_THROWS_AS(mlem_update(Eigen::VectorXd::Zero(16), a, y, Eigen::VectorXd::Zero(a.n_bins())), std::domain_error);
  CHECK_THROWS_AS(mlem_update(Eigen::VectorXd::Zero(15), a, y, y), std::invalid_argument);
}

TEST_CASE("dense oracle for the em and osl updates") {
  const SystemMatrix a = tiny_matrix();
  const Eigen::VectorXd x = random_positive(16, 2);
  const Eigen::VectorXd y = random_positive(a.n_bins(), 3, 0.0, 20.0).array().round().matrix();
  const Eigen::VectorXd r = random_positive(a.n_bins(), 4, 0.1, 0.5);
  const Eigen::VectorXd g = random_positive(16, 5, -1.0, 1.0);
  const double c = 2.5;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(16);

  CHECK(max_rel(mlem_update(x, a, y, r, c), dense_osl(a, x, y, r, zero, 0.0, 0.0, c)) < 1e-12);
  for (double beta : {0.3, 1.7}) {
    CAPTURE(beta);
    const double eps = 1e-6 * c * a.sensitivity().maxCoeff();
    OslDiagnostics d;
    const Eigen::VectorXd got = osl_penalized_update(x, a, y, r, g, beta, eps, c, &d);
    CHECK(max_rel(got, dense_osl(a, x, y, r, g, beta, eps, c)) < 1e-12);
    CHECK(d.floored == 0);
    CHECK(d.voxels == 16);
  }
}

TEST_CASE("osl floors small denominators and reports them") {
  const SystemMatrix a = tiny_matrix();
  const Eigen::VectorXd x = Eigen::VectorXd::Ones(16);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(a.n_bins(), 5.0);
  const Eigen::VectorXd r = Eigen::VectorXd::Constant(a.n_bins(), 0.1);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(16);
  g(5) = 1e6;
  OslDiagnostics d;
  const Eigen::VectorXd out = osl_penalized_update(x, a, y, r, g, 1.0, 1e-3, 1.0, &d);
  CHECK(d.floored == 1);
  CHECK(out.allFinite());
  CHECK(out.minCoeff() >= 0.0);
}

TEST_CASE("beta zero osl is the em update bitwise") {
  const SystemMatrix a = build_system_matrix({8, 8, 2.0, 10, 12, 2.0});
  const Eigen::VectorXd x = random_positive(64, 6);
  const Eigen::VectorXd y = random_positive(a.n_bins(), 7, 0.0, 30.0).array().round().matrix();
  const Eigen::VectorXd r = Eigen::VectorXd::Constant(a.n_bins(), 0.2);
  const Eigen::VectorXd g = random_positive(64, 8, -5.0, 5.0);
  CHECK(osl_penalized_update(x, a, y, r, g, 0.0, 1e-9, 3.0) == mlem_update(x, a, y, r, 3.0));
}

TEST_CASE("kinetic prior gradient") {
  const double sigma = 3.0;
  Eigen::MatrixXd f = Eigen::MatrixXd::Random(5, 4);
  CHECK(kinetic_prior_gradient(f, f, sigma).isZero());
  Eigen::MatrixXd x = f;
  x(2, 1) += sigma * sigma;
  const Eigen::MatrixXd g = kinetic_prior_gradient(x, f, sigma);
  CHECK(g(2, 1) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(g.cwiseAbs().sum() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(kinetic_prior_gradient(x, f.topRows(4), sigma), std::invalid_argument);

  // Central differences of -(1/2 sigma^2) sum (x - f)^2.
  auto logp = [&](const Eigen::MatrixXd& v) { return -(v - f).squaredNorm() / (2.0 * sigma * sigma); };
  x = Eigen::MatrixXd::Random(5, 4) * 10.0;
  const Eigen::MatrixXd ga = kinetic_prior_gradient(x, f, sigma);
  const double h = 1e-4;
  for (Index j = 0; j < 5; ++j)
    for (Index m = 0; m < 4; ++m) {
      Eigen::MatrixXd up = x, down = x;
      up(j, m) += h;
      down(j, m) -= h;
      const double fd = (logp(up) - logp(down)) / (2 * h);
      CHECK(std::abs(fd - ga(j, m)) <= 1e-6 * std::max(1.0, std::abs(ga(j, m))));
    }
}

TEST_CASE("spatial prior gradient") {
  const double delta = 1.0;
  CHECK(spatial_prior_gradient(Eigen::VectorXd::Constant(20, 3.0), 5, 4, delta).isZero());

  Eigen::VectorXd hot = Eigen::VectorXd::Zero(25);
  const double h = 0.4;
  hot(12) = h;
  const Eigen::VectorXd g = spatial_prior_gradient(hot, 5, 5, delta);
  CHECK(g(12) == doctest::Approx(-4 * h));
  CHECK(g(7) == doctest::Approx(h));

  const Eigen::VectorXd any = random_positive(30, 9, -4.0, 4.0);
  CHECK(std::abs(spatial_prior_gradient(any, 6, 5, delta).sum()) < 1e-12);
  CHECK_THROWS_AS(spatial_prior_gradient(any, 5, 5, delta), std::invalid_argument);
}

TEST_CASE("initial image matches the net counts") {
  const Scene s(16, 12, testing::short_schedule());
  const SinogramSeries y = simulate_sinograms(s.truth, s.a, 2e5, 0.2, 11);
  const Eigen::MatrixXd x0 = initial_image(y, s.a);
  for (Index m = 0; m < y.n_frames(); ++m) {
    const double predicted = y.frame_scale()(m) * forward_project(s.a, x0.col(m)).sum() + y.background().col(m).sum();
    CHECK(predicted == doctest::Approx(y.counts().col(m).sum()).epsilon(1e-12));
  }
  CHECK(x0.minCoeff() >= 0.0);
}

TEST_CASE("mlem raises the likelihood and stays nonnegative") {
  const Scene s(16, 12, testing::short_schedule());
  const SinogramSeries y = simulate_sinograms(s.truth, s.a, 2e5, 0.2, 12);
  Eigen::MatrixXd x = initial_image(y, s.a);
  for (Index m = 0; m < y.n_frames(); ++m) {
    const auto yc = y.counts().col(m), r = y.background().col(m);
    const double c = y.frame_scale()(m);
    Eigen::VectorXd xm = x.col(m);
    double prev = poisson_log_likelihood(s.a, xm, yc, r, c);
    for (int it = 0; it < 30; ++it) {
      xm = mlem_update(xm, s.a, yc, r, c);
      const double ll = poisson_log_likelihood(s.a, xm, yc, r, c);
      CHECK(ll >= prev - 1e-9);
      CHECK(xm.minCoeff() >= 0.0);
      prev = ll;
    }
  }
}

TEST_CASE("beta zero drivers reduce to mlem bitwise") {
  const Scene s(16, 12, testing::short_schedule());
  const SinogramSeries y = simulate_sinograms(s.truth, s.a, 2e5, 0.2, 13);
  const ReconResult ref = reconstruct(y, s.a, s.model, config(Algorithm::mlem, 6));
  for (Algorithm alg : {Algorithm::pgm_pet, Algorithm::pgd, Algorithm::map_osl}) {
    CAPTURE(to_string(alg));
    const ReconResult r = reconstruct(y, s.a, s.model, config(alg, 6));
    CHECK(r.image.values() == ref.image.values());
  }
  ReconConfig two = config(Algorithm::pgm_pet, 3);
  two.n_inner_image_updates = 2;
  CHECK(reconstruct(y, s.a, s.model, two).image.values() == ref.image.values());
}

TEST_CASE("all drivers keep the image nonnegative and record every cycle") {
  const Scene s(16, 12, testing::short_schedule());
  const SinogramSeries y = simulate_sinograms(s.truth, s.a, 2e5, 0.2, 14);
  const GroundTruth gt = s.ground_truth();
  for (Algorithm alg : {Algorithm::mlem, Algorithm::map_osl, Algorithm::pgm_pet, Algorithm::icm_em, Algorithm::pgd}) {
    CAPTURE(to_string(alg));
    ReconConfig c = config(alg, 4, 100.0);
    c.spatial_beta = 0.5;
    c.checkpoints = {2, 4};
    const ReconResult r = reconstruct(y, s.a, s.model, c, {&gt});
    CHECK(r.image.values().minCoeff() >= 0.0);
    REQUIRE(r.history.size() == 4);
    CHECK(r.snapshots.size() == 2);
    CHECK(r.snapshots[1].cycle == 4);
    for (const auto& h : r.history) {
      CHECK(std::isfinite(h.bias_db));
      CHECK(h.image_updates == 1);
    }
    CHECK(history_csv(r.history).rows.size() == 4);
  }
}

TEST_CASE("icm-em output lies on the model manifold") {
  const Scene s(16, 12, testing::short_schedule());
  const SinogramSeries y = simulate_sinograms(s.truth, s.a, 2e5, 0.2, 15);
  ReconConfig c = config(Algorithm::icm_em, 3);
  c.checkpoints = {1, 2, 3};
  const ReconResult r = reconstruct(y, s.a, s.model, c);
  for (const Snapshot& snap : r.snapshots) {
    REQUIRE(snap.maps.has_value());
    CHECK(snap.image.values() == model_image(snap.maps->values(), s.model));
  }
}

TEST_CASE("pgd and single-step pgm do the same work per cycle") {
  const Scene s(16, 12, testing::short_schedule());
  const SinogramSeries y = simulate_sinograms(s.truth, s.a, 2e5, 0.2, 16);
  ReconConfig c = config(Algorithm::pgm_pet, 5, 100.0);
  c.lm.max_iters = 1;
  const ReconResult pgm = reconstruct(y, s.a, s.model, c);
  c.algorithm = Algorithm::pgd;
  c.lm.max_iters = 10;  // pgd caps itself at one step
  const ReconResult pgd = reconstruct(y, s.a, s.model, c);
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(pgm.history[k].image_updates == pgd.history[k].image_updates);
    CHECK(pgm.history[k].lm_iterations == pgd.history[k].lm_iterations);
  }
}

TEST_CASE("model-consistent data is a fixed point of pgm-pet") {
  const Scene s(16, 12, testing::short_schedule());
  const SinogramSeries y = s.expected(2e5);
  const Eigen::MatrixXd x0 = s.truth.values(), theta0 = s.phantom.maps().values();
  ReconConfig c = config(Algorithm::pgm_pet, 3, 100.0);
  c.map_prior.gamma = 0.0;
  const ReconResult r = reconstruct(y, s.a, s.model, c, {nullptr, &x0, &theta0});
  CHECK(max_rel(r.image.values(), x0) < 1e-10);
  CHECK(max_rel(r.maps.values(), theta0) < 1e-10);

  c.algorithm = Algorithm::icm_em;
  const ReconResult e = reconstruct(y, s.a, s.model, c, {nullptr, &x0, &theta0});
  CHECK(max_rel(e.image.values(), x0) < 1e-10);
}

TEST_CASE("noiseless pgm-pet bias falls over the first cycles") {
  const Scene s(32, 48, standard_fdg_schedule());
  const SinogramSeries y = s.expected(5e6);
  const GroundTruth gt = s.ground_truth();
  const ReconResult r = reconstruct(y, s.a, s.model, config(Algorithm::pgm_pet, 20, 100.0), {&gt});
  for (std::size_t k = 1; k < r.history.size(); ++k) {
    CAPTURE(k);
    CHECK(r.history[k].bias_db < r.history[k - 1].bias_db);
  }
}

TEST_CASE("reconstruct rejects mismatched inputs") {
  const Scene s(16, 12, testing::short_schedule());
  const SinogramSeries y = simulate_sinograms(s.truth, s.a, 2e5, 0.2, 17);
  const KineticModel other(InputFunction{}, FrameSchedule::parse("12x270"));
  CHECK_THROWS_AS(reconstruct(y, s.a, other, config(Algorithm::mlem, 1)), std::invalid_argument);
  const SystemMatrix small = build_system_matrix({8, 8, 2.0, 10, 12, 2.0});
  CHECK_THROWS_AS(reconstruct(y, small, s.model, config(Algorithm::mlem, 1)), std::invalid_argument);
  const Eigen::MatrixXd bad = Eigen::MatrixXd::Ones(3, 3);
  CHECK_THROWS_AS(reconstruct(y, s.a, s.model, config(Algorithm::mlem, 1), {nullptr, &bad, nullptr}),
                  std::invalid_argument);
}

}
