#include "dpet/kinetics.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

using namespace dpet;

namespace {

KineticParams per_min(double k1, double k2, double k3, double fv) { return {k1 / 60, k2 / 60, k3 / 60, fv}; }

// Two-compartment ODE integrated with classic RK4 on a 0.01 s grid, then
// frame-averaged with the trapezoid rule.
Eigen::VectorXd rk4_frame_values(const KineticParams& p, const InputFunction& cp, const FrameSchedule& s) {
  const double h = 0.01;
  const auto n_end = static_cast<long>(std::llround(s.end(s.size() - 1) / h));
  std::vector<double> pet(static_cast<std::size_t>(n_end + 1));
  double c1 = 0.0, c2 = 0.0;
  auto f1 = [&](double t, double x) { return p.K1 * cp(t) - (p.k2 + p.k3) * x; };
  for (long n = 0; n <= n_end; ++n) {
    const double t = static_cast<double>(n) * h;
    pet[static_cast<std::size_t>(n)] = (1.0 - p.fv) * (c1 + c2) + p.fv * cp(t);
    const double a1 = f1(t, c1), b1 = p.k3 * c1;
    const double a2 = f1(t + h / 2, c1 + h / 2 * a1), b2 = p.k3 * (c1 + h / 2 * a1);
    const double a3 = f1(t + h / 2, c1 + h / 2 * a2), b3 = p.k3 * (c1 + h / 2 * a2);
    const double a4 = f1(t + h, c1 + h * a3), b4 = p.k3 * (c1 + h * a3);
    c1 += h / 6 * (a1 + 2 * a2 + 2 * a3 + a4);
    c2 += h / 6 * (b1 + 2 * b2 + 2 * b3 + b4);
  }
  Eigen::VectorXd out(s.size());
  for (Index m = 0; m < s.size(); ++m) {
    const auto a = static_cast<std::size_t>(std::llround(s.start(m) / h));
    const auto b = static_cast<std::size_t>(std::llround(s.end(m) / h));
    double sum = 0.5 * (pet[a] + pet[b]);
    for (std::size_t n = a + 1; n < b; ++n) sum += pet[n];
    out(m) = sum / static_cast<double>(b - a);
  }
  return out;
}

double max_rel(const Eigen::VectorXd& a, const Eigen::VectorXd& ref) {
  return ((a - ref).cwiseAbs().array() / ref.cwiseAbs().array()).maxCoeff();
}

}  // namespace

TEST_SUITE("kinetics") {

TEST_CASE("input function shape") {
  const InputFunction cp;
  CHECK(cp(0.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(cp(30.0) > cp(600.0));
  CHECK(cp(600.0) > 0.0);
  InputFunction late = cp;
  late.delay = 15.0;
  CHECK(late(10.0) == 0.0);
  CHECK(late(25.0) == doctest::Approx(cp(10.0)));
  CHECK_NOTHROW(cp.validate(2400.0));
  InputFunction bad = cp;
  bad.a2 = -200.0;
  CHECK_THROWS_AS(bad.validate(2400.0), std::invalid_argument);
  CHECK(input_value(cp, 42.0) == cp(42.0));
}

TEST_CASE("parameter validation and Ki") {
  CHECK_THROWS_AS((KineticParams{-0.1, 0, 0, 0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((KineticParams{0.1, 0, 0, 1.5}.validate()), std::invalid_argument);
  CHECK(ki({0.1, 0.2, 0.05, 0.3}) == doctest::Approx(0.1 * 0.05 / 0.25));
  CHECK_THROWS_AS(ki({0.1, 0.0, 0.0, 0.0}), std::domain_error);
}

TEST_CASE("frame values match an RK4 compartment integration") {
  const InputFunction cp;
  const FrameSchedule s = standard_fdg_schedule();
  const KineticModel model(cp, s);
  for (const KineticParams& p : {per_min(0.102, 0.13, 0.062, 0.05), per_min(0.054, 0.109, 0.045, 0.03),
                                 per_min(0.2, 0.12, 0.12, 0.08), per_min(0.3, 0.6, 0.0, 0.1),
                                 per_min(0.3, 0.0, 0.0, 0.0), per_min(0.3, 0.0, 0.2, 0.2)}) {
    CAPTURE(p.K1);
    CAPTURE(p.k2);
    CAPTURE(p.k3);
    CHECK(max_rel(model.frame_values(p), rk4_frame_values(p, cp, s)) < 5e-4);
  }
}

TEST_CASE("tissue curve matches RK4 pointwise") {
  const InputFunction cp;
  const KineticParams p = per_min(0.102, 0.13, 0.062, 0.05);
  const TimeGrid grid{0.1, 3001};
  const Eigen::VectorXd c = tissue_curve(p, cp, grid);
  // Single-sample frames at a few times.
  for (double t : {20.0, 60.0, 150.0, 300.0}) {
    const FrameSchedule one({t - 0.1}, {0.2});
    const double ref = rk4_frame_values(p, cp, one)(0);
    CHECK(c(static_cast<Index>(std::llround(t / 0.1))) == doctest::Approx(ref).epsilon(1e-3));
  }
  CHECK_THROWS_AS(tissue_curve(p, cp, TimeGrid{1.0, 10}), std::invalid_argument);
}

TEST_CASE("coarse nodes agree with the full fine grid") {
  const InputFunction cp;
  const FrameSchedule s = standard_fdg_schedule();
  const KineticModel coarse(cp, s), fine(cp, s, 0.1, 0.0);
  CHECK(coarse.n_nodes() < fine.n_nodes() / 10);
  CHECK(fine.n_nodes() == 24001);
  const KineticParams p = per_min(0.2, 0.12, 0.12, 0.08);
  CHECK(max_rel(coarse.frame_values(p), fine.frame_values(p)) < 1e-4);
}

TEST_CASE("special cases") {
  const InputFunction cp;
  const FrameSchedule s = standard_fdg_schedule();
  const KineticModel model(cp, s);
  CHECK(model.frame_values({0, 0, 0, 1}) == model.input_frame_means());
  CHECK(model.frame_values({0, 0.01, 0.001, 0}).isZero());
  const Eigen::VectorXd f1 = model.frame_values({0.001, 0.002, 0.001, 0.0});
  const Eigen::VectorXd f2 = model.frame_values({0.002, 0.002, 0.001, 0.0});
  CHECK((f2 - 2.0 * f1).cwiseAbs().maxCoeff() < 1e-12 * f2.cwiseAbs().maxCoeff());
  // Cp frame means: first frame average of a curve starting at zero.
  CHECK(model.input_frame_means()(0) > 0.0);
}

TEST_CASE("values are identical with and without the Jacobian") {
  const KineticModel model(InputFunction{}, standard_fdg_schedule());
  const KineticParams p = per_min(0.15, 0.2, 0.07, 0.04);
  Eigen::VectorXd a(24), b(24);
  KineticModel::Jacobian j(24, 4);
  model.evaluate(p, a);
  model.evaluate(p, b, j);
  CHECK(a == b);
}

TEST_CASE("Jacobian matches central differences") {
  const InputFunction cp;
  const FrameSchedule s = standard_fdg_schedule();
  const KineticModel model(cp, s);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Eigen::Vector4d hi(0.01, 0.01, 0.005, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Vector4d th(u(rng) * hi(0), u(rng) * hi(1), u(rng) * hi(2), 0.05 + 0.9 * u(rng));
    Eigen::VectorXd f(24);
    KineticModel::Jacobian j(24, 4);
    model.evaluate(KineticParams::from_vector(th), f, j);
    for (int p = 0; p < 4; ++p) {
      const double h = 1e-5 * hi(p);
      Eigen::Vector4d tp = th, tm = th;
      tp(p) += h;
      tm(p) -= h;
      const Eigen::VectorXd fd =
          (model.frame_values(KineticParams::from_vector(tp)) - model.frame_values(KineticParams::from_vector(tm))) /
          (2 * h);
      const double scale = fd.cwiseAbs().maxCoeff();
      CHECK((j.col(p) - fd).cwiseAbs().maxCoeff() <= 1e-5 * scale);
    }
  }
}

TEST_CASE("Jacobian stays finite at k2 + k3 = 0") {
  const KineticModel model(InputFunction{}, standard_fdg_schedule());
  Eigen::VectorXd f(24);
  KineticModel::Jacobian j(24, 4);
  model.evaluate({0.002, 0.0, 0.0, 0.1}, f, j);
  CHECK(j.allFinite());
  CHECK(j.col(1).maxCoeff() < 0.0);
}

TEST_CASE("sampled input gives the same model") {
  const InputFunction cp;
  const FrameSchedule s = FrameSchedule::parse("6x10,2x30,2x60");
  std::vector<double> samples(2401);
  for (std::size_t n = 0; n < samples.size(); ++n) samples[n] = cp(0.1 * static_cast<double>(n));
  const KineticModel a(cp, s), b(samples, s);
  const KineticParams p = per_min(0.1, 0.1, 0.05, 0.05);
  CHECK(a.frame_values(p) == b.frame_values(p));
  CHECK_THROWS_AS(KineticModel(std::vector<double>(100, 1.0), s), std::invalid_argument);
}

TEST_CASE("frame boundaries must sit on the grid") {
  CHECK_THROWS_AS(KineticModel(InputFunction{}, FrameSchedule({0.0}, {10.05})), std::invalid_argument);
  CHECK_THROWS_AS(KineticModel(InputFunction{}, FrameSchedule::parse("2x10"), 0.6), std::invalid_argument);
  const auto f = model_frame_values({0.001, 0.001, 0.001, 0.1}, InputFunction{}, FrameSchedule::parse("3x20"));
  CHECK(f.size() == 3);
  CHECK(model_jacobian({0.001, 0.001, 0.001, 0.1}, InputFunction{}, FrameSchedule::parse("3x20")).rows() == 3);
}

}
