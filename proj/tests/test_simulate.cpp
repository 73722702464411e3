#include "dpet/simulate.hpp"

#include "scene.hpp"

#include <doctest.h>

#include <cmath>
#include <stdexcept>

using namespace dpet;

TEST_SUITE("simulate") {

TEST_CASE("desk phantom layout") {
  const Phantom p = build_phantom(64, 64, default_region_params());
  for (Region r : {Region::gm, Region::wm, Region::tumor, Region::blood}) CHECK(p.count(r) > 0);
  CHECK(p.count(Region::blood) >= 12);
  Index total = 0;
  for (int r = 0; r < kNumRegions; ++r) total += p.count(static_cast<Region>(r));
  CHECK(total == 64 * 64);
  // Grid border lies outside every ellipse.
  for (Index x = 0; x < 64; ++x) CHECK(p.label(x) == Region::background);
  CHECK(p.gm_roi().count() > 0);
  CHECK(p.gm_roi().count() < p.count(Region::gm));
  for (Index j = 0; j < p.n_voxels(); ++j)
    if (p.gm_roi()[j]) CHECK(p.label(j) == Region::gm);

  const Phantom q = build_phantom(64, 64, default_region_params());
  CHECK(q.labels() == p.labels());
  const auto px = p.preview();
  CHECK(*std::max_element(px.begin(), px.end()) == 255);
}

TEST_CASE("phantom errors") {
  RegionParams r = default_region_params();
  r.tumor.reset();
  CHECK_THROWS_WITH_AS(build_phantom(64, 64, r), "phantom: missing parameters for region 'tumor'",
                       std::invalid_argument);
  CHECK_THROWS_AS(build_phantom(4, 64, default_region_params()), std::invalid_argument);
  r = default_region_params();
  r.wm->fv = 1.5;
  CHECK_THROWS_AS(build_phantom(16, 16, r), std::invalid_argument);
}

TEST_CASE("dynamic image synthesis") {
  const KineticModel model(InputFunction{}, standard_fdg_schedule());
  const Phantom p = build_phantom(32, 32, default_region_params());
  const DynamicImage x = synthesize_dynamic_image(p, model);
  const Eigen::VectorXd gm = model.frame_values(*default_region_params().gm);
  for (Index j = 0; j < p.n_voxels(); ++j) {
    switch (p.label(j)) {
      case Region::background: CHECK(x.tac(j).isZero()); break;
      case Region::gm: CHECK(x.tac(j).transpose() == gm); break;
      case Region::blood: CHECK(x.tac(j).transpose() == model.input_frame_means()); break;
      default: break;
    }
  }
  const Phantom empty(8, 8, std::vector<Region>(64, Region::background), {});
  CHECK(synthesize_dynamic_image(empty, model).values().isZero());
  CHECK(synthesize_dynamic_image(p, InputFunction{}, standard_fdg_schedule()).values() == x.values());

  const CsvTable t = region_tacs_csv(p, model);
  CHECK(t.header == std::vector<std::string>{"time", "gm", "wm", "tumor", "blood"});
  CHECK(t.rows.size() == 24);
}

TEST_CASE("seeded sampling is reproducible") {
  const testing::Scene s(16, 12, testing::short_schedule());
  const SinogramSeries a = simulate_sinograms(s.truth, s.a, 1e5, 0.2, 42);
  const SinogramSeries b = simulate_sinograms(s.truth, s.a, 1e5, 0.2, 42);
  const SinogramSeries c = simulate_sinograms(s.truth, s.a, 1e5, 0.2, 43);
  CHECK(a.counts() == b.counts());
  CHECK(a.background() == b.background());
  CHECK(a.counts() != c.counts());
  CHECK((a.counts().array() == a.counts().array().round()).all());
}

TEST_CASE("calibration carries the target counts") {
  const testing::Scene s(16, 12, testing::short_schedule());
  const SinogramSeries y = simulate_sinograms(s.truth, s.a, 1e5, 0.2, 1);
  const SinogramSeries e = expected_sinograms(s.truth, s.a, y.frame_scale(), y.background());
  CHECK(e.is_expectation());
  CHECK(e.counts().sum() == doctest::Approx(1e5).epsilon(1e-12));
  CHECK(y.background().sum() == doctest::Approx(2e4).epsilon(1e-12));
  for (Index m = 0; m < y.n_frames(); ++m) CHECK(y.frame_scale()(m) / s.model.schedule().duration(m) ==
                                                 doctest::Approx(y.frame_scale()(0) / s.model.schedule().duration(0)));
}

TEST_CASE("zero activity") {
  const SystemMatrix a = build_system_matrix({8, 8, 2.0, 6, 12, 2.0});
  const DynamicImage zero = DynamicImage::zeros(8, 8, FrameSchedule::parse("3x60"));
  CHECK(simulate_sinograms(zero, a, 1e4, 0.0, 1).counts().isZero());
  CHECK_THROWS_AS(simulate_sinograms(zero, a, 1e4, 0.2, 1), std::invalid_argument);
  CHECK_THROWS_AS(simulate_sinograms(zero, a, 0.0, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(simulate_sinograms(zero, a, 1e4, 1.0, 1), std::invalid_argument);
}

TEST_CASE("desk-scale total counts") {
  const testing::Scene s(64, 90, standard_fdg_schedule());
  const SinogramSeries y = simulate_sinograms(s.truth, s.a, 5e6, 0.2, 20240601);
  CHECK(std::abs(y.counts().sum() - 5e6) <= 5.0 * std::sqrt(5e6));
}

TEST_CASE("replicate means match the expectation") {
  const SystemMatrix a = build_system_matrix({8, 8, 2.0, 8, 12, 2.0});
  Eigen::MatrixXd v(64, 3);
  for (Index j = 0; j < 64; ++j) v.row(j) << 1.0 + (j % 5), 2.0, 0.5 + (j % 3);
  const DynamicImage x(8, 8, FrameSchedule::parse("1x60,1x120,1x300"), v);
  const int n = 200;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(a.n_bins(), 3);
  Eigen::MatrixXd mean;
  for (int k = 0; k < n; ++k) {
    const SinogramSeries y = simulate_sinograms(x, a, 2e4, 0.2, static_cast<std::uint64_t>(1000 + k));
    if (k == 0) mean = expected_sinograms(x, a, y.frame_scale(), y.background()).counts();
    sum += y.counts();
  }
  Index ok = 0;
  for (Index i = 0; i < mean.size(); ++i) {
    const double se = std::sqrt(mean(i) / n);
    if (std::abs(sum(i) / n - mean(i)) <= 3.0 * se) ++ok;
  }
  CHECK(static_cast<double>(ok) >= 0.99 * static_cast<double>(mean.size()));
}

TEST_CASE("expected counts scale with frame duration") {
  const SystemMatrix a = build_system_matrix({8, 8, 2.0, 6, 12, 2.0});
  const DynamicImage x(8, 8, FrameSchedule::parse("1x10,1x30,1x300"), Eigen::MatrixXd::Ones(64, 3));
  const SinogramSeries y = simulate_sinograms(x, a, 1e5, 0.2, 3);
  const SinogramSeries e = expected_sinograms(x, a, y.frame_scale(), y.background());
  const double per_second = e.counts().col(0).sum() / 10.0;
  CHECK(e.counts().col(1).sum() / 30.0 == doctest::Approx(per_second).epsilon(1e-12));
  CHECK(e.counts().col(2).sum() / 300.0 == doctest::Approx(per_second).epsilon(1e-12));
}

}
