#include "dpet/kinetics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dpet {

namespace {

// Coefficients of one node step of width h:
//   g_n = a g_{n-1} + phi I_{n-1} + psi (I_n - I_{n-1}),  I = int Cp,
// plus their k-derivatives.
struct Step {
  double a, da, phi, dphi, psi, dpsi;
};

Step step_coefficients(double k, double h) {
  const double x = k * h;
  Step s{};
  s.a = std::exp(-x);
  s.da = -h * s.a;
  if (std::abs(x) < 0.1) {
    // phi/h = sum (-x)^j/(j+1)!, psi/h = sum (-x)^j/(j+2)!
    double pw = 1.0, pw_prev = 0.0, f1 = 1.0, f2 = 2.0;
    double phi = 0.0, psi = 0.0, dphi = 0.0, dpsi = 0.0;
    for (int j = 0; j < 16; ++j) {
      phi += pw / f1;
      psi += pw / f2;
      if (j > 0) {
        dphi -= j * pw_prev / f1;
        dpsi -= j * pw_prev / f2;
      }
      pw_prev = pw;
      pw *= -x;
      f1 *= j + 2;
      f2 *= j + 3;
    }
    s.phi = h * phi;
    s.psi = h * psi;
    s.dphi = h * h * dphi;
    s.dpsi = h * h * dpsi;
  } else {
    s.phi = -std::expm1(-x) / k;
    s.dphi = (h * s.a - s.phi) / k;
    s.psi = (1.0 - s.phi / h) / k;
    s.dpsi = -(s.dphi / h + s.psi) / k;
  }
  return s;
}

Index grid_index(double t, double step) {
  const double idx = t / step;
  const double r = std::round(idx);
  if (std::abs(idx - r) > 1e-6)
    throw std::invalid_argument("kinetic model: frame boundary " + std::to_string(t) +
                                " s is not on the integration grid");
  return static_cast<Index>(r);
}

void check_step(double step) {
  if (!(step > 0.0) || step > 0.5) throw std::invalid_argument("kinetic model: grid step must be in (0, 0.5] s");
}

}  // namespace

double InputFunction::operator()(double t) const {
  if (t < delay) return 0.0;
  const double s = t - delay;
  return (a1 * s - a2 - a3) * std::exp(lambda1 * s) + a2 * std::exp(lambda2 * s) + a3 * std::exp(lambda3 * s);
}

void InputFunction::validate(double horizon, double step) const {
  const auto n = static_cast<Index>(std::ceil(horizon / step));
  for (Index i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) * step;
    const double v = (*this)(t);
    // Cp(delay) is zero analytically; allow its rounding residue.
    if (!std::isfinite(v) || v < -1e-9 * (std::abs(a2) + std::abs(a3) + 1.0))
      throw std::invalid_argument("input function is negative at t = " + std::to_string(t) + " s");
  }
}

double input_value(const InputFunction& cp, double t) { return cp(t); }

void KineticParams::validate() const {
  if (!(K1 >= 0.0 && k2 >= 0.0 && k3 >= 0.0))
    throw std::invalid_argument("kinetic parameters: K1, k2, k3 must be nonnegative");
  if (!(fv >= 0.0 && fv <= 1.0)) throw std::invalid_argument("kinetic parameters: fv outside [0, 1]");
}

double ki(const KineticParams& theta) {
  const double k = theta.k2 + theta.k3;
  if (k == 0.0) throw std::domain_error("ki: k2 + k3 == 0");
  return theta.K1 * theta.k3 / k;
}

Eigen::VectorXd tissue_curve(const KineticParams& theta, const InputFunction& cp, const TimeGrid& grid) {
  check_step(grid.step);
  const double dt = grid.step;
  const Step st = step_coefficients(theta.k2 + theta.k3, dt);
  Eigen::VectorXd out(grid.n_points);
  double icp = 0.0, g = 0.0, prev = 0.0;
  for (Index n = 0; n < grid.n_points; ++n) {
    const double c = cp(static_cast<double>(n) * dt);
    if (n > 0) {
      const double next = icp + 0.5 * dt * (prev + c);
      g = st.a * g + st.phi * icp + st.psi * (next - icp);
      icp = next;
    }
    out(n) = (1.0 - theta.fv) * theta.K1 * (icp - theta.k2 * g) + theta.fv * c;
    prev = c;
  }
  return out;
}

KineticModel::KineticModel(const InputFunction& cp, FrameSchedule schedule, double step, double growth)
    : schedule_(std::move(schedule)), step_(step), growth_(growth) {
  check_step(step_);
  const Index n_end = grid_index(schedule_.end(schedule_.size() - 1), step_);
  cp_.resize(static_cast<std::size_t>(n_end + 1));
  for (Index n = 0; n <= n_end; ++n) cp_[static_cast<std::size_t>(n)] = cp(static_cast<double>(n) * step_);
  precompute();
}

KineticModel::KineticModel(std::vector<double> samples, FrameSchedule schedule, double step, double growth)
    : schedule_(std::move(schedule)), step_(step), growth_(growth), cp_(std::move(samples)) {
  check_step(step_);
  precompute();
}

void KineticModel::precompute() {
  if (!(growth_ >= 0.0)) throw std::invalid_argument("kinetic model: node growth must be >= 0");
  const Index m_count = schedule_.size();
  std::vector<Index> fine_first(static_cast<std::size_t>(m_count)), fine_last(static_cast<std::size_t>(m_count));
  for (Index m = 0; m < m_count; ++m) {
    fine_first[static_cast<std::size_t>(m)] = grid_index(schedule_.start(m), step_);
    fine_last[static_cast<std::size_t>(m)] = grid_index(schedule_.end(m), step_);
  }
  const Index n_end = fine_last.back();
  if (static_cast<Index>(cp_.size()) < n_end + 1)
    throw std::invalid_argument("kinetic model: input samples do not cover the schedule");
  cp_.resize(static_cast<std::size_t>(n_end + 1));

  std::vector<double> icp(cp_.size(), 0.0);
  for (std::size_t n = 1; n < cp_.size(); ++n) icp[n] = icp[n - 1] + 0.5 * step_ * (cp_[n - 1] + cp_[n]);

  // Nodes: fine index of each node and the fine-step multiple of the step ending there.
  std::vector<Index> nodes{0};
  std::vector<Index> ratios{0};
  auto add_segment = [&](Index from, Index to) {
    const Index n = to - from;
    if (n <= 0) return;
    Index r = std::max<Index>(1, static_cast<Index>(growth_ * static_cast<double>(from) + 1e-9));
    r = std::min(r, n);
    while (n % r != 0) --r;
    for (Index i = from + r; i <= to; i += r) {
      nodes.push_back(i);
      ratios.push_back(r);
    }
  };
  add_segment(0, fine_first[0]);
  first_.resize(static_cast<std::size_t>(m_count));
  last_.resize(static_cast<std::size_t>(m_count));
  for (Index m = 0; m < m_count; ++m) {
    first_[static_cast<std::size_t>(m)] = static_cast<Index>(nodes.size()) - 1;
    add_segment(fine_first[static_cast<std::size_t>(m)], fine_last[static_cast<std::size_t>(m)]);
    last_[static_cast<std::size_t>(m)] = static_cast<Index>(nodes.size()) - 1;
  }

  node_icp_.resize(nodes.size());
  node_class_.assign(nodes.size(), 0);
  widths_.clear();
  std::vector<Index> seen;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    node_icp_[i] = icp[static_cast<std::size_t>(nodes[i])];
    if (i == 0) continue;
    auto it = std::find(seen.begin(), seen.end(), ratios[i]);
    if (it == seen.end()) {
      seen.push_back(ratios[i]);
      widths_.push_back(static_cast<double>(ratios[i]) * step_);
      it = seen.end() - 1;
    }
    node_class_[i] = static_cast<int>(it - seen.begin());
  }

  cp_mean_.resize(m_count);
  int_mean_.resize(m_count);
  for (Index m = 0; m < m_count; ++m) {
    const auto a = static_cast<std::size_t>(fine_first[static_cast<std::size_t>(m)]);
    const auto b = static_cast<std::size_t>(fine_last[static_cast<std::size_t>(m)]);
    double s = 0.5 * (cp_[a] + cp_[b]);
    for (std::size_t n = a + 1; n < b; ++n) s += cp_[n];
    cp_mean_(m) = s / static_cast<double>(b - a);
    const auto na = static_cast<std::size_t>(first_[static_cast<std::size_t>(m)]);
    const auto nb = static_cast<std::size_t>(last_[static_cast<std::size_t>(m)]);
    double si = 0.5 * (node_icp_[na] + node_icp_[nb]);
    for (std::size_t n = na + 1; n < nb; ++n) si += node_icp_[n];
    int_mean_(m) = si / static_cast<double>(nb - na);
  }
}

template <bool WithJacobian>
void KineticModel::run(const KineticParams& theta, Eigen::Ref<Eigen::VectorXd> values, Jacobian* jac) const {
  constexpr std::size_t kMaxClasses = 64;
  std::array<Step, kMaxClasses> steps;
  const std::size_t n_classes = widths_.size();
  if (n_classes > kMaxClasses) throw std::logic_error("kinetic model: too many node spacings");
  const double k = theta.k2 + theta.k3;
  for (std::size_t c = 0; c < n_classes; ++c) steps[c] = step_coefficients(k, widths_[c]);

  const double* icp = node_icp_.data();
  const int* cls = node_class_.data();
  Index n = 0;
  double g = 0.0, dg = 0.0;
  const double w = (1.0 - theta.fv) * theta.K1;

  auto advance = [&] {
    ++n;
    const Step& st = steps[static_cast<std::size_t>(cls[n])];
    const double rise = icp[n] - icp[n - 1];
    if constexpr (WithJacobian) dg = st.da * g + st.a * dg + st.dphi * icp[n - 1] + st.dpsi * rise;
    g = st.a * g + st.phi * icp[n - 1] + st.psi * rise;
  };

  for (Index m = 0; m < schedule_.size(); ++m) {
    const Index a = first_[static_cast<std::size_t>(m)], b = last_[static_cast<std::size_t>(m)];
    while (n < a) advance();
    double sg = 0.5 * g, sdg = 0.5 * dg;
    while (n < b) {
      advance();
      sg += g;
      if constexpr (WithJacobian) sdg += dg;
    }
    const double span = static_cast<double>(b - a);
    const double g_mean = (sg - 0.5 * g) / span;
    const double tissue = int_mean_(m) - theta.k2 * g_mean;
    values(m) = w * tissue + theta.fv * cp_mean_(m);
    if constexpr (WithJacobian) {
      const double dg_mean = (sdg - 0.5 * dg) / span;
      (*jac)(m, 0) = (1.0 - theta.fv) * tissue;
      (*jac)(m, 1) = w * (-g_mean - theta.k2 * dg_mean);
      (*jac)(m, 2) = w * (-theta.k2 * dg_mean);
      (*jac)(m, 3) = cp_mean_(m) - theta.K1 * tissue;
    }
  }
}

Eigen::VectorXd KineticModel::frame_values(const KineticParams& theta) const {
  Eigen::VectorXd f(n_frames());
  run<false>(theta, f, nullptr);
  return f;
}

void KineticModel::evaluate(const KineticParams& theta, Eigen::Ref<Eigen::VectorXd> values) const {
  run<false>(theta, values, nullptr);
}

void KineticModel::evaluate(const KineticParams& theta, Eigen::Ref<Eigen::VectorXd> values,
                            Eigen::Ref<Jacobian> jacobian) const {
  Jacobian jac(n_frames(), kNumParams);
  run<true>(theta, values, &jac);
  jacobian = jac;
}

Eigen::VectorXd model_frame_values(const KineticParams& theta, const InputFunction& cp,
                                   const FrameSchedule& schedule) {
  return KineticModel(cp, schedule).frame_values(theta);
}

KineticModel::Jacobian model_jacobian(const KineticParams& theta, const InputFunction& cp,
                                      const FrameSchedule& schedule) {
  const KineticModel model(cp, schedule);
  Eigen::VectorXd f(model.n_frames());
  KineticModel::Jacobian jac(model.n_frames(), kNumParams);
  model.evaluate(theta, f, jac);
  return jac;
}

}  // namespace dpet
