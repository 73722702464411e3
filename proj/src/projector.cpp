#include "dpet/projector.hpp"

#include "dpet/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace dpet {

namespace {

using nlohmann::json;

template <class T>
void put_le(std::ostream& os, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(value);
  char buf[sizeof(U)];
  for (std::size_t b = 0; b < sizeof(U); ++b) buf[b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  os.write(buf, sizeof buf);
}

template <class T>
T get_le(std::istream& is) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  unsigned char buf[sizeof(U)];
  is.read(reinterpret_cast<char*>(buf), sizeof buf);
  if (!is) throw std::runtime_error("sysm: truncated payload");
  U bits = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) bits |= static_cast<U>(buf[b]) << (8 * b);
  return std::bit_cast<T>(bits);
}

// Appends (voxel, length) pairs for one ray p0 + t*u, |u| = 1.
void trace_ray(const Geometry2D& g, double p0x, double p0y, double ux, double uy,
               std::vector<double>& ts, std::vector<Eigen::Triplet<double>>& out, Index row) {
  const double v = g.voxel_size;
  const double xmin = -0.5 * static_cast<double>(g.width) * v, xmax = -xmin;
  const double ymin = -0.5 * static_cast<double>(g.height) * v, ymax = -ymin;
  constexpr double kParallel = 1e-14;
  constexpr double kInf = std::numeric_limits<double>::infinity();

  double t_in = -kInf, t_out = kInf;
  auto clip = [&](double p, double u, double lo, double hi) {
    if (std::abs(u) < kParallel) {
      if (p < lo || p > hi) t_in = kInf;  // misses the box
      return;
    }
    const double a = (lo - p) / u, b = (hi - p) / u;
    t_in = std::max(t_in, std::min(a, b));
    t_out = std::min(t_out, std::max(a, b));
  };
  clip(p0x, ux, xmin, xmax);
  clip(p0y, uy, ymin, ymax);
  if (!(t_out > t_in)) return;

  ts.clear();
  ts.push_back(t_in);
  ts.push_back(t_out);
  if (std::abs(ux) >= kParallel)
    for (Index k = 0; k <= g.width; ++k) {
      const double t = (xmin + static_cast<double>(k) * v - p0x) / ux;
      if (t > t_in && t < t_out) ts.push_back(t);
    }
  if (std::abs(uy) >= kParallel)
    for (Index k = 0; k <= g.height; ++k) {
      const double t = (ymin + static_cast<double>(k) * v - p0y) / uy;
      if (t > t_in && t < t_out) ts.push_back(t);
    }
  std::sort(ts.begin(), ts.end());

  const double min_len = 1e-12 * v;
  for (std::size_t s = 0; s + 1 < ts.size(); ++s) {
    const double len = ts[s + 1] - ts[s];
    if (len <= min_len) continue;
    const double tm = 0.5 * (ts[s] + ts[s + 1]);
    const double px = p0x + tm * ux, py = p0y + tm * uy;
    const Index col = std::clamp<Index>(static_cast<Index>(std::floor((px - xmin) / v)), 0, g.width - 1);
    const Index up = std::clamp<Index>(static_cast<Index>(std::floor((py - ymin) / v)), 0, g.height - 1);
    const Index r = g.height - 1 - up;
    out.emplace_back(static_cast<int>(row), static_cast<int>(r * g.width + col), len);
  }
}

}  // namespace

void Geometry2D::validate() const {
  if (width < 1 || height < 1) throw std::invalid_argument("geometry: empty image grid");
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size))
    throw std::invalid_argument("geometry: voxel_size must be positive");
  if (n_angles < 1 || n_radial_bins < 1) throw std::invalid_argument("geometry: need >= 1 angle and bin");
  if (!(bin_width > 0.0) || !std::isfinite(bin_width))
    throw std::invalid_argument("geometry: bin_width must be positive");
}

std::uint64_t Geometry2D::hash() const {
  const std::string key = "w=" + std::to_string(width) + ";h=" + std::to_string(height) +
                          ";vs=" + format_double(voxel_size) + ";na=" + std::to_string(n_angles) +
                          ";nb=" + std::to_string(n_radial_bins) + ";bw=" + format_double(bin_width);
  std::uint64_t h = 14695981039346656037ull;  // FNV-1a
  for (unsigned char c : key) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

json to_json(const Geometry2D& g) {
  return json{{"width", g.width},       {"height", g.height},
              {"voxel_size", g.voxel_size}, {"n_angles", g.n_angles},
              {"n_radial_bins", g.n_radial_bins}, {"bin_width", g.bin_width}};
}

Geometry2D geometry_from_json(const json& j) {
  Geometry2D g;
  g.width = j.at("width");
  g.height = j.at("height");
  g.voxel_size = j.at("voxel_size");
  g.n_angles = j.at("n_angles");
  g.n_radial_bins = j.at("n_radial_bins");
  g.bin_width = j.at("bin_width");
  g.validate();
  return g;
}

SystemMatrix::SystemMatrix(Geometry2D geometry, Csr matrix)
    : geometry_(geometry), matrix_(std::move(matrix)) {
  if (matrix_.rows() != geometry_.n_bins() || matrix_.cols() != geometry_.n_voxels())
    throw std::invalid_argument("system matrix: shape does not match geometry");
  matrix_.makeCompressed();
  transpose_ = Csr(matrix_.transpose());
  transpose_.makeCompressed();
  sensitivity_ = transpose_ * Eigen::VectorXd::Ones(matrix_.rows());
}

SystemMatrix build_system_matrix(const Geometry2D& g) {
  g.validate();
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(g.n_bins() * (g.width + g.height)));
  std::vector<double> ts;
  for (Index a = 0; a < g.n_angles; ++a) {
    const double phi = std::numbers::pi * static_cast<double>(a) / static_cast<double>(g.n_angles);
    const double ux = std::cos(phi), uy = std::sin(phi);
    const double nx = -uy, ny = ux;
    for (Index b = 0; b < g.n_radial_bins; ++b) {
      const double s = (static_cast<double>(b) - 0.5 * static_cast<double>(g.n_radial_bins - 1)) * g.bin_width;
      trace_ray(g, s * nx, s * ny, ux, uy, ts, triplets, a * g.n_radial_bins + b);
    }
  }
  SystemMatrix::Csr m(g.n_bins(), g.n_voxels());
  m.setFromTriplets(triplets.begin(), triplets.end());
  return {g, std::move(m)};
}

Eigen::VectorXd forward_project(const SystemMatrix& a, const Eigen::Ref<const Eigen::VectorXd>& image) {
  if (image.size() != a.n_voxels()) throw std::invalid_argument("forward_project: dimension mismatch");
  return a.matrix() * image;
}

Eigen::VectorXd back_project(const SystemMatrix& a, const Eigen::Ref<const Eigen::VectorXd>& sino) {
  if (sino.size() != a.n_bins()) throw std::invalid_argument("back_project: dimension mismatch");
  return a.transpose() * sino;
}

void save_system_matrix(std::ostream& os, const SystemMatrix& a) {
  const auto& m = a.matrix();
  json h{{"format", "sysm"},        {"version", 1},
         {"geometry", to_json(a.geometry())}, {"rows", m.rows()},
         {"cols", m.cols()},        {"nnz", m.nonZeros()},
         {"row_ptr", "int64-le"},   {"col_idx", "int32-le"},
         {"values", "float64-le"}};
  os << h.dump() << '\n';
  for (Index r = 0; r <= m.rows(); ++r) put_le<std::int64_t>(os, m.outerIndexPtr()[r]);
  for (Index k = 0; k < m.nonZeros(); ++k) put_le<std::int32_t>(os, m.innerIndexPtr()[k]);
  for (Index k = 0; k < m.nonZeros(); ++k) put_le<double>(os, m.valuePtr()[k]);
}

SystemMatrix load_system_matrix(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("sysm: missing header");
  const json h = json::parse(line);
  if (h.value("format", "") != "sysm") throw std::runtime_error("sysm: not a system matrix file");
  const Geometry2D g = geometry_from_json(h.at("geometry"));
  const Index rows = h.at("rows"), cols = h.at("cols"), nnz = h.at("nnz");
  std::vector<std::int64_t> ptr(static_cast<std::size_t>(rows + 1));
  for (auto& p : ptr) p = get_le<std::int64_t>(is);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(nnz));
  std::vector<std::int32_t> idx(static_cast<std::size_t>(nnz));
  for (auto& c : idx) c = get_le<std::int32_t>(is);
  for (Index r = 0; r < rows; ++r)
    for (auto k = ptr[static_cast<std::size_t>(r)]; k < ptr[static_cast<std::size_t>(r + 1)]; ++k)
      triplets.emplace_back(static_cast<int>(r), idx[static_cast<std::size_t>(k)], 0.0);
  std::vector<double> vals(static_cast<std::size_t>(nnz));
  for (auto& v : vals) v = get_le<double>(is);
  for (std::size_t k = 0; k < triplets.size(); ++k)
    triplets[k] = Eigen::Triplet<double>(triplets[k].row(), triplets[k].col(), vals[k]);
  SystemMatrix::Csr m(rows, cols);
  m.setFromTriplets(triplets.begin(), triplets.end());
  return {g, std::move(m)};
}

SystemMatrix load_or_build_system_matrix(const Geometry2D& geometry, const std::filesystem::path& cache_dir) {
  char name[32];
  std::snprintf(name, sizeof name, "%016llx.sysm", static_cast<unsigned long long>(geometry.hash()));
  const auto path = cache_dir / name;
  if (std::filesystem::exists(path)) {
    std::ifstream is(path, std::ios::binary);
    SystemMatrix a = load_system_matrix(is);
    if (a.geometry() == geometry) return a;
  }
  SystemMatrix a = build_system_matrix(geometry);
  std::filesystem::create_directories(cache_dir);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + tmp);
    save_system_matrix(os, a);
  }
  std::filesystem::rename(tmp, path);
  return a;
}

}  // namespace dpet
