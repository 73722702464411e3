#pragma once

#include "dpet/core.hpp"

#include <Eigen/SparseCore>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

namespace dpet {

/// 2D parallel-beam scanner. The image is centred on the origin with row 0 at
/// the top; angles are uniform in [0, pi) and angle 0 gives horizontal rays.
struct Geometry2D {
  Index width = 64;
  Index height = 64;
  double voxel_size = 2.0;  // mm
  Index n_angles = 90;
  Index n_radial_bins = 96;
  double bin_width = 2.0;  // mm

  Index n_voxels() const { return width * height; }
  Index n_bins() const { return n_angles * n_radial_bins; }

  /// Throws std::invalid_argument on empty grids or non-positive sizes.
  void validate() const;
  std::uint64_t hash() const;

  bool operator==(const Geometry2D&) const = default;
};

nlohmann::json to_json(const Geometry2D& g);
Geometry2D geometry_from_json(const nlohmann::json& j);

/// Nonnegative projection weights p_ij (ray intersection lengths, mm) in
/// compressed row layout, plus the sensitivity image s_j = sum_i p_ij.
class SystemMatrix {
 public:
  using Csr = Eigen::SparseMatrix<double, Eigen::RowMajor>;

  SystemMatrix() = default;
  SystemMatrix(Geometry2D geometry, Csr matrix);

  const Geometry2D& geometry() const { return geometry_; }
  const Csr& matrix() const { return matrix_; }
  const Csr& transpose() const { return transpose_; }
  const Eigen::VectorXd& sensitivity() const { return sensitivity_; }
  Index n_bins() const { return matrix_.rows(); }
  Index n_voxels() const { return matrix_.cols(); }

 private:
  Geometry2D geometry_;
  Csr matrix_;
  Csr transpose_;
  Eigen::VectorXd sensitivity_;
};

/// Exact ray-driven traversal: each row holds the chord lengths of one LOR
/// through the voxels it crosses.
SystemMatrix build_system_matrix(const Geometry2D& geometry);

Eigen::VectorXd forward_project(const SystemMatrix& a, const Eigen::Ref<const Eigen::VectorXd>& image);
Eigen::VectorXd back_project(const SystemMatrix& a, const Eigen::Ref<const Eigen::VectorXd>& sino);

// .sysm cache: JSON header line then little-endian CSR arrays
// (int64 row offsets, int32 column indices, float64 values).
void save_system_matrix(std::ostream& os, const SystemMatrix& a);
SystemMatrix load_system_matrix(std::istream& is);

/// Loads `<cache_dir>/<geometry hash>.sysm` when present, otherwise builds and stores it.
SystemMatrix load_or_build_system_matrix(const Geometry2D& geometry,
                                         const std::filesystem::path& cache_dir);

}  // namespace dpet
