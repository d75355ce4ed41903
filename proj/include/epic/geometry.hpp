#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace epic {

using Point3 = Eigen::Vector3d;
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Indices into a PointCloud.
using IndexSet = std::vector<int>;

/// An ordered, nonempty set of finite 3D points.
class PointCloud {
 public:
  /// Throws BadConfig if empty, FormatError if any coordinate is NaN/Inf.
  explicit PointCloud(PointMatrix points);
  explicit PointCloud(const std::vector<Point3>& points);
  PointCloud(std::initializer_list<Point3> points) : PointCloud(std::vector<Point3>(points)) {}

  int size() const noexcept { return static_cast<int>(points_.rows()); }
  Point3 point(int i) const { return points_.row(i).transpose(); }
  const PointMatrix& matrix() const noexcept { return points_; }

  /// Materializes the points at `indices` (repeats allowed), in that order.
  PointCloud select(std::span<const int> indices) const;

  bool operator==(const PointCloud& other) const { return points_ == other.points_; }

 private:
  PointMatrix points_;
};

double squared_distance(const PointCloud& cloud, int a, int b);

/// Centers on the centroid and scales so the farthest point has norm 1.
/// Throws DegenerateCloud if every point coincides.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

/// The k nearest neighbors of `query_index`, excluding itself, ordered by
/// ascending squared distance with ties broken by ascending index.
IndexSet knn(const PointCloud& cloud, int query_index, int k);

/// Greedy farthest point sampling seeded at `start_index`. Each pick
/// maximizes the minimum squared distance to the points already chosen;
/// ties go to the lowest index.
IndexSet fps(const PointCloud& cloud, int k, int start_index);

/// Row i holds knn(cloud, i, k).
class KnnTable {
 public:
  KnnTable(int rows, int k) : k_(k), data_(static_cast<std::size_t>(rows) * k) {}

  int rows() const noexcept { return k_ == 0 ? 0 : static_cast<int>(data_.size()) / k_; }
  int k() const noexcept { return k_; }
  std::span<const int> row(int i) const {
    return {data_.data() + static_cast<std::size_t>(i) * k_, static_cast<std::size_t>(k_)};
  }
  std::span<int> row(int i) {
    return {data_.data() + static_cast<std::size_t>(i) * k_, static_cast<std::size_t>(k_)};
  }

 private:
  int k_;
  std::vector<int> data_;
};

KnnTable pairwise_knn_table(const PointCloud& cloud, int k);

}  // namespace epic
