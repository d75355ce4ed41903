#include "epic/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "epic/error.hpp"

namespace epic {

namespace {

void check_index(const PointCloud& cloud, int i, const char* what) {
  if (i < 0 || i >= cloud.size()) {
    throw Error(ErrorKind::BadIndex, std::string(what) + " " + std::to_string(i) +
                                         " out of range for cloud of " +
                                         std::to_string(cloud.size()) + " points");
  }
}

// Squared distances from point q to every point.
std::vector<double> distances_from(const PointMatrix& pts, int q) {
  std::vector<double> d(static_cast<std::size_t>(pts.rows()));
  const double qx = pts(q, 0), qy = pts(q, 1), qz = pts(q, 2);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const double dx = pts(i, 0) - qx, dy = pts(i, 1) - qy, dz = pts(i, 2) - qz;
    d[static_cast<std::size_t>(i)] = dx * dx + dy * dy + dz * dz;
  }
  return d;
}

using Candidate = std::pair<double, int>;

// Pairs compare by (squared distance, index), which is exactly the tie rule.
void knn_into(const PointMatrix& pts, int q, int k, std::vector<Candidate>& scratch,
              std::span<int> out) {
  const double qx = pts(q, 0), qy = pts(q, 1), qz = pts(q, 2);
  scratch.clear();
  for (int i = 0; i < static_cast<int>(pts.rows()); ++i) {
    if (i == q) continue;
    const double dx = pts(i, 0) - qx, dy = pts(i, 1) - qy, dz = pts(i, 2) - qz;
    scratch.emplace_back(dx * dx + dy * dy + dz * dz, i);
  }
  const auto kth = scratch.begin() + k;
  if (kth != scratch.end()) std::nth_element(scratch.begin(), kth - 1, scratch.end());
  std::sort(scratch.begin(), kth);
  for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = scratch[static_cast<std::size_t>(i)].second;
}

}  // namespace

PointCloud::PointCloud(PointMatrix points) : points_(std::move(points)) {
  if (points_.rows() < 1) {
    throw Error(ErrorKind::BadConfig, "point cloud must contain at least one point");
  }
  if (!points_.allFinite()) {
    throw Error(ErrorKind::FormatError, "point cloud contains non-finite coordinates");
  }
}

PointCloud::PointCloud(const std::vector<Point3>& points)
    : PointCloud([&points] {
        PointMatrix m(static_cast<Eigen::Index>(points.size()), 3);
        for (std::size_t i = 0; i < points.size(); ++i) {
          m.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
        }
        return m;
      }()) {}

PointCloud PointCloud::select(std::span<const int> indices) const {
  PointMatrix m(static_cast<Eigen::Index>(indices.size()), 3);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    check_index(*this, indices[r], "index");
    m.row(static_cast<Eigen::Index>(r)) = points_.row(indices[r]);
  }
  return PointCloud(std::move(m));
}

double squared_distance(const PointCloud& cloud, int a, int b) {
  return (cloud.matrix().row(a) - cloud.matrix().row(b)).squaredNorm();
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  const Eigen::RowVector3d centroid = cloud.matrix().colwise().mean();
  PointMatrix centered = cloud.matrix().rowwise() - centroid;
  const double radius = centered.rowwise().norm().maxCoeff();
  if (!(radius > 0.0)) {
    throw Error(ErrorKind::DegenerateCloud, "all points coincide; cannot normalize");
  }
  centered /= radius;
  return PointCloud(std::move(centered));
}

IndexSet knn(const PointCloud& cloud, int query_index, int k) {
  check_index(cloud, query_index, "query index");
  if (k < 1 || k > cloud.size() - 1) {
    throw Error(ErrorKind::BadK, "knn: k=" + std::to_string(k) + " outside [1, " +
                                     std::to_string(cloud.size() - 1) + "]");
  }
  IndexSet out(static_cast<std::size_t>(k));
  std::vector<Candidate> scratch;
  scratch.reserve(static_cast<std::size_t>(cloud.size()));
  knn_into(cloud.matrix(), query_index, k, scratch, out);
  return out;
}

IndexSet fps(const PointCloud& cloud, int k, int start_index) {
  check_index(cloud, start_index, "start index");
  const int n = cloud.size();
  if (k < 1 || k > n) {
    throw Error(ErrorKind::BadK,
                "fps: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  IndexSet out;
  out.reserve(static_cast<std::size_t>(k));
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  auto min_d = distances_from(cloud.matrix(), start_index);
  out.push_back(start_index);
  taken[static_cast<std::size_t>(start_index)] = 1;
  while (static_cast<int>(out.size()) < k) {
    int best = -1;
    for (int i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      if (best < 0 || min_d[static_cast<std::size_t>(i)] > min_d[static_cast<std::size_t>(best)]) {
        best = i;
      }
    }
    out.push_back(best);
    taken[static_cast<std::size_t>(best)] = 1;
    const auto d = distances_from(cloud.matrix(), best);
    for (std::size_t i = 0; i < d.size(); ++i) min_d[i] = std::min(min_d[i], d[i]);
  }
  return out;
}

KnnTable pairwise_knn_table(const PointCloud& cloud, int k) {
  if (k < 1 || k > cloud.size() - 1) {
    throw Error(ErrorKind::BadK, "knn table: k=" + std::to_string(k) + " outside [1, " +
                                     std::to_string(cloud.size() - 1) + "]");
  }
  KnnTable table(cloud.size(), k);
  std::vector<Candidate> scratch;
  scratch.reserve(static_cast<std::size_t>(cloud.size()));
  for (int i = 0; i < cloud.size(); ++i) knn_into(cloud.matrix(), i, k, scratch, table.row(i));
  return table;
}

}  // namespace epic
