#include "epic/corruptions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <Eigen/Geometry>

#include "epic/error.hpp"

namespace epic {

namespace {

constexpr int kMinSurvivors = 32;

struct FamilyName {
  CorruptionFamily family;
  std::string_view snake;
  std::string_view camel;
};

constexpr std::array<FamilyName, 7> kNames = {{
    {CorruptionFamily::Scale, "scale", "Scale"},
    {CorruptionFamily::Jitter, "jitter", "Jitter"},
    {CorruptionFamily::Rotate, "rotate", "Rotate"},
    {CorruptionFamily::DropGlobal, "drop_global", "DropGlobal"},
    {CorruptionFamily::DropLocal, "drop_local", "DropLocal"},
    {CorruptionFamily::AddGlobal, "add_global", "AddGlobal"},
    {CorruptionFamily::AddLocal, "add_local", "AddLocal"},
}};

Point3 random_axis(Rng& rng) {
  for (;;) {
    Point3 v(rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1));
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

PointCloud keep_unremoved(const PointCloud& cloud, const std::vector<char>& removed) {
  IndexSet keep;
  for (int i = 0; i < cloud.size(); ++i) {
    if (!removed[static_cast<std::size_t>(i)]) keep.push_back(i);
  }
  return cloud.select(keep);
}

PointCloud append_points(const PointCloud& cloud, const std::vector<Point3>& extra) {
  PointMatrix m(cloud.size() + static_cast<Eigen::Index>(extra.size()), 3);
  m.topRows(cloud.size()) = cloud.matrix();
  for (std::size_t i = 0; i < extra.size(); ++i) {
    m.row(cloud.size() + static_cast<Eigen::Index>(i)) = extra[i].transpose();
  }
  return PointCloud(std::move(m));
}

PointCloud drop_global(const PointCloud& cloud, int severity, Rng& rng) {
  const int n = cloud.size();
  const int drop = static_cast<int>(std::floor(n * 0.15 * severity));
  if (n - drop < kMinSurvivors) {
    throw Error(ErrorKind::TooFewPoints, "drop_global severity " + std::to_string(severity) +
                                             " would leave " + std::to_string(n - drop) +
                                             " of " + std::to_string(n) + " points");
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < drop; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.index(static_cast<std::size_t>(n - i));
    std::swap(order[static_cast<std::size_t>(i)], order[j]);
  }
  std::vector<char> removed(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < drop; ++i) removed[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  return keep_unremoved(cloud, removed);
}

PointCloud drop_local(const PointCloud& cloud, int severity, Rng& rng) {
  const int n = cloud.size();
  if (n <= kMinSurvivors) {
    throw Error(ErrorKind::TooFewPoints, "drop_local needs more than 32 points");
  }
  const int per_cluster = static_cast<int>(std::floor(n * 0.15));
  const int budget = n - kMinSurvivors;
  std::vector<char> removed(static_cast<std::size_t>(n), 0);
  int total = 0;
  for (int c = 0; c < severity && total < budget; ++c) {
    IndexSet alive;
    for (int i = 0; i < n; ++i) {
      if (!removed[static_cast<std::size_t>(i)]) alive.push_back(i);
    }
    const int center = alive[rng.index(alive.size())];
    std::vector<double> d(alive.size());
    for (std::size_t i = 0; i < alive.size(); ++i) d[i] = squared_distance(cloud, center, alive[i]);
    std::vector<std::size_t> order(alive.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const int take = std::min({per_cluster, budget - total, static_cast<int>(alive.size())});
    std::partial_sort(order.begin(), order.begin() + take, order.end(),
                      [&](std::size_t a, std::size_t b) {
                        return d[a] < d[b] || (d[a] == d[b] && alive[a] < alive[b]);
                      });
    for (int i = 0; i < take; ++i) {
      removed[static_cast<std::size_t>(alive[order[static_cast<std::size_t>(i)]])] = 1;
    }
    total += take;
  }
  return keep_unremoved(cloud, removed);
}

}  // namespace

std::string_view to_string(CorruptionFamily family) {
  for (const auto& n : kNames) {
    if (n.family == family) return n.snake;
  }
  return "unknown";
}

CorruptionFamily parse_family(std::string_view name) {
  for (const auto& n : kNames) {
    if (n.snake == name || n.camel == name) return n.family;
  }
  throw Error(ErrorKind::BadConfig, "unknown corruption family '" + std::string(name) + "'");
}

bool is_nonuniform(CorruptionFamily family) {
  return family != CorruptionFamily::Scale && family != CorruptionFamily::Rotate;
}

std::string CorruptionSpec::name() const {
  return std::string(to_string(family)) + "_" + std::to_string(severity);
}

std::string describe_schedule(CorruptionFamily family) {
  switch (family) {
    case CorruptionFamily::Scale:
      return "per-axis factors uniform in [1/r, r], r = 1 + 0.2*s";
    case CorruptionFamily::Jitter:
      return "i.i.d. Gaussian noise on every coordinate, sigma = 0.01*s";
    case CorruptionFamily::Rotate:
      return "rotation by s*pi/12 about a uniformly random axis";
    case CorruptionFamily::DropGlobal:
      return "remove floor(N*0.15*s) uniformly chosen points";
    case CorruptionFamily::DropLocal:
      return "s sequential clusters of floor(N*0.15) nearest surviving points, at most N-32 total";
    case CorruptionFamily::AddGlobal:
      return "append floor(N*0.05*s) points uniform inside the unit sphere";
    case CorruptionFamily::AddLocal:
      return "s existing points as centers, floor(N*0.05) Gaussian points (sigma 0.05) each";
  }
  return "";
}

PointCloud apply_corruption(const CorruptionSpec& spec, const PointCloud& cloud, Rng& rng) {
  const int s = spec.severity;
  if (s < 1 || s > 5) {
    throw Error(ErrorKind::BadConfig, "severity must be in [1,5], got " + std::to_string(s));
  }
  const int n = cloud.size();
  switch (spec.family) {
    case CorruptionFamily::Scale: {
      const double r = 1.0 + 0.2 * s;
      Eigen::RowVector3d f;
      for (int a = 0; a < 3; ++a) f(a) = rng.uniform(1.0 / r, r);
      PointMatrix m = cloud.matrix().array().rowwise() * f.array();
      return PointCloud(std::move(m));
    }
    case CorruptionFamily::Jitter: {
      const double sigma = 0.01 * s;
      PointMatrix m = cloud.matrix();
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (int a = 0; a < 3; ++a) m(i, a) += rng.normal(0, sigma);
      }
      return PointCloud(std::move(m));
    }
    case CorruptionFamily::Rotate: {
      const double theta = s * std::numbers::pi / 12.0;
      const Eigen::Matrix3d rot = Eigen::AngleAxisd(theta, random_axis(rng)).toRotationMatrix();
      PointMatrix m = cloud.matrix() * rot.transpose();
      return PointCloud(std::move(m));
    }
    case CorruptionFamily::DropGlobal:
      return drop_global(cloud, s, rng);
    case CorruptionFamily::DropLocal:
      return drop_local(cloud, s, rng);
    case CorruptionFamily::AddGlobal: {
      const int add = static_cast<int>(std::floor(n * 0.05 * s));
      std::vector<Point3> extra;
      extra.reserve(static_cast<std::size_t>(add));
      while (static_cast<int>(extra.size()) < add) {
        Point3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        if (p.squaredNorm() <= 1.0) extra.push_back(p);
      }
      return append_points(cloud, extra);
    }
    case CorruptionFamily::AddLocal: {
      const int per_center = static_cast<int>(std::floor(n * 0.05));
      std::vector<Point3> extra;
      extra.reserve(static_cast<std::size_t>(per_center * s));
      for (int c = 0; c < s; ++c) {
        const Point3 center = cloud.point(static_cast<int>(rng.index(static_cast<std::size_t>(n))));
        for (int i = 0; i < per_center; ++i) {
          extra.push_back(center + Point3(rng.normal(0, 0.05), rng.normal(0, 0.05),
                                          rng.normal(0, 0.05)));
        }
      }
      return append_points(cloud, extra);
    }
  }
  throw Error(ErrorKind::BadConfig, "unhandled corruption family");
}

std::vector<LabeledCloud> corrupt_dataset(const std::vector<LabeledCloud>& dataset,
                                          const CorruptionSpec& spec, const Rng& rng) {
  const Rng variant = rng.split(static_cast<std::uint64_t>(spec.family))
                          .split(static_cast<std::uint64_t>(spec.severity));
  std::vector<LabeledCloud> out;
  out.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    Rng sample_rng = variant.split(i);
    // Stored at float precision so in-memory and on-disk sets agree bit for bit.
    out.push_back({quantize_to_float(apply_corruption(spec, dataset[i].cloud, sample_rng)),
                   dataset[i].label, dataset[i].sample_id});
  }
  return out;
}

CorruptedSets corrupted_test_set(const std::vector<LabeledCloud>& dataset, const Rng& rng) {
  if (dataset.empty()) throw Error(ErrorKind::EmptyEval, "cannot corrupt an empty dataset");
  CorruptedSets out;
  for (auto family : kAllFamilies) {
    for (int s = 1; s <= 5; ++s) {
      const CorruptionSpec spec{family, s};
      out.emplace(spec, corrupt_dataset(dataset, spec, rng));
    }
  }
  return out;
}

}  // namespace epic
