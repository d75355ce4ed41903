#include "epic/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "epic/error.hpp"

namespace epic {

namespace {

int scale_size(int base, int n_points, int floor_value) {
  const double scaled = static_cast<double>(base) * n_points / 1024.0;
  const int rounded = static_cast<int>(std::lround(scaled / 8.0)) * 8;
  return std::max(rounded, floor_value);
}

}  // namespace

std::string_view to_string(SampleKind kind) {
  switch (kind) {
    case SampleKind::Patch: return "patch";
    case SampleKind::Curve: return "curve";
    case SampleKind::Random: return "random";
  }
  return "unknown";
}

SamplingParams SamplingParams::scaled_for(int n_points) const {
  if (n_points >= 1024) return *this;
  SamplingParams out = *this;
  out.n_patch = scale_size(n_patch, n_points, 32);
  out.n_curve = scale_size(n_curve, n_points, 32);
  out.n_random = scale_size(n_random, n_points, 16);
  return out;
}

void SamplingParams::validate() const {
  if (n_patch < 1 || n_curve < 1 || n_random < 1 || m_neighbors < 1 || k_tilde < 1) {
    throw Error(ErrorKind::BadConfig, "sampling parameters must all be >= 1");
  }
}

SubSample extract_patch(const PointCloud& cloud, int anchor, const SamplingParams& params) {
  const int n = cloud.size();
  const int count = std::min(params.n_patch, n);
  IndexSet indices{anchor};
  if (count > 1) {
    const IndexSet nn = knn(cloud, anchor, count - 1);
    indices.insert(indices.end(), nn.begin(), nn.end());
  } else if (anchor < 0 || anchor >= n) {
    throw Error(ErrorKind::BadIndex, "patch anchor out of range");
  }
  PointCloud pts = cloud.select(indices);
  return SubSample{SampleKind::Patch, anchor, std::move(indices), std::move(pts)};
}

SubSample extract_curve(const PointCloud& cloud, const KnnTable& table, int anchor,
                        int n_curve, Rng& rng) {
  if (anchor < 0 || anchor >= cloud.size()) {
    throw Error(ErrorKind::BadIndex, "curve anchor out of range");
  }
  IndexSet walk;
  walk.reserve(static_cast<std::size_t>(n_curve));
  int current = anchor;
  walk.push_back(current);
  const auto branching = static_cast<std::size_t>(table.k());
  while (static_cast<int>(walk.size()) < n_curve) {
    current = table.row(current)[rng.index(branching)];
    walk.push_back(current);
  }
  PointCloud pts = cloud.select(walk);
  return SubSample{SampleKind::Curve, anchor, std::move(walk), std::move(pts)};
}

SubSample extract_curve(const PointCloud& cloud, int anchor, const SamplingParams& params,
                        Rng& rng) {
  const KnnTable table = pairwise_knn_table(cloud, params.m_neighbors);
  return extract_curve(cloud, table, anchor, params.n_curve, rng);
}

SubSample extract_random(const PointCloud& cloud, const SamplingParams& params, Rng& rng) {
  const int n = cloud.size();
  const int count = std::min(params.n_random, n);
  IndexSet pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  // Partial Fisher-Yates: the first `count` slots end up a uniform draw
  // without replacement.
  for (int i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.index(static_cast<std::size_t>(n - i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(count));
  PointCloud pts = cloud.select(pool);
  return SubSample{SampleKind::Random, std::nullopt, std::move(pool), std::move(pts)};
}

std::vector<SubSample> make_ensemble_inputs(const PointCloud& cloud, const SamplingParams& params,
                                            std::span<const int> anchors, Rng& rng) {
  params.validate();
  const int kt = static_cast<int>(anchors.size());
  const KnnTable table = pairwise_knn_table(cloud, params.m_neighbors);
  std::vector<SubSample> out;
  out.reserve(static_cast<std::size_t>(3 * kt));
  for (int a : anchors) out.push_back(extract_patch(cloud, a, params));
  for (int k = 0; k < kt; ++k) {
    Rng member = rng.split(static_cast<std::uint64_t>(kt + k));
    out.push_back(extract_curve(cloud, table, anchors[static_cast<std::size_t>(k)],
                                params.n_curve, member));
  }
  for (int k = 0; k < kt; ++k) {
    Rng member = rng.split(static_cast<std::uint64_t>(2 * kt + k));
    out.push_back(extract_random(cloud, params, member));
  }
  return out;
}

std::vector<SubSample> make_ensemble_inputs(const PointCloud& cloud, const SamplingParams& params,
                                            Rng& rng) {
  params.validate();
  if (cloud.size() < params.m_neighbors + 1) {
    throw Error(ErrorKind::BadK, "cloud of " + std::to_string(cloud.size()) +
                                     " points is too small for m_neighbors=" +
                                     std::to_string(params.m_neighbors));
  }
  const int start = static_cast<int>(rng.index(static_cast<std::size_t>(cloud.size())));
  const IndexSet anchors = fps(cloud, std::min(params.k_tilde, cloud.size()), start);
  return make_ensemble_inputs(cloud, params, anchors, rng);
}

}  // namespace epic
