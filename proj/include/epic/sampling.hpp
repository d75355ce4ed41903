#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "epic/geometry.hpp"
#include "epic/rng.hpp"

namespace epic {

struct SamplingParams {
  int n_patch = 512;
  int n_curve = 512;
  int n_random = 128;
  int m_neighbors = 40;
  int k_tilde = 4;

  /// For clouds smaller than 1024 points the sub-sample sizes shrink by
  /// n/1024, rounded to the nearest multiple of 8, with floors 32/32/16.
  /// m_neighbors and k_tilde are left alone.
  SamplingParams scaled_for(int n_points) const;

  /// Throws BadConfig if any field is < 1.
  void validate() const;

  bool operator==(const SamplingParams&) const = default;
};

enum class SampleKind { Patch, Curve, Random };

std::string_view to_string(SampleKind kind);

struct SubSample {
  SampleKind kind;
  std::optional<int> anchor;
  IndexSet source_indices;
  PointCloud points;
};

SubSample extract_patch(const PointCloud& cloud, int anchor, const SamplingParams& params);

/// Random walk of n_curve indices starting at `anchor`; each step moves to a
/// uniformly chosen member of the current point's m_neighbors nearest
/// neighbors. Revisits are kept.
SubSample extract_curve(const PointCloud& cloud, int anchor, const SamplingParams& params,
                        Rng& rng);
/// Same walk using a precomputed neighbor table (table.k() is the branching).
SubSample extract_curve(const PointCloud& cloud, const KnnTable& table, int anchor,
                        int n_curve, Rng& rng);

SubSample extract_random(const PointCloud& cloud, const SamplingParams& params, Rng& rng);

/// The 3*k_tilde ensemble inputs: FPS anchors (start drawn from rng), one
/// patch and one curve per anchor, plus k_tilde random sub-samples. Output
/// order is [patches..., curves..., randoms...]. Member i's randomness comes
/// from rng.split(i) so members are independent of one another.
std::vector<SubSample> make_ensemble_inputs(const PointCloud& cloud, const SamplingParams& params,
                                            Rng& rng);

/// Same layout, but the anchors are given (used by training with random
/// anchors).
std::vector<SubSample> make_ensemble_inputs(const PointCloud& cloud, const SamplingParams& params,
                                            std::span<const int> anchors, Rng& rng);

}  // namespace epic
