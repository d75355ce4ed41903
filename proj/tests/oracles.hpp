#pragma once

// Brute-force reference implementations used only by tests. They share no
// code with the library paths they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "epic/classifier.hpp"
#include "epic/geometry.hpp"
#include "epic/rng.hpp"

namespace epic::oracle {

inline double sq_dist(const PointCloud& c, int a, int b) {
  double s = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double d = c.matrix()(a, k) - c.matrix()(b, k);
    s += d * d;
  }
  return s;
}

/// Full stable sort of all other indices by distance.
inline IndexSet knn(const PointCloud& c, int q, int k) {
  IndexSet all;
  for (int i = 0; i < c.size(); ++i) {
    if (i != q) all.push_back(i);
  }
  std::stable_sort(all.begin(), all.end(),
                   [&](int a, int b) { return sq_dist(c, q, a) < sq_dist(c, q, b); });
  all.resize(static_cast<std::size_t>(k));
  return all;
}

/// Greedy max-min selection recomputing every minimum from scratch.
inline IndexSet fps(const PointCloud& c, int k, int start) {
  IndexSet chosen{start};
  while (static_cast<int>(chosen.size()) < k) {
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < c.size(); ++i) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      double m = std::numeric_limits<double>::infinity();
      for (int s : chosen) m = std::min(m, sq_dist(c, i, s));
      if (m > best_d) {
        best_d = m;
        best = i;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

inline PointCloud random_cloud(int n, std::uint64_t seed) {
  Rng rng(seed);
  PointMatrix m(n, 3);
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) m(i, a) = rng.uniform(-1.0, 1.0);
  }
  return PointCloud(std::move(m));
}

/// Mean cross-entropy evaluated by a plain forward pass.
inline double mean_cross_entropy(const PointSetModel& model, const std::vector<PointCloud>& batch,
                                 const std::vector<int>& labels) {
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto p = predict(model, batch[i]);
    loss -= std::log(p.probs(labels[i]));
  }
  return loss / static_cast<double>(batch.size());
}

/// Which side of every kink (ReLU sign, max-pool winner) the network sits
/// on. Finite differences are only a valid oracle when a perturbation keeps
/// this pattern fixed.
inline std::vector<int> activation_pattern(const PointSetModel& model,
                                           const std::vector<PointCloud>& batch) {
  std::vector<int> pattern;
  for (const auto& cloud : batch) {
    const ForwardTrace t = trace_forward(model, cloud.matrix());
    for (const auto& pre : t.encoder_pre) {
      for (Eigen::Index i = 0; i < pre.size(); ++i) pattern.push_back(pre.data()[i] > 0.0);
    }
    pattern.insert(pattern.end(), t.argmax_rows.begin(), t.argmax_rows.end());
    for (std::size_t l = 0; l + 1 < t.head_pre.size(); ++l) {
      for (Eigen::Index i = 0; i < t.head_pre[l].size(); ++i) pattern.push_back(t.head_pre[l](i) > 0.0);
    }
  }
  return pattern;
}

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_at_kinks = 0;
};

/// Central differences with step h on every parameter. Relative error is
/// |a - n| / max(|a|, |n|, floor).
inline GradientCheck check_gradients(const PointSetModel& model,
                                     const std::vector<PointCloud>& batch,
                                     const std::vector<int>& labels, double h = 1e-4,
                                     double floor = 1e-6) {
  const auto analytic = loss_and_gradients(model, batch, labels).gradients.flatten();
  const auto base = model.flatten();
  const auto pattern = activation_pattern(model, batch);
  GradientCheck out;
  PointSetModel probe = model;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto params = base;
    params[i] = base[i] + h;
    probe.assign(params);
    const double up = mean_cross_entropy(probe, batch, labels);
    const bool up_same = activation_pattern(probe, batch) == pattern;
    params[i] = base[i] - h;
    probe.assign(params);
    const double down = mean_cross_entropy(probe, batch, labels);
    const bool down_same = activation_pattern(probe, batch) == pattern;
    if (!up_same || !down_same) {
      ++out.skipped_at_kinks;
      continue;
    }
    const double numeric = (up - down) / (2 * h);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    out.max_relative_error = std::max(out.max_relative_error, rel);
    ++out.checked;
  }
  return out;
}

}  // namespace epic::oracle
