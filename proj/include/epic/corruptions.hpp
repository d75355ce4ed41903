#pragma once

#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "epic/data.hpp"
#include "epic/geometry.hpp"
#include "epic/rng.hpp"

namespace epic {

enum class CorruptionFamily { Scale, Jitter, Rotate, DropGlobal, DropLocal, AddGlobal, AddLocal };

inline constexpr std::array<CorruptionFamily, 7> kAllFamilies = {
    CorruptionFamily::Scale,      CorruptionFamily::Jitter,    CorruptionFamily::Rotate,
    CorruptionFamily::DropGlobal, CorruptionFamily::DropLocal, CorruptionFamily::AddGlobal,
    CorruptionFamily::AddLocal};

/// Lower-case snake names used in directory names and reports ("drop_global").
std::string_view to_string(CorruptionFamily family);
/// Accepts the snake names and the CamelCase names. Throws BadConfig.
CorruptionFamily parse_family(std::string_view name);

/// Families that touch only a subset of points (plus Jitter, which is
/// nonuniform under the epsilon-ball relaxation).
bool is_nonuniform(CorruptionFamily family);

struct CorruptionSpec {
  CorruptionFamily family;
  int severity;  // 1..5

  /// "<family>_<severity>"
  std::string name() const;
  auto operator<=>(const CorruptionSpec&) const = default;
};

/// Human-readable statement of the schedule applied at each severity.
std::string describe_schedule(CorruptionFamily family);

/// Applies one corruption. The input is expected to be unit-sphere
/// normalized with at least 64 points. Add* families append after the
/// original points; Drop* families keep the survivors in input order.
PointCloud apply_corruption(const CorruptionSpec& spec, const PointCloud& cloud, Rng& rng);

using CorruptedSets = std::map<CorruptionSpec, std::vector<LabeledCloud>>;

/// All 35 (family, severity) variants of `dataset`. Sample i of variant
/// (f, s) uses the stream rng.split(f).split(s).split(i).
CorruptedSets corrupted_test_set(const std::vector<LabeledCloud>& dataset, const Rng& rng);

/// The single-variant building block of corrupted_test_set.
std::vector<LabeledCloud> corrupt_dataset(const std::vector<LabeledCloud>& dataset,
                                          const CorruptionSpec& spec, const Rng& rng);

}  // namespace epic
