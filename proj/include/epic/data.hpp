#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "epic/geometry.hpp"
#include "epic/rng.hpp"

namespace epic {

struct LabeledCloud {
  PointCloud cloud;
  int label;
  std::string sample_id;
};

inline constexpr std::array<std::string_view, 8> kShapeClasses = {
    "sphere", "cube", "cylinder", "cone", "torus", "tetrahedron", "disc", "helix"};

struct DatasetConfig {
  int points_per_cloud = 256;
  int train_size = 800;
  int test_size = 200;
  std::uint64_t seed = 0;

  static constexpr int num_classes() { return static_cast<int>(kShapeClasses.size()); }
  /// Throws BadConfig unless sizes >= num_classes() and points_per_cloud >= 64.
  void validate() const;
};

struct Dataset {
  std::vector<LabeledCloud> train;
  std::vector<LabeledCloud> test;
};

/// Surface samples of one shape class with randomized shape parameters and
/// a small random pose, normalized to the unit sphere and rounded to float
/// precision (the storage precision).
PointCloud generate_shape(int label, int n_points, Rng& rng);

/// Class-balanced splits: sample i has label i % num_classes().
Dataset generate_dataset(const DatasetConfig& config);

/// Per-axis scaling in [2/3, 3/2] followed by per-axis translation in
/// [-0.2, 0.2]. Point count and order are preserved.
PointCloud augment(const PointCloud& cloud, Rng& rng);

/// Rounds every coordinate to the nearest 32-bit float.
PointCloud quantize_to_float(const PointCloud& cloud);

// Binary cloud files: "EPCD", u32 version, u32 count, count*3 LE float32.
inline constexpr std::uint32_t kCloudFormatVersion = 1;

std::vector<std::uint8_t> encode_cloud(const PointCloud& cloud);
/// Throws FormatError naming the byte offset of the problem.
PointCloud decode_cloud(std::span<const std::uint8_t> bytes);

/// Writes `labels.csv` (sample_id,label) and one `<sample_id>.epcd` per
/// sample. Each file is written to a temporary name and renamed.
void save_dataset(const std::filesystem::path& dir, const std::vector<LabeledCloud>& samples);
/// Reads a directory written by save_dataset (or converted externally).
/// With normalize=true every cloud is re-normalized to the unit sphere.
std::vector<LabeledCloud> load_dataset(const std::filesystem::path& dir, bool normalize = false);

/// Atomic text/binary write: temp file in the same directory, then rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace epic
