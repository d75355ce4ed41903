#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "epic/classifier.hpp"
#include "epic/corruptions.hpp"
#include "epic/data.hpp"
#include "epic/ensemble.hpp"
#include "epic/sampling.hpp"

namespace epic {

enum class Aggregation { Mean, Majority };

/// Everything a pipeline run depends on. Text form is flat `key = value`
/// lines; `#` starts a comment. Unknown keys are errors.
struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "run";

  int points_per_cloud = 256;
  int train_size = 800;
  int test_size = 200;

  // Sampling sizes for a 1024-point cloud; scaled to points_per_cloud.
  int n_patch = 512;
  int n_curve = 512;
  int n_random = 128;
  int m_neighbors = 40;
  int k_tilde = 4;
  AnchorMode anchors = AnchorMode::Random;

  int epochs = 60;
  int batch_size = 32;
  double learning_rate = 5e-4;
  OptimizerKind optimizer = OptimizerKind::Adam;
  bool augment = true;

  Aggregation aggregate = Aggregation::Mean;
  std::optional<CorruptionFamily> family;  // unset: all families
  int severity = 0;                        // 0: all severities
  int ns_members = 0;                      // 0: 3 * k_tilde
  int importance_samples = 8;

  // Unset seeds derive from `seed` via named sub-streams.
  std::optional<std::uint64_t> data_seed;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::uint64_t> corrupt_seed;
  std::optional<std::uint64_t> infer_seed;

  /// Throws ConfigError on unknown keys, malformed values or bad lines.
  static RunConfig parse(std::string_view text);
  void set(std::string_view key, std::string_view value);
  /// Throws ConfigError when values are out of range.
  void validate() const;

  /// Every key, with derived seeds written out, so the text alone
  /// reproduces the run.
  std::string to_text() const;

  std::uint64_t resolved_data_seed() const;
  std::uint64_t resolved_train_seed() const;
  std::uint64_t resolved_corrupt_seed() const;
  std::uint64_t resolved_infer_seed() const;
  int resolved_ns_members() const { return ns_members > 0 ? ns_members : 3 * k_tilde; }

  DatasetConfig dataset_config() const;
  /// Sampling sizes resolved for points_per_cloud.
  SamplingParams sampling() const;
  TrainConfig train_config(std::uint64_t seed) const;
  std::vector<CorruptionSpec> selected_corruptions() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

std::string_view to_string(Aggregation aggregation);

/// Output layout under RunConfig::out.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path models() const { return root / "models"; }
  std::filesystem::path corrupted() const { return root / "corrupted"; }
  std::filesystem::path eval() const { return root / "eval"; }
  std::filesystem::path diversity() const { return root / "diversity"; }
  std::filesystem::path importance() const { return root / "importance"; }
  std::filesystem::path report() const { return root / "report.json"; }
};

// Subcommands. Each writes its outputs plus `config.resolved` into its
// directory and reports progress on `log`.
void run_gen_data(const RunConfig& config, std::ostream& log);
void run_train(const RunConfig& config, std::ostream& log);
void run_corrupt(const RunConfig& config, std::ostream& log);
void run_eval(const RunConfig& config, std::ostream& log);
void run_diversity(const RunConfig& config, std::ostream& log);
void run_importance(const RunConfig& config, std::ostream& log);
void run_report(const RunConfig& config, std::ostream& log);

}  // namespace epic
