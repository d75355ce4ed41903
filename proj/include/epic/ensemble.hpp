#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "epic/classifier.hpp"
#include "epic/data.hpp"
#include "epic/sampling.hpp"

namespace epic {

/// Three specialists, one per sampling kind. `params` are already resolved
/// for the dataset's nominal cloud size.
struct EpicModel {
  PointSetModel model_patches;
  PointSetModel model_curves;
  PointSetModel model_random;
  SamplingParams params;

  const PointSetModel& specialist(SampleKind kind) const;
  int num_classes() const { return model_patches.arch.num_classes(); }
  /// Throws BadConfig if the specialists disagree on class count.
  void validate() const;
};

/// K rows (one per ensemble member) by C classes.
struct PredictionMatrix {
  Eigen::MatrixXd probs;

  int members() const { return static_cast<int>(probs.rows()); }
  int classes() const { return static_cast<int>(probs.cols()); }
  PredictionVector row(int k) const { return {probs.row(k).transpose()}; }
};

/// How training picks the anchors of each sample.
enum class AnchorMode { Random, Fps };

struct EpicTrainOptions {
  AnchorMode anchors = AnchorMode::Random;
  /// Architectures of the patch, curve and random specialists.
  std::array<ModelArch, 3> archs = {ModelArch{}, ModelArch{}, ModelArch{}};
};

/// Per epoch and sample: augment the whole cloud, pick k_tilde anchors,
/// extract a patch, a curve and a random sub-sample per anchor, and train
/// each specialist on its own kind against the parent cloud's label. The
/// three models share nothing and step once per mini-batch of parent
/// clouds.
EpicModel epic_train(const std::vector<LabeledCloud>& dataset, const SamplingParams& sampling,
                     const TrainConfig& config, const EpicTrainOptions& options = {},
                     const std::function<void(SampleKind, const EpochStats&)>& on_epoch = {});

struct EpicInference {
  PredictionMatrix matrix;
  PredictionVector prediction;
  int predicted_class;
  std::vector<SubSample> members;
};

/// Builds the 3*k_tilde sub-samples, routes each to its specialist and
/// averages. Row order is [patches, curves, randoms].
EpicInference epic_infer(const EpicModel& epic, const PointCloud& cloud, Rng& rng);

/// Column-wise mean of the rows, independent of row order bit for bit.
PredictionVector aggregate_mean(const PredictionMatrix& matrix);

/// Each row votes for its argmax. Ties between equally voted classes go to
/// the larger mean probability, then the lower class index.
int aggregate_majority(const PredictionMatrix& matrix);

/// Writes patches.ckpt, curves.ckpt, random.ckpt and sampling.json.
void save_epic(const std::filesystem::path& dir, const EpicModel& epic);
EpicModel load_epic(const std::filesystem::path& dir);

}  // namespace epic
