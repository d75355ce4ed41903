#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "epic/data.hpp"
#include "epic/geometry.hpp"
#include "epic/rng.hpp"

namespace epic {

/// Layer widths. encoder = {3, ..., F}; head = {F, ..., C}.
struct ModelArch {
  std::vector<int> encoder = {3, 64, 128};
  std::vector<int> head = {128, 64, 8};

  static ModelArch with(std::span<const int> encoder_hidden, std::span<const int> head_hidden,
                        int num_classes);

  int feature_dim() const { return encoder.back(); }
  int num_classes() const { return head.back(); }
  /// Throws BadConfig on malformed widths.
  void validate() const;
  /// Nonempty when F < C.
  std::optional<std::string> warning() const;

  bool operator==(const ModelArch&) const = default;
};

struct DenseLayer {
  RowMatrix weight;  // fan_in x fan_out
  Eigen::RowVectorXd bias;
};

/// Per-point encoder (affine + ReLU per layer), max-pool over points, then
/// an MLP head (ReLU between layers, softmax on the output). The same type
/// holds gradients.
struct PointSetModel {
  ModelArch arch;
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> head;

  /// Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static PointSetModel init(const ModelArch& arch, std::uint64_t seed);
  static PointSetModel zeros(const ModelArch& arch);

  std::size_t parameter_count() const;
  /// Layer order: encoder then head; per layer the weight (row-major) then bias.
  std::vector<double> flatten() const;
  void assign(std::span<const double> values);
  bool all_finite() const;

  bool operator==(const PointSetModel& other) const;
};

struct PredictionVector {
  Eigen::VectorXd probs;

  /// Lowest index wins ties.
  int argmax() const;
  double entropy() const;
};

/// Intermediate values of one forward pass.
struct ForwardTrace {
  std::vector<RowMatrix> encoder_pre;         // per layer, N x width (before ReLU)
  RowMatrix features;                         // N x F (after last ReLU)
  Eigen::VectorXd pooled;                     // F
  std::vector<int> argmax_rows;               // F, lowest row index on ties
  std::vector<Eigen::VectorXd> head_pre;      // per head layer, before ReLU / softmax
  PredictionVector prediction;
};

/// Each point's features depend only on that point: permuting or duplicating
/// rows permutes or duplicates the feature rows bit for bit.
ForwardTrace trace_forward(const PointSetModel& model, const PointMatrix& points);

struct ForwardResult {
  RowMatrix features;
  Eigen::VectorXd pooled;
  PredictionVector prediction;
};

ForwardResult forward(const PointSetModel& model, const PointCloud& points);
PredictionVector predict(const PointSetModel& model, const PointCloud& points);
RowMatrix pointwise_features(const PointSetModel& model, const PointCloud& points);

struct LossAndGradients {
  double loss = 0.0;
  PointSetModel gradients;
  int correct = 0;
};

/// Mean cross-entropy over the batch and its exact gradient. The max-pool
/// gradient for each feature goes to the argmax point (lowest index on ties).
LossAndGradients loss_and_gradients(const PointSetModel& model, std::span<const PointCloud> batch,
                                    std::span<const int> labels);

enum class OptimizerKind { Adam, Sgd };

struct TrainConfig {
  int epochs = 60;
  int batch_size = 32;
  double learning_rate = 5e-4;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
  bool augment = true;

  void validate() const;
};

/// lr0 * (1 + cos(pi * step / total)) / 2
double cosine_learning_rate(double lr0, long step, long total);

/// Holds the optimizer state for one model. Each step() consumes one batch.
class Trainer {
 public:
  Trainer(PointSetModel model, const TrainConfig& config, long total_steps);

  /// Returns the batch loss. Throws NonFiniteLoss with diagnostics.
  LossAndGradients step(std::span<const PointCloud> batch, std::span<const int> labels);

  const PointSetModel& model() const noexcept { return model_; }
  PointSetModel release() && { return std::move(model_); }
  long steps_taken() const noexcept { return step_; }
  double current_learning_rate() const;

 private:
  PointSetModel model_;
  TrainConfig config_;
  long total_steps_;
  long step_ = 0;
  std::vector<double> m_, v_;
};

struct EpochStats {
  int epoch;
  double mean_loss;
  double train_accuracy;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Mini-batch training on whole clouds with a cosine-annealed learning rate.
/// Samples are reshuffled every epoch from the config seed.
PointSetModel train(PointSetModel model, const std::vector<LabeledCloud>& dataset,
                    const TrainConfig& config, const EpochCallback& on_epoch = {});

// Checkpoints: "EPIC", u32 version, u32 encoder width count, widths (u32),
// u32 head width count, widths (u32), then parameters as LE float64 in
// flatten() order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const PointSetModel& model);
PointSetModel decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const PointSetModel& model);
PointSetModel load_checkpoint(const std::filesystem::path& path);

}  // namespace epic
