#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "epic/classifier.hpp"
#include "epic/corruptions.hpp"
#include "epic/ensemble.hpp"

namespace epic {

/// Fraction of positions where predicted == labels. Throws EmptyEval on
/// empty input and LengthMismatch on unequal lengths.
double overall_accuracy(std::span<const int> predicted, std::span<const int> labels);
double overall_accuracy(std::span<const PredictionVector> predictions, std::span<const int> labels);

using SeverityErrors = std::array<double, 5>;
using FamilyErrors = std::map<CorruptionFamily, SeverityErrors>;

struct CorruptionErrorResult {
  std::map<CorruptionFamily, double> ce;
  double mce = 0.0;
};

/// CE_f = sum_s err_model(f, s) / sum_s err_ref(f, s); mCE averages CE over
/// the families present. Throws ZeroReferenceError when a reference sum is 0
/// and LengthMismatch when the family sets differ.
CorruptionErrorResult corruption_error(const FamilyErrors& model, const FamilyErrors& reference);

/// Imp(j): how many feature columns attain their maximum at row j (ties go
/// to the lowest row), so the entries sum to the column count.
std::vector<int> pointwise_importance(const RowMatrix& features);

/// K x K Pearson correlation between the rows of one prediction matrix,
/// taken across the class dimension. A zero-variance row correlates 0 with
/// every other row and 1 with itself.
Eigen::MatrixXd member_correlation(const PredictionMatrix& matrix);

struct DiversityResult {
  double c = 0.0;
  Eigen::MatrixXd mean_correlation;
};

/// c = mean_i ||C_i - I||_F^2 / (K^2 - K). Lower means more diverse.
/// Throws BadK if K < 2 or the matrices disagree on K; EmptyEval if empty.
DiversityResult diversity(std::span<const PredictionMatrix> per_sample);
double diversity_c(std::span<const PredictionMatrix> per_sample);

/// u = 1 - |matched| / max(N, M), where clean and corrupted points are
/// matched one-to-one, greedily by ascending distance, when within
/// `epsilon`. epsilon = 0 requires bit-identical coordinates.
double uniformity(const PointCloud& clean, const PointCloud& corrupted, double epsilon);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> x, std::span<const double> y);

struct EvalReport {
  std::string model_id;
  double overall_accuracy = 0.0;
  FamilyErrors error_rates;
  std::map<CorruptionFamily, double> ce;
  std::optional<double> mce;
  std::optional<double> diversity_c;
  std::map<std::string, std::string> metadata;

  void validate() const;
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  /// family,severity,error_rate,ce — one row per family x severity.
  std::string to_csv() const;
};

}  // namespace epic
