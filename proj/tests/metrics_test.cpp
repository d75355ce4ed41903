#include "epic/metrics.hpp"

#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "epic/error.hpp"
#include "oracles.hpp"

namespace epic {
namespace {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::IoError;
}

FamilyErrors uniform_errors(double v) {
  FamilyErrors out;
  for (auto f : kAllFamilies) out[f] = {v, v, v, v, v};
  return out;
}

TEST(AccuracyTest, Examples) {
  EXPECT_EQ(overall_accuracy(std::vector<int>{1, 2, 3}, std::vector<int>{1, 2, 3}), 1.0);
  EXPECT_EQ(overall_accuracy(std::vector<int>{0, 0}, std::vector<int>{0, 1}), 0.5);
  std::vector<PredictionVector> preds = {{Eigen::Vector2d(0.9, 0.1)}, {Eigen::Vector2d(0.6, 0.4)}};
  EXPECT_EQ(overall_accuracy(preds, std::vector<int>{0, 1}), 0.5);
  EXPECT_EQ(kind_of([] { overall_accuracy(std::vector<int>{}, std::vector<int>{}); }),
            ErrorKind::EmptyEval);
  EXPECT_EQ(kind_of([] { overall_accuracy(std::vector<int>{1}, std::vector<int>{1, 2}); }),
            ErrorKind::LengthMismatch);
}

TEST(CorruptionErrorTest, SelfReferenceIsExactlyOne) {
  FamilyErrors e;
  Rng rng(2);
  for (auto f : kAllFamilies) {
    for (auto& v : e[f]) v = rng.uniform(0.01, 0.9);
  }
  const auto r = corruption_error(e, e);
  EXPECT_EQ(r.mce, 1.0);
  for (const auto& [f, ce] : r.ce) EXPECT_EQ(ce, 1.0) << to_string(f);
}

TEST(CorruptionErrorTest, HalfTheErrorsGivesHalf) {
  const auto r = corruption_error(uniform_errors(0.1), uniform_errors(0.2));
  EXPECT_EQ(r.ce.size(), 7u);
  EXPECT_DOUBLE_EQ(r.mce, 0.5);
}

TEST(CorruptionErrorTest, RatioOfSumsNotMeanOfRatios) {
  FamilyErrors model, ref;
  model[CorruptionFamily::Jitter] = {0.1, 0.1, 0.1, 0.1, 0.6};
  ref[CorruptionFamily::Jitter] = {0.1, 0.1, 0.1, 0.1, 0.1};
  EXPECT_DOUBLE_EQ(corruption_error(model, ref).ce.at(CorruptionFamily::Jitter), 2.0);
}

TEST(CorruptionErrorTest, Errors) {
  auto ref = uniform_errors(0.2);
  ref[CorruptionFamily::Scale] = {0, 0, 0, 0, 0};
  EXPECT_EQ(kind_of([&] { corruption_error(uniform_errors(0.1), ref); }),
            ErrorKind::ZeroReferenceError);
  auto partial = uniform_errors(0.1);
  partial.erase(CorruptionFamily::Rotate);
  EXPECT_EQ(kind_of([&] { corruption_error(partial, uniform_errors(0.1)); }),
            ErrorKind::LengthMismatch);
}

TEST(ImportanceTest, Examples) {
  RowMatrix f(3, 2);
  f << 1, 5, 2, 3, 0, 4;
  EXPECT_EQ(pointwise_importance(f), (std::vector<int>{1, 1, 0}));
  RowMatrix one(1, 7);
  one.setRandom();
  EXPECT_EQ(pointwise_importance(one), (std::vector<int>{7}));
  RowMatrix ties = RowMatrix::Constant(4, 3, 2.0);
  EXPECT_EQ(pointwise_importance(ties), (std::vector<int>{3, 0, 0, 0}));
}

TEST(ImportanceTest, SumsToFeatureCount) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = static_cast<Eigen::Index>(1 + rng.index(30));
    const auto f = static_cast<Eigen::Index>(1 + rng.index(40));
    RowMatrix m(n, f);
    for (Eigen::Index i = 0; i < n; ++i) {
      // Coarse values so ties are common.
      for (Eigen::Index j = 0; j < f; ++j) m(i, j) = static_cast<double>(rng.index(4));
    }
    const auto imp = pointwise_importance(m);
    EXPECT_EQ(std::accumulate(imp.begin(), imp.end(), 0), f);
    // Brute force: first row attaining each column's max.
    std::vector<int> expect(static_cast<std::size_t>(n), 0);
    for (Eigen::Index j = 0; j < f; ++j) {
      const double mx = m.col(j).maxCoeff();
      Eigen::Index row = 0;
      while (m(row, j) != mx) ++row;
      ++expect[static_cast<std::size_t>(row)];
    }
    EXPECT_EQ(imp, expect);
  }
}

PredictionMatrix matrix_of(std::initializer_list<std::initializer_list<double>> values) {
  PredictionMatrix m{Eigen::MatrixXd(static_cast<Eigen::Index>(values.size()),
                                     static_cast<Eigen::Index>(values.begin()->size()))};
  Eigen::Index r = 0;
  for (const auto& row : values) {
    Eigen::Index c = 0;
    for (double v : row) m.probs(r, c++) = v;
    ++r;
  }
  return m;
}

TEST(DiversityTest, Examples) {
  const std::vector<PredictionMatrix> same = {
      matrix_of({{0.7, 0.2, 0.1}, {0.7, 0.2, 0.1}, {0.7, 0.2, 0.1}})};
  EXPECT_DOUBLE_EQ(diversity_c(same), 1.0);
  const std::vector<PredictionMatrix> opposite = {matrix_of({{0.6, 0.4}, {0.4, 0.6}})};
  EXPECT_DOUBLE_EQ(member_correlation(opposite[0])(0, 1), -1.0);
  EXPECT_DOUBLE_EQ(diversity_c(opposite), 1.0);
  const std::vector<PredictionMatrix> one_row = {matrix_of({{0.5, 0.5}})};
  EXPECT_EQ(kind_of([&] { diversity_c(one_row); }), ErrorKind::BadK);
  EXPECT_EQ(kind_of([] { diversity_c(std::vector<PredictionMatrix>{}); }), ErrorKind::EmptyEval);
}

TEST(DiversityTest, ConstantRowsCorrelateZero) {
  const auto m = matrix_of({{0.25, 0.25, 0.25, 0.25}, {0.7, 0.1, 0.1, 0.1}});
  const auto corr = member_correlation(m);
  EXPECT_EQ(corr(0, 1), 0.0);
  EXPECT_EQ(corr(0, 0), 1.0);
  EXPECT_EQ(diversity_c(std::vector<PredictionMatrix>{m}), 0.0);
}

TEST(DiversityTest, MatchesHandPearsonAndStaysInUnitRange) {
  Rng rng(12);
  std::vector<PredictionMatrix> samples;
  double expected = 0.0;
  for (int s = 0; s < 10; ++s) {
    PredictionMatrix m{Eigen::MatrixXd(5, 6)};
    for (int k = 0; k < 5; ++k) {
      for (int c = 0; c < 6; ++c) m.probs(k, c) = rng.uniform(0.0, 1.0);
      m.probs.row(k) /= m.probs.row(k).sum();
    }
    double sum = 0.0;
    for (int a = 0; a < 5; ++a) {
      for (int b = 0; b < 5; ++b) {
        if (a == b) continue;
        const double ma = m.probs.row(a).mean(), mb = m.probs.row(b).mean();
        double sab = 0, saa = 0, sbb = 0;
        for (int c = 0; c < 6; ++c) {
          sab += (m.probs(a, c) - ma) * (m.probs(b, c) - mb);
          saa += (m.probs(a, c) - ma) * (m.probs(a, c) - ma);
          sbb += (m.probs(b, c) - mb) * (m.probs(b, c) - mb);
        }
        const double r = sab / std::sqrt(saa * sbb);
        sum += r * r;
      }
    }
    expected += sum / 20.0;
    samples.push_back(std::move(m));
  }
  expected /= 10.0;
  const auto d = diversity(samples);
  EXPECT_NEAR(d.c, expected, 1e-12);
  EXPECT_GE(d.c, 0.0);
  EXPECT_LE(d.c, 1.0);
  EXPECT_EQ(d.mean_correlation.rows(), 5);
}

TEST(UniformityTest, Examples) {
  const auto clean = oracle::random_cloud(10, 4);
  EXPECT_EQ(uniformity(clean, clean, 0.0), 0.0);
  PointMatrix far = clean.matrix();
  far.array() += 10.0;
  EXPECT_EQ(uniformity(clean, PointCloud(far), 0.0), 1.0);
  EXPECT_EQ(uniformity(clean, PointCloud(far), 0.5), 1.0);
  const auto kept = clean.select(std::vector<int>{0, 2, 3, 5, 7, 9});
  EXPECT_DOUBLE_EQ(uniformity(clean, kept, 0.0), 0.4);
}

TEST(UniformityTest, EpsilonMatchesEachPointOnce) {
  const PointCloud clean({Point3(0, 0, 0), Point3(0.1, 0, 0)});
  const PointCloud corrupted({Point3(0.01, 0, 0)});
  // Only one clean point can claim the single corrupted point.
  EXPECT_DOUBLE_EQ(uniformity(clean, corrupted, 0.2), 0.5);
  const PointCloud shifted({Point3(0.02, 0, 0), Point3(0.12, 0, 0)});
  EXPECT_EQ(uniformity(clean, shifted, 0.0), 1.0);
  EXPECT_EQ(uniformity(clean, shifted, 0.05), 0.0);
  EXPECT_EQ(kind_of([&] { uniformity(clean, shifted, -1.0); }), ErrorKind::BadConfig);
}

TEST(SpearmanTest, Examples) {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{2, 4, 8, 16, 32}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{5, 4, 3, 2, 1}), -1.0);
  EXPECT_EQ(spearman(x, std::vector<double>{3, 3, 3, 3, 3}), 0.0);
  // Ties get average ranks: y ranks 1.5 1.5 3 4 5.
  EXPECT_NEAR(spearman(x, std::vector<double>{1, 1, 2, 3, 4}), 0.9746794344808963, 1e-12);
}

EvalReport sample_report() {
  EvalReport r;
  r.model_id = "baseline";
  r.overall_accuracy = 0.875;
  r.error_rates = uniform_errors(0.125);
  r.error_rates[CorruptionFamily::Jitter] = {0.1, 0.2, 0.30000000000000004, 0.4, 0.5};
  r.ce = corruption_error(r.error_rates, uniform_errors(0.25)).ce;
  r.mce = 0.6;
  r.metadata = {{"root_seed", "7"}, {"k_tilde", "4"}};
  return r;
}

TEST(EvalReportTest, JsonRoundTrip) {
  const auto r = sample_report();
  const auto text = r.to_json().dump();
  const auto back = EvalReport::from_json(nlohmann::json::parse(text));
  EXPECT_EQ(back.model_id, r.model_id);
  EXPECT_EQ(back.overall_accuracy, r.overall_accuracy);
  EXPECT_EQ(back.error_rates, r.error_rates);
  EXPECT_EQ(back.ce, r.ce);
  EXPECT_EQ(back.mce, r.mce);
  EXPECT_FALSE(back.diversity_c);
  EXPECT_EQ(back.metadata, r.metadata);
  EXPECT_EQ(back.to_json().dump(), text);
  EXPECT_EQ(kind_of([] { EvalReport::from_json(nlohmann::json::parse("{\"model_id\":1}")); }),
            ErrorKind::FormatError);
}

TEST(EvalReportTest, CsvHasOneRowPerFamilyAndSeverity) {
  const auto csv = sample_report().to_csv();
  EXPECT_EQ(csv.rfind("family,severity,error_rate,ce\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 7 * 5);
  EXPECT_NE(csv.find("jitter,3,0.30000000000000004,"), std::string::npos);
}

TEST(EvalReportTest, Validation) {
  auto r = sample_report();
  EXPECT_NO_THROW(r.validate());
  r.error_rates[CorruptionFamily::Scale][2] = 1.5;
  EXPECT_EQ(kind_of([&] { r.validate(); }), ErrorKind::BadConfig);
  r = sample_report();
  r.diversity_c = 1.2;
  EXPECT_EQ(kind_of([&] { r.validate(); }), ErrorKind::BadConfig);
}

}  // namespace
}  // namespace epic
