#include "epic/geometry.hpp"

#include <gtest/gtest.h>

#include "epic/error.hpp"
#include "oracles.hpp"

namespace epic {
namespace {

PointCloud line(int n) {
  std::vector<Point3> pts;
  for (int i = 0; i < n; ++i) pts.emplace_back(i, 0, 0);
  return PointCloud(pts);
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an epic::Error";
  return ErrorKind::IoError;
}

TEST(PointCloudTest, RejectsNonFiniteAndEmpty) {
  PointMatrix bad(1, 3);
  bad << 0, std::numeric_limits<double>::quiet_NaN(), 0;
  EXPECT_EQ(kind_of([&] { PointCloud c(bad); }), ErrorKind::FormatError);
  EXPECT_EQ(kind_of([] { PointCloud c(PointMatrix(0, 3)); }), ErrorKind::BadConfig);
}

TEST(NormalizeTest, TwoPointExample) {
  const auto out = normalize_unit_sphere(PointCloud({Point3(2, 0, 0), Point3(0, 0, 0)}));
  EXPECT_NEAR(out.point(0).x(), 1.0, 1e-12);
  EXPECT_NEAR(out.point(1).x(), -1.0, 1e-12);
  EXPECT_NEAR(out.point(0).y(), 0.0, 1e-12);
}

TEST(NormalizeTest, AlreadyNormalizedIsIdentity) {
  const PointCloud c({Point3(1, 0, 0), Point3(-1, 0, 0), Point3(0, 0.5, 0), Point3(0, -0.5, 0)});
  const auto out = normalize_unit_sphere(c);
  EXPECT_TRUE(out.matrix().isApprox(c.matrix(), 1e-12));
}

TEST(NormalizeTest, DegenerateCloud) {
  EXPECT_EQ(kind_of([] { normalize_unit_sphere(PointCloud({Point3(0, 0, 0), Point3(0, 0, 0)})); }),
            ErrorKind::DegenerateCloud);
}

TEST(NormalizeTest, CentroidRadiusAndIdempotence) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto c = oracle::random_cloud(5 + static_cast<int>(seed), seed);
    const auto once = normalize_unit_sphere(c);
    EXPECT_LT(once.matrix().colwise().mean().norm(), 1e-6);
    EXPECT_NEAR(once.matrix().rowwise().norm().maxCoeff(), 1.0, 1e-6);
    const auto twice = normalize_unit_sphere(once);
    EXPECT_LT((twice.matrix() - once.matrix()).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(KnnTest, LineAndSquareExamples) {
  EXPECT_EQ(knn(line(4), 0, 2), (IndexSet{1, 2}));
  const PointCloud square({Point3(0, 0, 0), Point3(1, 0, 0), Point3(0, 1, 0), Point3(1, 1, 0)});
  EXPECT_EQ(knn(square, 0, 2), (IndexSet{1, 2}));
}

TEST(KnnTest, ExhaustiveKReturnsEveryOtherIndex) {
  const auto c = oracle::random_cloud(9, 4);
  auto all = knn(c, 3, 8);
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, (IndexSet{0, 1, 2, 4, 5, 6, 7, 8}));
}

TEST(KnnTest, BadK) {
  EXPECT_EQ(kind_of([] { knn(line(4), 0, 0); }), ErrorKind::BadK);
  EXPECT_EQ(kind_of([] { knn(line(4), 0, 4); }), ErrorKind::BadK);
  EXPECT_EQ(kind_of([] { knn(line(4), 7, 1); }), ErrorKind::BadIndex);
}

TEST(KnnTest, MatchesBruteForceWithDuplicates) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    // Quantized coordinates force plenty of exact distance ties.
    Rng rng(seed);
    const int n = 2 + static_cast<int>(rng.index(40));
    PointMatrix m(n, 3);
    for (int i = 0; i < n; ++i) {
      for (int a = 0; a < 3; ++a) m(i, a) = static_cast<double>(rng.index(3));
    }
    const PointCloud c(m);
    for (int q = 0; q < n; ++q) {
      for (int k = 1; k < n; ++k) ASSERT_EQ(knn(c, q, k), oracle::knn(c, q, k));
    }
  }
}

TEST(FpsTest, LineExamples) {
  EXPECT_EQ(fps(line(4), 2, 0), (IndexSet{0, 3}));
  EXPECT_EQ(fps(line(5), 3, 0), (IndexSet{0, 4, 2}));
  EXPECT_EQ(fps(line(5), 1, 3), (IndexSet{3}));
}

TEST(FpsTest, BadK) {
  EXPECT_EQ(kind_of([] { fps(line(4), 5, 0); }), ErrorKind::BadK);
  EXPECT_EQ(kind_of([] { fps(line(4), 0, 0); }), ErrorKind::BadK);
}

TEST(FpsTest, MatchesBruteForceAndIsDeterministic) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto c = oracle::random_cloud(3 + static_cast<int>(seed) * 2, seed + 100);
    for (int start = 0; start < c.size(); ++start) {
      const auto got = fps(c, c.size(), start);
      ASSERT_EQ(got, oracle::fps(c, c.size(), start));
      ASSERT_EQ(got, fps(c, c.size(), start));
    }
  }
}

TEST(FpsTest, DuplicatePointsStillYieldDistinctIndices) {
  const PointCloud c({Point3(0, 0, 0), Point3(0, 0, 0), Point3(1, 0, 0), Point3(1, 0, 0)});
  EXPECT_EQ(fps(c, 4, 0), (IndexSet{0, 2, 1, 3}));
}

TEST(KnnTableTest, Examples) {
  const auto t = pairwise_knn_table(line(3), 1);
  EXPECT_EQ(t.row(0)[0], 1);
  EXPECT_EQ(t.row(1)[0], 0);
  EXPECT_EQ(t.row(2)[0], 1);
  const auto two = pairwise_knn_table(line(2), 1);
  EXPECT_EQ(two.row(0)[0], 1);
  EXPECT_EQ(two.row(1)[0], 0);
}

TEST(KnnTableTest, RowsMatchKnn) {
  const auto c = oracle::random_cloud(32, 99);
  const auto t = pairwise_knn_table(c, 7);
  for (int i = 0; i < 32; ++i) {
    const IndexSet row(t.row(i).begin(), t.row(i).end());
    EXPECT_EQ(row, knn(c, i, 7));
  }
  EXPECT_THROW(pairwise_knn_table(c, 32), Error);
}

}  // namespace
}  // namespace epic
