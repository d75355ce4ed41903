#include "epic/ensemble.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>

#include <gtest/gtest.h>

#include "epic/error.hpp"
#include "oracles.hpp"

namespace epic {
namespace {

PredictionMatrix rows(std::initializer_list<std::initializer_list<double>> values) {
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

ModelArch small_arch() { return ModelArch::with(std::vector<int>{8, 16}, std::vector<int>{8}, 8); }

SamplingParams small_sampling() {
  SamplingParams p;
  p.n_patch = 16;
  p.n_curve = 16;
  p.n_random = 8;
  p.m_neighbors = 8;
  p.k_tilde = 2;
  return p;
}

std::vector<LabeledCloud> small_dataset(int count) {
  DatasetConfig dc;
  dc.points_per_cloud = 64;
  dc.train_size = count;
  dc.test_size = 8;
  dc.seed = 5;
  return generate_dataset(dc).train;
}

EpicModel untrained(const ModelArch& arch, const SamplingParams& params) {
  return {PointSetModel::init(arch, 1), PointSetModel::init(arch, 2), PointSetModel::init(arch, 3),
          params};
}

TEST(AggregateMeanTest, Examples) {
  EXPECT_EQ(aggregate_mean(rows({{1, 0}, {0, 1}})).probs, Eigen::Vector2d(0.5, 0.5));
  EXPECT_EQ(aggregate_mean(rows({{0.2, 0.7, 0.1}})).probs, Eigen::Vector3d(0.2, 0.7, 0.1));
  const auto same = aggregate_mean(rows({{0.3, 0.6, 0.1}, {0.3, 0.6, 0.1}, {0.3, 0.6, 0.1}}));
  EXPECT_NEAR(same.probs(0), 0.3, 1e-15);
  EXPECT_NEAR(same.probs(1), 0.6, 1e-15);
  EXPECT_NEAR(same.probs.sum(), 1.0, 1e-12);
}

TEST(AggregateMeanTest, RowPermutationChangesNothing) {
  Rng rng(4);
  PredictionMatrix m{Eigen::MatrixXd(12, 8)};
  for (int k = 0; k < 12; ++k) {
    for (int c = 0; c < 8; ++c) m.probs(k, c) = rng.uniform(0.0, 1.0);
    m.probs.row(k) /= m.probs.row(k).sum();
  }
  const auto base = aggregate_mean(m);
  std::vector<int> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    PredictionMatrix shuffled{m.probs(perm, Eigen::all)};
    const auto p = aggregate_mean(shuffled);
    EXPECT_EQ(p.probs, base.probs);
    EXPECT_EQ(p.argmax(), base.argmax());
    EXPECT_EQ(aggregate_majority(shuffled), aggregate_majority(m));
  }
}

TEST(AggregateMajorityTest, Examples) {
  // Rows voting 2, 2, 5.
  auto m = rows({{0, 0, 0.9, 0, 0, 0.1}, {0, 0, 0.6, 0, 0, 0.4}, {0, 0, 0.1, 0, 0, 0.9}});
  EXPECT_EQ(aggregate_majority(m), 2);
  EXPECT_EQ(aggregate_majority(rows({{0.1, 0.2, 0.7}})), 2);
  // Votes [1, 1, 3, 3]: two classes tied, class 3 has the higher mean.
  m = rows({{0.1, 0.5, 0, 0.4}, {0.1, 0.5, 0, 0.4}, {0, 0.1, 0, 0.9}, {0, 0.1, 0, 0.9}});
  EXPECT_EQ(aggregate_majority(m), 3);
  // Same votes and equal means: lowest index.
  m = rows({{0.4, 0.6}, {0.6, 0.4}});
  EXPECT_EQ(aggregate_majority(m), 0);
  // Plurality beats confidence.
  m = rows({{0.51, 0.49}, {0.51, 0.49}, {0, 1}});
  EXPECT_EQ(aggregate_majority(m), 0);
}

TEST(EpicInferTest, TwelveRowsOrderedByKind) {
  const auto sampling = SamplingParams{}.scaled_for(256);
  const auto epic = untrained(ModelArch{}, sampling);
  const auto cloud = generate_dataset(DatasetConfig{256, 8, 8, 3}).train[0].cloud;
  Rng rng(8);
  const auto r = epic_infer(epic, cloud, rng);
  ASSERT_EQ(r.matrix.members(), 12);
  ASSERT_EQ(r.matrix.classes(), 8);
  ASSERT_EQ(r.members.size(), 12u);
  for (int k = 0; k < 12; ++k) {
    const auto kind = static_cast<SampleKind>(k / 4);
    EXPECT_EQ(r.members[static_cast<std::size_t>(k)].kind, kind);
    EXPECT_NEAR(r.matrix.probs.row(k).sum(), 1.0, 1e-6);
    EXPECT_EQ(r.matrix.row(k).probs,
              predict(epic.specialist(kind), r.members[static_cast<std::size_t>(k)].points).probs);
  }
  EXPECT_EQ(r.prediction.probs, aggregate_mean(r.matrix).probs);
  EXPECT_EQ(r.predicted_class, r.prediction.argmax());

  Rng again(8);
  EXPECT_EQ(epic_infer(epic, cloud, again).matrix.probs, r.matrix.probs);
}

TEST(EpicInferTest, TooFewPoints) {
  const auto epic = untrained(small_arch(), SamplingParams{});
  Rng rng(1);
  try {
    epic_infer(epic, oracle::random_cloud(40, 1), rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BadK);
  }
}

TEST(EpicModelTest, ClassCountMismatch) {
  auto epic = untrained(small_arch(), small_sampling());
  epic.model_random = PointSetModel::init(ModelArch::with(std::vector<int>{8, 16}, {}, 5), 3);
  try {
    epic.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BadConfig);
  }
}

TEST(EpicModelTest, SaveLoadRoundTrip) {
  const auto epic = untrained(small_arch(), small_sampling());
  const auto dir = std::filesystem::temp_directory_path() / "epic_model_roundtrip";
  std::filesystem::create_directories(dir);
  save_epic(dir, epic);
  const auto back = load_epic(dir);
  EXPECT_EQ(back.model_patches, epic.model_patches);
  EXPECT_EQ(back.model_curves, epic.model_curves);
  EXPECT_EQ(back.model_random, epic.model_random);
  EXPECT_EQ(back.params, epic.params);
  std::filesystem::remove_all(dir);
}

TrainConfig small_config() {
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.seed = 21;
  return tc;
}

TEST(EpicTrainTest, IdenticalSeedsGiveIdenticalCheckpoints) {
  const auto data = small_dataset(10);
  EpicTrainOptions opts;
  opts.archs = {small_arch(), small_arch(), small_arch()};
  const auto a = epic_train(data, small_sampling(), small_config(), opts);
  const auto b = epic_train(data, small_sampling(), small_config(), opts);
  EXPECT_EQ(encode_checkpoint(a.model_patches), encode_checkpoint(b.model_patches));
  EXPECT_EQ(encode_checkpoint(a.model_curves), encode_checkpoint(b.model_curves));
  EXPECT_EQ(encode_checkpoint(a.model_random), encode_checkpoint(b.model_random));
  EXPECT_NE(a.model_patches, a.model_curves);
}

// Reference loop: trains one specialist on its own kind only, labelled with
// the parent cloud's label, drawing randomness from the same named streams.
PointSetModel reference_specialist(const std::vector<LabeledCloud>& data,
                                   const SamplingParams& sampling, const TrainConfig& config,
                                   const ModelArch& arch, SampleKind kind) {
  const Rng root(config.seed);
  const long n = static_cast<long>(data.size());
  const long batches = (n + config.batch_size - 1) / config.batch_size;
  Trainer trainer(PointSetModel::init(arch, root.split("init").split(to_string(kind)).seed()),
                  config, batches * config.epochs);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = root.split("shuffle").split(static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    for (long b = 0; b < batches; ++b) {
      std::vector<PointCloud> clouds;
      std::vector<int> labels;
      for (long i = b * config.batch_size; i < std::min(n, (b + 1) * config.batch_size); ++i) {
        const std::size_t idx = order[static_cast<std::size_t>(i)];
        Rng rng = root.split("sample").split(static_cast<std::uint64_t>(epoch)).split(idx);
        Rng aug = rng.split("augment");
        const PointCloud cloud = augment(data[idx].cloud, aug);
        Rng anchor_rng = rng.split("anchors");
        const auto start = static_cast<int>(anchor_rng.index(static_cast<std::size_t>(cloud.size())));
        const IndexSet anchors = fps(cloud, sampling.k_tilde, start);
        Rng member_rng = rng.split("members");
        for (auto& sub : make_ensemble_inputs(cloud, sampling, anchors, member_rng)) {
          if (sub.kind != kind) continue;
          clouds.push_back(std::move(sub.points));
          labels.push_back(data[idx].label);
        }
      }
      trainer.step(clouds, labels);
    }
  }
  return std::move(trainer).release();
}

TEST(EpicTrainTest, EachSpecialistSeesOnlyItsOwnKind) {
  const auto data = small_dataset(9);
  EpicTrainOptions opts;
  opts.anchors = AnchorMode::Fps;
  opts.archs = {small_arch(), ModelArch::with(std::vector<int>{6, 12}, std::vector<int>{}, 8),
                small_arch()};
  const auto config = small_config();
  std::vector<SampleKind> reported;
  const auto epic = epic_train(data, small_sampling(), config, opts,
                               [&reported](SampleKind k, const EpochStats&) { reported.push_back(k); });
  EXPECT_EQ(reported.size(), 6u);
  EXPECT_EQ(epic.model_curves.arch, opts.archs[1]);
  for (SampleKind kind : {SampleKind::Patch, SampleKind::Curve, SampleKind::Random}) {
    const auto ref = reference_specialist(data, small_sampling(), config,
                                          opts.archs[static_cast<std::size_t>(kind)], kind);
    EXPECT_EQ(encode_checkpoint(ref), encode_checkpoint(epic.specialist(kind))) << to_string(kind);
  }
}

TEST(EpicTrainTest, RejectsLabelsOutsideTheModel) {
  auto data = small_dataset(8);
  data[2].label = 9;
  EpicTrainOptions opts;
  opts.archs = {small_arch(), small_arch(), small_arch()};
  try {
    epic_train(data, small_sampling(), small_config(), opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConfigError);
  }
}

}  // namespace
}  // namespace epic
