#include "epic/ensemble.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

#include "epic/error.hpp"

namespace epic {

namespace {

IndexSet random_anchors(int n, int count, Rng& rng) {
  IndexSet pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.index(static_cast<std::size_t>(n - i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(count));
  return pool;
}

constexpr std::array<SampleKind, 3> kKinds = {SampleKind::Patch, SampleKind::Curve,
                                              SampleKind::Random};

}  // namespace

const PointSetModel& EpicModel::specialist(SampleKind kind) const {
  switch (kind) {
    case SampleKind::Patch: return model_patches;
    case SampleKind::Curve: return model_curves;
    case SampleKind::Random: return model_random;
  }
  return model_random;
}

void EpicModel::validate() const {
  const int c = model_patches.arch.num_classes();
  if (model_curves.arch.num_classes() != c || model_random.arch.num_classes() != c) {
    throw Error(ErrorKind::BadConfig, "specialists disagree on class count");
  }
  params.validate();
}

EpicModel epic_train(const std::vector<LabeledCloud>& dataset, const SamplingParams& sampling,
                     const TrainConfig& config, const EpicTrainOptions& options,
                     const std::function<void(SampleKind, const EpochStats&)>& on_epoch) {
  config.validate();
  sampling.validate();
  if (dataset.empty()) throw Error(ErrorKind::EmptyEval, "cannot train on an empty dataset");
  const Rng root(config.seed);
  const long n = static_cast<long>(dataset.size());
  const long batches_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const long total_steps = batches_per_epoch * config.epochs;

  std::vector<Trainer> trainers;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& arch = options.archs[k];
    for (const auto& s : dataset) {
      if (s.label < 0 || s.label >= arch.num_classes()) {
        throw Error(ErrorKind::ConfigError, "sample " + s.sample_id + " has label " +
                                                std::to_string(s.label) + " but the model has " +
                                                std::to_string(arch.num_classes()) + " classes");
      }
    }
    const auto seed = root.split("init").split(to_string(kKinds[k])).seed();
    trainers.emplace_back(PointSetModel::init(arch, seed), config, total_steps);
  }

  std::vector<std::size_t> order(dataset.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = root.split("shuffle").split(static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    const Rng epoch_rng = root.split("sample").split(static_cast<std::uint64_t>(epoch));
    std::array<double, 3> loss_sum{};
    std::array<long, 3> correct{}, seen{};
    for (long b = 0; b < batches_per_epoch; ++b) {
      std::array<std::vector<PointCloud>, 3> clouds;
      std::array<std::vector<int>, 3> labels;
      for (long i = b * config.batch_size; i < std::min(n, (b + 1) * config.batch_size); ++i) {
        const std::size_t idx = order[static_cast<std::size_t>(i)];
        const auto& sample = dataset[idx];
        Rng rng = epoch_rng.split(idx);
        Rng aug_rng = rng.split("augment");
        const PointCloud cloud = config.augment ? augment(sample.cloud, aug_rng) : sample.cloud;
        Rng anchor_rng = rng.split("anchors");
        const int k_tilde = std::min(sampling.k_tilde, cloud.size());
        const IndexSet anchors =
            options.anchors == AnchorMode::Random
                ? random_anchors(cloud.size(), k_tilde, anchor_rng)
                : fps(cloud, k_tilde, static_cast<int>(anchor_rng.index(
                                          static_cast<std::size_t>(cloud.size()))));
        Rng member_rng = rng.split("members");
        for (auto& sub : make_ensemble_inputs(cloud, sampling, anchors, member_rng)) {
          const auto k = static_cast<std::size_t>(sub.kind);
          clouds[k].push_back(std::move(sub.points));
          labels[k].push_back(sample.label);
        }
      }
      for (std::size_t k = 0; k < 3; ++k) {
        const auto lg = trainers[k].step(clouds[k], labels[k]);
        loss_sum[k] += lg.loss * static_cast<double>(clouds[k].size());
        correct[k] += lg.correct;
        seen[k] += static_cast<long>(clouds[k].size());
      }
    }
    if (on_epoch) {
      for (std::size_t k = 0; k < 3; ++k) {
        on_epoch(kKinds[k], {epoch, loss_sum[k] / static_cast<double>(seen[k]),
                             static_cast<double>(correct[k]) / static_cast<double>(seen[k])});
      }
    }
  }
  EpicModel out{std::move(trainers[0]).release(), std::move(trainers[1]).release(),
                std::move(trainers[2]).release(), sampling};
  out.validate();
  return out;
}

EpicInference epic_infer(const EpicModel& epic, const PointCloud& cloud, Rng& rng) {
  std::vector<SubSample> members = make_ensemble_inputs(cloud, epic.params, rng);
  PredictionMatrix matrix{Eigen::MatrixXd(static_cast<Eigen::Index>(members.size()),
                                          epic.num_classes())};
  for (std::size_t k = 0; k < members.size(); ++k) {
    matrix.probs.row(static_cast<Eigen::Index>(k)) =
        predict(epic.specialist(members[k].kind), members[k].points).probs.transpose();
  }
  PredictionVector mean = aggregate_mean(matrix);
  const int cls = mean.argmax();
  return {std::move(matrix), std::move(mean), cls, std::move(members)};
}

PredictionVector aggregate_mean(const PredictionMatrix& matrix) {
  if (matrix.members() < 1) throw Error(ErrorKind::BadK, "empty prediction matrix");
  // Each column is summed in ascending order, so reordering rows cannot
  // change a single bit of the result.
  Eigen::VectorXd sum(matrix.classes());
  std::vector<double> column(static_cast<std::size_t>(matrix.members()));
  for (int c = 0; c < matrix.classes(); ++c) {
    for (int k = 0; k < matrix.members(); ++k) column[static_cast<std::size_t>(k)] = matrix.probs(k, c);
    std::sort(column.begin(), column.end());
    sum(c) = std::accumulate(column.begin(), column.end(), 0.0);
  }
  return {sum / static_cast<double>(matrix.members())};
}

int aggregate_majority(const PredictionMatrix& matrix) {
  if (matrix.members() < 1) throw Error(ErrorKind::BadK, "empty prediction matrix");
  std::vector<int> votes(static_cast<std::size_t>(matrix.classes()), 0);
  for (int k = 0; k < matrix.members(); ++k) ++votes[static_cast<std::size_t>(matrix.row(k).argmax())];
  const Eigen::VectorXd mean = aggregate_mean(matrix).probs;
  int best = 0;
  for (int c = 1; c < matrix.classes(); ++c) {
    const auto vc = votes[static_cast<std::size_t>(c)];
    const auto vb = votes[static_cast<std::size_t>(best)];
    if (vc > vb || (vc == vb && mean(c) > mean(best))) best = c;
  }
  return best;
}

void save_epic(const std::filesystem::path& dir, const EpicModel& epic) {
  save_checkpoint(dir / "patches.ckpt", epic.model_patches);
  save_checkpoint(dir / "curves.ckpt", epic.model_curves);
  save_checkpoint(dir / "random.ckpt", epic.model_random);
  const nlohmann::json j = {{"n_patch", epic.params.n_patch},
                            {"n_curve", epic.params.n_curve},
                            {"n_random", epic.params.n_random},
                            {"m_neighbors", epic.params.m_neighbors},
                            {"k_tilde", epic.params.k_tilde}};
  write_file_atomic(dir / "sampling.json", j.dump(2) + "\n");
}

EpicModel load_epic(const std::filesystem::path& dir) {
  EpicModel epic{load_checkpoint(dir / "patches.ckpt"), load_checkpoint(dir / "curves.ckpt"),
                 load_checkpoint(dir / "random.ckpt"), {}};
  try {
    const auto j = nlohmann::json::parse(read_file(dir / "sampling.json"));
    epic.params.n_patch = j.at("n_patch").get<int>();
    epic.params.n_curve = j.at("n_curve").get<int>();
    epic.params.n_random = j.at("n_random").get<int>();
    epic.params.m_neighbors = j.at("m_neighbors").get<int>();
    epic.params.k_tilde = j.at("k_tilde").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, (dir / "sampling.json").string() + ": " + e.what());
  }
  epic.validate();
  return epic;
}

}  // namespace epic
