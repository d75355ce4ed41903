#include "epic/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "epic/error.hpp"
#include "epic/metrics.hpp"

namespace epic {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& message) {
  throw Error(ErrorKind::ConfigError, message);
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    config_error("bad value '" + std::string(value) + "' for key " + std::string(key));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  config_error("bad value '" + std::string(value) + "' for key " + std::string(key) +
               " (expected true or false)");
}

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  const auto [ptr, ec] = std::to_chars(buf, buf + 16, v, 16);
  std::string s(buf, ptr);
  return std::string(16 - s.size(), '0') + s;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, path.string() + ": " + e.what());
  }
}

void prepare_dir(const fs::path& dir, const RunConfig& config) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
  write_file_atomic(dir / "config.resolved", config.to_text());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct LoadedData {
  std::vector<LabeledCloud> train;
  std::vector<LabeledCloud> test;
  int num_classes;
};

LoadedData load_data(const RunConfig& config, bool need_train) {
  const RunLayout layout{config.out};
  const json manifest = read_json(layout.data() / "manifest.json");
  const int ppc = manifest.at("points_per_cloud").get<int>();
  if (ppc != config.points_per_cloud) {
    config_error("dataset in " + layout.data().string() + " has " + std::to_string(ppc) +
                 " points per cloud, config says " + std::to_string(config.points_per_cloud));
  }
  LoadedData d;
  d.num_classes = static_cast<int>(manifest.at("classes").size());
  if (need_train) d.train = load_dataset(layout.data() / "train");
  d.test = load_dataset(layout.data() / "test");
  return d;
}

void check_classes(const std::vector<LabeledCloud>& samples, int dataset_classes, int model_classes,
                   std::string_view model_name) {
  if (dataset_classes != model_classes) {
    config_error(std::string(model_name) + " has " + std::to_string(model_classes) +
                 " classes but the dataset has " + std::to_string(dataset_classes));
  }
  for (const auto& s : samples) {
    if (s.label < 0 || s.label >= model_classes) {
      config_error("sample " + s.sample_id + " has label " + std::to_string(s.label) + " but " +
                   std::string(model_name) + " has " + std::to_string(model_classes) + " classes");
    }
  }
}

json history_json(const std::vector<EpochStats>& history) {
  json out = json::array();
  for (const auto& h : history) {
    out.push_back({{"epoch", h.epoch}, {"mean_loss", h.mean_loss}, {"train_accuracy", h.train_accuracy}});
  }
  return out;
}

json sampling_json(const SamplingParams& p) {
  return {{"n_patch", p.n_patch},
          {"n_curve", p.n_curve},
          {"n_random", p.n_random},
          {"m_neighbors", p.m_neighbors},
          {"k_tilde", p.k_tilde}};
}

std::uint64_t baseline_init_seed(const RunConfig& c) {
  return Rng(c.resolved_train_seed()).split("baseline").split("init").seed();
}
std::uint64_t baseline_train_seed(const RunConfig& c) {
  return Rng(c.resolved_train_seed()).split("baseline").split("train").seed();
}
std::uint64_t epic_train_seed(const RunConfig& c) {
  return Rng(c.resolved_train_seed()).split("epic").seed();
}
// Member m >= 1 of the reseeded-baseline ensemble; member 0 is the baseline.
std::uint64_t reseed_init_seed(const RunConfig& c, int m) {
  return Rng(c.resolved_train_seed()).split("reseed").split(static_cast<std::uint64_t>(m)).split("init").seed();
}
std::uint64_t reseed_train_seed(const RunConfig& c, int m) {
  return Rng(c.resolved_train_seed()).split("reseed").split(static_cast<std::uint64_t>(m)).split("train").seed();
}

// Per-sample inference stream, shared by eval, diversity and importance so
// the same set and sample always see the same sub-samples.
Rng infer_rng(const RunConfig& c, std::string_view set_name, std::size_t sample) {
  return Rng(c.resolved_infer_seed()).split(set_name).split(sample);
}

json seeds_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"data_seed", c.resolved_data_seed()},
          {"train_seed", c.resolved_train_seed()},
          {"corrupt_seed", c.resolved_corrupt_seed()},
          {"infer_seed", c.resolved_infer_seed()}};
}

std::map<std::string, std::string> report_metadata(const RunConfig& c) {
  return {{"seed", std::to_string(c.seed)},
          {"data_seed", std::to_string(c.resolved_data_seed())},
          {"train_seed", std::to_string(c.resolved_train_seed())},
          {"corrupt_seed", std::to_string(c.resolved_corrupt_seed())},
          {"infer_seed", std::to_string(c.resolved_infer_seed())},
          {"points_per_cloud", std::to_string(c.points_per_cloud)},
          {"k_tilde", std::to_string(c.k_tilde)}};
}

std::string checkpoint_id(const fs::path& path) { return hex64(fnv1a(read_file(path))); }

std::vector<LabeledCloud> load_corrupted(const RunLayout& layout, const CorruptionSpec& spec) {
  const fs::path dir = layout.corrupted() / spec.name();
  if (!fs::exists(dir / "labels.csv")) {
    throw Error(ErrorKind::IoError, "missing corrupted set " + dir.string() + " (run corrupt first)");
  }
  return load_dataset(dir);
}

}  // namespace

std::string_view to_string(Aggregation aggregation) {
  return aggregation == Aggregation::Mean ? "mean" : "majority";
}

void RunConfig::set(std::string_view key, std::string_view raw) {
  const std::string_view value = trim(raw);
  if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "out") out = std::string(value);
  else if (key == "points_per_cloud") points_per_cloud = parse_number<int>(key, value);
  else if (key == "train_size") train_size = parse_number<int>(key, value);
  else if (key == "test_size") test_size = parse_number<int>(key, value);
  else if (key == "n_patch") n_patch = parse_number<int>(key, value);
  else if (key == "n_curve") n_curve = parse_number<int>(key, value);
  else if (key == "n_random") n_random = parse_number<int>(key, value);
  else if (key == "m_neighbors") m_neighbors = parse_number<int>(key, value);
  else if (key == "k_tilde") k_tilde = parse_number<int>(key, value);
  else if (key == "anchors") {
    if (value == "random") anchors = AnchorMode::Random;
    else if (value == "fps") anchors = AnchorMode::Fps;
    else config_error("anchors must be random or fps, got '" + std::string(value) + "'");
  } else if (key == "epochs") epochs = parse_number<int>(key, value);
  else if (key == "batch_size") batch_size = parse_number<int>(key, value);
  else if (key == "learning_rate") learning_rate = parse_number<double>(key, value);
  else if (key == "optimizer") {
    if (value == "adam") optimizer = OptimizerKind::Adam;
    else if (value == "sgd") optimizer = OptimizerKind::Sgd;
    else config_error("optimizer must be adam or sgd, got '" + std::string(value) + "'");
  } else if (key == "augment") augment = parse_bool(key, value);
  else if (key == "aggregate") {
    if (value == "mean") aggregate = Aggregation::Mean;
    else if (value == "majority") aggregate = Aggregation::Majority;
    else config_error("aggregate must be mean or majority, got '" + std::string(value) + "'");
  } else if (key == "family") {
    if (value == "all") {
      family.reset();
    } else {
      try {
        family = parse_family(value);
      } catch (const Error& e) {
        config_error(e.what());
      }
    }
  } else if (key == "severity") severity = value == "all" ? 0 : parse_number<int>(key, value);
  else if (key == "ns_members") ns_members = parse_number<int>(key, value);
  else if (key == "importance_samples") importance_samples = parse_number<int>(key, value);
  else if (key == "data_seed") data_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "train_seed") train_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "corrupt_seed") corrupt_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "infer_seed") infer_seed = parse_number<std::uint64_t>(key, value);
  else config_error("unknown config key '" + std::string(key) + "'");
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      config_error("line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) config_error("line " + std::to_string(line_no) + ": empty key");
    c.set(key, line.substr(eq + 1));
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  try {
    dataset_config().validate();
    sampling().validate();
    train_config(0).validate();
  } catch (const Error& e) {
    config_error(e.what());
  }
  if (severity < 0 || severity > 5) config_error("severity must be 1..5 or all");
  if (ns_members < 0 || ns_members == 1) config_error("ns_members must be 0 (auto) or >= 2");
  if (importance_samples < 1) config_error("importance_samples must be >= 1");
  if (out.empty()) config_error("out must not be empty");
  if (m_neighbors + 1 > points_per_cloud) {
    config_error("m_neighbors = " + std::to_string(m_neighbors) + " needs clouds of at least " +
                 std::to_string(m_neighbors + 1) + " points");
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream o;
  o << "seed = " << seed << "\n"
    << "out = " << out.string() << "\n"
    << "points_per_cloud = " << points_per_cloud << "\n"
    << "train_size = " << train_size << "\n"
    << "test_size = " << test_size << "\n"
    << "n_patch = " << n_patch << "\n"
    << "n_curve = " << n_curve << "\n"
    << "n_random = " << n_random << "\n"
    << "m_neighbors = " << m_neighbors << "\n"
    << "k_tilde = " << k_tilde << "\n"
    << "anchors = " << (anchors == AnchorMode::Random ? "random" : "fps") << "\n"
    << "epochs = " << epochs << "\n"
    << "batch_size = " << batch_size << "\n"
    << "learning_rate = " << format_double(learning_rate) << "\n"
    << "optimizer = " << (optimizer == OptimizerKind::Adam ? "adam" : "sgd") << "\n"
    << "augment = " << (augment ? "true" : "false") << "\n"
    << "aggregate = " << to_string(aggregate) << "\n"
    << "family = " << (family ? std::string(epic::to_string(*family)) : "all") << "\n"
    << "severity = " << (severity == 0 ? "all" : std::to_string(severity)) << "\n"
    << "ns_members = " << resolved_ns_members() << "\n"
    << "importance_samples = " << importance_samples << "\n"
    << "data_seed = " << resolved_data_seed() << "\n"
    << "train_seed = " << resolved_train_seed() << "\n"
    << "corrupt_seed = " << resolved_corrupt_seed() << "\n"
    << "infer_seed = " << resolved_infer_seed() << "\n";
  return o.str();
}

std::uint64_t RunConfig::resolved_data_seed() const {
  return data_seed.value_or(Rng(seed).split("dataset").seed());
}
std::uint64_t RunConfig::resolved_train_seed() const {
  return train_seed.value_or(Rng(seed).split("train").seed());
}
std::uint64_t RunConfig::resolved_corrupt_seed() const {
  return corrupt_seed.value_or(Rng(seed).split("corrupt").seed());
}
std::uint64_t RunConfig::resolved_infer_seed() const {
  return infer_seed.value_or(Rng(seed).split("infer").seed());
}

DatasetConfig RunConfig::dataset_config() const {
  return {points_per_cloud, train_size, test_size, resolved_data_seed()};
}

SamplingParams RunConfig::sampling() const {
  SamplingParams p;
  p.n_patch = n_patch;
  p.n_curve = n_curve;
  p.n_random = n_random;
  p.m_neighbors = m_neighbors;
  p.k_tilde = k_tilde;
  return p.scaled_for(points_per_cloud);
}

TrainConfig RunConfig::train_config(std::uint64_t run_seed) const {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.learning_rate = learning_rate;
  t.optimizer = optimizer;
  t.seed = run_seed;
  t.augment = augment;
  return t;
}

std::vector<CorruptionSpec> RunConfig::selected_corruptions() const {
  std::vector<CorruptionSpec> out;
  for (auto f : kAllFamilies) {
    if (family && *family != f) continue;
    for (int s = 1; s <= 5; ++s) {
      if (severity != 0 && severity != s) continue;
      out.push_back({f, s});
    }
  }
  return out;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::IoError, "config file not found: " + path.string());
  try {
    return RunConfig::parse(read_file(path));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::ConfigError) throw;
    config_error(path.string() + ": " + e.what());
  }
}

void run_gen_data(const RunConfig& config, std::ostream& log) {
  config.validate();
  const RunLayout layout{config.out};
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset ds = generate_dataset(config.dataset_config());
  prepare_dir(layout.data(), config);
  save_dataset(layout.data() / "train", ds.train);
  save_dataset(layout.data() / "test", ds.test);
  json classes = json::array();
  for (auto name : kShapeClasses) classes.push_back(std::string(name));
  write_json(layout.data() / "manifest.json",
             {{"points_per_cloud", config.points_per_cloud},
              {"train_size", config.train_size},
              {"test_size", config.test_size},
              {"classes", classes},
              {"data_seed", config.resolved_data_seed()},
              {"format", "labels.csv + <sample_id>.epcd"}});
  log << "gen-data: " << ds.train.size() << " train + " << ds.test.size() << " test clouds in "
      << layout.data().string() << " (" << seconds_since(t0) << " s)\n";
}

void run_train(const RunConfig& config, std::ostream& log) {
  config.validate();
  const RunLayout layout{config.out};
  const LoadedData data = load_data(config, true);
  const ModelArch arch = ModelArch::with(std::vector<int>{64, 128}, std::vector<int>{64}, data.num_classes);
  if (auto w = arch.warning()) log << "warning: " << *w << "\n";
  prepare_dir(layout.models(), config);

  auto t0 = std::chrono::steady_clock::now();
  std::vector<EpochStats> base_history;
  const PointSetModel baseline = train(
      PointSetModel::init(arch, baseline_init_seed(config)), data.train,
      config.train_config(baseline_train_seed(config)), [&](const EpochStats& s) {
        base_history.push_back(s);
        log << "train baseline epoch " << s.epoch + 1 << "/" << config.epochs << " loss "
            << s.mean_loss << " acc " << s.train_accuracy << "\n";
      });
  save_checkpoint(layout.models() / "baseline.ckpt", baseline);
  const double base_seconds = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  std::map<SampleKind, std::vector<EpochStats>> histories;
  EpicTrainOptions options;
  options.anchors = config.anchors;
  options.archs = {arch, arch, arch};
  const SamplingParams sampling = config.sampling();
  const EpicModel epic = epic_train(
      data.train, sampling, config.train_config(epic_train_seed(config)), options,
      [&](SampleKind kind, const EpochStats& s) {
        histories[kind].push_back(s);
        log << "train " << to_string(kind) << " epoch " << s.epoch + 1 << "/" << config.epochs
            << " loss " << s.mean_loss << " acc " << s.train_accuracy << "\n";
      });
  fs::create_directories(layout.models() / "epic");
  save_epic(layout.models() / "epic", epic);
  const double epic_seconds = seconds_since(t0);

  json arch_json = {{"encoder", arch.encoder}, {"head", arch.head}};
  write_json(layout.models() / "manifest.json",
             {{"seeds", seeds_json(config)},
              {"baseline", {{"checkpoint", "baseline.ckpt"},
                            {"init_seed", baseline_init_seed(config)},
                            {"train_seed", baseline_train_seed(config)},
                            {"history", history_json(base_history)}}},
              {"epic", {{"directory", "epic"},
                        {"train_seed", epic_train_seed(config)},
                        {"anchors", config.anchors == AnchorMode::Random ? "random" : "fps"},
                        {"sampling", sampling_json(sampling)},
                        {"history", {{"patch", history_json(histories[SampleKind::Patch])},
                                     {"curve", history_json(histories[SampleKind::Curve])},
                                     {"random", history_json(histories[SampleKind::Random])}}}}},
              {"arch", arch_json},
              {"epochs", config.epochs},
              {"batch_size", config.batch_size},
              {"learning_rate", config.learning_rate},
              {"optimizer", config.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
              {"augment", config.augment}});
  log << "train: baseline " << base_seconds << " s, epic " << epic_seconds << " s\n";
}

void run_corrupt(const RunConfig& config, std::ostream& log) {
  config.validate();
  const RunLayout layout{config.out};
  const LoadedData data = load_data(config, false);
  const auto t0 = std::chrono::steady_clock::now();
  prepare_dir(layout.corrupted(), config);
  const Rng rng(config.resolved_corrupt_seed());
  json sets = json::array();
  for (const auto& spec : config.selected_corruptions()) {
    const auto corrupted = corrupt_dataset(data.test, spec, rng);
    save_dataset(layout.corrupted() / spec.name(), corrupted);
    double u = 0.0;
    for (std::size_t i = 0; i < corrupted.size(); ++i) {
      u += uniformity(data.test[i].cloud, corrupted[i].cloud, 0.0);
    }
    u /= static_cast<double>(corrupted.size());
    sets.push_back({{"name", spec.name()},
                    {"family", std::string(to_string(spec.family))},
                    {"severity", spec.severity},
                    {"samples", corrupted.size()},
                    {"mean_uniformity", u}});
  }
  json schedules = json::object();
  for (auto f : kAllFamilies) schedules[std::string(to_string(f))] = describe_schedule(f);
  write_json(layout.corrupted() / "manifest.json",
             {{"corrupt_seed", config.resolved_corrupt_seed()}, {"sets", sets}, {"schedules", schedules}});
  log << "corrupt: " << sets.size() << " sets in " << layout.corrupted().string() << " ("
      << seconds_since(t0) << " s)\n";
}

namespace {

// Accumulates predictions of one model variant over every evaluated set.
struct Tally {
  std::string model_id;
  std::vector<int> clean_predictions;
  FamilyErrors errors;

  void record(const std::optional<CorruptionSpec>& spec, const std::vector<int>& predicted,
              const std::vector<int>& labels) {
    if (!spec) {
      clean_predictions = predicted;
      return;
    }
    auto [it, inserted] = errors.try_emplace(spec->family);
    if (inserted) it->second.fill(0.0);
    it->second[static_cast<std::size_t>(spec->severity - 1)] = 1.0 - overall_accuracy(predicted, labels);
  }
};

constexpr std::array<const char*, 3> kMechanismIds = {"epic_patches", "epic_curves", "epic_random"};

}  // namespace

void run_eval(const RunConfig& config, std::ostream& log) {
  config.validate();
  if (config.severity != 0) {
    config_error("eval needs all five severities per family; leave severity = all");
  }
  const RunLayout layout{config.out};
  const LoadedData data = load_data(config, false);
  const PointSetModel baseline = load_checkpoint(layout.models() / "baseline.ckpt");
  EpicModel epic = load_epic(layout.models() / "epic");
  check_classes(data.test, data.num_classes, baseline.arch.num_classes(), "baseline checkpoint");
  check_classes(data.test, data.num_classes, epic.num_classes(), "EPiC checkpoints");
  if (epic.params.m_neighbors + 1 > config.points_per_cloud) {
    config_error("EPiC neighbourhood size does not fit the dataset");
  }
  prepare_dir(layout.eval(), config);
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<int> labels;
  for (const auto& s : data.test) labels.push_back(s.label);
  Tally base{"baseline", {}, {}};
  Tally mean{"epic_mean", {}, {}};
  Tally majority{"epic_majority", {}, {}};
  std::array<Tally, 3> mechanism = {Tally{kMechanismIds[0], {}, {}}, Tally{kMechanismIds[1], {}, {}},
                                    Tally{kMechanismIds[2], {}, {}}};
  std::vector<PredictionMatrix> clean_matrices;

  std::vector<std::optional<CorruptionSpec>> sets = {std::nullopt};
  for (const auto& spec : config.selected_corruptions()) sets.emplace_back(spec);

  const int kt = epic.params.k_tilde;
  json exposure = nullptr;
  for (const auto& spec : sets) {
    const std::string set_name = spec ? spec->name() : "clean";
    const std::vector<LabeledCloud> samples = spec ? load_corrupted(layout, *spec) : data.test;
    if (samples.size() != data.test.size()) {
      throw Error(ErrorKind::LengthMismatch, set_name + " has " + std::to_string(samples.size()) +
                                                 " samples, the clean test set has " +
                                                 std::to_string(data.test.size()));
    }
    const bool track_exposure =
        spec && spec->family == CorruptionFamily::AddLocal && spec->severity == 5;
    double exposed_entropy = 0.0, unexposed_entropy = 0.0;
    long exposed = 0, unexposed = 0;
    std::vector<double> fractions;

    std::vector<int> p_base, p_mean, p_major;
    std::array<std::vector<int>, 3> p_mech;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      p_base.push_back(predict(baseline, samples[i].cloud).argmax());
      Rng rng = infer_rng(config, set_name, i);
      const EpicInference inf = epic_infer(epic, samples[i].cloud, rng);
      p_mean.push_back(inf.predicted_class);
      p_major.push_back(aggregate_majority(inf.matrix));
      for (int k = 0; k < 3; ++k) {
        p_mech[static_cast<std::size_t>(k)].push_back(
            aggregate_mean(PredictionMatrix{inf.matrix.probs.middleRows(k * kt, kt)}).argmax());
      }
      if (!spec) clean_matrices.push_back(inf.matrix);
      if (track_exposure) {
        // Add* corruptions append after the original points.
        const int n_clean = data.test[i].cloud.size();
        for (std::size_t m = 0; m < inf.members.size(); ++m) {
          const auto& member = inf.members[m];
          if (member.kind != SampleKind::Curve) continue;
          const auto added = std::count_if(member.source_indices.begin(), member.source_indices.end(),
                                           [n_clean](int j) { return j >= n_clean; });
          const double frac = static_cast<double>(added) / static_cast<double>(member.source_indices.size());
          const double h = inf.matrix.row(static_cast<int>(m)).entropy();
          fractions.push_back(frac);
          if (frac > 0.20) {
            exposed_entropy += h;
            ++exposed;
          } else if (frac < 0.05) {
            unexposed_entropy += h;
            ++unexposed;
          }
        }
      }
    }
    base.record(spec, p_base, labels);
    mean.record(spec, p_mean, labels);
    majority.record(spec, p_major, labels);
    for (std::size_t k = 0; k < 3; ++k) mechanism[k].record(spec, p_mech[k], labels);
    if (track_exposure) {
      const json he = exposed ? json(exposed_entropy / static_cast<double>(exposed)) : json(nullptr);
      const json hu = unexposed ? json(unexposed_entropy / static_cast<double>(unexposed)) : json(nullptr);
      exposure = {{"set", set_name},
                  {"member_kind", "curve"},
                  {"exposed_threshold", 0.20},
                  {"unexposed_threshold", 0.05},
                  {"exposed_members", exposed},
                  {"unexposed_members", unexposed},
                  {"exposed_mean_entropy", he},
                  {"unexposed_mean_entropy", hu}};
      if (!fractions.empty()) {
        std::sort(fractions.begin(), fractions.end());
        exposure["added_fraction_min"] = fractions.front();
        exposure["added_fraction_median"] = fractions[fractions.size() / 2];
        exposure["added_fraction_max"] = fractions.back();
      }
      if (exposed && unexposed) exposure["margin"] = he.get<double>() - hu.get<double>();
      else exposure["margin"] = nullptr;
    }
    log << "eval " << set_name << ": baseline err " << 1.0 - overall_accuracy(p_base, labels)
        << ", epic(mean) err " << 1.0 - overall_accuracy(p_mean, labels) << "\n";
  }

  const auto base_meta = report_metadata(config);
  const std::string base_ckpt = checkpoint_id(layout.models() / "baseline.ckpt");
  std::string epic_ckpt;
  for (const char* f : {"patches.ckpt", "curves.ckpt", "random.ckpt"}) {
    epic_ckpt += checkpoint_id(layout.models() / "epic" / f);
  }
  const std::optional<double> epic_c =
      clean_matrices.empty() || clean_matrices.front().members() < 2
          ? std::nullopt
          : std::optional<double>(diversity_c(clean_matrices));

  auto emit = [&](const Tally& t, const std::string& aggregation, std::optional<double> c) {
    EvalReport r;
    r.model_id = t.model_id;
    r.overall_accuracy = overall_accuracy(t.clean_predictions, labels);
    r.error_rates = t.errors;
    if (!base.errors.empty()) {
      const auto ce = corruption_error(t.errors, base.errors);
      r.ce = ce.ce;
      r.mce = ce.mce;
    }
    r.diversity_c = c;
    r.metadata = base_meta;
    r.metadata["reference_model"] = "baseline";
    r.metadata["aggregation"] = aggregation;
    r.metadata["checkpoint_fnv1a"] = t.model_id == "baseline" ? base_ckpt : epic_ckpt;
    r.validate();
    write_json(layout.eval() / (t.model_id + ".json"), r.to_json());
    write_file_atomic(layout.eval() / (t.model_id + ".csv"), r.to_csv());
    log << "eval " << t.model_id << ": accuracy " << r.overall_accuracy;
    if (r.mce) log << ", mCE " << *r.mce;
    log << "\n";
  };
  emit(base, "none", std::nullopt);
  emit(mean, "mean", epic_c);
  emit(majority, "majority", epic_c);
  for (const auto& m : mechanism) emit(m, "mean", std::nullopt);
  if (!exposure.is_null()) write_json(layout.eval() / "exposure.json", exposure);
  log << "eval: " << sets.size() << " sets in " << seconds_since(t0) << " s\n";
}

namespace {

std::string correlation_csv(const Eigen::MatrixXd& m) {
  std::string out = "member";
  for (Eigen::Index j = 0; j < m.cols(); ++j) out += "," + std::to_string(j);
  out += "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out += std::to_string(i);
    for (Eigen::Index j = 0; j < m.cols(); ++j) out += "," + format_double(m(i, j));
    out += "\n";
  }
  return out;
}

}  // namespace

void run_diversity(const RunConfig& config, std::ostream& log) {
  config.validate();
  const RunLayout layout{config.out};
  const LoadedData data = load_data(config, true);
  const PointSetModel baseline = load_checkpoint(layout.models() / "baseline.ckpt");
  const EpicModel epic = load_epic(layout.models() / "epic");
  check_classes(data.test, data.num_classes, baseline.arch.num_classes(), "baseline checkpoint");
  check_classes(data.test, data.num_classes, epic.num_classes(), "EPiC checkpoints");
  prepare_dir(layout.diversity(), config);
  fs::create_directories(layout.diversity() / "members");

  const int k_ns = config.resolved_ns_members();
  std::vector<PointSetModel> members = {baseline};
  json member_seeds = json::array({{{"member", 0}, {"checkpoint", "models/baseline.ckpt"}}});
  for (int m = 1; m < k_ns; ++m) {
    const auto t0 = std::chrono::steady_clock::now();
    PointSetModel model = train(PointSetModel::init(baseline.arch, reseed_init_seed(config, m)),
                                data.train, config.train_config(reseed_train_seed(config, m)));
    char name[32];
    std::snprintf(name, sizeof name, "member_%02d.ckpt", m);
    save_checkpoint(layout.diversity() / "members" / name, model);
    member_seeds.push_back({{"member", m},
                            {"checkpoint", std::string("diversity/members/") + name},
                            {"init_seed", reseed_init_seed(config, m)},
                            {"train_seed", reseed_train_seed(config, m)}});
    log << "diversity: trained reseeded baseline " << m << "/" << k_ns - 1 << " ("
        << seconds_since(t0) << " s)\n";
    members.push_back(std::move(model));
  }

  std::vector<PredictionMatrix> ns, s;
  std::vector<int> labels, ns_pred, s_pred;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    const auto& cloud = data.test[i].cloud;
    PredictionMatrix m{Eigen::MatrixXd(k_ns, baseline.arch.num_classes())};
    for (int k = 0; k < k_ns; ++k) {
      m.probs.row(k) = predict(members[static_cast<std::size_t>(k)], cloud).probs.transpose();
    }
    ns_pred.push_back(aggregate_mean(m).argmax());
    ns.push_back(std::move(m));
    Rng rng = infer_rng(config, "clean", i);
    auto inf = epic_infer(epic, cloud, rng);
    s_pred.push_back(inf.predicted_class);
    s.push_back(std::move(inf.matrix));
    labels.push_back(data.test[i].label);
  }
  const DiversityResult d_ns = diversity(ns);
  const DiversityResult d_s = diversity(s);
  write_file_atomic(layout.diversity() / "ns_correlation.csv", correlation_csv(d_ns.mean_correlation));
  write_file_atomic(layout.diversity() / "s_correlation.csv", correlation_csv(d_s.mean_correlation));
  write_json(layout.diversity() / "summary.json",
             {{"seeds", seeds_json(config)},
              {"test_samples", data.test.size()},
              {"reseeded_baselines", {{"members", k_ns},
                                      {"c", d_ns.c},
                                      {"mean_accuracy", overall_accuracy(ns_pred, labels)},
                                      {"member_seeds", member_seeds},
                                      {"correlation_csv", "ns_correlation.csv"}}},
              {"sampling_ensemble", {{"members", s.front().members()},
                                     {"c", d_s.c},
                                     {"mean_accuracy", overall_accuracy(s_pred, labels)},
                                     {"correlation_csv", "s_correlation.csv"}}}});
  log << "diversity: c(reseeded baselines) = " << d_ns.c << ", c(EPiC) = " << d_s.c << "\n";
}

void run_importance(const RunConfig& config, std::ostream& log) {
  config.validate();
  if (config.family.has_value() != (config.severity != 0)) {
    config_error("importance takes either both family and severity (a corrupted set) or neither");
  }
  const RunLayout layout{config.out};
  const LoadedData data = load_data(config, false);
  const PointSetModel baseline = load_checkpoint(layout.models() / "baseline.ckpt");
  const EpicModel epic = load_epic(layout.models() / "epic");
  check_classes(data.test, data.num_classes, baseline.arch.num_classes(), "baseline checkpoint");
  prepare_dir(layout.importance(), config);

  std::optional<CorruptionSpec> spec;
  if (config.family) spec = CorruptionSpec{*config.family, config.severity};
  const std::string set_name = spec ? spec->name() : "clean";
  const std::vector<LabeledCloud> samples = spec ? load_corrupted(layout, *spec) : data.test;
  const std::size_t count = std::min(samples.size(), static_cast<std::size_t>(config.importance_samples));

  const std::string header = "sample_id,point_index,x,y,z,imp\n";
  std::string base_csv = header;
  std::array<std::string, 3> kind_csv = {header, header, header};
  auto row = [](const LabeledCloud& s, int j, const std::string& imp) {
    const auto p = s.cloud.point(j);
    return s.sample_id + "," + std::to_string(j) + "," + format_double(p.x()) + "," +
           format_double(p.y()) + "," + format_double(p.z()) + "," + imp + "\n";
  };
  for (std::size_t i = 0; i < count; ++i) {
    const auto& s = samples[i];
    const auto imp = pointwise_importance(pointwise_features(baseline, s.cloud));
    for (int j = 0; j < s.cloud.size(); ++j) base_csv += row(s, j, std::to_string(imp[static_cast<std::size_t>(j)]));

    // Specialist importance: each member's Imp mapped back to parent points
    // and averaged over the k_tilde members of that kind.
    Rng rng = infer_rng(config, set_name, i);
    const auto subs = make_ensemble_inputs(s.cloud, epic.params, rng);
    std::array<std::vector<double>, 3> acc;
    for (auto& a : acc) a.assign(static_cast<std::size_t>(s.cloud.size()), 0.0);
    for (const auto& sub : subs) {
      const auto sub_imp = pointwise_importance(pointwise_features(epic.specialist(sub.kind), sub.points));
      auto& a = acc[static_cast<std::size_t>(sub.kind)];
      for (std::size_t t = 0; t < sub.source_indices.size(); ++t) {
        a[static_cast<std::size_t>(sub.source_indices[t])] += sub_imp[t];
      }
    }
    for (std::size_t k = 0; k < 3; ++k) {
      for (int j = 0; j < s.cloud.size(); ++j) {
        kind_csv[k] += row(s, j, format_double(acc[k][static_cast<std::size_t>(j)] / epic.params.k_tilde));
      }
    }
  }
  write_file_atomic(layout.importance() / "baseline.csv", base_csv);
  write_file_atomic(layout.importance() / "patch.csv", kind_csv[0]);
  write_file_atomic(layout.importance() / "curve.csv", kind_csv[1]);
  write_file_atomic(layout.importance() / "random.csv", kind_csv[2]);
  write_json(layout.importance() / "manifest.json",
             {{"set", set_name},
              {"samples", count},
              {"infer_seed", config.resolved_infer_seed()},
              {"files", {"baseline.csv", "patch.csv", "curve.csv", "random.csv"}}});
  log << "importance: " << count << " samples of " << set_name << " in "
      << layout.importance().string() << "\n";
}

void run_report(const RunConfig& config, std::ostream& log) {
  config.validate();
  const RunLayout layout{config.out};
  auto optional_json = [](const fs::path& p) { return fs::exists(p) ? read_json(p) : json(nullptr); };

  json report;
  report["seeds"] = seeds_json(config);
  report["dataset"] = read_json(layout.data() / "manifest.json");

  const json models = read_json(layout.models() / "manifest.json");
  auto last = [](const json& history) { return history.empty() ? json(nullptr) : history.back(); };
  report["training"] = {{"baseline", last(models["baseline"]["history"])},
                        {"patch", last(models["epic"]["history"]["patch"])},
                        {"curve", last(models["epic"]["history"]["curve"])},
                        {"random", last(models["epic"]["history"]["random"])},
                        {"sampling", models["epic"]["sampling"]},
                        {"epochs", models["epochs"]}};

  json eval = json::object();
  for (const char* id : {"baseline", "epic_mean", "epic_majority", "epic_patches", "epic_curves",
                         "epic_random"}) {
    const auto r = EvalReport::from_json(read_json(layout.eval() / (std::string(id) + ".json")));
    json ce = json::object();
    for (const auto& [f, v] : r.ce) ce[std::string(to_string(f))] = v;
    eval[id] = {{"overall_accuracy", r.overall_accuracy},
                {"mce", r.mce ? json(*r.mce) : json(nullptr)},
                {"ce", ce},
                {"diversity_c", r.diversity_c ? json(*r.diversity_c) : json(nullptr)}};
  }
  report["eval"] = eval;
  const std::string headline = config.aggregate == Aggregation::Mean ? "epic_mean" : "epic_majority";
  report["headline"] = {{"aggregate", to_string(config.aggregate)},
                        {"baseline_accuracy", eval["baseline"]["overall_accuracy"]},
                        {"baseline_mce", eval["baseline"]["mce"]},
                        {"epic_accuracy", eval[headline]["overall_accuracy"]},
                        {"epic_mce", eval[headline]["mce"]}};

  const json corrupted = read_json(layout.corrupted() / "manifest.json");
  json uniformity_by_set = json::object();
  std::vector<double> add_u, add_err;
  const auto base = EvalReport::from_json(read_json(layout.eval() / "baseline.json"));
  for (const auto& s : corrupted["sets"]) {
    uniformity_by_set[s["name"].get<std::string>()] = s["mean_uniformity"];
    if (s["family"] == "add_global") {
      const auto it = base.error_rates.find(CorruptionFamily::AddGlobal);
      if (it != base.error_rates.end()) {
        add_u.push_back(s["mean_uniformity"].get<double>());
        add_err.push_back(it->second[static_cast<std::size_t>(s["severity"].get<int>() - 1)]);
      }
    }
  }
  report["uniformity"] = uniformity_by_set;
  if (add_u.size() >= 2) {
    report["uniformity_trend"] = {{"family", "add_global"},
                                  {"mean_uniformity", add_u},
                                  {"baseline_error", add_err},
                                  {"spearman", spearman(add_u, add_err)}};
  } else {
    report["uniformity_trend"] = nullptr;
  }
  report["exposure"] = optional_json(layout.eval() / "exposure.json");
  const json div = optional_json(layout.diversity() / "summary.json");
  report["diversity"] = div.is_null() ? div
                                      : json{{"reseeded_baselines_c", div["reseeded_baselines"]["c"]},
                                             {"sampling_ensemble_c", div["sampling_ensemble"]["c"]},
                                             {"reseeded_baselines_members", div["reseeded_baselines"]["members"]},
                                             {"sampling_ensemble_members", div["sampling_ensemble"]["members"]}};
  const json imp = optional_json(layout.importance() / "manifest.json");
  report["importance"] = imp;

  write_file_atomic(layout.root / "config.resolved", config.to_text());
  write_json(layout.report(), report);
  log << "report: " << layout.report().string() << "\n";
}

}  // namespace epic
