#include "epic/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>

#include "epic/error.hpp"

namespace epic {

namespace {

DenseLayer make_layer(int fan_in, int fan_out) {
  return {RowMatrix::Zero(fan_in, fan_out), Eigen::RowVectorXd::Zero(fan_out)};
}

template <typename F>
void for_each_layer(PointSetModel& m, F&& f) {
  for (auto& l : m.encoder) f(l);
  for (auto& l : m.head) f(l);
}

template <typename F>
void for_each_layer(const PointSetModel& m, F&& f) {
  for (const auto& l : m.encoder) f(l);
  for (const auto& l : m.head) f(l);
}

using Lane = double __attribute__((vector_size(64)));
constexpr Eigen::Index kLane = 8;

// out = in * weight + bias. Every point runs the same instruction sequence
// (missing rows of the last group borrow row 0 and are dropped), so a point's
// output never depends on its position or on the other points.
template <typename Input>
void pointwise_affine(const Input& in, const DenseLayer& layer, RowMatrix& out) {
  constexpr Eigen::Index kPoints = 6;
  constexpr Eigen::Index kVecs = 2;
  constexpr Eigen::Index kCols = kLane * kVecs;
  const Eigen::Index n = in.rows();
  const Eigen::Index fan_in = layer.weight.rows();
  const Eigen::Index fan_out = layer.weight.cols();
  const Eigen::Index stride = (fan_out + kCols - 1) / kCols * kCols / kLane;
  thread_local std::vector<Lane> w;
  thread_local std::vector<Lane> b;
  w.assign(static_cast<std::size_t>(fan_in * stride), Lane{});
  b.assign(static_cast<std::size_t>(stride), Lane{});
  for (Eigen::Index j = 0; j < fan_in; ++j) {
    std::memcpy(w.data() + j * stride, layer.weight.row(j).data(), sizeof(double) * fan_out);
  }
  std::memcpy(b.data(), layer.bias.data(), sizeof(double) * fan_out);
  out.resize(n, fan_out);
  for (Eigen::Index i0 = 0; i0 < n; i0 += kPoints) {
    const double* x[kPoints];
    for (Eigen::Index p = 0; p < kPoints; ++p) x[p] = &in(i0 + p < n ? i0 + p : 0, 0);
    for (Eigen::Index v0 = 0; v0 < stride; v0 += kVecs) {
      Lane acc[kPoints][kVecs];
      for (Eigen::Index p = 0; p < kPoints; ++p) {
        for (Eigen::Index v = 0; v < kVecs; ++v) acc[p][v] = b[static_cast<std::size_t>(v0 + v)];
      }
      const Lane* wj = w.data() + v0;
      for (Eigen::Index j = 0; j < fan_in; ++j, wj += stride) {
        for (Eigen::Index p = 0; p < kPoints; ++p) {
          const double a = x[p][j];
          for (Eigen::Index v = 0; v < kVecs; ++v) acc[p][v] += a * wj[v];
        }
      }
      const Eigen::Index k0 = v0 * kLane;
      const Eigen::Index width = std::min(kCols, fan_out - k0);
      for (Eigen::Index p = 0; p < kPoints && i0 + p < n; ++p) {
        std::memcpy(out.row(i0 + p).data() + k0, acc[p], sizeof(double) * width);
      }
    }
  }
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - mx).exp();
  return e / e.sum();
}

// Accumulates weight * d(loss)/d(params) for one cloud into `grad`.
// `trace` must come from trace_forward on the same model and points.
void backward(const PointSetModel& model, const PointMatrix& points, const ForwardTrace& trace,
              int label, double weight, PointSetModel& grad) {
  const int n_head = static_cast<int>(model.head.size());
  Eigen::VectorXd dz = trace.prediction.probs;
  dz(label) -= 1.0;
  dz *= weight;
  for (int l = n_head - 1; l >= 0; --l) {
    const Eigen::VectorXd input =
        l == 0 ? trace.pooled : Eigen::VectorXd(trace.head_pre[l - 1].cwiseMax(0.0));
    grad.head[l].weight.noalias() += input * dz.transpose();
    grad.head[l].bias += dz.transpose();
    Eigen::VectorXd d_in = model.head[l].weight * dz;
    if (l > 0) {
      const Eigen::VectorXd& pre = trace.head_pre[l - 1];
      for (Eigen::Index k = 0; k < d_in.size(); ++k) {
        if (!(pre(k) > 0.0)) d_in(k) = 0.0;
      }
    }
    dz = std::move(d_in);
  }
  // dz is now d(loss)/d(pooled). Only argmax rows receive gradient, so the
  // encoder backward pass runs on that compact row set.
  std::vector<int> rows(trace.argmax_rows);
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  const auto r = static_cast<Eigen::Index>(rows.size());
  std::vector<Eigen::Index> slot(static_cast<std::size_t>(points.rows()), -1);
  for (Eigen::Index i = 0; i < r; ++i) slot[static_cast<std::size_t>(rows[i])] = i;

  const int n_enc = static_cast<int>(model.encoder.size());
  RowMatrix d_act = RowMatrix::Zero(r, model.arch.feature_dim());
  for (Eigen::Index k = 0; k < dz.size(); ++k) {
    d_act(slot[static_cast<std::size_t>(trace.argmax_rows[k])], k) = dz(k);
  }
  for (int l = n_enc - 1; l >= 0; --l) {
    const RowMatrix& pre_all = trace.encoder_pre[l];
    RowMatrix d_pre(r, pre_all.cols());
    RowMatrix input(r, l == 0 ? 3 : trace.encoder_pre[l - 1].cols());
    for (Eigen::Index i = 0; i < r; ++i) {
      const int row = rows[static_cast<std::size_t>(i)];
      d_pre.row(i) = (pre_all.row(row).array() > 0.0).select(d_act.row(i), 0.0);
      if (l == 0) {
        input.row(i) = points.row(row);
      } else {
        input.row(i) = trace.encoder_pre[l - 1].row(row).cwiseMax(0.0);
      }
    }
    grad.encoder[l].weight.noalias() += input.transpose() * d_pre;
    grad.encoder[l].bias += d_pre.colwise().sum();
    if (l > 0) d_act.noalias() = d_pre * model.encoder[l].weight.transpose();
  }
}

}  // namespace

ModelArch ModelArch::with(std::span<const int> encoder_hidden, std::span<const int> head_hidden,
                          int num_classes) {
  ModelArch a;
  a.encoder = {3};
  a.encoder.insert(a.encoder.end(), encoder_hidden.begin(), encoder_hidden.end());
  a.head = {a.encoder.back()};
  a.head.insert(a.head.end(), head_hidden.begin(), head_hidden.end());
  a.head.push_back(num_classes);
  a.validate();
  return a;
}

void ModelArch::validate() const {
  if (encoder.size() < 2 || encoder.front() != 3) {
    throw Error(ErrorKind::BadConfig, "encoder widths must start at 3 and have >= 1 layer");
  }
  if (head.size() < 2 || head.front() != encoder.back()) {
    throw Error(ErrorKind::BadConfig, "head widths must start at the feature width");
  }
  for (int w : encoder) {
    if (w < 1) throw Error(ErrorKind::BadConfig, "layer widths must be >= 1");
  }
  for (int w : head) {
    if (w < 1) throw Error(ErrorKind::BadConfig, "layer widths must be >= 1");
  }
  if (num_classes() < 2) throw Error(ErrorKind::BadConfig, "need at least 2 classes");
}

std::optional<std::string> ModelArch::warning() const {
  if (feature_dim() < num_classes()) {
    return "feature width " + std::to_string(feature_dim()) + " is smaller than class count " +
           std::to_string(num_classes());
  }
  return std::nullopt;
}

PointSetModel PointSetModel::zeros(const ModelArch& arch) {
  arch.validate();
  PointSetModel m;
  m.arch = arch;
  for (std::size_t i = 0; i + 1 < arch.encoder.size(); ++i) {
    m.encoder.push_back(make_layer(arch.encoder[i], arch.encoder[i + 1]));
  }
  for (std::size_t i = 0; i + 1 < arch.head.size(); ++i) {
    m.head.push_back(make_layer(arch.head[i], arch.head[i + 1]));
  }
  return m;
}

PointSetModel PointSetModel::init(const ModelArch& arch, std::uint64_t seed) {
  PointSetModel m = zeros(arch);
  Rng rng(seed);
  for_each_layer(m, [&rng](DenseLayer& l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.rows()));
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = rng.uniform(-bound, bound);
    }
    for (Eigen::Index j = 0; j < l.bias.size(); ++j) l.bias(j) = rng.uniform(-bound, bound);
  });
  return m;
}

std::size_t PointSetModel::parameter_count() const {
  std::size_t n = 0;
  for_each_layer(*this, [&n](const DenseLayer& l) {
    n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  });
  return n;
}

std::vector<double> PointSetModel::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for_each_layer(*this, [&out](const DenseLayer& l) {
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) out.push_back(l.weight(i, j));
    }
    for (Eigen::Index j = 0; j < l.bias.size(); ++j) out.push_back(l.bias(j));
  });
  return out;
}

void PointSetModel::assign(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw Error(ErrorKind::LengthMismatch, "parameter vector has " +
                                               std::to_string(values.size()) + " entries, model has " +
                                               std::to_string(parameter_count()));
  }
  std::size_t k = 0;
  for_each_layer(*this, [&](DenseLayer& l) {
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = values[k++];
    }
    for (Eigen::Index j = 0; j < l.bias.size(); ++j) l.bias(j) = values[k++];
  });
}

bool PointSetModel::all_finite() const {
  bool ok = true;
  for_each_layer(*this, [&ok](const DenseLayer& l) {
    ok = ok && l.weight.allFinite() && l.bias.allFinite();
  });
  return ok;
}

bool PointSetModel::operator==(const PointSetModel& other) const {
  return arch == other.arch && flatten() == other.flatten();
}

int PredictionVector::argmax() const {
  int best = 0;
  for (Eigen::Index k = 1; k < probs.size(); ++k) {
    if (probs(k) > probs(best)) best = static_cast<int>(k);
  }
  return best;
}

double PredictionVector::entropy() const {
  double h = 0.0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    if (probs(k) > 0.0) h -= probs(k) * std::log(probs(k));
  }
  return h;
}

ForwardTrace trace_forward(const PointSetModel& model, const PointMatrix& points) {
  ForwardTrace t;
  RowMatrix act;
  for (std::size_t l = 0; l < model.encoder.size(); ++l) {
    RowMatrix pre;
    if (l == 0) {
      pointwise_affine(points, model.encoder[l], pre);
    } else {
      pointwise_affine(act, model.encoder[l], pre);
    }
    act = pre.cwiseMax(0.0);
    t.encoder_pre.push_back(std::move(pre));
  }
  t.features = std::move(act);
  const Eigen::Index f = t.features.cols();
  t.pooled = t.features.colwise().maxCoeff().transpose();
  t.argmax_rows.assign(static_cast<std::size_t>(f), 0);
  for (Eigen::Index k = 0; k < f; ++k) {
    // First row attaining the column maximum.
    Eigen::Index row = 0;
    while (t.features(row, k) != t.pooled(k)) ++row;
    t.argmax_rows[static_cast<std::size_t>(k)] = static_cast<int>(row);
  }
  Eigen::VectorXd h = t.pooled;
  for (std::size_t l = 0; l < model.head.size(); ++l) {
    Eigen::VectorXd pre = model.head[l].weight.transpose() * h + model.head[l].bias.transpose();
    h = l + 1 < model.head.size() ? Eigen::VectorXd(pre.cwiseMax(0.0)) : pre;
    t.head_pre.push_back(std::move(pre));
  }
  t.prediction.probs = softmax(t.head_pre.back());
  return t;
}

ForwardResult forward(const PointSetModel& model, const PointCloud& points) {
  ForwardTrace t = trace_forward(model, points.matrix());
  return {std::move(t.features), std::move(t.pooled), std::move(t.prediction)};
}

PredictionVector predict(const PointSetModel& model, const PointCloud& points) {
  return trace_forward(model, points.matrix()).prediction;
}

RowMatrix pointwise_features(const PointSetModel& model, const PointCloud& points) {
  return std::move(trace_forward(model, points.matrix()).features);
}

LossAndGradients loss_and_gradients(const PointSetModel& model, std::span<const PointCloud> batch,
                                    std::span<const int> labels) {
  if (batch.size() != labels.size()) {
    throw Error(ErrorKind::LengthMismatch, "batch and label counts differ");
  }
  if (batch.empty()) throw Error(ErrorKind::EmptyEval, "empty batch");
  LossAndGradients out{0.0, PointSetModel::zeros(model.arch), 0};
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int label = labels[i];
    if (label < 0 || label >= model.arch.num_classes()) {
      throw Error(ErrorKind::BadConfig, "label " + std::to_string(label) + " outside [0, " +
                                            std::to_string(model.arch.num_classes()) + ")");
    }
    const ForwardTrace t = trace_forward(model, batch[i].matrix());
    // log-softmax computed from logits for accuracy near one-hot outputs.
    const Eigen::VectorXd& logits = t.head_pre.back();
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    out.loss += weight * (lse - logits(label));
    if (t.prediction.argmax() == label) ++out.correct;
    backward(model, batch[i].matrix(), t, label, weight, out.gradients);
  }
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1 || !(learning_rate > 0.0)) {
    throw Error(ErrorKind::BadConfig, "epochs, batch_size and learning_rate must be positive");
  }
}

double cosine_learning_rate(double lr0, long step, long total) {
  if (total <= 0) return lr0;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

Trainer::Trainer(PointSetModel model, const TrainConfig& config, long total_steps)
    : model_(std::move(model)), config_(config), total_steps_(total_steps) {
  config_.validate();
  if (config_.optimizer == OptimizerKind::Adam) {
    m_.assign(model_.parameter_count(), 0.0);
    v_.assign(model_.parameter_count(), 0.0);
  }
}

double Trainer::current_learning_rate() const {
  return cosine_learning_rate(config_.learning_rate, step_, total_steps_);
}

LossAndGradients Trainer::step(std::span<const PointCloud> batch, std::span<const int> labels) {
  LossAndGradients lg = loss_and_gradients(model_, batch, labels);
  const double lr = current_learning_rate();
  if (!std::isfinite(lg.loss) || !lg.gradients.all_finite()) {
    throw Error(ErrorKind::NonFiniteLoss,
                "non-finite loss " + std::to_string(lg.loss) + " at step " +
                    std::to_string(step_) + " (learning rate " + std::to_string(lr) +
                    ", batch of " + std::to_string(batch.size()) + ")");
  }
  std::vector<double> params = model_.flatten();
  const std::vector<double> grad = lg.gradients.flatten();
  if (config_.optimizer == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
  } else {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double t = static_cast<double>(step_ + 1);
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1 * m_[i] + (1 - beta1) * grad[i];
      v_[i] = beta2 * v_[i] + (1 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    }
  }
  model_.assign(params);
  ++step_;
  return lg;
}

PointSetModel train(PointSetModel model, const std::vector<LabeledCloud>& dataset,
                    const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (dataset.empty()) throw Error(ErrorKind::EmptyEval, "cannot train on an empty dataset");
  for (const auto& s : dataset) {
    if (s.label < 0 || s.label >= model.arch.num_classes()) {
      throw Error(ErrorKind::ConfigError, "sample " + s.sample_id + " has label " +
                                              std::to_string(s.label) + " but the model has " +
                                              std::to_string(model.arch.num_classes()) +
                                              " classes");
    }
  }
  const long n = static_cast<long>(dataset.size());
  const long batches_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  Trainer trainer(std::move(model), config, batches_per_epoch * config.epochs);
  const Rng root(config.seed);
  std::vector<std::size_t> order(dataset.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = root.split("shuffle").split(static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    const Rng aug = root.split("augment").split(static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    long correct = 0;
    for (long b = 0; b < batches_per_epoch; ++b) {
      std::vector<PointCloud> clouds;
      std::vector<int> labels;
      for (long i = b * config.batch_size; i < std::min(n, (b + 1) * config.batch_size); ++i) {
        const auto& s = dataset[order[static_cast<std::size_t>(i)]];
        if (config.augment) {
          Rng r = aug.split(order[static_cast<std::size_t>(i)]);
          clouds.push_back(augment(s.cloud, r));
        } else {
          clouds.push_back(s.cloud);
        }
        labels.push_back(s.label);
      }
      const auto lg = trainer.step(clouds, labels);
      loss_sum += lg.loss * static_cast<double>(clouds.size());
      correct += lg.correct;
    }
    if (on_epoch) {
      on_epoch({epoch, loss_sum / static_cast<double>(n),
                static_cast<double>(correct) / static_cast<double>(n)});
    }
  }
  return std::move(trainer).release();
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw Error(ErrorKind::FormatError, std::string("truncated checkpoint reading ") + what +
                                              " at byte offset " + std::to_string(pos_));
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const PointSetModel& model) {
  std::vector<std::uint8_t> out = {'E', 'P', 'I', 'C'};
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(model.arch.encoder.size()));
  for (int w : model.arch.encoder) put_u32(out, static_cast<std::uint32_t>(w));
  put_u32(out, static_cast<std::uint32_t>(model.arch.head.size()));
  for (int w : model.arch.head) put_u32(out, static_cast<std::uint32_t>(w));
  for (double v : model.flatten()) put_f64(out, v);
  return out;
}

PointSetModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "EPIC", 4) != 0) {
    throw Error(ErrorKind::FormatError, "checkpoint magic is not 'EPIC' at byte offset 0");
  }
  Reader r(bytes.subspan(4));
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::FormatError,
                "unsupported checkpoint version " + std::to_string(version) + " at byte offset 4");
  }
  auto widths = [&r](const char* what) {
    const std::uint32_t count = r.u32(what);
    if (count > 64) {
      throw Error(ErrorKind::FormatError, std::string("implausible ") + what + " count " +
                                              std::to_string(count));
    }
    std::vector<int> w;
    for (std::uint32_t i = 0; i < count; ++i) w.push_back(static_cast<int>(r.u32(what)));
    return w;
  };
  ModelArch arch;
  arch.encoder = widths("encoder widths");
  arch.head = widths("head widths");
  PointSetModel model = PointSetModel::zeros(arch);
  std::vector<double> values(model.parameter_count());
  for (auto& v : values) v = r.f64("parameters");
  if (r.remaining() != 0) {
    throw Error(ErrorKind::FormatError,
                "trailing bytes after parameters at byte offset " + std::to_string(4 + r.pos()));
  }
  model.assign(values);
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const PointSetModel& model) {
  const auto bytes = encode_checkpoint(model);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

PointSetModel load_checkpoint(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  try {
    return decode_checkpoint(std::span(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace epic
