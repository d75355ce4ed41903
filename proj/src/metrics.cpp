#include "epic/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "epic/error.hpp"

namespace epic {

double overall_accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) {
    throw Error(ErrorKind::LengthMismatch, "predictions (" + std::to_string(predicted.size()) +
                                               ") and labels (" + std::to_string(labels.size()) +
                                               ") differ in length");
  }
  if (labels.empty()) throw Error(ErrorKind::EmptyEval, "accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double overall_accuracy(std::span<const PredictionVector> predictions, std::span<const int> labels) {
  std::vector<int> classes;
  classes.reserve(predictions.size());
  for (const auto& p : predictions) classes.push_back(p.argmax());
  return overall_accuracy(classes, labels);
}

CorruptionErrorResult corruption_error(const FamilyErrors& model, const FamilyErrors& reference) {
  if (model.size() != reference.size() || model.empty()) {
    throw Error(ErrorKind::LengthMismatch, "model and reference cover different families");
  }
  CorruptionErrorResult out;
  double total = 0.0;
  for (const auto& [family, errs] : model) {
    const auto it = reference.find(family);
    if (it == reference.end()) {
      throw Error(ErrorKind::LengthMismatch,
                  "reference lacks family " + std::string(to_string(family)));
    }
    const double num = std::accumulate(errs.begin(), errs.end(), 0.0);
    const double den = std::accumulate(it->second.begin(), it->second.end(), 0.0);
    if (!(den > 0.0)) {
      throw Error(ErrorKind::ZeroReferenceError,
                  "reference error sum is zero for " + std::string(to_string(family)));
    }
    out.ce[family] = num / den;
    total += num / den;
  }
  out.mce = total / static_cast<double>(model.size());
  return out;
}

std::vector<int> pointwise_importance(const RowMatrix& features) {
  std::vector<int> imp(static_cast<std::size_t>(features.rows()), 0);
  for (Eigen::Index k = 0; k < features.cols(); ++k) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < features.rows(); ++j) {
      if (features(j, k) > features(best, k)) best = j;
    }
    ++imp[static_cast<std::size_t>(best)];
  }
  return imp;
}

Eigen::MatrixXd member_correlation(const PredictionMatrix& matrix) {
  const Eigen::Index k = matrix.probs.rows();
  const Eigen::MatrixXd centered = matrix.probs.colwise() - matrix.probs.rowwise().mean();
  const Eigen::VectorXd norms = centered.rowwise().norm();
  Eigen::MatrixXd corr = Eigen::MatrixXd::Identity(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = a + 1; b < k; ++b) {
      double r = 0.0;
      if (norms(a) > 0.0 && norms(b) > 0.0) {
        r = std::clamp(centered.row(a).dot(centered.row(b)) / (norms(a) * norms(b)), -1.0, 1.0);
      }
      corr(a, b) = corr(b, a) = r;
    }
  }
  return corr;
}

DiversityResult diversity(std::span<const PredictionMatrix> per_sample) {
  if (per_sample.empty()) throw Error(ErrorKind::EmptyEval, "diversity of an empty set");
  const int k = per_sample.front().members();
  if (k < 2) throw Error(ErrorKind::BadK, "diversity needs at least 2 ensemble members");
  DiversityResult out{0.0, Eigen::MatrixXd::Zero(k, k)};
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(k, k);
  const double norm = static_cast<double>(k) * k - k;
  for (const auto& m : per_sample) {
    if (m.members() != k) throw Error(ErrorKind::BadK, "ensemble size differs between samples");
    const Eigen::MatrixXd corr = member_correlation(m);
    out.c += (corr - identity).squaredNorm() / norm;
    out.mean_correlation += corr;
  }
  const auto s = static_cast<double>(per_sample.size());
  out.c /= s;
  out.mean_correlation /= s;
  return out;
}

double diversity_c(std::span<const PredictionMatrix> per_sample) {
  return diversity(per_sample).c;
}

double uniformity(const PointCloud& clean, const PointCloud& corrupted, double epsilon) {
  if (epsilon < 0.0) throw Error(ErrorKind::BadConfig, "epsilon must be nonnegative");
  const int n = clean.size();
  const int m = corrupted.size();
  int matched = 0;
  if (epsilon == 0.0) {
    // Exact matching: bucket the corrupted points by their coordinates.
    struct Hash {
      std::size_t operator()(const std::tuple<double, double, double>& t) const {
        const auto h = [](double d) { return std::hash<double>{}(d); };
        return h(std::get<0>(t)) * 31 * 31 + h(std::get<1>(t)) * 31 + h(std::get<2>(t));
      }
    };
    std::unordered_map<std::tuple<double, double, double>, int, Hash> available;
    for (int j = 0; j < m; ++j) {
      const auto& p = corrupted.matrix();
      ++available[{p(j, 0), p(j, 1), p(j, 2)}];
    }
    for (int i = 0; i < n; ++i) {
      const auto& p = clean.matrix();
      auto it = available.find({p(i, 0), p(i, 1), p(i, 2)});
      if (it != available.end() && it->second > 0) {
        --it->second;
        ++matched;
      }
    }
  } else {
    struct Pair {
      double d2;
      int i, j;
    };
    std::vector<Pair> pairs;
    const double eps2 = epsilon * epsilon;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        const double d2 = (clean.matrix().row(i) - corrupted.matrix().row(j)).squaredNorm();
        if (d2 <= eps2) pairs.push_back({d2, i, j});
      }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
      return std::tie(a.d2, a.i, a.j) < std::tie(b.d2, b.i, b.j);
    });
    std::vector<char> used_clean(static_cast<std::size_t>(n), 0);
    std::vector<char> used_corrupt(static_cast<std::size_t>(m), 0);
    for (const auto& p : pairs) {
      if (used_clean[static_cast<std::size_t>(p.i)] || used_corrupt[static_cast<std::size_t>(p.j)]) {
        continue;
      }
      used_clean[static_cast<std::size_t>(p.i)] = used_corrupt[static_cast<std::size_t>(p.j)] = 1;
      ++matched;
    }
  }
  return 1.0 - static_cast<double>(matched) / static_cast<double>(std::max(n, m));
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::LengthMismatch, "spearman: length mismatch");
  if (x.size() < 2) throw Error(ErrorKind::EmptyEval, "spearman needs at least 2 points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(rx.size());
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(ry.size());
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

void EvalReport::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(overall_accuracy)) throw Error(ErrorKind::BadConfig, "accuracy outside [0,1]");
  for (const auto& [f, errs] : error_rates) {
    for (double e : errs) {
      if (!in_unit(e)) throw Error(ErrorKind::BadConfig, "error rate outside [0,1]");
    }
  }
  if (mce && *mce < 0.0) throw Error(ErrorKind::BadConfig, "negative mCE");
  if (diversity_c && !in_unit(*diversity_c)) throw Error(ErrorKind::BadConfig, "c outside [0,1]");
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["model_id"] = model_id;
  j["overall_accuracy"] = overall_accuracy;
  nlohmann::json errors = nlohmann::json::object();
  for (const auto& [f, errs] : error_rates) errors[std::string(to_string(f))] = errs;
  j["error_rates"] = errors;
  nlohmann::json ce_json = nlohmann::json::object();
  for (const auto& [f, v] : ce) ce_json[std::string(to_string(f))] = v;
  j["ce"] = ce_json;
  j["mce"] = mce ? nlohmann::json(*mce) : nlohmann::json(nullptr);
  j["diversity_c"] = diversity_c ? nlohmann::json(*diversity_c) : nlohmann::json(nullptr);
  j["metadata"] = metadata;
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.model_id = j.at("model_id").get<std::string>();
    r.overall_accuracy = j.at("overall_accuracy").get<double>();
    for (const auto& [name, v] : j.at("error_rates").items()) {
      r.error_rates[parse_family(name)] = v.get<SeverityErrors>();
    }
    for (const auto& [name, v] : j.at("ce").items()) r.ce[parse_family(name)] = v.get<double>();
    if (!j.at("mce").is_null()) r.mce = j.at("mce").get<double>();
    if (!j.at("diversity_c").is_null()) r.diversity_c = j.at("diversity_c").get<double>();
    r.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("bad report JSON: ") + e.what());
  }
  return r;
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "family,severity,error_rate,ce\n";
  for (const auto& [f, errs] : error_rates) {
    const auto it = ce.find(f);
    for (int s = 0; s < 5; ++s) {
      out << to_string(f) << ',' << (s + 1) << ',' << errs[static_cast<std::size_t>(s)] << ',';
      if (it != ce.end()) out << it->second;
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace epic
