#include "rdcr/noise.hpp"

#include <algorithm>
#include <cstdio>

namespace rdcr::noise {

void TransitionMatrix::validate() const {
  if (K < 2 || rows.rows() != K || rows.cols() != K)
    throw ShapeError("transition matrix: must be KxK with K >= 2");
  for (int i = 0; i < K; ++i) {
    double sum = 0.0;
    for (int j = 0; j < K; ++j) {
      if (rows(i, j) < 0.0) throw ShapeError("transition matrix: negative entry");
      sum += rows(i, j);
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw ShapeError("transition matrix: row " + std::to_string(i) +
                       " sums to " + std::to_string(sum));
  }
}

TransitionMatrix identity_matrix(int k) {
  TransitionMatrix t;
  t.K = k;
  t.rows = Eigen::MatrixXd::Identity(k, k);
  t.validate();
  return t;
}

TransitionMatrix symmetric_matrix(int k, double eps, bool includes_self) {
  if (k < 2) throw ConfigError("symmetric_matrix: K must be >= 2");
  if (eps < 0.0 || eps > 1.0) throw ConfigError("symmetric_matrix: eps outside [0,1]");
  TransitionMatrix t;
  t.K = k;
  if (includes_self) {
    t.rows = Eigen::MatrixXd::Constant(k, k, eps / k);
    t.rows.diagonal().array() += 1.0 - eps;
  } else {
    t.rows = Eigen::MatrixXd::Constant(k, k, eps / (k - 1));
    t.rows.diagonal().setConstant(1.0 - eps);
  }
  t.validate();
  return t;
}

TransitionMatrix pairwise_asymmetric_matrix(int k, double eps,
                                            const std::vector<int>& pairing) {
  if (k < 2) throw ConfigError("pairwise_asymmetric_matrix: K must be >= 2");
  if (eps < 0.0 || eps > 1.0)
    throw ConfigError("pairwise_asymmetric_matrix: eps outside [0,1]");
  if (static_cast<int>(pairing.size()) != k)
    throw ConfigError("pairwise_asymmetric_matrix: pairing must cover every class");
  TransitionMatrix t;
  t.K = k;
  t.rows = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i < k; ++i) {
    const int j = pairing[static_cast<size_t>(i)];
    if (j < 0 || j >= k) throw ConfigError("pairwise_asymmetric_matrix: pairing out of range");
    if (j == i) throw ConfigError("pairwise_asymmetric_matrix: class paired with itself");
    t.rows(i, i) = 1.0 - eps;
    t.rows(i, j) += eps;
  }
  t.validate();
  return t;
}

NoisyDataset::NoisyDataset(std::shared_ptr<const Dataset> base,
                           std::vector<int> observed)
    : base_(std::move(base)), observed_(std::move(observed)) {
  base_->validate();
  if (static_cast<int>(observed_.size()) != base_->count())
    throw ShapeError("noisy dataset: observed label count mismatch");
  for (int y : observed_)
    if (y < 0 || y >= base_->K) throw ShapeError("noisy dataset: observed label out of range");
}

NoisyDataset corrupt_labels(std::shared_ptr<const Dataset> base,
                            const TransitionMatrix& t, uint64_t seed) {
  base->validate();
  t.validate();
  if (t.K != base->K) throw ShapeError("corrupt_labels: matrix class count mismatch");
  const int n = base->count();
  std::vector<int> observed(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int y = base->labels[static_cast<size_t>(i)];
    RngStream rng(derive_key(seed, "corrupt", static_cast<uint64_t>(i)));
    const double u = rng.uniform();
    double acc = 0.0;
    int drawn = t.K - 1;  // guard against accumulated rounding
    for (int j = 0; j < t.K; ++j) {
      acc += t.rows(y, j);
      if (u < acc) { drawn = j; break; }
    }
    observed[static_cast<size_t>(i)] = drawn;
  }
  return NoisyDataset(std::move(base), std::move(observed));
}

TransitionMatrix empirical_transition(const NoisyDataset& data) {
  const int k = data.K();
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(k, k);
  for (int n = 0; n < data.count(); ++n)
    counts(data.audit_true_label(n), data.observed_label(n)) += 1.0;
  TransitionMatrix t;
  t.K = k;
  t.rows = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i < k; ++i) {
    const double total = counts.row(i).sum();
    if (total == 0.0)
      throw ShapeError("empirical_transition: true class " + std::to_string(i) +
                       " has no samples");
    t.rows.row(i) = counts.row(i) / total;
  }
  return t;
}

double corrupted_fraction(const NoisyDataset& data) {
  int bad = 0;
  for (int n = 0; n < data.count(); ++n)
    if (data.is_corrupted(n)) ++bad;
  return static_cast<double>(bad) / data.count();
}

namespace {

// Deterministic per-class shuffles; picks `want[k]` indices of each class.
std::vector<int> balanced_pick(const std::vector<std::vector<int>>& by_class,
                               const std::vector<int>& want, uint64_t key) {
  std::vector<int> picked;
  for (size_t k = 0; k < by_class.size(); ++k) {
    std::vector<int> pool = by_class[k];
    RngStream rng(derive_key(key, "class", static_cast<uint64_t>(k)));
    for (size_t i = pool.size(); i > 1; --i)
      std::swap(pool[i - 1], pool[static_cast<size_t>(rng.below(i))]);
    if (static_cast<int>(pool.size()) < want[k])
      throw ConfigError("partitions: class " + std::to_string(k) +
                        " has too few samples");
    picked.insert(picked.end(), pool.begin(), pool.begin() + want[k]);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

// Splits `total` into K per-class counts differing by at most one.
std::vector<int> spread(int total, int k) {
  std::vector<int> want(static_cast<size_t>(k), total / k);
  for (int i = 0; i < total % k; ++i) ++want[static_cast<size_t>(i)];
  return want;
}

}  // namespace

NoisyDataset make_partitions(const NoisyDataset& data, Setting setting, int l,
                             double validation_fraction, uint64_t seed) {
  if (validation_fraction < 0.0 || validation_fraction >= 1.0)
    throw ConfigError("partitions: validation fraction outside [0,1)");
  const int n = data.count();
  const int k = data.K();
  const int val_size = static_cast<int>(std::lround(n * validation_fraction));

  std::vector<std::vector<int>> by_class(static_cast<size_t>(k));
  for (int i = 0; i < n; ++i)
    by_class[static_cast<size_t>(data.audit_true_label(i))].push_back(i);
  if (val_size > 0)
    for (int c = 0; c < k; ++c)
      if (by_class[static_cast<size_t>(c)].empty())
        throw ConfigError("partitions: class " + std::to_string(c) +
                          " has no validation candidates");

  NoisyDataset out = data;
  out.validation_indices =
      balanced_pick(by_class, spread(val_size, k), derive_key(seed, "validation"));
  std::vector<uint8_t> in_val(static_cast<size_t>(n), 0);
  for (int i : out.validation_indices) in_val[static_cast<size_t>(i)] = 1;
  out.train_indices.clear();
  for (int i = 0; i < n; ++i)
    if (!in_val[static_cast<size_t>(i)]) out.train_indices.push_back(i);

  if (setting == Setting::simplified_nl) {
    out.labeled_indices.clear();
    out.supervised_indices = out.train_indices;
    return out;
  }

  if (l < k || l > static_cast<int>(out.train_indices.size()))
    throw ConfigError("partitions: labeled count L out of range");
  std::vector<std::vector<int>> train_by_class(static_cast<size_t>(k));
  for (int i : out.train_indices)
    train_by_class[static_cast<size_t>(data.audit_true_label(i))].push_back(i);
  out.labeled_indices =
      balanced_pick(train_by_class, spread(l, k), derive_key(seed, "labeled"));
  out.supervised_indices = out.labeled_indices;
  // D_L exposes ground truth: clean supervision only
  for (int i : out.labeled_indices)
    out.observed_[static_cast<size_t>(i)] = data.audit_true_label(i);
  return out;
}

void save_sidecar(const std::string& path, const NoisyDataset& data) {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot write " + path);
  for (int n = 0; n < data.count(); ++n) {
    const uint16_t rec[2] = {static_cast<uint16_t>(data.audit_true_label(n)),
                             static_cast<uint16_t>(data.observed_label(n))};
    if (std::fwrite(rec, sizeof(uint16_t), 2, f) != 2) {
      std::fclose(f);
      throw IoError("short write to " + path);
    }
  }
  std::fclose(f);
}

NoisyDataset load_sidecar(const std::string& path,
                          std::shared_ptr<const Dataset> base) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot read " + path);
  const int n = base->count();
  std::vector<int> observed(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    uint16_t rec[2];
    if (std::fread(rec, sizeof(uint16_t), 2, f) != 2) {
      std::fclose(f);
      throw IoError("sidecar truncated: " + path);
    }
    if (rec[0] != base->labels[static_cast<size_t>(i)]) {
      std::fclose(f);
      throw IoError("sidecar true labels do not match the dataset: " + path);
    }
    observed[static_cast<size_t>(i)] = rec[1];
  }
  uint8_t extra;
  if (std::fread(&extra, 1, 1, f) == 1) {
    std::fclose(f);
    throw IoError("sidecar longer than the dataset: " + path);
  }
  std::fclose(f);
  return NoisyDataset(std::move(base), std::move(observed));
}

}  // namespace rdcr::noise
