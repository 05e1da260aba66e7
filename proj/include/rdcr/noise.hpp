#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rdcr/dataset.hpp"
#include "rdcr/rng.hpp"

namespace rdcr::noise {

struct TransitionMatrix {
  int K = 0;
  Eigen::MatrixXd rows;  // entry (i,j): P(observed j | true i)

  void validate() const;  // nonnegative, each row sums to 1 +- 1e-12
};

TransitionMatrix identity_matrix(int k);

// Diagonal 1-eps; the flip lands uniformly on the K-1 other classes. With
// includes_self the flip is uniform over all K classes instead.
TransitionMatrix symmetric_matrix(int k, double eps, bool includes_self = false);

// Row k: 1-eps at k, eps at pairing[k], zero elsewhere.
TransitionMatrix pairwise_asymmetric_matrix(int k, double eps,
                                            const std::vector<int>& pairing);

enum class Setting { simplified_nl, semi_sl };

// Images + observed labels + partitions. True labels are reachable only
// through the audit accessors; the training path never sees them.
class NoisyDataset {
 public:
  NoisyDataset() = default;
  NoisyDataset(std::shared_ptr<const Dataset> base, std::vector<int> observed);

  int K() const { return base_->K; }
  int count() const { return base_->count(); }
  int channels() const { return base_->channels; }
  int size() const { return base_->size; }
  Eigen::Index row_len() const { return base_->row_len(); }
  const double* image(int n) const { return base_->image(n); }
  int observed_label(int n) const { return observed_[static_cast<size_t>(n)]; }
  const std::vector<int>& observed_labels() const { return observed_; }

  // audit-only access to the ground truth
  int audit_true_label(int n) const { return base_->labels[static_cast<size_t>(n)]; }
  const std::vector<int>& audit_true_labels() const { return base_->labels; }
  bool is_corrupted(int n) const { return audit_true_label(n) != observed_label(n); }

  // filled by make_partitions
  std::vector<int> train_indices;       // D after the validation carve-out
  std::vector<int> validation_indices;  // clean labels, class-balanced
  std::vector<int> labeled_indices;     // D_L (semi_sl only)
  std::vector<int> supervised_indices;  // D_S

 private:
  friend NoisyDataset make_partitions(const NoisyDataset&, Setting, int, double,
                                      uint64_t);
  std::shared_ptr<const Dataset> base_;
  std::vector<int> observed_;
};

// Each observed label drawn independently from row y_n of T.
NoisyDataset corrupt_labels(std::shared_ptr<const Dataset> base,
                            const TransitionMatrix& t, uint64_t seed);

// Row i of the result: observed-label frequencies among true class i.
TransitionMatrix empirical_transition(const NoisyDataset& data);

double corrupted_fraction(const NoisyDataset& data);

// Carves out a clean class-balanced validation split, then sets D_S to the
// whole remainder (simplified_nl) or to a class-balanced L-subset whose true
// labels are exposed (semi_sl).
NoisyDataset make_partitions(const NoisyDataset& data, Setting setting, int l,
                             double validation_fraction, uint64_t seed);

// Sidecar: per-sample (true u16, observed u16), little-endian.
void save_sidecar(const std::string& path, const NoisyDataset& data);
NoisyDataset load_sidecar(const std::string& path,
                          std::shared_ptr<const Dataset> base);

}  // namespace rdcr::noise
