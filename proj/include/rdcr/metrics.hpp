#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "rdcr/error.hpp"

namespace rdcr::metrics {

struct MetricsRecord {
  int epoch = 0;
  double lr = 0.0;
  double w_s = 0.0, w_c = 0.0, w_r = 0.0;
  double loss_sup = 0.0, loss_cons = 0.0, loss_rot = 0.0, loss_total = 0.0;
  double val_acc = 0.0;
  double test_acc_student = 0.0, test_acc_teacher = 0.0, test_acc_swa = 0.0;
  double pseudo_acc = 0.0;
};

enum class Role { student, teacher, swa };

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

// (max over epochs, final epoch) of the role's test accuracy.
std::pair<double, double> best_last(const std::vector<MetricsRecord>& log, Role role);

struct ConfusionMatrix {
  int K = 0;
  Eigen::MatrixXd counts;  // counts(true, predicted)
  Eigen::MatrixXd ratios;  // row-normalized percent; zero rows stay zero

  double diagonal_mean() const;  // mean of per-true-class diagonal ratios
};

ConfusionMatrix pseudo_confusion(const std::vector<int>& y_pseudo,
                                 const std::vector<int>& y_true, int k);

// Fixed column order; one row per epoch. Identical records give identical bytes.
extern const char* kCsvHeader;
std::string csv_row(const MetricsRecord& r);
void write_csv(const std::string& path, const std::vector<MetricsRecord>& log);
std::vector<MetricsRecord> read_csv(const std::string& path);

// K rows of K ratio columns.
void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm);

}  // namespace rdcr::metrics
