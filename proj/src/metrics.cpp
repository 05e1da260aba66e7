#include "rdcr/metrics.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>

namespace rdcr::metrics {

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw ShapeError("accuracy: length mismatch");
  if (predictions.empty()) throw ShapeError("accuracy: empty input");
  int hits = 0;
  for (size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == labels[i]) ++hits;
  return 100.0 * hits / static_cast<double>(predictions.size());
}

std::pair<double, double> best_last(const std::vector<MetricsRecord>& log, Role role) {
  if (log.empty()) throw ShapeError("best_last: empty log");
  auto pick = [role](const MetricsRecord& r) {
    switch (role) {
      case Role::student: return r.test_acc_student;
      case Role::teacher: return r.test_acc_teacher;
      case Role::swa: return r.test_acc_swa;
    }
    return 0.0;
  };
  double best = pick(log.front());
  for (const auto& r : log) best = std::max(best, pick(r));
  return {best, pick(log.back())};
}

double ConfusionMatrix::diagonal_mean() const {
  double s = 0.0;
  for (int i = 0; i < K; ++i) s += ratios(i, i);
  return s / K;
}

ConfusionMatrix pseudo_confusion(const std::vector<int>& y_pseudo,
                                 const std::vector<int>& y_true, int k) {
  if (y_pseudo.size() != y_true.size())
    throw ShapeError("pseudo_confusion: length mismatch");
  ConfusionMatrix cm;
  cm.K = k;
  cm.counts = Eigen::MatrixXd::Zero(k, k);
  for (size_t i = 0; i < y_pseudo.size(); ++i) {
    const int p = y_pseudo[i], t = y_true[i];
    if (p < 0 || p >= k || t < 0 || t >= k)
      throw ShapeError("pseudo_confusion: label out of range");
    cm.counts(t, p) += 1.0;
  }
  cm.ratios = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i < k; ++i) {
    const double total = cm.counts.row(i).sum();
    if (total > 0.0) cm.ratios.row(i) = 100.0 * cm.counts.row(i) / total;
  }
  return cm;
}

const char* kCsvHeader =
    "epoch,lr,w_s,w_c,w_r,loss_sup,loss_cons,loss_rot,loss_total,val_acc,"
    "test_acc_student,test_acc_teacher,test_acc_swa,pseudo_acc";

std::string csv_row(const MetricsRecord& r) {
  // %.17g: doubles survive the text round-trip bit for bit
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,"
                "%.17g,%.17g,%.17g",
                r.epoch, r.lr, r.w_s, r.w_c, r.w_r, r.loss_sup, r.loss_cons,
                r.loss_rot, r.loss_total, r.val_acc, r.test_acc_student,
                r.test_acc_teacher, r.test_acc_swa, r.pseudo_acc);
  return buf;
}

void write_csv(const std::string& path, const std::vector<MetricsRecord>& log) {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot write " + path);
  std::fprintf(f, "%s\n", kCsvHeader);
  for (const auto& r : log) std::fprintf(f, "%s\n", csv_row(r).c_str());
  std::fclose(f);
}

std::vector<MetricsRecord> read_csv(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot read " + path);
  std::vector<MetricsRecord> log;
  char line[1024];
  bool first = true;
  while (std::fgets(line, sizeof(line), f)) {
    if (first) {
      first = false;
      if (std::strncmp(line, "epoch,", 6) != 0) {
        std::fclose(f);
        throw IoError("metrics csv missing header: " + path);
      }
      continue;
    }
    MetricsRecord r;
    const int got = std::sscanf(
        line, "%d,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &r.epoch,
        &r.lr, &r.w_s, &r.w_c, &r.w_r, &r.loss_sup, &r.loss_cons, &r.loss_rot,
        &r.loss_total, &r.val_acc, &r.test_acc_student, &r.test_acc_teacher,
        &r.test_acc_swa, &r.pseudo_acc);
    if (got != 14) {
      std::fclose(f);
      throw IoError("malformed metrics row in " + path);
    }
    log.push_back(r);
  }
  std::fclose(f);
  return log;
}

void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm) {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot write " + path);
  for (int i = 0; i < cm.K; ++i) {
    for (int j = 0; j < cm.K; ++j)
      std::fprintf(f, "%s%.6f", j ? "," : "", cm.ratios(i, j));
    std::fprintf(f, "\n");
  }
  std::fclose(f);
}

}  // namespace rdcr::metrics
