#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "rdcr/metrics.hpp"

using namespace rdcr;
namespace m = rdcr::metrics;

TEST_CASE("accuracy") {
  CHECK(m::accuracy({1, 2, 3, 0}, {1, 2, 0, 0}) == doctest::Approx(75.0));
  CHECK(m::accuracy({5}, {5}) == 100.0);
  CHECK(m::accuracy({0, 0}, {1, 2}) == 0.0);
  CHECK_THROWS_AS(m::accuracy({1}, {1, 2}), ShapeError);
}

TEST_CASE("best and last per role") {
  std::vector<m::MetricsRecord> log(3);
  log[0].test_acc_student = 90.0;
  log[1].test_acc_student = 80.0;
  log[2].test_acc_student = 70.0;
  log[0].test_acc_teacher = 10.0;
  log[1].test_acc_teacher = 30.0;
  log[2].test_acc_teacher = 20.0;

  auto [sb, sl] = m::best_last(log, m::Role::student);
  CHECK(sb == 90.0);
  CHECK(sl == 70.0);
  auto [tb, tl] = m::best_last(log, m::Role::teacher);
  CHECK(tb == 30.0);
  CHECK(tl == 20.0);
}

TEST_CASE("pseudo-label confusion") {
  // true class 0: 3 of 4 correct; class 1: 1 of 2; class 2 unseen
  std::vector<int> y_true = {0, 0, 0, 0, 1, 1};
  std::vector<int> y_pred = {0, 0, 0, 1, 1, 2};
  m::ConfusionMatrix cm = m::pseudo_confusion(y_pred, y_true, 3);

  CHECK(cm.counts(0, 0) == 3.0);
  CHECK(cm.counts(0, 1) == 1.0);
  CHECK(cm.counts(1, 1) == 1.0);
  CHECK(cm.counts(1, 2) == 1.0);
  CHECK(cm.ratios(0, 0) == doctest::Approx(75.0));
  CHECK(cm.ratios(1, 1) == doctest::Approx(50.0));
  for (int j = 0; j < 3; ++j) CHECK(cm.ratios(2, j) == 0.0);  // zero row stays zero

  // populated rows sum to 100
  CHECK(cm.ratios.row(0).sum() == doctest::Approx(100.0));
  CHECK(cm.ratios.row(1).sum() == doctest::Approx(100.0));

  // diagonal mean averages over all K true classes, empty ones included
  CHECK(cm.diagonal_mean() == doctest::Approx((75.0 + 50.0 + 0.0) / 3.0));

  CHECK_THROWS_AS(m::pseudo_confusion({0, 3}, {0, 0}, 3), ShapeError);
}

TEST_CASE("metrics CSV round-trips exactly") {
  std::vector<m::MetricsRecord> log(2);
  log[0].epoch = 0;
  log[0].lr = 0.05;
  log[0].w_s = 1.0;
  log[0].w_c = 2.0 / 3.0;
  log[0].w_r = 0.3;
  log[0].loss_sup = 1.2345678901234567;
  log[0].loss_cons = 1e-17;
  log[0].loss_rot = 1.0 / 7.0;
  log[0].loss_total = 2.0;
  log[0].val_acc = 50.0;
  log[0].test_acc_student = 33.333333333333336;
  log[0].test_acc_teacher = 0.1;
  log[0].test_acc_swa = 0.0;
  log[0].pseudo_acc = 99.99;
  log[1] = log[0];
  log[1].epoch = 1;
  log[1].loss_sup = 0.9999999999999999;

  const std::string path = "metrics_roundtrip_test.csv";
  m::write_csv(path, log);
  std::vector<m::MetricsRecord> back = m::read_csv(path);

  REQUIRE(back.size() == log.size());
  for (size_t i = 0; i < log.size(); ++i) {
    CHECK(back[i].epoch == log[i].epoch);
    CHECK(back[i].lr == log[i].lr);
    CHECK(back[i].w_c == log[i].w_c);
    CHECK(back[i].loss_sup == log[i].loss_sup);
    CHECK(back[i].loss_cons == log[i].loss_cons);
    CHECK(back[i].loss_rot == log[i].loss_rot);
    CHECK(back[i].test_acc_student == log[i].test_acc_student);
    CHECK(back[i].pseudo_acc == log[i].pseudo_acc);
  }

  // identical records serialize to identical bytes
  const std::string path2 = "metrics_roundtrip_test2.csv";
  m::write_csv(path2, log);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  std::ostringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(sa.str().rfind(m::kCsvHeader, 0) == 0);

  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("confusion CSV shape") {
  m::ConfusionMatrix cm = m::pseudo_confusion({0, 1, 1}, {0, 1, 1}, 2);
  const std::string path = "confusion_test.csv";
  m::write_confusion_csv(path, cm);
  std::ifstream f(path);
  std::string line;
  int rows = 0;
  while (std::getline(f, line)) ++rows;
  CHECK(rows == 2);
  std::remove(path.c_str());
}
