#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rdcr/gradcheck.hpp"
#include "rdcr/nn.hpp"
#include "rdcr/ops.hpp"

using namespace rdcr;
namespace o = rdcr::ops;

namespace {

Tensor random_tensor(std::vector<int> shape, uint64_t key, double lo = -1.0,
                     double hi = 1.0) {
  RngStream rng(key);
  return Tensor::uniform(std::move(shape), lo, hi, rng);
}

nn::ModelConfig tiny_config(int k = 6, const std::string& norm = "gn+ws") {
  nn::ModelConfig cfg;
  cfg.in_channels = 1;
  cfg.image_size = 8;
  cfg.num_classes = k;
  cfg.width_multiplier = 0.125;
  cfg.norm = nn::parse_norm(norm);
  return cfg;
}

}  // namespace

TEST_CASE("weight_standardize hand cases") {
  // one filter [1,3]: mean 2, population std 1
  Tensor w = Tensor::from_values({1, 1, 1, 2}, {1, 3});
  Tensor s = nn::weight_standardize(w, 1e-5);
  CHECK(s.data()[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(s.data()[1] == doctest::Approx(1.0).epsilon(1e-12));

  Tensor c = Tensor::full({2, 1, 2, 2}, 7.0);
  Tensor sc = nn::weight_standardize(c, 1e-5);
  for (Eigen::Index i = 0; i < sc.numel(); ++i) CHECK(sc.data()[i] == 0.0);
}

TEST_CASE("weight_standardize output statistics") {
  Tensor w = random_tensor({4, 3, 3, 3}, 5);
  Tensor s = nn::weight_standardize(w, 1e-5);
  const Eigen::Index m = 27;
  for (int f = 0; f < 4; ++f) {
    auto seg = s.data().segment(f * m, m);
    CHECK(std::abs(seg.mean()) < 1e-10);
    CHECK(std::abs(std::sqrt((seg - seg.mean()).square().mean()) - 1.0) < 1e-6);
  }
}

TEST_CASE("weight_standardize shift and scale invariance") {
  Tensor w = random_tensor({3, 2, 3, 3}, 9);
  Tensor base = nn::weight_standardize(w, 1e-5);
  for (double a : {0.5, 2.0, 7.25}) {
    for (double c : {-1.0, 0.0, 3.5}) {
      Tensor w2 = Tensor::from_array(w.shape(), a * w.data() + c);
      Tensor s2 = nn::weight_standardize(w2, 1e-5);
      for (Eigen::Index i = 0; i < s2.numel(); ++i)
        CHECK(std::abs(s2.data()[i] - base.data()[i]) < 1e-10);
    }
  }
}

TEST_CASE("weight_standardize gradient") {
  Tensor w = random_tensor({2, 2, 2, 2}, 13);
  Tensor mask = random_tensor({2, 2, 2, 2}, 15);
  auto f = [&](const Tensor& p) {
    return o::sum(o::mul(nn::weight_standardize(p, 1e-5), mask));
  };
  CHECK(gradient_check(f, w, 1e-6) < 1e-6);
}

TEST_CASE("group_norm hand cases") {
  nn::Normalization norm;
  norm.kind = nn::NormKind::group;
  norm.group_size = 2;

  // constant input: variance ~0, gamma multiplies ~0, beta shows through
  Tensor x = Tensor::full({2, 4, 3, 3}, 5.0);
  Tensor gamma = Tensor::full({4}, 2.0);
  Tensor beta = Tensor::from_values({4}, {1, -1, 0.5, 2});
  Tensor y = nn::group_norm(x, norm, gamma, beta);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 4; ++c)
      for (int i = 0; i < 9; ++i)
        CHECK(y.data()[(n * 4 + c) * 9 + i] == doctest::Approx(beta.data()[c]).epsilon(1e-9));
}

TEST_CASE("group_norm slice statistics") {
  nn::Normalization norm;
  norm.kind = nn::NormKind::group;
  norm.group_size = 2;
  // wide enough that epsilon inside the variance is negligible
  Tensor x = random_tensor({3, 4, 4, 4}, 17, -8.0, 8.0);
  Tensor gamma = Tensor::full({4}, 1.0);
  Tensor beta = Tensor::zeros({4});
  Tensor y = nn::group_norm(x, norm, gamma, beta);
  const Eigen::Index m = 2 * 16;
  for (int n = 0; n < 3; ++n)
    for (int g = 0; g < 2; ++g) {
      auto slice = y.data().segment((n * 4 + g * 2) * 16, m);
      CHECK(std::abs(slice.mean()) < 1e-10);
      CHECK(std::abs((slice - slice.mean()).square().mean() - 1.0) < 1e-6);
    }
}

TEST_CASE("group kind degenerates to layer and instance kinds") {
  Tensor x = random_tensor({2, 6, 3, 3}, 19, -2.0, 2.0);
  Tensor gamma = random_tensor({6}, 21, 0.5, 1.5);
  Tensor beta = random_tensor({6}, 23, -0.5, 0.5);

  nn::Normalization layer;
  layer.kind = nn::NormKind::layer;
  nn::Normalization group1;
  group1.kind = nn::NormKind::group;
  group1.group_size = 6;  // one group
  Tensor a = nn::group_norm(x, layer, gamma, beta);
  Tensor b = nn::group_norm(x, group1, gamma, beta);
  for (Eigen::Index i = 0; i < a.numel(); ++i)
    CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-12);

  nn::Normalization inst;
  inst.kind = nn::NormKind::instance;
  nn::Normalization group2;
  group2.kind = nn::NormKind::group;
  group2.group_size = 1;  // one channel per group
  Tensor c = nn::group_norm(x, inst, gamma, beta);
  Tensor d = nn::group_norm(x, group2, gamma, beta);
  for (Eigen::Index i = 0; i < c.numel(); ++i)
    CHECK(std::abs(c.data()[i] - d.data()[i]) < 1e-12);
}

TEST_CASE("group_norm is invariant to batch composition") {
  nn::Normalization norm;
  norm.kind = nn::NormKind::group;
  norm.group_size = 2;
  Tensor x = random_tensor({3, 4, 3, 3}, 25, -2.0, 2.0);
  Tensor gamma = random_tensor({4}, 27, 0.5, 1.5);
  Tensor beta = random_tensor({4}, 29, -0.5, 0.5);
  Tensor batched = nn::group_norm(x, norm, gamma, beta);
  const Eigen::Index row = 4 * 9;
  for (int n = 0; n < 3; ++n) {
    Tensor solo = Tensor::from_array({1, 4, 3, 3}, x.data().segment(n * row, row));
    Tensor ys = nn::group_norm(solo, norm, gamma, beta);
    for (Eigen::Index i = 0; i < row; ++i)
      CHECK(std::abs(ys.data()[i] - batched.data()[n * row + i]) < 1e-12);
  }
}

TEST_CASE("group_norm gradients") {
  nn::Normalization norm;
  norm.kind = nn::NormKind::group;
  norm.group_size = 2;
  Tensor x = random_tensor({2, 4, 3, 3}, 31, -2.0, 2.0);
  Tensor gamma = random_tensor({4}, 33, 0.5, 1.5);
  Tensor beta = random_tensor({4}, 35, -0.5, 0.5);
  Tensor mask = random_tensor({2, 4, 3, 3}, 37);
  auto wrt_x = [&](const Tensor& p) {
    return o::sum(o::mul(nn::group_norm(p, norm, gamma, beta), mask));
  };
  auto wrt_gamma = [&](const Tensor& p) {
    return o::sum(o::mul(nn::group_norm(x, norm, p, beta), mask));
  };
  auto wrt_beta = [&](const Tensor& p) {
    return o::sum(o::mul(nn::group_norm(x, norm, gamma, p), mask));
  };
  CHECK(gradient_check(wrt_x, x, 1e-5) < 1e-5);
  CHECK(gradient_check(wrt_gamma, gamma, 1e-5) < 1e-6);
  CHECK(gradient_check(wrt_beta, beta, 1e-5) < 1e-6);
}

TEST_CASE("batch_norm train statistics, masked running update, eval read-back") {
  Tensor gamma = Tensor::full({2}, 1.0);
  Tensor beta = Tensor::zeros({2});
  Eigen::ArrayXd rm = Eigen::ArrayXd::Zero(2);
  Eigen::ArrayXd rv = Eigen::ArrayXd::Ones(2);

  // rows 0-1 hold known values, row 2 is an outlier excluded from stats
  Tensor x = Tensor::zeros({3, 2, 1, 2});
  x.data() << 1, 3, 10, 10, 5, 7, 20, 20, 100, 100, 100, 100;
  std::vector<uint8_t> mask = {1, 1, 0};
  Tensor y = nn::batch_norm(x, gamma, beta, rm, rv, true, 0.9, 1e-5, mask, true);

  // channel 0 over masked rows: values {1,3,5,7} -> mean 4, var 5
  CHECK(rm[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 4.0));
  CHECK(rv[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 5.0));
  // channel 1 over masked rows: values {10,10,20,20} -> mean 15, var 25
  CHECK(rm[1] == doctest::Approx(1.5));
  CHECK(rv[1] == doctest::Approx(0.9 + 2.5));

  // normalization itself uses the full batch: per-channel mean 0, var 1
  for (int ch = 0; ch < 2; ++ch) {
    double s = 0.0, s2 = 0.0;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 2; ++i) {
        double v = y.data()[(n * 2 + ch) * 2 + i];
        s += v;
        s2 += v * v;
      }
    CHECK(std::abs(s / 6.0) < 1e-10);
    CHECK(std::abs(s2 / 6.0 - 1.0) < 1e-4);
  }

  // eval mode reads the running estimates
  Tensor xe = Tensor::zeros({1, 2, 1, 2});
  xe.data() << 0.4, 0.4, 1.5, 1.5;
  Tensor ye = nn::batch_norm(xe, gamma, beta, rm, rv, false, 0.9, 1e-5, {}, false);
  CHECK(ye.data()[0] == doctest::Approx((0.4 - rm[0]) / std::sqrt(rv[0] + 1e-5)));
  CHECK(ye.data()[2] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("batch_norm gradients in both modes") {
  Tensor x = random_tensor({3, 2, 2, 2}, 41, -2.0, 2.0);
  Tensor gamma = random_tensor({2}, 43, 0.5, 1.5);
  Tensor beta = random_tensor({2}, 45, -0.5, 0.5);
  Tensor mask = random_tensor({3, 2, 2, 2}, 47);
  Eigen::ArrayXd rm = Eigen::ArrayXd::Zero(2);
  Eigen::ArrayXd rv = Eigen::ArrayXd::Ones(2);
  for (bool train : {true, false}) {
    auto wrt_x = [&](const Tensor& p) {
      return o::sum(o::mul(
          nn::batch_norm(p, gamma, beta, rm, rv, train, 0.9, 1e-5, {}, false), mask));
    };
    auto wrt_gamma = [&](const Tensor& p) {
      return o::sum(o::mul(
          nn::batch_norm(x, p, beta, rm, rv, train, 0.9, 1e-5, {}, false), mask));
    };
    CHECK(gradient_check(wrt_x, x, 1e-5) < 1e-5);
    CHECK(gradient_check(wrt_gamma, gamma, 1e-5) < 1e-6);
  }
}

TEST_CASE("build_backbone is deterministic and sized as declared") {
  nn::ModelConfig cfg = tiny_config(4);
  cfg.image_size = 16;
  nn::NetworkParams a = nn::build_backbone(cfg, 123);
  nn::NetworkParams b = nn::build_backbone(cfg, 123);
  auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i)
    for (Eigen::Index j = 0; j < pa[i].numel(); ++j)
      CHECK(pa[i].data()[j] == pb[i].data()[j]);

  nn::NetworkParams c = nn::build_backbone(cfg, 124);
  CHECK(c.backbone[0].weight.data()[0] != a.backbone[0].weight.data()[0]);

  CHECK(a.param_count() < 100000);
  CHECK(a.param_count() == 70168);  // nine convs + affines + two heads at 1/8 width

  nn::ModelConfig k10 = tiny_config(10);
  nn::NetworkParams d = nn::build_backbone(k10, 1);
  CHECK(d.class_w.dim(1) == 10);
  CHECK(d.rot_w.dim(1) == 4);

  nn::ModelConfig bad = tiny_config(4);
  bad.width_multiplier = 0.1;  // widths stop dividing by the group size
  CHECK_THROWS_AS(nn::build_backbone(bad, 1), ConfigError);
}

TEST_CASE("forward eval mode is deterministic, zero heads give zero logits") {
  nn::ModelConfig cfg = tiny_config(6);
  nn::NetworkParams p = nn::build_backbone(cfg, 7);
  Tensor x = random_tensor({3, 1, 8, 8}, 51, 0.0, 1.0);
  nn::ForwardOptions eval;
  nn::ForwardResult r1 = nn::forward(p, x, eval);
  nn::ForwardResult r2 = nn::forward(p, x, eval);
  for (Eigen::Index i = 0; i < r1.class_logits.numel(); ++i)
    CHECK(r1.class_logits.data()[i] == r2.class_logits.data()[i]);
  CHECK(r1.class_logits.dim(1) == 6);
  CHECK(r1.rot_logits.dim(1) == 4);

  p.class_w.data().setZero();
  p.class_b.data().setZero();
  p.rot_w.data().setZero();
  p.rot_b.data().setZero();
  nn::ForwardResult r3 = nn::forward(p, x, eval);
  for (Eigen::Index i = 0; i < r3.class_logits.numel(); ++i)
    CHECK(r3.class_logits.data()[i] == 0.0);
  for (Eigen::Index i = 0; i < r3.rot_logits.numel(); ++i)
    CHECK(r3.rot_logits.data()[i] == 0.0);
}

TEST_CASE("rotation head parameters never influence class logits") {
  nn::ModelConfig cfg = tiny_config(6);
  nn::NetworkParams p = nn::build_backbone(cfg, 11);
  Tensor x = random_tensor({2, 1, 8, 8}, 53, 0.0, 1.0);
  nn::ForwardOptions eval;
  nn::ForwardResult before = nn::forward(p, x, eval);
  p.rot_w.data().setConstant(42.0);
  p.rot_b.data().setConstant(-3.0);
  nn::ForwardResult after = nn::forward(p, x, eval);
  for (Eigen::Index i = 0; i < before.class_logits.numel(); ++i)
    CHECK(before.class_logits.data()[i] == after.class_logits.data()[i]);
}

TEST_CASE("combined head losses pass the finite-difference oracle") {
  nn::ModelConfig cfg = tiny_config(4);
  nn::NetworkParams params = nn::build_backbone(cfg, 3);
  Tensor x = random_tensor({2, 1, 8, 8}, 55, 0.0, 1.0);
  std::vector<int> labels = {1, 3};
  std::vector<int> rot_labels = {0, 2};
  Tensor teacher = o::softmax(random_tensor({2, 4}, 57, -1.0, 1.0));

  nn::ForwardOptions opts;
  opts.train = true;
  opts.flat_dropout_key = derive_key(9, "fd-dropout");
  opts.update_running_stats = false;

  auto loss_with = [&](nn::NetworkParams& p) {
    nn::ForwardResult r = nn::forward(p, x, opts);
    Tensor ls = o::cross_entropy(r.class_logits, labels);
    Tensor lc = o::mse_consistency(r.class_logits, teacher);
    Tensor lr = o::cross_entropy(r.rot_logits, rot_labels);
    return o::add(o::add(ls, o::scale(lc, 0.5)), o::scale(lr, 0.3));
  };

  auto check_param = [&](Tensor& slot) {
    Tensor original = slot;
    auto f = [&](const Tensor& p) {
      slot = p;
      Tensor l = loss_with(params);
      return l;
    };
    double err = gradient_check(f, original, 1e-5);
    slot = original;
    return err;
  };

  CHECK(check_param(params.backbone[0].weight) < 1e-4);
  CHECK(check_param(params.backbone[4].gamma) < 1e-4);
  CHECK(check_param(params.backbone[8].weight) < 1e-4);
  CHECK(check_param(params.class_w) < 1e-4);
  CHECK(check_param(params.rot_b) < 1e-4);
}

TEST_CASE("staged forward replays match the full forward") {
  nn::ModelConfig cfg = tiny_config(5);
  nn::NetworkParams p = nn::build_backbone(cfg, 21);
  Tensor x = random_tensor({2, 1, 8, 8}, 59, 0.0, 1.0);
  nn::ForwardOptions opts;
  opts.train = true;
  opts.flat_dropout_key = 77;
  opts.update_running_stats = false;

  nn::ForwardResult full = nn::forward(p, x, opts);
  std::vector<Tensor> acts = nn::forward_activations(p, x, opts);
  REQUIRE(static_cast<int>(acts.size()) == nn::stage_count());
  for (int s = 0; s < nn::stage_count(); ++s) {
    nn::ForwardResult part = nn::forward_from(p, s, acts[static_cast<size_t>(s)], opts);
    for (Eigen::Index i = 0; i < full.class_logits.numel(); ++i)
      CHECK(part.class_logits.data()[i] == full.class_logits.data()[i]);
  }
}

TEST_CASE("clone detaches storage") {
  nn::NetworkParams p = nn::build_backbone(tiny_config(4), 31);
  nn::NetworkParams q = p.clone();
  q.backbone[0].weight.data()[0] += 1.0;
  CHECK(p.backbone[0].weight.data()[0] != q.backbone[0].weight.data()[0]);
  q.backbone[0].running_mean[0] = 9.0;
  CHECK(p.backbone[0].running_mean[0] == 0.0);
}
