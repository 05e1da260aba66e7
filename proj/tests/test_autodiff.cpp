#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rdcr/gradcheck.hpp"
#include "rdcr/ops.hpp"
#include "rdcr/tensor.hpp"

using namespace rdcr;
namespace o = rdcr::ops;

namespace {

Tensor random_tensor(std::vector<int> shape, uint64_t key, double lo = -1.0,
                     double hi = 1.0, bool requires_grad = false) {
  RngStream rng(key);
  return Tensor::uniform(std::move(shape), lo, hi, rng, requires_grad);
}

}  // namespace

TEST_CASE("conv2d forward hand cases") {
  Tensor x = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor w = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = o::conv2d(x, w, b, 1, 0);
  CHECK(y.shape() == std::vector<int>{1, 1, 1, 1});
  CHECK(y.data()[0] == doctest::Approx(4.0));

  // zero kernel: every output equals the bias
  Tensor wz = Tensor::zeros({3, 1, 2, 2});
  Tensor bz = Tensor::from_values({3}, {0.5, -1.0, 2.0});
  Tensor x2 = random_tensor({2, 1, 4, 4}, 7);
  Tensor y2 = o::conv2d(x2, wz, bz, 1, 0);
  for (int n = 0; n < 2; ++n)
    for (int oc = 0; oc < 3; ++oc)
      for (int i = 0; i < 9; ++i)
        CHECK(y2.data()[(n * 3 + oc) * 9 + i] == bz.data()[oc]);
}

TEST_CASE("conv2d gradients vs finite differences") {
  Tensor x = random_tensor({1, 2, 4, 4}, 11);
  Tensor w = random_tensor({3, 2, 3, 3}, 13);
  Tensor b = random_tensor({3}, 17);

  for (int pad : {0, 1}) {
    auto wrt_input = [&](const Tensor& p) { return o::sum(o::conv2d(p, w, b, 1, pad)); };
    auto wrt_weight = [&](const Tensor& p) { return o::sum(o::conv2d(x, p, b, 1, pad)); };
    auto wrt_bias = [&](const Tensor& p) { return o::sum(o::conv2d(x, w, p, 1, pad)); };
    CHECK(gradient_check(wrt_input, x, 1e-5) < 1e-5);
    CHECK(gradient_check(wrt_weight, w, 1e-5) < 1e-5);
    CHECK(gradient_check(wrt_bias, b, 1e-5) < 1e-5);
  }

  // strided case
  auto strided = [&](const Tensor& p) { return o::sum(o::conv2d(p, w, b, 2, 1)); };
  CHECK(gradient_check(strided, x, 1e-5) < 1e-5);
}

TEST_CASE("linear forward hand cases") {
  Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  Tensor zb = Tensor::zeros({2});
  Tensor x = Tensor::from_values({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor y = o::linear(x, eye, zb);
  for (Eigen::Index i = 0; i < 6; ++i) CHECK(y.data()[i] == x.data()[i]);

  Tensor b = Tensor::from_values({2}, {3, 3});
  Tensor y2 = o::linear(Tensor::from_values({1, 2}, {1, 2}), eye, b);
  CHECK(y2.data()[0] == doctest::Approx(4.0));
  CHECK(y2.data()[1] == doctest::Approx(5.0));
}

TEST_CASE("linear gradients vs finite differences") {
  Tensor x = random_tensor({4, 5}, 3);
  Tensor w = random_tensor({5, 3}, 5);
  Tensor b = random_tensor({3}, 9);
  // weight the outputs so the gradient is not uniform
  Tensor mask = random_tensor({4, 3}, 21);
  auto wrt_x = [&](const Tensor& p) { return o::sum(o::mul(o::linear(p, w, b), mask)); };
  auto wrt_w = [&](const Tensor& p) { return o::sum(o::mul(o::linear(x, p, b), mask)); };
  auto wrt_b = [&](const Tensor& p) { return o::sum(o::mul(o::linear(x, w, p), mask)); };
  CHECK(gradient_check(wrt_x, x, 1e-5) < 1e-6);
  CHECK(gradient_check(wrt_w, w, 1e-5) < 1e-6);
  CHECK(gradient_check(wrt_b, b, 1e-5) < 1e-6);
}

TEST_CASE("relu, softmax, max_pool2d hand cases") {
  Tensor r = o::relu(Tensor::from_values({2}, {-1, 2}));
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 2.0);

  Tensor s = o::softmax(Tensor::from_values({1, 2}, {0, 0}));
  CHECK(s.data()[0] == doctest::Approx(0.5));
  CHECK(s.data()[1] == doctest::Approx(0.5));

  Tensor m = o::max_pool2d(Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2);
  CHECK(m.numel() == 1);
  CHECK(m.data()[0] == 4.0);
}

TEST_CASE("softmax rows are distributions") {
  Tensor x = random_tensor({7, 5}, 23, -8.0, 8.0);
  Tensor p = o::softmax(x);
  for (int i = 0; i < 7; ++i) {
    double row = 0.0;
    for (int k = 0; k < 5; ++k) {
      CHECK(p.data()[i * 5 + k] >= 0.0);
      row += p.data()[i * 5 + k];
    }
    CHECK(std::abs(row - 1.0) < 1e-12);
  }
}

TEST_CASE("pooling and activation gradients") {
  // keep relu inputs away from the kink and pool entries distinct
  Tensor x = random_tensor({2, 3, 4, 4}, 31, 0.1, 1.0);
  for (Eigen::Index i = 0; i < x.numel(); ++i)
    x.data()[i] += 0.01 * static_cast<double>(i);
  Tensor mask = random_tensor({2, 3, 2, 2}, 33);
  auto pool = [&](const Tensor& p) {
    return o::sum(o::mul(o::max_pool2d(p, 2, 2), mask));
  };
  CHECK(gradient_check(pool, x, 1e-6) < 1e-6);

  Tensor xr = random_tensor({3, 6}, 35, -2.0, 2.0);
  for (Eigen::Index i = 0; i < xr.numel(); ++i)
    if (std::abs(xr.data()[i]) < 0.05) xr.data()[i] = 0.1;
  Tensor mr = random_tensor({3, 6}, 37);
  auto act = [&](const Tensor& p) { return o::sum(o::mul(o::relu(p), mr)); };
  CHECK(gradient_check(act, xr, 1e-6) < 1e-6);

  Tensor xg = random_tensor({2, 3, 3, 3}, 39);
  Tensor mg = random_tensor({2, 3}, 41);
  auto gap = [&](const Tensor& p) {
    return o::sum(o::mul(o::global_average_pool(p), mg));
  };
  CHECK(gradient_check(gap, xg, 1e-6) < 1e-6);

  Tensor xs = random_tensor({4, 3}, 43, -3.0, 3.0);
  Tensor ms = random_tensor({4, 3}, 45);
  auto soft = [&](const Tensor& p) { return o::sum(o::mul(o::softmax(p), ms)); };
  CHECK(gradient_check(soft, xs, 1e-5) < 1e-5);
  auto lsoft = [&](const Tensor& p) { return o::sum(o::mul(o::log_softmax(p), ms)); };
  CHECK(gradient_check(lsoft, xs, 1e-5) < 1e-5);
}

TEST_CASE("cross_entropy values") {
  Tensor uniform = Tensor::zeros({2, 4});
  Tensor l1 = o::cross_entropy(uniform, {0, 3});
  CHECK(l1.value() == doctest::Approx(std::log(4.0)).epsilon(1e-10));

  // confident logits: margin drives the loss toward zero
  Tensor conf = Tensor::zeros({1, 3});
  conf.data()[1] = 100.0;
  CHECK(o::cross_entropy(conf, {1}).value() < 1e-12);

  // brute-force recomputation on random logits
  Tensor x = random_tensor({5, 3}, 47, -2.0, 2.0, true);
  std::vector<int> labels = {0, 2, 1, 1, 2};
  Tape tape;
  TapeScope scope(tape);
  Tensor loss = o::cross_entropy(x, labels);
  backward(loss);
  double expect = 0.0;
  Eigen::ArrayXd gexpect = Eigen::ArrayXd::Zero(15);
  for (int n = 0; n < 5; ++n) {
    double mx = -1e30, z = 0.0;
    for (int k = 0; k < 3; ++k) mx = std::max(mx, x.data()[n * 3 + k]);
    for (int k = 0; k < 3; ++k) z += std::exp(x.data()[n * 3 + k] - mx);
    expect -= x.data()[n * 3 + labels[n]] - mx - std::log(z);
    for (int k = 0; k < 3; ++k) {
      double p = std::exp(x.data()[n * 3 + k] - mx) / z;
      gexpect[n * 3 + k] = (p - (k == labels[n] ? 1.0 : 0.0)) / 5.0;
    }
  }
  expect /= 5.0;
  CHECK(loss.value() == doctest::Approx(expect).epsilon(1e-12));
  for (Eigen::Index i = 0; i < 15; ++i)
    CHECK(x.grad()[i] == doctest::Approx(gexpect[i]).epsilon(1e-10));
}

TEST_CASE("cross_entropy rejects bad labels") {
  Tensor x = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(o::cross_entropy(x, {0, 3}), ShapeError);
  CHECK_THROWS_AS(o::cross_entropy(x, {-1, 0}), ShapeError);
}

TEST_CASE("mse_consistency values and gradient") {
  // student softmax equal to teacher: zero loss
  Tensor s = Tensor::from_values({1, 2}, {1.0, 1.0});
  Tensor t = Tensor::from_values({1, 2}, {0.5, 0.5});
  CHECK(o::mse_consistency(s, t).value() == doctest::Approx(0.0));

  // uniform student vs one-hot teacher
  Tensor t2 = Tensor::from_values({1, 2}, {1.0, 0.0});
  CHECK(o::mse_consistency(s, t2).value() == doctest::Approx(0.25));

  Tensor x = random_tensor({4, 5}, 51, -2.0, 2.0);
  Tensor q = o::softmax(random_tensor({4, 5}, 53, -2.0, 2.0));
  auto f = [&](const Tensor& p) { return o::mse_consistency(p, q); };
  CHECK(gradient_check(f, x, 1e-5) < 1e-5);
}

TEST_CASE("kl_consistency values and gradient") {
  Tensor s = Tensor::from_values({1, 2}, {0.3, 0.3});
  Tensor t = Tensor::from_values({1, 2}, {0.5, 0.5});
  CHECK(o::kl_consistency(s, t).value() == doctest::Approx(0.0).epsilon(1e-12));

  Tensor t2 = Tensor::from_values({1, 2}, {1.0, 0.0});
  CHECK(o::kl_consistency(s, t2).value() == doctest::Approx(std::log(2.0)));

  // nonnegativity over random draws
  for (uint64_t trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({3, 4}, 100 + trial, -3.0, 3.0);
    Tensor q = o::softmax(random_tensor({3, 4}, 200 + trial, -3.0, 3.0));
    CHECK(o::kl_consistency(x, q).value() >= -1e-12);
  }

  Tensor x = random_tensor({4, 5}, 55, -2.0, 2.0);
  Tensor q = o::softmax(random_tensor({4, 5}, 57, -2.0, 2.0));
  auto f = [&](const Tensor& p) { return o::kl_consistency(p, q); };
  CHECK(gradient_check(f, x, 1e-5) < 1e-5);

  Tensor bad = Tensor::from_values({1, 2}, {-0.1, 1.1});
  CHECK_THROWS_AS(o::kl_consistency(s, bad), ShapeError);
}

TEST_CASE("backward basics") {
  Tensor w = Tensor::from_values({3}, {1, -2, 5}, true);
  {
    Tape tape;
    TapeScope scope(tape);
    backward(o::sum(w));
  }
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(w.grad()[i] == 1.0);

  Tensor w2 = Tensor::from_values({2}, {1, 2}, true);
  {
    Tape tape;
    TapeScope scope(tape);
    backward(o::scale(o::sum(o::mul(w2, w2)), 0.5));
  }
  CHECK(w2.grad()[0] == doctest::Approx(1.0));
  CHECK(w2.grad()[1] == doctest::Approx(2.0));

  // non-scalar loss rejected
  Tape tape;
  TapeScope scope(tape);
  Tensor y = o::relu(w);
  CHECK_THROWS_AS(backward(y), ShapeError);
}

TEST_CASE("backward accumulates until reset") {
  Tensor w = Tensor::from_values({2}, {3, 4}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor loss = o::sum(w);
  backward(loss);
  backward(loss);
  CHECK(w.grad()[0] == 2.0);
  w.zero_grad();
  backward(loss);
  CHECK(w.grad()[0] == 1.0);
}

TEST_CASE("tape linearity: joint backward equals separate backwards") {
  Tensor w = random_tensor({6}, 61, -1.0, 1.0, true);
  Tensor a = random_tensor({6}, 63);
  Tensor b = random_tensor({6}, 65);

  Eigen::ArrayXd joint, separate;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor l1 = o::sum(o::mul(w, a));
    Tensor l2 = o::sum(o::mul(o::mul(w, w), b));
    backward(o::add(l1, l2));
    joint = w.grad();
  }
  w.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    backward(o::sum(o::mul(w, a)));
    backward(o::sum(o::mul(o::mul(w, w), b)));
    separate = w.grad();
  }
  for (Eigen::Index i = 0; i < 6; ++i)
    CHECK(joint[i] == doctest::Approx(separate[i]).epsilon(1e-14));
}

TEST_CASE("tape reproducibility is bit-exact") {
  auto run = [](uint64_t seed) {
    Tensor x = random_tensor({2, 3, 6, 6}, seed);
    Tensor w = random_tensor({4, 3, 3, 3}, seed + 1, -0.5, 0.5, true);
    Tensor b = random_tensor({4}, seed + 2, -0.1, 0.1, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor y = o::conv2d(x, w, b, 1, 1);
    Tensor loss = o::cross_entropy(
        o::reshape(o::global_average_pool(o::relu(y)), {2, 4}), {1, 3});
    backward(loss);
    return std::make_pair(loss.value(), Eigen::ArrayXd(w.grad()));
  };
  auto [v1, g1] = run(99);
  auto [v2, g2] = run(99);
  CHECK(v1 == v2);
  for (Eigen::Index i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("gradient_check on closed forms") {
  // quadratic: central differences are exact up to roundoff
  Tensor x = Tensor::from_values({1}, {3.0});
  auto square = [](const Tensor& p) { return o::sum(o::mul(p, p)); };
  CHECK(gradient_check(square, x, 1e-5) < 1e-8);

  // constant function: analytic grad 0, error 0
  auto constant = [](const Tensor& p) { return o::scale(o::sum(o::mul(p, Tensor::zeros(p.shape()))), 1.0); };
  CHECK(gradient_check(constant, x, 1e-5) == 0.0);
}

TEST_CASE("gradient_check on a two-layer net") {
  Tensor w1 = random_tensor({6, 8}, 71, -0.5, 0.5);
  Tensor b1 = random_tensor({8}, 73, -0.1, 0.1);
  Tensor w2 = random_tensor({8, 3}, 75, -0.5, 0.5);
  Tensor b2 = random_tensor({3}, 77, -0.1, 0.1);
  std::vector<int> labels = {0, 2, 1, 1};
  Tensor x = random_tensor({4, 6}, 79);
  auto net = [&](const Tensor& p) {
    Tensor h = o::relu(o::linear(x, p, b1));
    return o::cross_entropy(o::linear(h, w2, b2), labels);
  };
  CHECK(gradient_check(net, w1, 1e-5) < 1e-4);
}

TEST_CASE("dropout scales and masks deterministically") {
  Tensor x = Tensor::full({1000}, 1.0);
  uint64_t key = derive_key(0, "dropout", 3, 14, 0);
  Tensor y = o::dropout(x, 0.5, key);
  Tensor y2 = o::dropout(x, 0.5, key);
  int kept = 0;
  for (Eigen::Index i = 0; i < 1000; ++i) {
    CHECK(y.data()[i] == y2.data()[i]);  // same key, same mask
    CHECK((y.data()[i] == 0.0 || y.data()[i] == 2.0));
    if (y.data()[i] != 0.0) ++kept;
  }
  CHECK(kept > 400);
  CHECK(kept < 600);

  // p = 0 is the identity
  Tensor z = o::dropout(x, 0.0, key);
  CHECK(z.data()[0] == 1.0);

  // backward passes the same mask
  Tensor xg = random_tensor({50}, 81, 0.5, 1.5, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor d = o::dropout(xg, 0.3, key);
  backward(o::sum(d));
  for (Eigen::Index i = 0; i < 50; ++i) {
    double m = d.data()[i] / xg.data()[i];
    CHECK(xg.grad()[i] == doctest::Approx(m));
  }
}

TEST_CASE("select_rows gathers and scatters") {
  Tensor x = Tensor::from_values({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = o::select_rows(x, {2, 0, 2});
  CHECK(y.data()[0] == 5.0);
  CHECK(y.data()[1] == 6.0);
  CHECK(y.data()[2] == 1.0);
  backward(o::sum(y));
  CHECK(x.grad()[0] == 1.0);  // row 0 selected once
  CHECK(x.grad()[2] == 0.0);  // row 1 never selected
  CHECK(x.grad()[4] == 2.0);  // row 2 selected twice
}

TEST_CASE("shape errors are loud") {
  CHECK_THROWS_AS(o::add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  CHECK_THROWS_AS(o::reshape(Tensor::zeros({4}), {5}), ShapeError);
  CHECK_THROWS_AS(o::linear(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}), Tensor::zeros({2})),
                  ShapeError);
  CHECK_THROWS_AS(o::conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}),
                            Tensor::zeros({1}), 1, 0),
                  ShapeError);
  Tensor bad = Tensor::full({1, 1, 2, 2}, std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(o::conv2d(bad, Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1}), 1, 0),
                  DivergenceError);
}
