#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "ssrl/rng.hpp"
#include "ssrl/tensor.hpp"

using namespace ssrl;

TEST_CASE("tensor basics and invariants") {
  Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.shape() == Shape{2, 3});
  CHECK_THROWS(Tensor::from_data({2, 2}, {1, 2, 3}));  // data length != product of shape
  CHECK_THROWS(t.item());
  CHECK(Tensor::scalar(4.5).item() == 4.5);
  CHECK_FALSE(t.has_grad());
  CHECK_THROWS(t.grad());
}

TEST_CASE("l2_normalize examples") {
  Tensor a = Tensor::from_data({2}, {3, 4});
  Tensor n = l2_normalize(a, 0);
  CHECK(n.data()[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(n.data()[1] == doctest::Approx(0.8).epsilon(1e-12));

  Tensor unit = l2_normalize(Tensor::from_data({3}, {1, 0, 0}), 0);
  CHECK(unit.data()[0] == 1.0);
  CHECK(unit.data()[1] == 0.0);

  // Degenerate input takes the eps-guarded path: scaled by 1/eps, no NaN.
  Tensor zero = l2_normalize(Tensor::from_data({2}, {0, 0}), 0);
  CHECK(zero.data()[0] == 0.0);
  CHECK(zero.data()[1] == 0.0);
  CHECK(all_finite(zero.data()));

  CHECK_THROWS(l2_normalize(Tensor::from_data({2}, {1.0, std::nan("")}), 0));
}

TEST_CASE("l2_normalize rows have unit norm") {
  RngStream rng(3);
  Tensor x = gradcheck::random_tensor({5, 7}, rng, false);
  Tensor n = l2_normalize(x, 1);
  for (int i = 0; i < 5; ++i) {
    real s = 0;
    for (int j = 0; j < 7; ++j) s += n.data()[i * 7 + j] * n.data()[i * 7 + j];
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("conv2d examples") {
  // 1x1 kernel of value 1 is the identity map.
  RngStream rng(4);
  Tensor x = gradcheck::random_tensor({1, 1, 3, 3}, rng, false);
  Tensor k1 = Tensor::from_data({1, 1, 1, 1}, {1.0});
  Tensor y = conv2d(x, k1, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);

  // 3x3 all-ones kernel on an all-ones 5x5 input, no padding -> 3x3 of 9s.
  Tensor ones = Tensor::full({1, 1, 5, 5}, 1.0);
  Tensor k3 = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor s = conv2d(ones, k3, 1, 0);
  CHECK(s.shape() == Shape{1, 1, 3, 3});
  for (real v : s.data()) CHECK(v == doctest::Approx(9.0));

  // Output spatial extent = floor((H + 2*pad - K)/stride) + 1.
  Tensor x2 = Tensor::full({1, 1, 7, 7}, 0.5);
  CHECK(conv2d(x2, k3, 2, 1).shape() == Shape{1, 1, 4, 4});

  // Kernel larger than padded input.
  CHECK_THROWS(conv2d(Tensor::full({1, 1, 2, 2}, 1.0), Tensor::full({1, 1, 9, 9}, 1.0), 1, 0));
  // Channel mismatch.
  CHECK_THROWS(conv2d(Tensor::full({1, 2, 5, 5}, 1.0), k3, 1, 0));
}

TEST_CASE("backward basics") {
  // loss = sum x^2 -> grad = 2x
  Tensor x = Tensor::from_data({3}, {1, -2, 3}, true);
  Tensor loss = sum_all(mul(x, x));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(-4.0));
  CHECK(x.grad()[2] == doctest::Approx(6.0));
  CHECK(graph_size() == 0);  // tape freed

  // backward on non-scalar
  Tensor y = Tensor::from_data({2}, {1, 2}, true);
  Tensor z = mul(y, y);
  CHECK_THROWS(backward(z));
}

TEST_CASE("second backward on the same graph errors") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor loss = sum_all(mul(x, x));
  backward(loss);
  CHECK_THROWS(backward(loss));
}

TEST_CASE("matmul gradient matches ones * B^T") {
  // loss = sum(A*B) => dA = ones * B^T
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor b = Tensor::from_data({3, 2}, {1, -1, 2, 0.5, -3, 2}, true);
  backward(sum_all(matmul(a, b)));
  // dA[i][k] = sum_j B[k][j]
  real row_sums[3] = {1 - 1, 2 + 0.5, -3 + 2};
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 3; ++k) CHECK(a.grad()[i * 3 + k] == doctest::Approx(row_sums[k]));
}

TEST_CASE("stop_grad contracts") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  Tensor d = stop_grad(x);
  // values bit-identical
  for (int i = 0; i < 3; ++i) CHECK(d.data()[i] == x.data()[i]);
  CHECK_FALSE(d.requires_grad());

  // loss = sum(stop_grad(x) * x) gives grad = x (one branch cut)
  backward(sum_all(mul(stop_grad(x), x)));
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(x.data()[i]));
  x.zero_grad();

  // loss = sum(stop_grad(x)^2) gives no grad on x
  Tensor sg = stop_grad(x);
  backward(sum_all(mul(sg, sg)));
  CHECK_FALSE(x.has_grad());
  CHECK_FALSE(sg.has_grad());

  // a leaf reached only through stop_grad gets no grad even when composed
  Tensor w = Tensor::from_data({2}, {2, 5}, true);
  Tensor h = relu(mul(stop_grad(w), stop_grad(w)));
  backward(sum_all(h));
  CHECK_FALSE(w.has_grad());
}

TEST_CASE("batch_norm examples") {
  // constant batch, gamma=1, beta=0 -> all zeros (variance eps-guarded)
  Tensor x = Tensor::full({4, 3}, 2.5);
  Tensor gamma = Tensor::full({3}, 1.0);
  Tensor beta = Tensor::zeros({3});
  Tensor y = batch_norm(x, gamma, beta, nullptr, BnMode::kTrain);
  for (real v : y.data()) CHECK(v == doctest::Approx(0.0).epsilon(1e-9));

  // batch {-1, +1} per feature -> {-1, +1} up to eps
  Tensor pm = Tensor::from_data({2, 2}, {-1, -1, 1, 1});
  CHECK_THROWS(batch_norm(Tensor::from_data({1, 2}, {1, 2}), gamma, beta, nullptr,
                          BnMode::kTrain));  // batch of one
  Tensor pm_y = batch_norm(pm, Tensor::full({2}, 1.0), Tensor::zeros({2}), nullptr, BnMode::kTrain);
  CHECK(pm_y.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(pm_y.data()[2] == doctest::Approx(1.0).epsilon(1e-4));

  // running stats: train updates them, eval consumes them
  RunningStats stats;
  Tensor xr = Tensor::from_data({2, 1}, {0.0, 2.0});
  batch_norm(xr, Tensor::full({1}, 1.0), Tensor::zeros({1}), &stats, BnMode::kTrain);
  CHECK(stats.mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 1.0));
  CHECK(stats.var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0));
  Tensor ye = batch_norm(xr, Tensor::full({1}, 1.0), Tensor::zeros({1}), &stats, BnMode::kEval);
  CHECK(ye.data()[0] == doctest::Approx((0.0 - 0.1) / std::sqrt(1.0 + kBnEps)).epsilon(1e-9));
}

TEST_CASE("finite-difference battery over every differentiable op") {
  std::vector<std::string> failures;
  real worst = gradcheck::op_battery(50, &failures);
  for (const auto& f : failures) MESSAGE(f);
  CHECK(failures.empty());
  CHECK(worst < 1e-4);
}

TEST_CASE("backward is linear in the loss") {
  RngStream rng(11);
  Tensor x = gradcheck::random_tensor({4, 3}, rng);
  auto l1 = [&] { return sum_all(mul(x, x)); };
  auto l2 = [&] { return mean_all(mul(relu(x), add_scalar(x, 0.7))); };
  real a = 0.3, b = -1.7;

  backward(l1());
  std::vector<real> g1 = x.grad();
  x.zero_grad();
  backward(l2());
  std::vector<real> g2 = x.grad();
  x.zero_grad();
  backward(add(scale(l1(), a), scale(l2(), b)));
  for (size_t i = 0; i < g1.size(); ++i)
    CHECK(x.grad()[i] == doctest::Approx(a * g1[i] + b * g2[i]).epsilon(1e-10));
}

TEST_CASE("no gradient crosses stop_grad under composition") {
  RngStream rng(12);
  Tensor x = gradcheck::random_tensor({3, 3}, rng);
  Tensor w = gradcheck::random_tensor({3, 3}, rng);
  // x reaches the loss both directly and via stop_grad; only the direct path counts
  backward(sum_all(mul(matmul(x, w), matmul(stop_grad(x), w))));
  CHECK(x.has_grad());
  CHECK(w.has_grad());
  x.zero_grad();
  w.zero_grad();
  Tensor blocked = matmul(stop_grad(x), w);
  backward(sum_all(mul(blocked, blocked)));
  CHECK_FALSE(x.has_grad());
  CHECK(w.has_grad());
}

TEST_CASE("forward and gradients are deterministic") {
  auto run = [] {
    RngStream rng(77);
    Tensor x = gradcheck::random_tensor({3, 4}, rng);
    Tensor k = gradcheck::random_tensor({2, 1, 3, 3}, rng);
    Tensor img = reshape(x, {1, 1, 3, 4});
    Tensor y = conv2d(img, k, 1, 1);
    Tensor loss = sum_all(mul(y, y));
    backward(loss);
    std::vector<real> out = {loss.item()};
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.insert(out.end(), k.grad().begin(), k.grad().end());
    return out;
  };
  auto r1 = run();
  auto r2 = run();
  REQUIRE(r1.size() == r2.size());
  for (size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);  // bit-identical
}

TEST_CASE("log_sum_exp_rows is max-subtraction stable") {
  Tensor x = Tensor::from_data({1, 3}, {1000.0, 999.0, -2000.0});
  Tensor lse = log_sum_exp_rows(x);
  CHECK(all_finite(lse.data()));
  CHECK(lse.data()[0] == doctest::Approx(1000.0 + std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("softmax_cross_entropy value") {
  Tensor logits = Tensor::from_data({2, 2}, {0.0, 0.0, 3.0, -1.0});
  Tensor loss = softmax_cross_entropy(logits, {0, 1});
  real l0 = std::log(2.0);
  real l1 = std::log(std::exp(3.0) + std::exp(-1.0)) + 1.0;
  CHECK(loss.item() == doctest::Approx((l0 + l1) / 2).epsilon(1e-12));
  CHECK_THROWS(softmax_cross_entropy(logits, {0, 5}));
}

TEST_CASE("max_pool2d routes gradient to the arg max") {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 5, 3, 2}, true);
  Tensor y = max_pool2d(x, 2, 2);
  CHECK(y.item() == 5.0);
  backward(sum_all(y));
  CHECK(x.grad() == std::vector<real>{0, 1, 0, 0});
}
