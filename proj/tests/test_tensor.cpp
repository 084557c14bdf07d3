#include <doctest.h>

#include <cmath>
#include <cstring>

#include "armp/optim.hpp"
#include "armp/rng.hpp"
#include "armp/tensor.hpp"
#include "gradnets.hpp"
#include "oracles.hpp"

using armp::Tensor;

namespace {

std::vector<double> to_double(std::span<const float> s) { return {s.begin(), s.end()}; }

void check_close(std::span<const float> got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (size_t i = 0; i < want.size(); ++i) {
    CHECK(std::abs(static_cast<double>(got[i]) - want[i]) <= tol);
  }
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul identity") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor c = armp::matmul(a, eye);
  check_close(c.data(), {1, 2, 3, 4}, 0.0);
}

TEST_CASE("matmul annihilating product") {
  Tensor a = Tensor::from_data({2, 2}, {1, 0, 0, 0});
  Tensor b = Tensor::from_data({2, 2}, {0, 0, 0, 1});
  Tensor c = armp::matmul(a, b);
  check_close(c.data(), {0, 0, 0, 0}, 0.0);
}

TEST_CASE("matmul matches triple-loop oracle on 3x4 * 4x2") {
  armp::Rng rng(7);
  Tensor a = Tensor::randn({3, 4}, rng);
  Tensor b = Tensor::randn({4, 2}, rng);
  Tensor c = armp::matmul(a, b);
  auto want = oracle::matmul(to_double(a.data()), 3, 4, to_double(b.data()), 2);
  check_close(c.data(), want, 1e-6);
}

TEST_CASE("matmul shape mismatch throws") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_AS((void)armp::matmul(a, b), armp::ShapeError);
}

TEST_CASE("matmul transpose flags agree with oracle") {
  armp::Rng rng(11);
  Tensor a = Tensor::randn({4, 3}, rng);
  Tensor b = Tensor::randn({5, 4}, rng);
  // a^T [3,4] * b^T [4,5]
  Tensor c = armp::matmul(a, b, true, true);
  std::vector<double> at(12), bt(20);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) at[static_cast<size_t>(j) * 4 + i] = a.data()[i * 3 + j];
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) bt[static_cast<size_t>(j) * 5 + i] = b.data()[i * 4 + j];
  check_close(c.data(), oracle::matmul(at, 3, 4, bt, 5), 1e-5);
}

TEST_CASE("matmul and conv2d agree with nested-loop oracles on 100 random shapes") {
  armp::Rng rng(1234);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 1 + static_cast<int>(rng.below(6));
    const int k = 1 + static_cast<int>(rng.below(6));
    const int n = 1 + static_cast<int>(rng.below(6));
    Tensor a = Tensor::randn({m, k}, rng);
    Tensor b = Tensor::randn({k, n}, rng);
    auto want = oracle::matmul(to_double(a.data()), m, k, to_double(b.data()), n);
    check_close(armp::matmul(a, b).data(), want, 1e-5);

    const int c = 1 + static_cast<int>(rng.below(3));
    const int f = 1 + static_cast<int>(rng.below(3));
    const int ks = 1 + 2 * static_cast<int>(rng.below(2));  // 1 or 3
    const int pad = static_cast<int>(rng.below(2));
    int h = ks + static_cast<int>(rng.below(6));
    int w = ks + static_cast<int>(rng.below(6));
    int stride = 1 + static_cast<int>(rng.below(2));
    Tensor img = Tensor::randn({c, h, w}, rng);
    Tensor ker = Tensor::randn({f, c, ks, ks}, rng);
    Tensor bias = Tensor::randn({f}, rng);
    int oh = 0, ow = 0;
    auto cwant = oracle::conv2d(to_double(img.data()), c, h, w, to_double(ker.data()),
                                to_double(bias.data()), f, ks, stride, pad, &oh, &ow);
    Tensor got = armp::conv2d(img, ker, bias, stride, pad);
    REQUIRE(got.shape() == armp::Shape{f, oh, ow});
    check_close(got.data(), cwant, 1e-5);
  }
}

TEST_CASE("conv2d identity kernel") {
  Tensor x = Tensor::from_data({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor k = Tensor::from_data({1, 1, 1, 1}, {1});
  Tensor y = armp::conv2d(x, k, Tensor(), 1, 0);
  check_close(y.data(), {1, 2, 3, 4, 5, 6, 7, 8, 9}, 0.0);
}

TEST_CASE("conv2d zero input gives zero output") {
  armp::Rng rng(3);
  Tensor x = Tensor::zeros({2, 6, 6});
  Tensor k = Tensor::randn({3, 2, 3, 3}, rng);
  Tensor y = armp::conv2d(x, k, Tensor(), 1, 1);
  for (float v : y.data()) CHECK(v == 0.0f);
}

TEST_CASE("conv2d matches direct six-loop oracle") {
  armp::Rng rng(21);
  Tensor x = Tensor::randn({2, 8, 8}, rng);
  Tensor k = Tensor::randn({3, 2, 3, 3}, rng);
  int oh = 0, ow = 0;
  auto want = oracle::conv2d(to_double(x.data()), 2, 8, 8, to_double(k.data()), {}, 3, 3, 2, 1,
                             &oh, &ow);
  Tensor y = armp::conv2d(x, k, Tensor(), 2, 1);
  REQUIRE(y.shape() == armp::Shape{3, oh, ow});
  check_close(y.data(), want, 1e-5);
}

TEST_CASE("conv2d rejects kernels with no valid output position") {
  Tensor x = Tensor::zeros({1, 2, 2});
  Tensor k = Tensor::zeros({1, 1, 5, 5});
  CHECK_THROWS_AS((void)armp::conv2d(x, k, Tensor(), 1, 0), armp::ShapeError);
}

TEST_CASE("conv2d rejects even kernels") {
  Tensor x = Tensor::zeros({1, 6, 6});
  Tensor k = Tensor::zeros({1, 1, 2, 2});
  CHECK_THROWS_AS((void)armp::conv2d(x, k, Tensor(), 1, 0), armp::ShapeError);
}

TEST_CASE("conv_transpose2d matches direct oracle") {
  armp::Rng rng(33);
  Tensor x = Tensor::randn({3, 4, 4}, rng);
  Tensor k = Tensor::randn({3, 2, 4, 4}, rng);
  Tensor b = Tensor::randn({2}, rng);
  int oh = 0, ow = 0;
  auto want = oracle::conv_transpose2d(to_double(x.data()), 3, 4, 4, to_double(k.data()),
                                       to_double(b.data()), 2, 4, 2, 1, &oh, &ow);
  Tensor y = armp::conv_transpose2d(x, k, b, 2, 1);
  REQUIRE(y.shape() == armp::Shape{2, oh, ow});
  check_close(y.data(), want, 1e-5);
}

TEST_CASE("softmax cross entropy saturated correct class has near-zero loss") {
  Tensor logits = Tensor::from_data({1, 2}, {1000.0f, 0.0f});
  Tensor loss = armp::softmax_cross_entropy(logits, {0});
  CHECK(loss.item() >= 0.0f);
  CHECK(loss.item() < 1e-6f);
  CHECK(loss.all_finite());
}

TEST_CASE("softmax cross entropy on uniform logits equals ln V") {
  Tensor logits = Tensor::zeros({3, 256});
  Tensor loss = armp::softmax_cross_entropy(logits, {0, 17, 255});
  CHECK(std::abs(loss.item() - std::log(256.0f)) < 1e-5f);
}

TEST_CASE("softmax cross entropy matches extended-precision oracle") {
  armp::Rng rng(5);
  Tensor logits = Tensor::randn({4, 7}, rng, 2.0f);
  std::vector<int> targets = {1, 0, 6, 3};
  const double want = oracle::softmax_cross_entropy(to_double(logits.data()), 4, 7, targets);
  Tensor loss = armp::softmax_cross_entropy(logits, targets);
  CHECK(std::abs(static_cast<double>(loss.item()) - want) <= 1e-6);
}

TEST_CASE("softmax cross entropy rejects out-of-range targets") {
  Tensor logits = Tensor::zeros({2, 4});
  CHECK_THROWS_AS((void)armp::softmax_cross_entropy(logits, {0, 4}), armp::ValueError);
  CHECK_THROWS_AS((void)armp::softmax_cross_entropy(logits, {-1, 0}), armp::ValueError);
}

TEST_CASE("softmax cross entropy rejects all-masked input") {
  Tensor logits = Tensor::zeros({2, 4});
  CHECK_THROWS_AS((void)armp::softmax_cross_entropy(logits, {0, 1}, {0, 0}), armp::ValueError);
}

TEST_CASE("backward of sum is ones") {
  armp::Rng rng(9);
  Tensor x = Tensor::randn({3, 4}, rng, 1.0f, true);
  armp::backward(armp::sum(x));
  for (float g : x.grad()) CHECK(g == 1.0f);
}

TEST_CASE("backward of half sum of squares is x") {
  armp::Rng rng(10);
  Tensor x = Tensor::randn({5}, rng, 1.0f, true);
  armp::backward(armp::scale(armp::sum(armp::mul(x, x)), 0.5f));
  for (size_t i = 0; i < 5; ++i) CHECK(std::abs(x.grad()[i] - x.data()[i]) < 1e-6f);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::zeros({2, 2}, true);
  Tensor y = armp::add(x, x);
  CHECK_THROWS_AS(armp::backward(y), armp::ShapeError);
}

TEST_CASE("backward twice without re-forward throws") {
  Tensor x = Tensor::full({3}, 2.0f, true);
  Tensor loss = armp::sum(x);
  armp::backward(loss);
  CHECK_THROWS_AS(armp::backward(loss), armp::ValueError);
}

TEST_CASE("gradients accumulate across backward passes until zero_grad") {
  Tensor x = Tensor::full({2}, 1.0f, true);
  armp::backward(armp::sum(x));
  armp::backward(armp::sum(x));
  for (float g : x.grad()) CHECK(g == 2.0f);
  x.zero_grad();
  for (float g : x.grad()) CHECK(g == 0.0f);
}

TEST_CASE("MLP gradients match central finite differences") {
  auto net = gradnets::make_mlp(42);
  auto res = gradnets::run_gradcheck(net);
  CHECK(res.checked > 50);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("conv stack gradients match central finite differences") {
  auto net = gradnets::make_conv_stack(43);
  auto res = gradnets::run_gradcheck(net);
  CHECK(res.checked > 200);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("rms_norm and causal_softmax and embedding gradcheck") {
  using armp::Tensor;
  armp::Rng rng(77);
  const int n = 4, d = 6, v = 9;
  std::vector<int> tokens = {1, 4, 7, 2};
  std::vector<int> targets = {4, 7, 2, 0};
  Tensor table = Tensor::randn({v, d}, rng, 0.6f, true);
  Tensor gain = Tensor::randn({d}, rng, 0.2f, true);
  Tensor wq = Tensor::randn({d, d}, rng, 0.5f, true);
  Tensor head = Tensor::randn({d, v}, rng, 0.5f, true);
  gradnets::Net net;
  net.params = {table, gain, wq, head};
  net.forward_f32 = [=]() {
    Tensor e = armp::embedding(table, tokens);
    Tensor xn = armp::rms_norm(e, gain);
    Tensor scores = armp::matmul(xn, wq);
    Tensor probs = armp::causal_softmax(armp::matmul(scores, xn, false, true));
    Tensor ctx = armp::matmul(probs, xn);
    return armp::softmax_cross_entropy(armp::matmul(ctx, head), targets);
  };
  net.forward_f64 = [=](const std::vector<std::vector<double>>& p) {
    std::vector<double> e(static_cast<size_t>(n) * d);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) e[static_cast<size_t>(i) * d + j] = p[0][static_cast<size_t>(tokens[static_cast<size_t>(i)]) * d + j];
    std::vector<double> xn(e.size());
    for (int i = 0; i < n; ++i) {
      double ss = 0.0;
      for (int j = 0; j < d; ++j) ss += e[static_cast<size_t>(i) * d + j] * e[static_cast<size_t>(i) * d + j];
      const double inv = 1.0 / std::sqrt(ss / d + 1e-5);
      for (int j = 0; j < d; ++j)
        xn[static_cast<size_t>(i) * d + j] = e[static_cast<size_t>(i) * d + j] * p[1][static_cast<size_t>(j)] * inv;
    }
    auto scores = oracle::matmul(xn, n, d, p[2], d);
    std::vector<double> xnt(static_cast<size_t>(d) * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) xnt[static_cast<size_t>(j) * n + i] = xn[static_cast<size_t>(i) * d + j];
    auto raw = oracle::matmul(scores, n, d, xnt, n);
    auto probs = oracle::causal_softmax(raw, n);
    auto ctx = oracle::matmul(probs, n, n, xn, d);
    auto logits = oracle::matmul(ctx, n, d, p[3], v);
    return oracle::softmax_cross_entropy(logits, n, v, targets);
  };
  auto res = gradnets::run_gradcheck(net);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("bce_with_logits matches stable formula and gradient") {
  armp::Rng rng(15);
  Tensor logits = Tensor::randn({6}, rng, 3.0f, true);
  Tensor targets = Tensor::from_data({6}, {1, 0, 1, 1, 0, 0});
  Tensor loss = armp::bce_with_logits(logits, targets);
  double want = 0.0;
  for (int i = 0; i < 6; ++i) {
    const double l = logits.data()[static_cast<size_t>(i)], t = targets.data()[static_cast<size_t>(i)];
    want += std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::abs(l)));
  }
  want /= 6.0;
  CHECK(std::abs(loss.item() - want) < 1e-6);
  armp::backward(loss);
  for (int i = 0; i < 6; ++i) {
    const double l = logits.data()[static_cast<size_t>(i)], t = targets.data()[static_cast<size_t>(i)];
    CHECK(std::abs(logits.grad()[static_cast<size_t>(i)] - (oracle::sigmoid(l) - t) / 6.0) < 1e-6);
  }
}

TEST_CASE("adam leaves params unchanged on zero gradient") {
  Tensor p = Tensor::full({4}, 1.5f, true);
  armp::Adam opt({p});
  armp::backward(armp::scale(armp::sum(p), 0.0f));
  opt.step();
  for (float v : p.data()) CHECK(v == 1.5f);
}

TEST_CASE("adam first step with unit gradient moves by about lr") {
  // Hand evaluation at t=1: m_hat = 1, v_hat = 1, delta = lr / (1 + eps).
  Tensor leaf = Tensor::from_data({1}, {0.0f}, true);
  armp::AdamConfig cfg;
  cfg.lr = 0.1f;
  armp::Adam opt({leaf}, cfg);
  armp::backward(armp::sum(leaf));  // gradient = 1
  opt.step();
  CHECK(opt.step_count() == 1);
  CHECK(std::abs(leaf.data()[0] - (-0.1f)) < 1e-6f);
}

TEST_CASE("adam second identical step is not larger than the first") {
  Tensor leaf = Tensor::from_data({1}, {0.0f}, true);
  armp::AdamConfig cfg;
  cfg.lr = 0.1f;
  armp::Adam opt({leaf}, cfg);
  armp::backward(armp::sum(leaf));
  opt.step();
  const float first = std::abs(leaf.data()[0] - 0.0f);
  const float before = leaf.data()[0];
  opt.zero_grad();
  armp::backward(armp::sum(leaf));
  opt.step();
  CHECK(opt.step_count() == 2);
  const float second = std::abs(leaf.data()[0] - before);
  CHECK(second <= first + 1e-6f);
}

TEST_CASE("identical seeds produce bit-identical forward values") {
  auto run = [](uint64_t seed) {
    auto net = gradnets::make_mlp(seed);
    Tensor loss = net.forward_f32();
    return loss.item();
  };
  const float a = run(99);
  const float b = run(99);
  CHECK(std::memcmp(&a, &b, sizeof(float)) == 0);
}

TEST_CASE("NaN is detectable by the validity check") {
  Tensor x = Tensor::from_data({2}, {1.0f, std::nanf("")});
  CHECK_FALSE(x.all_finite());
  Tensor y = Tensor::from_data({2}, {1.0f, 2.0f});
  CHECK(y.all_finite());
}

TEST_CASE("no-grad guard suppresses taping") {
  Tensor x = Tensor::full({3}, 1.0f, true);
  armp::NoGradGuard guard;
  Tensor y = armp::sum(x);
  CHECK_FALSE(y.requires_grad());
  CHECK_THROWS_AS(armp::backward(y), armp::ValueError);
}

TEST_SUITE_END();
