#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "taco/nn.hpp"
#include "taco/ops.hpp"
#include "test_util.hpp"

using namespace taco;
using taco_test::grad_check;
using taco_test::random_tensor;
using ag::Variable;

TEST_CASE("tensor basics") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  t.at({1, 2}) = 5.0;
  CHECK(t[5] == 5.0);
  Tensor r = t.reshaped({3, 2});
  CHECK(r.at({2, 1}) == 5.0);  // shared storage
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  CHECK_THROWS_AS((Tensor{{2}, {1.0, 2.0, 3.0}}), ShapeError);
  Tensor c = t.clone();
  c[0] = 9.0;
  CHECK(t[0] == 0.0);
}

TEST_CASE("autograd chain and detach") {
  Variable x(Tensor::scalar(3.0), true);
  Variable y(Tensor::scalar(4.0), true);
  // f = x*y + x  => df/dx = y+1, df/dy = x
  Variable f = ops::add(ops::mul(x, y), x);
  f.backward();
  CHECK(x.grad()[0] == doctest::Approx(5.0));
  CHECK(y.grad()[0] == doctest::Approx(3.0));

  x.zero_grad();
  y.zero_grad();
  Variable g = ops::add(ops::mul(x.detach(), y), x);
  g.backward();
  CHECK(x.grad()[0] == doctest::Approx(1.0));  // only the direct path
  CHECK(y.grad()[0] == doctest::Approx(3.0));

  {
    ag::NoGradGuard guard;
    Variable h = ops::mul(x, y);
    CHECK_FALSE(h.requires_grad());
  }
}

TEST_CASE("elementwise op gradients") {
  Rng rng(7);
  Variable a(random_tensor({3, 4}, rng), true);
  Variable b(random_tensor({3, 4}, rng), true);
  auto rep = grad_check(
      [&] {
        Variable t = ops::mul(ops::add(a, b), ops::sub(a, b));
        t = ops::add_scalar(ops::mul_scalar(t, 0.7), 0.3);
        return ops::mean_all(ops::mul(t, t));
      },
      {a, b});
  CHECK(rep.ok());
}

TEST_CASE("abs and relu gradients away from kinks") {
  Rng rng(11);
  Tensor init = random_tensor({20}, rng);
  for (std::int64_t i = 0; i < init.size(); ++i) {
    if (std::fabs(init[i]) < 0.05) init[i] = 0.2;  // keep FD away from the kink
  }
  Variable a(init, true);
  auto rep = grad_check([&] { return ops::sum_all(ops::abs(ops::relu(a))); }, {a});
  CHECK(rep.ok());
}

TEST_CASE("sub_scalar_var and reductions") {
  Rng rng(3);
  Variable a(random_tensor({8}, rng), true);
  auto rep = grad_check(
      [&] {
        Variable m = ops::mean_all(a);
        Variable dev = ops::sub_scalar_var(a, m);
        return ops::sum_all(ops::mul(dev, dev));
      },
      {a});
  CHECK(rep.ok());
}

TEST_CASE("linear matches naive matmul and its gradient") {
  Rng rng(5);
  Variable x(random_tensor({4, 3}, rng), true);
  Variable w(random_tensor({3, 5}, rng), true);
  Variable b(random_tensor({5}, rng), true);
  Variable y = ops::linear(x, w, b);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 5; ++j) {
      double acc = b.value()[j];
      for (int k = 0; k < 3; ++k) acc += x.value().at({i, k}) * w.value().at({k, j});
      CHECK(y.value().at({i, j}) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
  auto rep = grad_check([&] { return ops::mean_all(ops::mul(ops::linear(x, w, b),
                                                            ops::linear(x, w, b))); },
                        {x, w, b});
  CHECK(rep.ok());
}

namespace {
// Independent direct convolution, NHWC.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const auto n = x.dim(0), h = x.dim(1), wd = x.dim(2), c = x.dim(3);
  const auto kh = w.dim(0), kw = w.dim(1), cout = w.dim(3);
  const auto oh = (h + 2 * pad - kh) / stride + 1;
  const auto ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor y({n, oh, ow, cout});
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox)
        for (std::int64_t co = 0; co < cout; ++co) {
          double acc = b[co];
          for (std::int64_t ky = 0; ky < kh; ++ky)
            for (std::int64_t kx = 0; kx < kw; ++kx)
              for (std::int64_t ci = 0; ci < c; ++ci) {
                const std::int64_t iy = oy * stride - pad + ky;
                const std::int64_t ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.at({ni, iy, ix, ci}) * w.at({ky, kx, ci, co});
              }
          y.at({ni, oy, ox, co}) = acc;
        }
  return y;
}
}  // namespace

TEST_CASE("conv2d matches direct convolution") {
  Rng rng(9);
  for (int stride : {1, 2}) {
    Variable x(random_tensor({2, 6, 8, 3}, rng), true);
    Variable w(random_tensor({3, 3, 3, 4}, rng), true);
    Variable b(random_tensor({4}, rng), true);
    Variable y = ops::conv2d(x, w, b, stride, 1);
    Tensor ref = naive_conv(x.value(), w.value(), b.value(), stride, 1);
    REQUIRE(y.value().same_shape(ref));
    for (std::int64_t i = 0; i < ref.size(); ++i) {
      CHECK(y.value()[i] == doctest::Approx(ref[i]).epsilon(1e-10));
    }
    auto rep = grad_check(
        [&] { return ops::mean_all(ops::mul(ops::conv2d(x, w, b, stride, 1),
                                            ops::conv2d(x, w, b, stride, 1))); },
        {x, w, b}, 1e-5);
    CHECK(rep.ok());
  }
}

TEST_CASE("batch_norm forward stats and gradient") {
  Rng rng(13);
  Variable x(random_tensor({6, 5}, rng), true);
  Variable gamma(Tensor::ones({5}), true);
  Variable beta(Tensor::zeros({5}), true);
  Tensor rm = Tensor::zeros({5});
  Tensor rv = Tensor::ones({5});

  Variable y = ops::batch_norm(x, gamma, beta, rm, rv, 0.1, 1e-5, true, true);
  // per-channel mean ~ 0, var ~ 1
  for (int j = 0; j < 5; ++j) {
    double m = 0, v = 0;
    for (int i = 0; i < 6; ++i) m += y.value().at({i, j});
    m /= 6;
    for (int i = 0; i < 6; ++i) v += std::pow(y.value().at({i, j}) - m, 2);
    v /= 6;
    CHECK(std::fabs(m) < 1e-10);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
  }
  CHECK(rm[0] != 0.0);  // running buffers updated

  auto rep = grad_check(
      [&] {
        Tensor rm2 = rm.clone(), rv2 = rv.clone();
        Variable out = ops::batch_norm(x, gamma, beta, rm2, rv2, 0.1, 1e-5, true, false);
        return ops::mean_all(ops::mul(out, out));
      },
      {x, gamma, beta});
  CHECK(rep.ok());

  auto rep2 = grad_check(
      [&] {
        Variable out = ops::batch_norm(x, gamma, beta, rm, rv, 0.1, 1e-5, false, false);
        return ops::mean_all(ops::mul(out, out));
      },
      {x, gamma, beta});
  CHECK(rep2.ok());
}

TEST_CASE("global_avg_pool value and gradient") {
  Rng rng(17);
  Variable x(random_tensor({2, 3, 4, 5}, rng), true);
  Variable y = ops::global_avg_pool(x);
  double acc = 0;
  for (int p = 0; p < 12; ++p) acc += x.value()[p * 5 + 2];
  CHECK(y.value().at({0, 2}) == doctest::Approx(acc / 12.0));
  auto rep = grad_check([&] { return ops::sum_all(ops::mul(ops::global_avg_pool(x),
                                                           ops::global_avg_pool(x))); },
                        {x});
  CHECK(rep.ok());
}

TEST_CASE("softmax rows and gradient") {
  Rng rng(19);
  Variable x(random_tensor({3, 6}, rng, -3, 3), true);
  Variable y = ops::softmax_lastdim(x);
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int j = 0; j < 6; ++j) {
      CHECK(y.value().at({r, j}) >= 0.0);
      s += y.value().at({r, j});
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  Variable coeff(random_tensor({3, 6}, rng));
  auto rep = grad_check(
      [&] { return ops::sum_all(ops::mul(ops::softmax_lastdim(x), coeff)); }, {x});
  CHECK(rep.ok());
}

TEST_CASE("attention ops gradient") {
  Rng rng(23);
  Variable q(random_tensor({2, 2, 3, 4}, rng), true);
  Variable k(random_tensor({2, 2, 3, 4}, rng), true);
  Variable v(random_tensor({2, 2, 3, 4}, rng), true);
  auto rep = grad_check(
      [&] {
        Variable a = ops::softmax_lastdim(ops::attention_scores(q, k, 0.5));
        return ops::mean_all(ops::mul(ops::attention_apply(a, v), ops::attention_apply(a, v)));
      },
      {q, k, v});
  CHECK(rep.ok());
}

TEST_CASE("cross entropy matches closed form and gradient") {
  Variable logits(Tensor({2, 3}, {0.0, 0.0, 0.0, 2.0, 0.0, 0.0}), true);
  std::vector<int> labels = {1, 0};
  Variable l = ops::cross_entropy_logits(logits, labels);
  const double expect =
      0.5 * (std::log(3.0) + (-2.0 + std::log(std::exp(2.0) + 2.0)));
  CHECK(l.value()[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(ops::cross_entropy_logits(logits, {3, 0}), DataError);

  Rng rng(29);
  Variable lg(random_tensor({4, 5}, rng, -2, 2), true);
  std::vector<int> lb = {0, 3, 2, 4};
  auto rep = grad_check([&] { return ops::cross_entropy_logits(lg, lb); }, {lg});
  CHECK(rep.ok());
}

TEST_CASE("sgd momentum two-step hand check") {
  Variable w(Tensor::scalar(1.0), true);
  nn::Sgd opt({{"w", &w}}, 0.9, 0.0);
  // constant gradient 1: v1=1, w=1-0.1; v2=1.9, w=0.9-0.19
  for (int step = 0; step < 2; ++step) {
    w.zero_grad();
    Variable loss = ops::mul_scalar(w, 1.0);
    loss.backward();
    opt.step(0.1);
  }
  CHECK(w.value()[0] == doctest::Approx(1.0 - 0.1 - 0.19).epsilon(1e-12));
}

TEST_CASE("cosine schedule endpoints") {
  const double base = 0.1;
  CHECK(nn::cosine_lr(base, 0, 320) == doctest::Approx(base).epsilon(1e-15));
  CHECK(nn::cosine_lr(base, 319, 320) <= 1e-3 * base);
  CHECK(nn::cosine_lr(base, 0, 1) == doctest::Approx(base));
}

TEST_CASE("rng determinism and fork independence") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform(0, 1) == b.uniform(0, 1));
  Rng c = Rng(42).fork(1), d = Rng(42).fork(2);
  CHECK(c.uniform(0, 1) != d.uniform(0, 1));
  auto s = Rng(1).sample_without_replacement(10, 4);
  CHECK(s.size() == 4);
  for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i] > s[i - 1]);
}
