#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "scrl/finite_diff.hpp"
#include "scrl/graph.hpp"
#include "scrl/layers.hpp"
#include "op_cases.hpp"
#include "test_util.hpp"

using namespace scrl;
using scrl::testing::gradient_check;
using scrl::testing::away_from_zero;
using scrl::testing::pick;
using scrl::testing::random_tensor;

namespace {

// Direct sliding window over an explicitly zero-padded signal.
Tensor<double> brute_conv1d(const Tensor<double>& x, const Tensor<double>& w,
                            const Tensor<double>& b, std::size_t s, std::size_t d) {
  const std::size_t len = x.dim(0), cin = x.dim(1);
  const std::size_t k = w.dim(0), cout = w.dim(2);
  const std::size_t total_pad = (k - 1) * d;
  const std::size_t left = (total_pad + 1) / 2;
  std::vector<std::vector<double>> padded(len + total_pad, std::vector<double>(cin, 0.0));
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t c = 0; c < cin; ++c) padded[t + left][c] = x(t, c);
  std::vector<double> out;
  std::size_t rows = 0;
  for (std::size_t t = 0; t * s + (k - 1) * d < padded.size(); ++t, ++rows) {
    for (std::size_t co = 0; co < cout; ++co) {
      double acc = b[co];
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t ci = 0; ci < cin; ++ci)
          acc += padded[t * s + j * d][ci] * w(j, ci, co);
      out.push_back(acc);
    }
  }
  return Tensor<double>(Shape{rows, cout}, out);
}

Tensor<double> brute_conv2d(const Tensor<double>& x, const Tensor<double>& w,
                            const Tensor<double>& b, std::size_t s) {
  const long h = static_cast<long>(x.dim(0)), wd = static_cast<long>(x.dim(1));
  const std::size_t cin = x.dim(2);
  const long kh = static_cast<long>(w.dim(0)), kw = static_cast<long>(w.dim(1));
  const std::size_t cout = w.dim(3);
  const long ph = kh / 2, pw = kw / 2;  // odd kernels: symmetric padding
  const std::size_t oh = (static_cast<std::size_t>(h) + s - 1) / s;
  const std::size_t ow = (static_cast<std::size_t>(wd) + s - 1) / s;
  Tensor<double> out(Shape{oh, ow, cout});
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t co = 0; co < cout; ++co) {
        double acc = b[co];
        for (long ky = 0; ky < kh; ++ky)
          for (long kx = 0; kx < kw; ++kx) {
            const long iy = static_cast<long>(oy * s) + ky - ph;
            const long ix = static_cast<long>(ox * s) + kx - pw;
            if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
            for (std::size_t ci = 0; ci < cin; ++ci)
              acc += x(iy, ix, ci) * w(ky, kx, ci, co);
          }
        out(oy, ox, co) = acc;
      }
  return out;
}

constexpr int kShapesPerOp = 100;
constexpr double kGradTol = 1e-4;

}  // namespace

TEST_CASE("dense_affine examples") {
  DenseLayer<double> id{Tensor<double>(Shape{2, 2}, {1, 0, 0, 1}),
                        Tensor<double>(Shape{2}, {0, 0}), Activation::kNone};
  auto y = dense_affine(Tensor<double>(Shape{1, 2}, {1, 2}), id);
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);

  DenseLayer<double> relu{Tensor<double>(Shape{2, 2}, {0.3, -2, 5, 7}),
                          Tensor<double>(Shape{2}, {3, -3}), Activation::kRelu};
  auto z = dense_affine(Tensor<double>(Shape{1, 2}, {0, 0}), relu);
  CHECK(z[0] == 3.0);
  CHECK(z[1] == 0.0);

  DenseLayer<double> th{Tensor<double>(Shape{2, 2}, {2, 1, 0, 1}),
                        Tensor<double>(Shape{2}, {1, 0}), Activation::kTanh};
  auto t = dense_affine(Tensor<double>(Shape{1, 2}, {1, 1}), th);
  CHECK(t[0] == doctest::Approx(std::tanh(3.0)).epsilon(1e-15));
  CHECK(t[1] == doctest::Approx(std::tanh(2.0)).epsilon(1e-15));

  CHECK_THROWS_AS(dense_affine(Tensor<double>(Shape{1, 3}), id), ShapeError);
}

TEST_CASE("conv1d_dilated examples") {
  ConvLayer1D<double> tiny{Tensor<double>(Shape{2, 1, 1}, {1, 1}),
                           Tensor<double>(Shape{1}, {0}), 1, 1};
  Tensor<double> x(Shape{4, 1}, {1, 2, 3, 4});
  auto y = conv1d_dilated(x, tiny);
  auto oracle = brute_conv1d(x, tiny.weights, tiny.bias, 1, 1);
  REQUIRE(y.shape() == oracle.shape());
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == oracle[i]);
  // Left-heavy padding of one: out[t] = x[t-1] + x[t].
  CHECK(y[0] == 1.0);
  CHECK(y[3] == 7.0);

  ConvLayer1D<double> table_conv2{Tensor<double>(Shape{3, 1, 6}), Tensor<double>(Shape{6}), 2, 2};
  Graph<double> g;
  NodeId out = conv1d_dilated(g, g.input(Tensor<double>(Shape{24000, 1})), table_conv2);
  CHECK(g.value(out).shape() == Shape{12000, 6});

  std::mt19937_64 rng(1);
  ConvLayer1D<double> zero{Tensor<double>(Shape{3, 2, 4}), Tensor<double>(Shape{4}), 2, 3};
  auto zy = conv1d_dilated(random_tensor({17, 2}, rng), zero);
  CHECK(std::all_of(zy.data().begin(), zy.data().end(), [](double v) { return v == 0.0; }));

  CHECK_THROWS_AS(conv1d_dilated(Tensor<double>(Shape{5, 3}), zero), ShapeError);
}

TEST_CASE("conv1d matches the sliding-window oracle across strides and dilations") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = pick(rng, 1, 40), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
    const std::size_t k = pick(rng, 1, 5), s = pick(rng, 1, 3), d = pick(rng, 1, 4);
    auto x = random_tensor({len, cin}, rng);
    ConvLayer1D<double> layer{random_tensor({k, cin, cout}, rng), random_tensor({cout}, rng), s, d};
    auto y = conv1d_dilated(x, layer);
    auto oracle = brute_conv1d(x, layer.weights, layer.bias, s, d);
    REQUIRE(y.shape() == oracle.shape());
    // SAME-padding length law.
    CHECK(y.dim(0) == (len + s - 1) / s);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (d == 1) {
        CHECK(y[i] == oracle[i]);
      } else {
        CHECK(y[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("conv2d examples") {
  // 1x1 identity channel mixing leaves the input unchanged.
  std::mt19937_64 rng(3);
  ConvLayer2D<double> ident{Tensor<double>(Shape{1, 1, 3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}),
                            Tensor<double>(Shape{3}), 1};
  auto x = random_tensor({5, 4, 3}, rng);
  Graph<double> g;
  auto y = g.value(conv2d(g, g.input(x), ident));
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);

  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t s = pick(rng, 1, 2);
    auto xi = random_tensor({pick(rng, 1, 7), pick(rng, 1, 7), 2}, rng);
    ConvLayer2D<double> layer{random_tensor({3, 3, 2, 3}, rng), random_tensor({3}, rng), s};
    Graph<double> g2;
    auto out = g2.value(conv2d(g2, g2.input(xi), layer));
    auto oracle = brute_conv2d(xi, layer.weights, layer.bias, s);
    REQUIRE(out.shape() == oracle.shape());
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
  }
}

TEST_CASE("global_avg_pool examples") {
  auto ones = global_avg_pool(Tensor<double>(Shape{7, 7, 512}, 1.0));
  REQUIRE(ones.shape() == Shape{512});
  CHECK(std::all_of(ones.data().begin(), ones.data().end(), [](double v) { return v == 1.0; }));

  Tensor<double> x(Shape{2, 2, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  auto y = global_avg_pool(x);
  CHECK(y[0] == doctest::Approx((1 + 4 + 7 + 10) / 4.0));
  CHECK(y[1] == doctest::Approx((2 + 5 + 8 + 11) / 4.0));
  CHECK(y[2] == doctest::Approx((3 + 6 + 9 + 12) / 4.0));
}

TEST_CASE("activation examples") {
  auto r = activation(Tensor<double>(Shape{3}, {-1, 0, 2}), Activation::kRelu);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);
  auto s = activation(Tensor<double>(Shape{1, 2}, {0, 0}), Activation::kSoftmax);
  CHECK(s[0] == 0.5);
  CHECK(s[1] == 0.5);
  auto t = activation(Tensor<double>(Shape{1}, {0.5}), Activation::kTanh);
  CHECK(t[0] == doctest::Approx(0.46211715726000974).epsilon(1e-15));
}

TEST_CASE("softmax rows are positive and sum to one") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    auto x = random_tensor({pick(rng, 1, 6), pick(rng, 1, 9)}, rng, -30.0, 30.0);
    auto p = activation(x, Activation::kSoftmax);
    for (std::size_t r = 0; r < x.dim(0); ++r) {
      double total = 0;
      for (std::size_t c = 0; c < x.dim(1); ++c) {
        CHECK(p(r, c) > 0.0);
        total += p(r, c);
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("backward examples") {
  Graph<double> g;
  Tensor<double> x0(Shape{2, 3}, {1, -2, 3, 0.5, 4, -1});
  NodeId x = g.input(x0, true);
  g.backward(g.sum(x));
  for (double v : g.grad(x)) CHECK(v == 1.0);

  Graph<double> g2;
  NodeId y = g2.input(x0, true);
  g2.backward(g2.dot(y, y));
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(g2.grad(y)[i] == 2.0 * x0[i]);

  Graph<double> g3;
  NodeId z = g3.input(x0, true);
  CHECK_THROWS_AS(g3.backward(g3.relu(z)), ContractError);
}

TEST_CASE("backward visits each node once in reverse topological order") {
  Graph<double> g;
  NodeId x = g.input(Tensor<double>(Shape{3}, {1, 2, 3}), true);
  NodeId sq = g.mul(x, x);
  NodeId twice = g.add(sq, sq);
  NodeId loss = g.sum(twice);
  g.backward(loss);
  const auto& order = g.last_backward_order();
  REQUIRE(order.size() == 4);
  for (std::size_t i = 1; i < order.size(); ++i) CHECK(order[i - 1].index > order[i].index);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g.grad(x)[i] == doctest::Approx(4.0 * (i + 1)));
}

TEST_CASE("parameter gradients accumulate until zeroed") {
  Tensor<double> w(Shape{2}, {1.5, -0.5});
  w.set_requires_grad(true);
  for (int call = 1; call <= 2; ++call) {
    Graph<double> g;
    g.backward(g.sum(g.param(w)));
    CHECK(w.grad()[0] == static_cast<double>(call));
  }
  w.zero_grad();
  CHECK(w.grad()[0] == 0.0);

  // Const-bound parameters are constants.
  const Tensor<double>& frozen = w;
  Graph<double> g;
  NodeId p = g.param(frozen);
  CHECK_FALSE(g.needs_grad(p));
}

TEST_CASE("finite_diff_grad examples") {
  std::mt19937_64 rng(5);
  auto x = random_tensor({3, 2}, rng);
  auto sum_f = [](const Tensor<double>& t) {
    double s = 0;
    for (double v : t.data()) s += v;
    return s;
  };
  const auto ones = finite_diff_grad(sum_f, x);
  for (double v : ones.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
  auto sq = [](const Tensor<double>& t) { return t[0] * t[0] + t[1] * t[1]; };
  auto g = finite_diff_grad(sq, Tensor<double>(Shape{2}, {1, 2}));
  CHECK(std::abs(g[0] - 2.0) < 1e-8);
  CHECK(std::abs(g[1] - 4.0) < 1e-8);
  CHECK_THROWS_AS(finite_diff_grad(sq, x, 0.0), ContractError);
}

TEST_CASE("reverse-mode gradients match finite differences for every op") {
  const auto cases = scrl::testing::op_gradient_cases();
  std::mt19937_64 rng(2024);
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < kShapesPerOp; ++trial) {
      auto [inputs, build] = c.make(rng);
      worst = std::max(worst, gradient_check(build, inputs, rng));
    }
    INFO(c.name << " worst relative error " << worst);
    CHECK(worst < kGradTol);
  }
}

TEST_CASE("forward passes on finite inputs stay finite") {
  std::mt19937_64 rng(9);
  Graph<double> g;
  NodeId x = g.input(random_tensor({3, 5}, rng, -50, 50));
  NodeId zero = g.input(Tensor<double>(Shape{2, 5}));
  CHECK(g.value(g.softmax(x)).all_finite());
  CHECK(g.value(g.tanh(x)).all_finite());
  CHECK(g.value(g.cosine_distance(x, zero)).all_finite());
  // Zero rows sit at distance exactly 1 from everything.
  CHECK(g.value(g.cosine_distance(x, zero))[0] == 1.0);
}
