#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

#include "scrl/finite_diff.hpp"
#include "scrl/representation.hpp"
#include "test_util.hpp"

using namespace scrl;
using scrl::testing::random_tensor;

namespace {

HeadConfig small(std::size_t in) { return HeadConfig{in, 12, 8}; }

// Standard deviation of N(0,1) truncated to [-a, a], by Simpson quadrature of
// the second moment of the renormalized density.
double truncated_sd_quadrature(double a) {
  const int n = 20000;
  const double h = 2 * a / n;
  double mass = 0, second = 0;
  for (int i = 0; i <= n; ++i) {
    const double x = -a + i * h;
    const double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2 * std::numbers::pi);
    mass += w * pdf;
    second += w * x * x * pdf;
  }
  return std::sqrt(second / mass);
}

bool all_zero_bias(const ProjectionHead<double>& h) {
  for (const auto& l : h.layers)
    for (double b : l.bias.data())
      if (b != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("project_image examples") {
  auto head = make_projection_head<float>(Modality::kImage, HeadConfig{}, InitConfig{0, 2, 1});
  CHECK(head.in_dim() == 512);
  CHECK(head.out_dim() == 1024);
  std::mt19937_64 rng(1);
  auto s = random_tensor({3, 512}, rng).cast<float>();
  auto phi = project_image(s, head);
  CHECK(phi.shape() == Shape{3, 1024});
  for (float v : phi.data()) CHECK(v >= 0.0f);

  auto dhead = make_projection_head<double>(Modality::kImage, small(6), InitConfig{0, 2, 2});
  REQUIRE(all_zero_bias(dhead));
  auto zero = project_image(Tensor<double>(Shape{2, 6}), dhead);
  for (double v : zero.data()) CHECK(v == 0.0);

  // Two branches binding the one head.
  auto x = random_tensor({2, 6}, rng);
  Graph<double> g;
  NodeId bi = project_image(g, g.input(x), dhead);
  NodeId bj = project_image(g, g.input(x), dhead);
  CHECK(std::memcmp(g.value(bi).data().data(), g.value(bj).data().data(),
                    g.value(bi).size() * sizeof(double)) == 0);

  auto voice = make_projection_head<double>(Modality::kVoice, small(6), InitConfig{});
  CHECK_THROWS_AS(project_image(x, voice), ContractError);
  CHECK_THROWS_AS(project_image(Tensor<double>(Shape{2, 5}), dhead), ContractError);
}

TEST_CASE("project_voice examples") {
  auto head = make_projection_head<float>(Modality::kVoice, HeadConfig{18000, 1024, 1024},
                                          InitConfig{0, 2, 3});
  std::mt19937_64 rng(2);
  auto s = random_tensor({2, 18000}, rng, -5, 5).cast<float>();
  auto phi = project_voice(s, head);
  CHECK(phi.shape() == Shape{2, 1024});
  for (float v : phi.data()) CHECK((v > -1.0f && v < 1.0f));

  auto dhead = make_projection_head<double>(Modality::kVoice, small(9), InitConfig{0, 2, 4});
  const auto zero = project_voice(Tensor<double>(Shape{1, 9}), dhead);
  for (double v : zero.data()) CHECK(v == 0.0);

  auto a = make_projection_head<double>(Modality::kVoice, small(9), InitConfig{0, 2, 77});
  auto b = make_projection_head<double>(Modality::kVoice, small(9), InitConfig{0, 2, 77});
  auto x = random_tensor({4, 9}, rng);
  auto ya = project_voice(x, a), yb = project_voice(x, b);
  CHECK(std::memcmp(ya.data().data(), yb.data().data(), ya.size() * sizeof(double)) == 0);

  Graph<double> g;
  NodeId vi = project_voice(g, g.input(x), dhead);
  NodeId vj = project_voice(g, g.input(x), dhead);
  CHECK(std::memcmp(g.value(vi).data().data(), g.value(vj).data().data(),
                    g.value(vi).size() * sizeof(double)) == 0);

  auto image = make_projection_head<double>(Modality::kImage, small(9), InitConfig{});
  CHECK_THROWS_AS(project_voice(x, image), ContractError);
}

TEST_CASE("init_params examples") {
  const double sd = 1.0 / std::sqrt(100.0);
  auto p = init_params<double>({Shape{100, 1000}}, InitConfig{0, 2, 5});
  REQUIRE(p[0].size() == 100000);
  double sum = 0, sq = 0;
  for (double v : p[0].data()) {
    CHECK(std::abs(v) <= 2 * sd);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / 1e5;
  const double emp_sd = std::sqrt(sq / 1e5 - mean * mean);
  const double oracle = truncated_sd_quadrature(2.0);
  CHECK(oracle == doctest::Approx(0.8796).epsilon(1e-3));
  CHECK(std::abs(emp_sd / sd - oracle) <= 0.02 * oracle);

  auto q = init_params<double>({Shape{100, 1000}}, InitConfig{0, 2, 5});
  CHECK(std::memcmp(p[0].data().data(), q[0].data().data(), p[0].size() * sizeof(double)) == 0);
  auto r = init_params<double>({Shape{100, 1000}}, InitConfig{0, 2, 6});
  CHECK(std::memcmp(p[0].data().data(), r[0].data().data(), p[0].size() * sizeof(double)) != 0);

  // Fan-in excludes the trailing (output) dimension.
  auto conv = init_params<double>({Shape{3, 4, 5}}, InitConfig{0, 2, 7});
  for (double v : conv[0].data()) CHECK(std::abs(v) <= 2.0 / std::sqrt(12.0));
}

TEST_CASE("projection head gradients match finite differences") {
  std::mt19937_64 rng(8);
  for (Modality m : {Modality::kImage, Modality::kVoice}) {
    auto head = make_projection_head<double>(m, small(5), InitConfig{0, 2, 9});
    for (auto& l : head.layers) l.bias = random_tensor(l.bias.shape(), rng, 0.1, 0.3);
    auto x = random_tensor({3, 5}, rng);
    auto reduce = random_tensor({3, 8}, rng, 0.5, 1.5);
    for (std::size_t li = 0; li < 3; ++li) {
      auto& w = head.layers[li].weights;
      w.set_requires_grad(true);
      Graph<double> g;
      g.backward(g.weighted_sum(project(g, g.input(x), head, m), reduce));
      std::vector<double> analytic(w.grad().begin(), w.grad().end());
      auto numeric = finite_diff_grad(
          [&](const Tensor<double>& probe) {
            ProjectionHead<double> h = head;
            h.layers[li].weights = probe;
            Graph<double> g2;
            return g2.value(g2.weighted_sum(project(g2, g2.input(x), std::as_const(h), m), reduce))[0];
          },
          w, 1e-6);
      CHECK(max_relative_error(analytic, numeric.data(), 1e-6) < 1e-4);
      w.set_requires_grad(false);
    }
  }
}
