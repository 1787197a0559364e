#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "scrl/graph.hpp"
#include "test_util.hpp"

namespace scrl::testing {

// Values bounded away from zero so relu has no kink within the FD step.
inline Tensor<double> away_from_zero(const Shape& shape, std::mt19937_64& rng) {
  Tensor<double> t = random_tensor(shape, rng);
  for (double& v : t.data()) v = v >= 0 ? v + 1e-3 : v - 1e-3;
  return t;
}

// Pairwise-distinct values so max-pool argmax cannot flip under the FD step.
inline Tensor<double> distinct_values(const Shape& shape, std::mt19937_64& rng) {
  Tensor<double> t(shape);
  std::vector<double> vals(t.size());
  std::iota(vals.begin(), vals.end(), 0.0);
  std::shuffle(vals.begin(), vals.end(), rng);
  for (std::size_t i = 0; i < vals.size(); ++i) t[i] = vals[i] * 0.01 - 0.3;
  return t;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

using OpInputs = std::vector<Tensor<double>>;

// One differentiable graph op with a generator of random small operands that
// keep it away from kinks.
struct OpCase {
  const char* name;
  std::function<std::pair<OpInputs, OpBuilder>(std::mt19937_64&)> make;
};

inline std::vector<OpCase> op_gradient_cases() {
  using Inputs = OpInputs;
  return {
      {"matmul",
       [](std::mt19937_64& r) {
         const std::size_t m = pick(r, 1, 4), k = pick(r, 1, 5), n = pick(r, 1, 4);
         return std::pair{Inputs{random_tensor({m, k}, r), random_tensor({k, n}, r)},
                          OpBuilder([](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.matmul(in[0], in[1]);
                          })};
       }},
      {"add_bias",
       [](std::mt19937_64& r) {
         const std::size_t m = pick(r, 1, 4), n = pick(r, 1, 6);
         return std::pair{Inputs{random_tensor({m, n}, r), random_tensor({n}, r)},
                          OpBuilder([](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.add_bias(in[0], in[1]);
                          })};
       }},
      {"relu",
       [](std::mt19937_64& r) {
         return std::pair{Inputs{away_from_zero({pick(r, 1, 4), pick(r, 1, 8)}, r)},
                          OpBuilder([](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.relu(in[0]);
                          })};
       }},
      {"tanh",
       [](std::mt19937_64& r) {
         return std::pair{Inputs{random_tensor({pick(r, 1, 4), pick(r, 1, 8)}, r, -2, 2)},
                          OpBuilder([](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.tanh(in[0]);
                          })};
       }},
      {"softmax",
       [](std::mt19937_64& r) {
         return std::pair{Inputs{random_tensor({pick(r, 1, 4), pick(r, 1, 8)}, r, -3, 3)},
                          OpBuilder([](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.softmax(in[0]);
                          })};
       }},
      {"conv1d",
       [](std::mt19937_64& r) {
         const std::size_t b = pick(r, 1, 2), len = pick(r, 1, 10), cin = pick(r, 1, 3),
                           cout = pick(r, 1, 3), k = pick(r, 1, 4);
         const Conv1dSpec spec{pick(r, 1, 3), pick(r, 1, 3)};
         return std::pair{Inputs{random_tensor({b, len, cin}, r), random_tensor({k, cin, cout}, r),
                                 random_tensor({cout}, r)},
                          OpBuilder([spec](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.conv1d(in[0], in[1], in[2], spec);
                          })};
       }},
      {"conv2d",
       [](std::mt19937_64& r) {
         const std::size_t h = pick(r, 1, 4), w = pick(r, 1, 4), cin = pick(r, 1, 2),
                           cout = pick(r, 1, 3), k = 2 * pick(r, 0, 1) + 1, s = pick(r, 1, 2);
         return std::pair{Inputs{random_tensor({h, w, cin}, r), random_tensor({k, k, cin, cout}, r),
                                 random_tensor({cout}, r)},
                          OpBuilder([s](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.conv2d(in[0], in[1], in[2], s);
                          })};
       }},
      {"max_pool1d",
       [](std::mt19937_64& r) {
         const std::size_t win = pick(r, 1, 3), s = pick(r, 1, 3);
         return std::pair{Inputs{distinct_values({pick(r, 1, 2), pick(r, 1, 9), pick(r, 1, 3)}, r)},
                          OpBuilder([win, s](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.max_pool1d(in[0], win, s);
                          })};
       }},
      {"global_avg_pool",
       [](std::mt19937_64& r) {
         return std::pair{Inputs{random_tensor({pick(r, 1, 2), pick(r, 1, 4), pick(r, 1, 4), pick(r, 1, 3)}, r)},
                          OpBuilder([](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.global_avg_pool(in[0]);
                          })};
       }},
      {"reshape",
       [](std::mt19937_64& r) {
         const std::size_t a = pick(r, 1, 4), b = pick(r, 1, 4);
         return std::pair{Inputs{random_tensor({a, b}, r)},
                          OpBuilder([a, b](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.reshape(in[0], Shape{b, a});
                          })};
       }},
      {"cosine_distance",
       [](std::mt19937_64& r) {
         const std::size_t n = pick(r, 1, 4), m = pick(r, 1, 4), d = pick(r, 2, 8);
         return std::pair{Inputs{random_tensor({n, d}, r), random_tensor({m, d}, r)},
                          OpBuilder([](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.cosine_distance(in[0], in[1]);
                          })};
       }},
      {"scale_shift",
       [](std::mt19937_64& r) {
         const Shape s{pick(r, 1, 4), pick(r, 1, 4)};
         auto a = random_tensor(s, r), c = random_tensor(s, r);
         return std::pair{Inputs{random_tensor(s, r)},
                          OpBuilder([a, c](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.scale_shift(in[0], a, c);
                          })};
       }},
      {"weighted_sum",
       [](std::mt19937_64& r) {
         const Shape s{pick(r, 1, 5), pick(r, 1, 5)};
         auto w = random_tensor(s, r);
         return std::pair{Inputs{random_tensor(s, r)},
                          OpBuilder([w](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.weighted_sum(in[0], w);
                          })};
       }},
      {"nll",
       [](std::mt19937_64& r) {
         const std::size_t rows = pick(r, 1, 4), classes = pick(r, 2, 5);
         std::vector<std::size_t> labels(rows);
         for (auto& l : labels) l = pick(r, 0, classes - 1);
         return std::pair{Inputs{random_tensor({rows, classes}, r, 0.05, 1.0)},
                          OpBuilder([labels](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.nll(in[0], labels, 1e-10);
                          })};
       }},
      {"add",
       [](std::mt19937_64& r) {
         const Shape s{pick(r, 1, 4), pick(r, 1, 4)};
         return std::pair{Inputs{random_tensor(s, r), random_tensor(s, r)},
                          OpBuilder([](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.add(in[0], in[1]);
                          })};
       }},
      {"scale",
       [](std::mt19937_64& r) {
         const double f = random_tensor({1}, r)[0];
         return std::pair{Inputs{random_tensor({pick(r, 1, 6)}, r)},
                          OpBuilder([f](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.scale(in[0], f);
                          })};
       }},
      {"sum",
       [](std::mt19937_64& r) {
         return std::pair{Inputs{random_tensor({pick(r, 1, 6), pick(r, 1, 6)}, r)},
                          OpBuilder([](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.sum(in[0]);
                          })};
       }},
      {"dot",
       [](std::mt19937_64& r) {
         const Shape s{pick(r, 1, 8)};
         return std::pair{Inputs{random_tensor(s, r), random_tensor(s, r)},
                          OpBuilder([](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.dot(in[0], in[1]);
                          })};
       }},
      {"mul",
       [](std::mt19937_64& r) {
         const Shape s{pick(r, 1, 4), pick(r, 1, 4)};
         return std::pair{Inputs{random_tensor(s, r), random_tensor(s, r)},
                          OpBuilder([](Graph<double>& g, const std::vector<NodeId>& in) {
                            return g.mul(in[0], in[1]);
                          })};
       }},
  };

}

}  // namespace scrl::testing
