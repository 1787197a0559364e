#include "scrl/graph.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace scrl {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kRelu: return "relu";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kConv1d: return "conv1d";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kMaxPool1d: return "max_pool1d";
    case OpKind::kGlobalAvgPool: return "global_avg_pool";
    case OpKind::kReshape: return "reshape";
    case OpKind::kCosineDistance: return "cosine_distance";
    case OpKind::kScaleShift: return "scale_shift";
    case OpKind::kWeightedSum: return "weighted_sum";
    case OpKind::kNll: return "nll";
    case OpKind::kAdd: return "add";
    case OpKind::kScale: return "scale";
    case OpKind::kSum: return "sum";
    case OpKind::kDot: return "dot";
    case OpKind::kMul: return "mul";
  }
  return "unknown";
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

// Collapses an optional leading batch axis: rank `base` means batch 1.
struct Batched {
  std::size_t batch;
  bool had_batch;
};

Batched split_batch(const Shape& s, std::size_t base, const char* op) {
  if (s.size() == base) return {1, false};
  if (s.size() == base + 1) return {s[0], true};
  throw ShapeError(std::string(op) + ": unexpected input rank " +
                   std::to_string(s.size()) + " " + shape_str(s));
}

}  // namespace

template <typename T>
NodeId Graph<T>::push(OpKind kind, std::vector<NodeId> inputs, Tensor<T> value,
                      BackwardFn backward) {
  Node n;
  n.kind = kind;
  n.needs_grad = std::any_of(inputs.begin(), inputs.end(), [&](NodeId id) {
    return nodes_[id.index].needs_grad;
  });
  n.inputs = std::move(inputs);
  n.owned = std::move(value);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(NodeId id) const {
  if (id.index >= nodes_.size()) throw ContractError("unknown graph node");
  return nodes_[id.index];
}

template <typename T>
const Tensor<T>& Graph<T>::val(std::uint32_t index) const {
  const Node& n = nodes_[index];
  return n.external ? *n.external : n.owned;
}

template <typename T>
const Tensor<T>& Graph<T>::value(NodeId id) const {
  node(id);
  return val(id.index);
}

template <typename T>
std::span<const T> Graph<T>::grad(NodeId id) const {
  const Node& n = node(id);
  if (n.param) return n.param->grad();
  return n.grad;
}

template <typename T>
std::span<T> Graph<T>::grad_buffer(NodeId id) {
  Node& n = nodes_[id.index];
  if (n.param) return n.param->grad();
  if (n.grad.empty()) n.grad.assign(val(id.index).size(), T{0});
  return n.grad;
}

template <typename T>
NodeId Graph<T>::input(Tensor<T> value, bool requires_grad) {
  NodeId id = push(OpKind::kInput, {}, std::move(value), nullptr);
  nodes_.back().needs_grad = requires_grad;
  return id;
}

template <typename T>
NodeId Graph<T>::param(Tensor<T>& p) {
  NodeId id = push(OpKind::kParameter, {}, Tensor<T>{}, nullptr);
  Node& n = nodes_.back();
  n.external = &p;
  if (p.requires_grad()) {
    n.param = &p;
    n.needs_grad = true;
  }
  return id;
}

template <typename T>
NodeId Graph<T>::param(const Tensor<T>& p) {
  NodeId id = push(OpKind::kParameter, {}, Tensor<T>{}, nullptr);
  nodes_.back().external = &p;
  return id;
}

template <typename T>
NodeId Graph<T>::matmul(NodeId a, NodeId b) {
  const Tensor<T>& A = value(a);
  const Tensor<T>& B = value(b);
  require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(0),
          "matmul: incompatible shapes " + shape_str(A.shape()) + " and " +
              shape_str(B.shape()));
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor<T> out(Shape{m, n});
  MatMap<T>(out.data().data(), m, n).noalias() =
      ConstMatMap<T>(A.data().data(), m, k) *
      ConstMatMap<T>(B.data().data(), k, n);
  return push(OpKind::kMatMul, {a, b}, std::move(out),
              [m, k, n](Graph& g, std::uint32_t self) {
                const NodeId ia = g.nodes_[self].inputs[0];
                const NodeId ib = g.nodes_[self].inputs[1];
                ConstMatMap<T> dC(g.upstream(self).data(), m, n);
                if (g.nodes_[ia.index].needs_grad) {
                  MatMap<T>(g.grad_buffer(ia).data(), m, k).noalias() +=
                      dC * ConstMatMap<T>(g.val(ib.index).data().data(), k, n)
                               .transpose();
                }
                if (g.nodes_[ib.index].needs_grad) {
                  MatMap<T>(g.grad_buffer(ib).data(), k, n).noalias() +=
                      ConstMatMap<T>(g.val(ia.index).data().data(), m, k)
                          .transpose() *
                      dC;
                }
              });
}

template <typename T>
NodeId Graph<T>::add_bias(NodeId x, NodeId bias) {
  const Tensor<T>& X = value(x);
  const Tensor<T>& b = value(bias);
  const std::size_t n = X.shape().back();
  require(b.rank() == 1 && b.dim(0) == n,
          "add_bias: bias " + shape_str(b.shape()) + " vs input " +
              shape_str(X.shape()));
  Tensor<T> out = X;
  out.set_requires_grad(false);
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += b[i % n];
  return push(OpKind::kAddBias, {x, bias}, std::move(out),
              [n](Graph& g, std::uint32_t self) {
                auto dy = g.upstream(self);
                const NodeId ix = g.nodes_[self].inputs[0];
                const NodeId ib = g.nodes_[self].inputs[1];
                if (g.nodes_[ix.index].needs_grad) {
                  auto dx = g.grad_buffer(ix);
                  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                }
                if (g.nodes_[ib.index].needs_grad) {
                  auto db = g.grad_buffer(ib);
                  for (std::size_t i = 0; i < dy.size(); ++i) db[i % n] += dy[i];
                }
              });
}

template <typename T>
NodeId Graph<T>::relu(NodeId x) {
  Tensor<T> out(value(x).shape());
  auto in = value(x).data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = !(in[i] <= T{0}) ? in[i] : T{0};  // NaN passes through
  return push(OpKind::kRelu, {x}, std::move(out),
              [](Graph& g, std::uint32_t self) {
                const NodeId ix = g.nodes_[self].inputs[0];
                auto dy = g.upstream(self);
                auto xin = g.val(ix.index).data();
                auto dx = g.grad_buffer(ix);
                for (std::size_t i = 0; i < dy.size(); ++i) {
                  if (xin[i] > T{0}) dx[i] += dy[i];
                }
              });
}

template <typename T>
NodeId Graph<T>::tanh(NodeId x) {
  Tensor<T> out(value(x).shape());
  auto in = value(x).data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(in[i]);
  return push(OpKind::kTanh, {x}, std::move(out),
              [](Graph& g, std::uint32_t self) {
                const NodeId ix = g.nodes_[self].inputs[0];
                auto dy = g.upstream(self);
                auto y = g.val(self).data();
                auto dx = g.grad_buffer(ix);
                for (std::size_t i = 0; i < dy.size(); ++i) {
                  dx[i] += dy[i] * (T{1} - y[i] * y[i]);
                }
              });
}

template <typename T>
NodeId Graph<T>::softmax(NodeId x) {
  const Tensor<T>& X = value(x);
  const std::size_t n = X.shape().back();
  const std::size_t rows = X.size() / n;
  Tensor<T> out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = X.data().data() + r * n;
    T* o = out.data().data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total{0};
    for (std::size_t c = 0; c < n; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < n; ++c) o[c] /= total;
  }
  return push(OpKind::kSoftmax, {x}, std::move(out),
              [n, rows](Graph& g, std::uint32_t self) {
                const NodeId ix = g.nodes_[self].inputs[0];
                auto dy = g.upstream(self);
                auto y = g.val(self).data();
                auto dx = g.grad_buffer(ix);
                for (std::size_t r = 0; r < rows; ++r) {
                  T inner{0};
                  for (std::size_t c = 0; c < n; ++c) {
                    inner += dy[r * n + c] * y[r * n + c];
                  }
                  for (std::size_t c = 0; c < n; ++c) {
                    dx[r * n + c] += y[r * n + c] * (dy[r * n + c] - inner);
                  }
                }
              });
}

template <typename T>
NodeId Graph<T>::conv1d(NodeId x, NodeId w, NodeId b, Conv1dSpec spec) {
  const Tensor<T>& X = value(x);
  const Tensor<T>& W = value(w);
  const Tensor<T>& B = value(b);
  if (spec.stride == 0 || spec.dilation == 0) {
    throw ContractError("conv1d: stride and dilation must be >= 1");
  }
  const Batched bt = split_batch(X.shape(), 2, "conv1d");
  require(W.rank() == 3, "conv1d: weights must be [k x C_in x C_out], got " +
                             shape_str(W.shape()));
  const std::size_t len = X.shape()[X.rank() - 2];
  const std::size_t cin = X.shape().back();
  const std::size_t k = W.dim(0), cout = W.dim(2);
  require(W.dim(1) == cin, "conv1d: weights expect " +
                               std::to_string(W.dim(1)) +
                               " input channels, input has " +
                               std::to_string(cin));
  require(B.rank() == 1 && B.dim(0) == cout,
          "conv1d: bias " + shape_str(B.shape()) + " vs " +
              std::to_string(cout) + " output channels");
  const std::size_t s = spec.stride, d = spec.dilation;
  const std::size_t out_len = same_out_len(len, s);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(same_pad_left(k, d));

  Shape out_shape = bt.had_batch ? Shape{bt.batch, out_len, cout}
                                 : Shape{out_len, cout};
  Tensor<T> out(out_shape);
  const T* xd = X.data().data();
  const T* wd = W.data().data();
  T* od = out.data().data();
  for (std::size_t n = 0; n < bt.batch; ++n) {
    for (std::size_t t = 0; t < out_len; ++t) {
      T* orow = od + (n * out_len + t) * cout;
      for (std::size_t co = 0; co < cout; ++co) orow[co] = B[co];
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * s + j * d) - pad;
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
        const T* xrow = xd + (n * len + static_cast<std::size_t>(pos)) * cin;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const T xv = xrow[ci];
          const T* wrow = wd + (j * cin + ci) * cout;
          for (std::size_t co = 0; co < cout; ++co) orow[co] += xv * wrow[co];
        }
      }
    }
  }
  const std::size_t batch = bt.batch;
  return push(
      OpKind::kConv1d, {x, w, b}, std::move(out),
      [=](Graph& g, std::uint32_t self) {
        const auto& ins = g.nodes_[self].inputs;
        const bool need_x = g.nodes_[ins[0].index].needs_grad;
        const bool need_w = g.nodes_[ins[1].index].needs_grad;
        const bool need_b = g.nodes_[ins[2].index].needs_grad;
        const T* dy = g.upstream(self).data();
        const T* xv = g.val(ins[0].index).data().data();
        const T* wv = g.val(ins[1].index).data().data();
        T* dx = need_x ? g.grad_buffer(ins[0]).data() : nullptr;
        T* dw = need_w ? g.grad_buffer(ins[1]).data() : nullptr;
        if (need_b) {
          auto db = g.grad_buffer(ins[2]);
          for (std::size_t r = 0; r < batch * out_len; ++r) {
            for (std::size_t co = 0; co < cout; ++co) db[co] += dy[r * cout + co];
          }
        }
        if (!need_x && !need_w) return;
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t t = 0; t < out_len; ++t) {
            const T* grow = dy + (n * out_len + t) * cout;
            for (std::size_t j = 0; j < k; ++j) {
              const std::ptrdiff_t pos =
                  static_cast<std::ptrdiff_t>(t * s + j * d) - pad;
              if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
              const std::size_t base = (n * len + static_cast<std::size_t>(pos)) * cin;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const std::size_t wbase = (j * cin + ci) * cout;
                if (need_x) {
                  T acc{0};
                  for (std::size_t co = 0; co < cout; ++co) acc += grow[co] * wv[wbase + co];
                  dx[base + ci] += acc;
                }
                if (need_w) {
                  const T xval = xv[base + ci];
                  for (std::size_t co = 0; co < cout; ++co) dw[wbase + co] += xval * grow[co];
                }
              }
            }
          }
        }
      });
}

template <typename T>
NodeId Graph<T>::conv2d(NodeId x, NodeId w, NodeId b, std::size_t stride) {
  const Tensor<T>& X = value(x);
  const Tensor<T>& W = value(w);
  const Tensor<T>& B = value(b);
  if (stride == 0) throw ContractError("conv2d: stride must be >= 1");
  const Batched bt = split_batch(X.shape(), 3, "conv2d");
  require(W.rank() == 4, "conv2d: weights must be [kh x kw x C_in x C_out], got " +
                             shape_str(W.shape()));
  const std::size_t r = X.rank();
  const std::size_t h = X.shape()[r - 3], wd_ = X.shape()[r - 2], cin = X.shape()[r - 1];
  const std::size_t kh = W.dim(0), kw = W.dim(1), cout = W.dim(3);
  require(W.dim(2) == cin, "conv2d: weights expect " + std::to_string(W.dim(2)) +
                               " input channels, input has " + std::to_string(cin));
  require(B.rank() == 1 && B.dim(0) == cout,
          "conv2d: bias " + shape_str(B.shape()) + " vs " + std::to_string(cout) +
              " output channels");
  const std::size_t oh = same_out_len(h, stride), ow = same_out_len(wd_, stride);
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(same_pad_left(kh, 1));
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(same_pad_left(kw, 1));
  Shape out_shape = bt.had_batch ? Shape{bt.batch, oh, ow, cout} : Shape{oh, ow, cout};
  Tensor<T> out(out_shape);
  const T* xd = X.data().data();
  const T* wdat = W.data().data();
  T* od = out.data().data();
  for (std::size_t n = 0; n < bt.batch; ++n) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T* orow = od + ((n * oh + oy) * ow + ox) * cout;
        for (std::size_t co = 0; co < cout; ++co) orow[co] = B[co];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ph;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pw;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd_)) continue;
            const T* xrow = xd + ((n * h + static_cast<std::size_t>(iy)) * wd_ +
                                  static_cast<std::size_t>(ix)) * cin;
            const T* wblk = wdat + (ky * kw + kx) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T xv = xrow[ci];
              const T* wrow = wblk + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) orow[co] += xv * wrow[co];
            }
          }
        }
      }
    }
  }
  const std::size_t batch = bt.batch;
  const std::size_t wlen = wd_;
  return push(
      OpKind::kConv2d, {x, w, b}, std::move(out),
      [=](Graph& g, std::uint32_t self) {
        const auto& ins = g.nodes_[self].inputs;
        const bool need_x = g.nodes_[ins[0].index].needs_grad;
        const bool need_w = g.nodes_[ins[1].index].needs_grad;
        const bool need_b = g.nodes_[ins[2].index].needs_grad;
        const T* dy = g.upstream(self).data();
        const T* xv = g.val(ins[0].index).data().data();
        const T* wv = g.val(ins[1].index).data().data();
        T* dx = need_x ? g.grad_buffer(ins[0]).data() : nullptr;
        T* dw = need_w ? g.grad_buffer(ins[1]).data() : nullptr;
        if (need_b) {
          auto db = g.grad_buffer(ins[2]);
          for (std::size_t i = 0; i < batch * oh * ow; ++i) {
            for (std::size_t co = 0; co < cout; ++co) db[co] += dy[i * cout + co];
          }
        }
        if (!need_x && !need_w) return;
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const T* grow = dy + ((n * oh + oy) * ow + ox) * cout;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ph;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pw;
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wlen)) continue;
                  const std::size_t base = ((n * h + static_cast<std::size_t>(iy)) * wlen +
                                            static_cast<std::size_t>(ix)) * cin;
                  const std::size_t wblk = (ky * kw + kx) * cin * cout;
                  for (std::size_t ci = 0; ci < cin; ++ci) {
                    if (need_x) {
                      T acc{0};
                      for (std::size_t co = 0; co < cout; ++co) {
                        acc += grow[co] * wv[wblk + ci * cout + co];
                      }
                      dx[base + ci] += acc;
                    }
                    if (need_w) {
                      const T xval = xv[base + ci];
                      for (std::size_t co = 0; co < cout; ++co) {
                        dw[wblk + ci * cout + co] += xval * grow[co];
                      }
                    }
                  }
                }
              }
            }
          }
        }
      });
}

template <typename T>
NodeId Graph<T>::max_pool1d(NodeId x, std::size_t window, std::size_t stride) {
  const Tensor<T>& X = value(x);
  if (window == 0 || stride == 0) {
    throw ContractError("max_pool1d: window and stride must be >= 1");
  }
  const Batched bt = split_batch(X.shape(), 2, "max_pool1d");
  const std::size_t len = X.shape()[X.rank() - 2];
  const std::size_t ch = X.shape().back();
  const std::size_t out_len = same_out_len(len, stride);
  Shape out_shape = bt.had_batch ? Shape{bt.batch, out_len, ch} : Shape{out_len, ch};
  Tensor<T> out(out_shape);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const T* xd = X.data().data();
  for (std::size_t n = 0; n < bt.batch; ++n) {
    for (std::size_t t = 0; t < out_len; ++t) {
      const std::size_t start = t * stride;
      const std::size_t stop = std::min(start + window, len);
      for (std::size_t c = 0; c < ch; ++c) {
        std::size_t best = (n * len + start) * ch + c;
        for (std::size_t p = start + 1; p < stop; ++p) {
          const std::size_t idx = (n * len + p) * ch + c;
          if (xd[idx] > xd[best]) best = idx;
        }
        const std::size_t o = (n * out_len + t) * ch + c;
        out[o] = xd[best];
        (*argmax)[o] = best;
      }
    }
  }
  return push(OpKind::kMaxPool1d, {x}, std::move(out),
              [argmax](Graph& g, std::uint32_t self) {
                const NodeId ix = g.nodes_[self].inputs[0];
                auto dy = g.upstream(self);
                auto dx = g.grad_buffer(ix);
                for (std::size_t o = 0; o < dy.size(); ++o) dx[(*argmax)[o]] += dy[o];
              });
}

template <typename T>
NodeId Graph<T>::global_avg_pool(NodeId x) {
  const Tensor<T>& X = value(x);
  const Batched bt = split_batch(X.shape(), 3, "global_avg_pool");
  const std::size_t r = X.rank();
  const std::size_t positions = X.shape()[r - 3] * X.shape()[r - 2];
  const std::size_t ch = X.shape().back();
  Shape out_shape = bt.had_batch ? Shape{bt.batch, ch} : Shape{ch};
  Tensor<T> out(out_shape);
  const T* xd = X.data().data();
  for (std::size_t n = 0; n < bt.batch; ++n) {
    for (std::size_t p = 0; p < positions; ++p) {
      for (std::size_t c = 0; c < ch; ++c) out[n * ch + c] += xd[(n * positions + p) * ch + c];
    }
    for (std::size_t c = 0; c < ch; ++c) out[n * ch + c] /= static_cast<T>(positions);
  }
  const std::size_t batch = bt.batch;
  return push(OpKind::kGlobalAvgPool, {x}, std::move(out),
              [batch, positions, ch](Graph& g, std::uint32_t self) {
                const NodeId ix = g.nodes_[self].inputs[0];
                auto dy = g.upstream(self);
                auto dx = g.grad_buffer(ix);
                const T inv = T{1} / static_cast<T>(positions);
                for (std::size_t n = 0; n < batch; ++n) {
                  for (std::size_t p = 0; p < positions; ++p) {
                    for (std::size_t c = 0; c < ch; ++c) {
                      dx[(n * positions + p) * ch + c] += dy[n * ch + c] * inv;
                    }
                  }
                }
              });
}

template <typename T>
NodeId Graph<T>::reshape(NodeId x, Shape shape) {
  Tensor<T> out = value(x).reshaped(std::move(shape));
  return push(OpKind::kReshape, {x}, std::move(out),
              [](Graph& g, std::uint32_t self) {
                const NodeId ix = g.nodes_[self].inputs[0];
                auto dy = g.upstream(self);
                auto dx = g.grad_buffer(ix);
                for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
              });
}

template <typename T>
NodeId Graph<T>::cosine_distance(NodeId x, NodeId y) {
  const Tensor<T>& X = value(x);
  const Tensor<T>& Y = value(y);
  require(X.rank() == 2 && Y.rank() == 2 && X.dim(1) == Y.dim(1),
          "cosine_distance: incompatible shapes " + shape_str(X.shape()) +
              " and " + shape_str(Y.shape()));
  const std::size_t n = X.dim(0), m = Y.dim(0), d = X.dim(1);
  const T floor = static_cast<T>(kCosineNormFloor);
  ConstMatMap<T> xm(X.data().data(), n, d);
  ConstMatMap<T> ym(Y.data().data(), m, d);
  // Cached per-row norms and cosine similarities for the backward pass.
  auto nx = std::make_shared<std::vector<T>>(n);
  auto ny = std::make_shared<std::vector<T>>(m);
  auto sim = std::make_shared<std::vector<T>>(n * m);
  for (std::size_t i = 0; i < n; ++i) (*nx)[i] = std::max(xm.row(i).norm(), floor);
  for (std::size_t j = 0; j < m; ++j) (*ny)[j] = std::max(ym.row(j).norm(), floor);
  MatMap<T> sm(sim->data(), n, m);
  sm.noalias() = xm * ym.transpose();
  Tensor<T> out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      T s = sm(i, j) / ((*nx)[i] * (*ny)[j]);
      sm(i, j) = s;
      out[i * m + j] = T{1} - std::clamp(s, T{-1}, T{1});
    }
  }
  return push(
      OpKind::kCosineDistance, {x, y}, std::move(out),
      [n, m, d, nx, ny, sim, floor](Graph& g, std::uint32_t self) {
        const NodeId ix = g.nodes_[self].inputs[0];
        const NodeId iy = g.nodes_[self].inputs[1];
        ConstMatMap<T> dD(g.upstream(self).data(), n, m);
        ConstMatMap<T> s(sim->data(), n, m);
        ConstMatMap<T> xm(g.val(ix.index).data().data(), n, d);
        ConstMatMap<T> ym(g.val(iy.index).data().data(), m, d);
        // D = 1 - S, dS/dx_i = y_j/(|x_i||y_j|) - S_ij x_i/|x_i|^2 while the
        // norm is above the floor (the clamped norm is constant).
        RowMat<T> w(n, m);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < m; ++j) w(i, j) = dD(i, j) / ((*nx)[i] * (*ny)[j]);
        }
        if (g.nodes_[ix.index].needs_grad) {
          MatMap<T> dx(g.grad_buffer(ix).data(), n, d);
          dx.noalias() -= w * ym;
          for (std::size_t i = 0; i < n; ++i) {
            if ((*nx)[i] <= floor) continue;
            T c{0};
            for (std::size_t j = 0; j < m; ++j) c += dD(i, j) * s(i, j);
            dx.row(i) += (c / ((*nx)[i] * (*nx)[i])) * xm.row(i);
          }
        }
        if (g.nodes_[iy.index].needs_grad) {
          MatMap<T> dy(g.grad_buffer(iy).data(), m, d);
          dy.noalias() -= w.transpose() * xm;
          for (std::size_t j = 0; j < m; ++j) {
            if ((*ny)[j] <= floor) continue;
            T c{0};
            for (std::size_t i = 0; i < n; ++i) c += dD(i, j) * s(i, j);
            dy.row(j) += (c / ((*ny)[j] * (*ny)[j])) * ym.row(j);
          }
        }
      });
}

template <typename T>
NodeId Graph<T>::scale_shift(NodeId x, Tensor<T> scale, Tensor<T> shift) {
  const Tensor<T>& X = value(x);
  require(scale.size() == X.size() && shift.size() == X.size(),
          "scale_shift: coefficient sizes must match input " + shape_str(X.shape()));
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale[i] * X[i] + shift[i];
  auto a = std::make_shared<Tensor<T>>(std::move(scale));
  return push(OpKind::kScaleShift, {x}, std::move(out),
              [a](Graph& g, std::uint32_t self) {
                const NodeId ix = g.nodes_[self].inputs[0];
                auto dy = g.upstream(self);
                auto dx = g.grad_buffer(ix);
                for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += (*a)[i] * dy[i];
              });
}

template <typename T>
NodeId Graph<T>::weighted_sum(NodeId x, Tensor<T> weights) {
  const Tensor<T>& X = value(x);
  require(weights.size() == X.size(),
          "weighted_sum: weight size must match input " + shape_str(X.shape()));
  T total{0};
  for (std::size_t i = 0; i < X.size(); ++i) total += weights[i] * X[i];
  auto wts = std::make_shared<Tensor<T>>(std::move(weights));
  return push(OpKind::kWeightedSum, {x}, Tensor<T>::scalar(total),
              [wts](Graph& g, std::uint32_t self) {
                const NodeId ix = g.nodes_[self].inputs[0];
                const T dy = g.upstream(self)[0];
                auto dx = g.grad_buffer(ix);
                for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += (*wts)[i] * dy;
              });
}

template <typename T>
NodeId Graph<T>::nll(NodeId probs, std::vector<std::size_t> labels, T eps) {
  const Tensor<T>& P = value(probs);
  require(P.rank() == 2 && P.dim(0) == labels.size(),
          "nll: probabilities " + shape_str(P.shape()) + " vs " +
              std::to_string(labels.size()) + " labels");
  const std::size_t rows = P.dim(0), classes = P.dim(1);
  T total{0};
  for (std::size_t i = 0; i < rows; ++i) {
    if (labels[i] >= classes) {
      throw ContractError("nll: label " + std::to_string(labels[i]) +
                          " out of range for " + std::to_string(classes) + " classes");
    }
    total -= std::log(P[i * classes + labels[i]] + eps);
  }
  total /= static_cast<T>(rows);
  return push(OpKind::kNll, {probs}, Tensor<T>::scalar(total),
              [labels = std::move(labels), classes, eps](Graph& g, std::uint32_t self) {
                const NodeId ip = g.nodes_[self].inputs[0];
                const T dy = g.upstream(self)[0];
                auto p = g.val(ip.index).data();
                auto dp = g.grad_buffer(ip);
                const T rows_t = static_cast<T>(labels.size());
                for (std::size_t i = 0; i < labels.size(); ++i) {
                  const std::size_t idx = i * classes + labels[i];
                  dp[idx] -= dy / (rows_t * (p[idx] + eps));
                }
              });
}

template <typename T>
NodeId Graph<T>::add(NodeId a, NodeId b) {
  const Tensor<T>& A = value(a);
  const Tensor<T>& B = value(b);
  require(A.size() == B.size(), "add: size mismatch " + shape_str(A.shape()) +
                                    " vs " + shape_str(B.shape()));
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  return push(OpKind::kAdd, {a, b}, std::move(out),
              [](Graph& g, std::uint32_t self) {
                auto dy = g.upstream(self);
                for (NodeId in : g.nodes_[self].inputs) {
                  if (!g.nodes_[in.index].needs_grad) continue;
                  auto dx = g.grad_buffer(in);
                  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                }
              });
}

template <typename T>
NodeId Graph<T>::scale(NodeId x, T factor) {
  Tensor<T> out(value(x).shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * value(x)[i];
  return push(OpKind::kScale, {x}, std::move(out),
              [factor](Graph& g, std::uint32_t self) {
                const NodeId ix = g.nodes_[self].inputs[0];
                auto dy = g.upstream(self);
                auto dx = g.grad_buffer(ix);
                for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += factor * dy[i];
              });
}

template <typename T>
NodeId Graph<T>::sum(NodeId x) {
  T total{0};
  for (T v : value(x).data()) total += v;
  return push(OpKind::kSum, {x}, Tensor<T>::scalar(total),
              [](Graph& g, std::uint32_t self) {
                const NodeId ix = g.nodes_[self].inputs[0];
                const T dy = g.upstream(self)[0];
                auto dx = g.grad_buffer(ix);
                for (T& v : dx) v += dy;
              });
}

template <typename T>
NodeId Graph<T>::dot(NodeId a, NodeId b) {
  const Tensor<T>& A = value(a);
  const Tensor<T>& B = value(b);
  require(A.size() == B.size(), "dot: size mismatch " + shape_str(A.shape()) +
                                    " vs " + shape_str(B.shape()));
  T total{0};
  for (std::size_t i = 0; i < A.size(); ++i) total += A[i] * B[i];
  return push(OpKind::kDot, {a, b}, Tensor<T>::scalar(total),
              [](Graph& g, std::uint32_t self) {
                const NodeId ia = g.nodes_[self].inputs[0];
                const NodeId ib = g.nodes_[self].inputs[1];
                const T dy = g.upstream(self)[0];
                // Read both values before touching either grad buffer (a and b
                // may be the same node).
                auto av = g.val(ia.index).data();
                auto bv = g.val(ib.index).data();
                if (g.nodes_[ia.index].needs_grad) {
                  auto da = g.grad_buffer(ia);
                  for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy * bv[i];
                }
                if (g.nodes_[ib.index].needs_grad) {
                  auto db = g.grad_buffer(ib);
                  for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy * av[i];
                }
              });
}

template <typename T>
NodeId Graph<T>::mul(NodeId a, NodeId b) {
  const Tensor<T>& A = value(a);
  const Tensor<T>& B = value(b);
  require(A.size() == B.size(), "mul: size mismatch " + shape_str(A.shape()) +
                                    " vs " + shape_str(B.shape()));
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  return push(OpKind::kMul, {a, b}, std::move(out),
              [](Graph& g, std::uint32_t self) {
                const NodeId ia = g.nodes_[self].inputs[0];
                const NodeId ib = g.nodes_[self].inputs[1];
                auto dy = g.upstream(self);
                auto av = g.val(ia.index).data();
                auto bv = g.val(ib.index).data();
                if (g.nodes_[ia.index].needs_grad) {
                  auto da = g.grad_buffer(ia);
                  for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bv[i];
                }
                if (g.nodes_[ib.index].needs_grad) {
                  auto db = g.grad_buffer(ib);
                  for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * av[i];
                }
              });
}

template <typename T>
void Graph<T>::backward(NodeId loss) {
  const Node& ln = node(loss);
  if (val(loss.index).size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_str(val(loss.index).shape()));
  }
  for (Node& n : nodes_) {
    n.grad.clear();
  }
  backward_order_.clear();
  if (!ln.needs_grad) return;
  grad_buffer(loss)[0] += T{1};
  for (std::uint32_t i = loss.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    if (n.param == nullptr && n.grad.empty()) continue;
    backward_order_.push_back(NodeId{i});
    if (n.backward) n.backward(*this, i);
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace scrl
