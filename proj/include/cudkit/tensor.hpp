// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiable array engine. Graphs are rebuilt per
// forward pass (define-by-run); nodes are appended in topological order, so
// the backward sweep is a deterministic reverse iteration over creation
// order. A graph instance is confined to one thread during forward/backward;
// distinct graphs may run concurrently.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <deque>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cudkit/rng.hpp"

namespace cudkit::tensor {

using Shape = std::vector<int>;

inline int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != shape_size(shape))
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
  }
  static Tensor zeros(Shape s) {
    auto n = shape_size(s);
    return Tensor(std::move(s), std::vector<T>(static_cast<size_t>(n), T(0)));
  }
  static Tensor full(Shape s, T v) {
    auto n = shape_size(s);
    return Tensor(std::move(s), std::vector<T>(static_cast<size_t>(n), v));
  }
  int64_t size() const { return static_cast<int64_t>(data.size()); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> d(data.size());
    for (size_t i = 0; i < data.size(); ++i) d[i] = static_cast<U>(data[i]);
    return Tensor<U>(shape, std::move(d));
  }
};

template <class T>
class Graph;

/// Lightweight handle to a node inside a Graph.
template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Shape& shape() const { return graph->node(id).shape; }
  const std::vector<T>& val() const { return graph->node(id).val; }
  const std::vector<T>& grad() const { return graph->node(id).grad; }
  int64_t size() const { return static_cast<int64_t>(val().size()); }
};

template <class T>
class Graph {
 public:
  // back(graph, self_id) accumulates into parent grad buffers.
  using BackFn = std::function<void(Graph&, int)>;

  struct Node {
    Shape shape;
    std::vector<T> val;
    std::vector<T> grad;  // sized during backward, only for nodes that need it
    std::vector<int> parents;
    BackFn back;  // empty for leaves and constants
    bool needs_grad = false;
  };

  /// Leaf that participates in differentiation.
  Var<T> leaf(const Tensor<T>& t) {
    nodes_.push_back(Node{t.shape, t.data, {}, {}, nullptr, true});
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Constant input; no gradient is ever produced for it.
  Var<T> constant(const Tensor<T>& t) {
    nodes_.push_back(Node{t.shape, t.data, {}, {}, nullptr, false});
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> constant(Shape s, std::vector<T> d) {
    return constant(Tensor<T>(std::move(s), std::move(d)));
  }

  Var<T> scalar_const(T v) { return constant(Shape{1}, std::vector<T>{v}); }

  /// Register an op result. A result whose parents are all constants becomes
  /// a constant itself and drops its backward closure.
  Var<T> make(Shape shape, std::vector<T> val, std::vector<int> parents, BackFn back) {
    bool needs = false;
    for (int p : parents) needs = needs || nodes_[p].needs_grad;
    if (!needs) back = nullptr;
    nodes_.push_back(
        Node{std::move(shape), std::move(val), {}, std::move(parents), std::move(back), needs});
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(int id) { return nodes_[id]; }
  const Node& node(int id) const { return nodes_[id]; }
  int size() const { return static_cast<int>(nodes_.size()); }

  /// Gradient buffer of a node, or nullptr if the node takes no gradient.
  std::vector<T>* grad_buffer(int id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) return nullptr;
    return &n.grad;
  }

  /// Reverse-mode sweep from a scalar loss. Grads of every reachable node
  /// that needs one are (re)initialized to zero first, so repeated calls on
  /// the same graph produce identical results.
  void backward(Var<T> loss) {
    if (loss.graph != this) throw std::invalid_argument("backward: loss belongs to another graph");
    const Node& ln = nodes_[loss.id];
    if (ln.val.size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_str(ln.shape));

    std::vector<uint8_t> reach(nodes_.size(), 0);
    std::vector<int> stack{loss.id};
    reach[loss.id] = 1;
    while (!stack.empty()) {
      int id = stack.back();
      stack.pop_back();
      for (int p : nodes_[id].parents) {
        if (!reach[p] && nodes_[p].needs_grad) {
          reach[p] = 1;
          stack.push_back(p);
        }
      }
    }
    for (size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (reach[i] && n.needs_grad)
        n.grad.assign(n.val.size(), T(0));
      else
        n.grad.clear();
    }
    nodes_[loss.id].grad.assign(1, T(1));

    // Creation order is a topological order; walk it backwards.
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (reach[id] && n.back) n.back(*this, id);
    }
  }

 private:
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Shape checks
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
inline void require_same_shape(const char* op, Var<T> a, Var<T> b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

template <class T>
inline void require_same_graph(const char* op, Var<T> a, Var<T> b) {
  if (a.graph != b.graph)
    throw std::invalid_argument(std::string(op) + ": vars from different graphs");
}

template <class T>
inline void require_rank(const char* op, Var<T> x, size_t rank) {
  if (x.shape().size() != rank)
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_str(x.shape()));
}

// Elementwise unary helper: fwd(x) and dfx(x) = d fwd / d x.
template <class T, class F, class D>
Var<T> unary_elementwise(Var<T> x, F fwd, D dfx) {
  Graph<T>& g = *x.graph;
  const auto& xv = x.val();
  std::vector<T> out(xv.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  int ix = x.id;
  return g.make(x.shape(), std::move(out), {ix}, [ix, dfx](Graph<T>& gr, int self) {
    auto* gx = gr.grad_buffer(ix);
    if (!gx) return;
    const auto& gout = gr.node(self).grad;
    const auto& xv2 = gr.node(ix).val;
    for (size_t i = 0; i < gout.size(); ++i) (*gx)[i] += gout[i] * dfx(xv2[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_graph("add", a, b);
  detail::require_same_shape("add", a, b);
  Graph<T>& g = *a.graph;
  std::vector<T> out(a.val().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.val()[i] + b.val()[i];
  int ia = a.id, ib = b.id;
  return g.make(a.shape(), std::move(out), {ia, ib}, [ia, ib](Graph<T>& gr, int self) {
    const auto& gout = gr.node(self).grad;
    if (auto* ga = gr.grad_buffer(ia))
      for (size_t i = 0; i < gout.size(); ++i) (*ga)[i] += gout[i];
    if (auto* gb = gr.grad_buffer(ib))
      for (size_t i = 0; i < gout.size(); ++i) (*gb)[i] += gout[i];
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_graph("sub", a, b);
  detail::require_same_shape("sub", a, b);
  Graph<T>& g = *a.graph;
  std::vector<T> out(a.val().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.val()[i] - b.val()[i];
  int ia = a.id, ib = b.id;
  return g.make(a.shape(), std::move(out), {ia, ib}, [ia, ib](Graph<T>& gr, int self) {
    const auto& gout = gr.node(self).grad;
    if (auto* ga = gr.grad_buffer(ia))
      for (size_t i = 0; i < gout.size(); ++i) (*ga)[i] += gout[i];
    if (auto* gb = gr.grad_buffer(ib))
      for (size_t i = 0; i < gout.size(); ++i) (*gb)[i] -= gout[i];
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_graph("mul", a, b);
  detail::require_same_shape("mul", a, b);
  Graph<T>& g = *a.graph;
  std::vector<T> out(a.val().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.val()[i] * b.val()[i];
  int ia = a.id, ib = b.id;
  return g.make(a.shape(), std::move(out), {ia, ib}, [ia, ib](Graph<T>& gr, int self) {
    const auto& gout = gr.node(self).grad;
    const auto& av = gr.node(ia).val;
    const auto& bv = gr.node(ib).val;
    if (auto* ga = gr.grad_buffer(ia))
      for (size_t i = 0; i < gout.size(); ++i) (*ga)[i] += gout[i] * bv[i];
    if (auto* gb = gr.grad_buffer(ib))
      for (size_t i = 0; i < gout.size(); ++i) (*gb)[i] += gout[i] * av[i];
  });
}

template <class T>
Var<T> div(Var<T> a, Var<T> b) {
  detail::require_same_graph("div", a, b);
  detail::require_same_shape("div", a, b);
  Graph<T>& g = *a.graph;
  std::vector<T> out(a.val().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.val()[i] / b.val()[i];
  int ia = a.id, ib = b.id;
  return g.make(a.shape(), std::move(out), {ia, ib}, [ia, ib](Graph<T>& gr, int self) {
    const auto& gout = gr.node(self).grad;
    const auto& av = gr.node(ia).val;
    const auto& bv = gr.node(ib).val;
    if (auto* ga = gr.grad_buffer(ia))
      for (size_t i = 0; i < gout.size(); ++i) (*ga)[i] += gout[i] / bv[i];
    if (auto* gb = gr.grad_buffer(ib))
      for (size_t i = 0; i < gout.size(); ++i) (*gb)[i] -= gout[i] * av[i] / (bv[i] * bv[i]);
  });
}

template <class T>
Var<T> scale(Var<T> x, T c) {
  return detail::unary_elementwise(
      x, [c](T v) { return c * v; }, [c](T) { return c; });
}

template <class T>
Var<T> add_scalar(Var<T> x, T c) {
  return detail::unary_elementwise(
      x, [c](T v) { return v + c; }, [](T) { return T(1); });
}

template <class T>
Var<T> neg(Var<T> x) {
  return scale(x, T(-1));
}

template <class T>
Var<T> tanh_act(Var<T> x) {
  return detail::unary_elementwise(
      x, [](T v) { return std::tanh(v); },
      [](T v) {
        T t = std::tanh(v);
        return T(1) - t * t;
      });
}

template <class T>
Var<T> relu(Var<T> x) {
  return detail::unary_elementwise(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v) { return v > T(0) ? T(1) : T(0); });
}

/// Clip to [0,1]; subgradient 1 strictly inside (0,1), 0 outside.
template <class T>
Var<T> clamp01_diff(Var<T> x) {
  return detail::unary_elementwise(
      x, [](T v) { return v < T(0) ? T(0) : (v > T(1) ? T(1) : v); },
      [](T v) { return (v > T(0) && v < T(1)) ? T(1) : T(0); });
}

template <class T>
Var<T> abs_diff(Var<T> x) {
  return detail::unary_elementwise(
      x, [](T v) { return std::abs(v); },
      [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

/// sign(x) * sqrt(|x|); subgradient at 0 is taken as 0.
template <class T>
Var<T> signed_sqrt(Var<T> x) {
  return detail::unary_elementwise(
      x,
      [](T v) { return v >= T(0) ? std::sqrt(v) : -std::sqrt(-v); },
      [](T v) {
        if (v == T(0)) return T(0);
        return T(1) / (T(2) * std::sqrt(std::abs(v)));
      });
}

/// x^p for x > 0; defined as 0 with zero slope for x <= 0 (used after relu).
template <class T>
Var<T> pow_const(Var<T> x, double p) {
  return detail::unary_elementwise(
      x,
      [p](T v) { return v > T(0) ? static_cast<T>(std::pow(static_cast<double>(v), p)) : T(0); },
      [p](T v) {
        return v > T(0) ? static_cast<T>(p * std::pow(static_cast<double>(v), p - 1.0)) : T(0);
      });
}

template <class T>
Var<T> sum(Var<T> x) {
  Graph<T>& g = *x.graph;
  T acc = T(0);
  for (T v : x.val()) acc += v;
  int ix = x.id;
  return g.make({1}, {acc}, {ix}, [ix](Graph<T>& gr, int self) {
    if (auto* gx = gr.grad_buffer(ix)) {
      T go = gr.node(self).grad[0];
      for (auto& v : *gx) v += go;
    }
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  Graph<T>& g = *x.graph;
  T acc = T(0);
  for (T v : x.val()) acc += v;
  T n = static_cast<T>(x.val().size());
  int ix = x.id;
  return g.make({1}, {acc / n}, {ix}, [ix, n](Graph<T>& gr, int self) {
    if (auto* gx = gr.grad_buffer(ix)) {
      T go = gr.node(self).grad[0] / n;
      for (auto& v : *gx) v += go;
    }
  });
}

/// Contiguous slice along the first axis.
template <class T>
Var<T> slice_front(Var<T> x, int first, int count) {
  Graph<T>& g = *x.graph;
  const Shape& s = x.shape();
  if (s.empty() || first < 0 || count <= 0 || first + count > s[0])
    throw std::invalid_argument("slice_front: slice [" + std::to_string(first) + "," +
                                std::to_string(first + count) + ") out of bounds for shape " +
                                shape_str(s));
  int64_t stride = 1;
  for (size_t i = 1; i < s.size(); ++i) stride *= s[i];
  Shape out_shape = s;
  out_shape[0] = count;
  std::vector<T> out(static_cast<size_t>(count * stride));
  const auto& xv = x.val();
  std::copy(xv.begin() + first * stride, xv.begin() + (first + count) * stride, out.begin());
  int ix = x.id;
  int64_t off = first * stride;
  return g.make(std::move(out_shape), std::move(out), {ix}, [ix, off](Graph<T>& gr, int self) {
    if (auto* gx = gr.grad_buffer(ix)) {
      const auto& gout = gr.node(self).grad;
      for (size_t i = 0; i < gout.size(); ++i) (*gx)[off + i] += gout[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Neural-network ops
// ---------------------------------------------------------------------------

/// 3x3 cross-correlation, stride 1, zero padding 1; spatial size preserved.
/// x: [C_in,H,W], w: [C_out,C_in,3,3], b: [C_out] -> [C_out,H,W].
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b) {
  detail::require_same_graph("conv2d", x, w);
  detail::require_same_graph("conv2d", x, b);
  detail::require_rank("conv2d", x, 3);
  detail::require_rank("conv2d", w, 4);
  detail::require_rank("conv2d", b, 1);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  int c_in = xs[0], h = xs[1], wd = xs[2];
  int c_out = ws[0];
  if (ws[1] != c_in)
    throw std::invalid_argument("conv2d: input channels " + std::to_string(c_in) +
                                " != kernel C_in " + std::to_string(ws[1]));
  if (ws[2] != 3 || ws[3] != 3)
    throw std::invalid_argument("conv2d: kernel must be 3x3, got " + shape_str(ws));
  if (b.shape()[0] != c_out)
    throw std::invalid_argument("conv2d: bias length " + std::to_string(b.shape()[0]) +
                                " != C_out " + std::to_string(c_out));

  Graph<T>& g = *x.graph;
  const auto& xv = x.val();
  const auto& wv = w.val();
  const auto& bv = b.val();
  std::vector<T> out(static_cast<size_t>(c_out) * h * wd);
  for (int co = 0; co < c_out; ++co) {
    T* op = out.data() + static_cast<size_t>(co) * h * wd;
    for (int64_t i = 0; i < static_cast<int64_t>(h) * wd; ++i) op[i] = bv[co];
    for (int ci = 0; ci < c_in; ++ci) {
      const T* xp = xv.data() + static_cast<size_t>(ci) * h * wd;
      const T* wp = wv.data() + (static_cast<size_t>(co) * c_in + ci) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          T wk = wp[ky * 3 + kx];
          if (wk == T(0)) continue;
          int dy = ky - 1, dx = kx - 1;
          int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
          int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
          for (int y = y0; y < y1; ++y) {
            const T* xrow = xp + static_cast<size_t>(y + dy) * wd + dx;
            T* orow = op + static_cast<size_t>(y) * wd;
            for (int xx = x0; xx < x1; ++xx) orow[xx] += wk * xrow[xx];
          }
        }
      }
    }
  }

  int ix = x.id, iw = w.id, ib2 = b.id;
  return g.make({c_out, h, wd}, std::move(out), {ix, iw, ib2},
                [ix, iw, ib2, c_in, c_out, h, wd](Graph<T>& gr, int self) {
                  const auto& gout = gr.node(self).grad;
                  const auto& xv2 = gr.node(ix).val;
                  const auto& wv2 = gr.node(iw).val;
                  auto* gx = gr.grad_buffer(ix);
                  auto* gw = gr.grad_buffer(iw);
                  auto* gb = gr.grad_buffer(ib2);
                  for (int co = 0; co < c_out; ++co) {
                    const T* gp = gout.data() + static_cast<size_t>(co) * h * wd;
                    if (gb) {
                      T acc = T(0);
                      for (int64_t i = 0; i < static_cast<int64_t>(h) * wd; ++i) acc += gp[i];
                      (*gb)[co] += acc;
                    }
                    for (int ci = 0; ci < c_in; ++ci) {
                      const T* xp = xv2.data() + static_cast<size_t>(ci) * h * wd;
                      const T* wp = wv2.data() + (static_cast<size_t>(co) * c_in + ci) * 9;
                      T* gxp = gx ? gx->data() + static_cast<size_t>(ci) * h * wd : nullptr;
                      T* gwp = gw ? gw->data() + (static_cast<size_t>(co) * c_in + ci) * 9 : nullptr;
                      for (int ky = 0; ky < 3; ++ky) {
                        for (int kx = 0; kx < 3; ++kx) {
                          int dy = ky - 1, dx = kx - 1;
                          int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                          int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                          T wk = wp[ky * 3 + kx];
                          T wacc = T(0);
                          for (int y = y0; y < y1; ++y) {
                            const T* grow = gp + static_cast<size_t>(y) * wd;
                            const T* xrow = xp + static_cast<size_t>(y + dy) * wd + dx;
                            if (gxp) {
                              T* gxrow = gxp + static_cast<size_t>(y + dy) * wd + dx;
                              for (int xx = x0; xx < x1; ++xx) {
                                gxrow[xx] += wk * grow[xx];
                                wacc += grow[xx] * xrow[xx];
                              }
                            } else {
                              for (int xx = x0; xx < x1; ++xx) wacc += grow[xx] * xrow[xx];
                            }
                          }
                          if (gwp) gwp[ky * 3 + kx] += wacc;
                        }
                      }
                    }
                  }
                });
}

/// 2x2 average pooling with stride 2; a trailing odd row/column is averaged
/// over the partial window. [C,H,W] -> [C,ceil(H/2),ceil(W/2)].
template <class T>
Var<T> avg_pool2d(Var<T> x) {
  detail::require_rank("avg_pool2d", x, 3);
  const Shape& s = x.shape();
  int c = s[0], h = s[1], w = s[2];
  int oh = (h + 1) / 2, ow = (w + 1) / 2;
  Graph<T>& g = *x.graph;
  const auto& xv = x.val();
  std::vector<T> out(static_cast<size_t>(c) * oh * ow);
  for (int ch = 0; ch < c; ++ch) {
    const T* xp = xv.data() + static_cast<size_t>(ch) * h * w;
    T* op = out.data() + static_cast<size_t>(ch) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      int y0 = 2 * oy, y1 = std::min(h, y0 + 2);
      for (int ox = 0; ox < ow; ++ox) {
        int x0 = 2 * ox, x1 = std::min(w, x0 + 2);
        T acc = T(0);
        for (int y = y0; y < y1; ++y)
          for (int xx = x0; xx < x1; ++xx) acc += xp[static_cast<size_t>(y) * w + xx];
        op[static_cast<size_t>(oy) * ow + ox] = acc / static_cast<T>((y1 - y0) * (x1 - x0));
      }
    }
  }
  int ix = x.id;
  return g.make({c, oh, ow}, std::move(out), {ix}, [ix, c, h, w, oh, ow](Graph<T>& gr, int self) {
    auto* gx = gr.grad_buffer(ix);
    if (!gx) return;
    const auto& gout = gr.node(self).grad;
    for (int ch = 0; ch < c; ++ch) {
      T* gxp = gx->data() + static_cast<size_t>(ch) * h * w;
      const T* gp = gout.data() + static_cast<size_t>(ch) * oh * ow;
      for (int oy = 0; oy < oh; ++oy) {
        int y0 = 2 * oy, y1 = std::min(h, y0 + 2);
        for (int ox = 0; ox < ow; ++ox) {
          int x0 = 2 * ox, x1 = std::min(w, x0 + 2);
          T share = gp[static_cast<size_t>(oy) * ow + ox] / static_cast<T>((y1 - y0) * (x1 - x0));
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) gxp[static_cast<size_t>(y) * w + xx] += share;
        }
      }
    }
  });
}

/// Per-channel spatial mean: [C,H,W] -> [C].
template <class T>
Var<T> global_avg_pool(Var<T> x) {
  detail::require_rank("global_avg_pool", x, 3);
  const Shape& s = x.shape();
  int c = s[0];
  int64_t hw = static_cast<int64_t>(s[1]) * s[2];
  Graph<T>& g = *x.graph;
  const auto& xv = x.val();
  std::vector<T> out(c);
  for (int ch = 0; ch < c; ++ch) {
    T acc = T(0);
    const T* xp = xv.data() + static_cast<size_t>(ch) * hw;
    for (int64_t i = 0; i < hw; ++i) acc += xp[i];
    out[ch] = acc / static_cast<T>(hw);
  }
  int ix = x.id;
  return g.make({c}, std::move(out), {ix}, [ix, c, hw](Graph<T>& gr, int self) {
    auto* gx = gr.grad_buffer(ix);
    if (!gx) return;
    const auto& gout = gr.node(self).grad;
    for (int ch = 0; ch < c; ++ch) {
      T share = gout[ch] / static_cast<T>(hw);
      T* gxp = gx->data() + static_cast<size_t>(ch) * hw;
      for (int64_t i = 0; i < hw; ++i) gxp[i] += share;
    }
  });
}

/// Fully connected layer: x [n], w [m,n], b [m] -> [m].
template <class T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  detail::require_rank("dense", x, 1);
  detail::require_rank("dense", w, 2);
  detail::require_rank("dense", b, 1);
  int n = x.shape()[0], m = w.shape()[0];
  if (w.shape()[1] != n)
    throw std::invalid_argument("dense: weight inner dim " + std::to_string(w.shape()[1]) +
                                " != input length " + std::to_string(n));
  if (b.shape()[0] != m)
    throw std::invalid_argument("dense: bias length " + std::to_string(b.shape()[0]) +
                                " != output length " + std::to_string(m));
  Graph<T>& g = *x.graph;
  const auto& xv = x.val();
  const auto& wv = w.val();
  const auto& bv = b.val();
  std::vector<T> out(m);
  for (int i = 0; i < m; ++i) {
    T acc = bv[i];
    const T* wr = wv.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) acc += wr[j] * xv[j];
    out[i] = acc;
  }
  int ix = x.id, iw = w.id, ib = b.id;
  return g.make({m}, std::move(out), {ix, iw, ib}, [ix, iw, ib, m, n](Graph<T>& gr, int self) {
    const auto& gout = gr.node(self).grad;
    const auto& xv2 = gr.node(ix).val;
    const auto& wv2 = gr.node(iw).val;
    auto* gx = gr.grad_buffer(ix);
    auto* gw = gr.grad_buffer(iw);
    auto* gb = gr.grad_buffer(ib);
    for (int i = 0; i < m; ++i) {
      T go = gout[i];
      if (gb) (*gb)[i] += go;
      const T* wr = wv2.data() + static_cast<size_t>(i) * n;
      if (gx)
        for (int j = 0; j < n; ++j) (*gx)[j] += go * wr[j];
      if (gw) {
        T* gwr = gw->data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) gwr[j] += go * xv2[j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Count Sketch and FFT circular convolution
// ---------------------------------------------------------------------------

/// Count-Sketch parameters: target dimension d, hash indices and signs of
/// input length n. Fixed after initialization (not trainable).
struct SketchSeed {
  int dim = 0;
  std::vector<int> h;
  std::vector<int8_t> s;

  static SketchSeed init(int n, int d, Rng& rng) {
    SketchSeed seed;
    seed.dim = d;
    seed.h.resize(n);
    seed.s.resize(n);
    for (int i = 0; i < n; ++i) {
      seed.h[i] = static_cast<int>(rng.below(static_cast<uint64_t>(d)));
      seed.s[i] = static_cast<int8_t>(rng.sign());
    }
    return seed;
  }
};

/// psi(x)[j] = sum_{i: h(i)=j} s(i) * x(i). Linear; backward is the
/// transpose scatter.
template <class T>
Var<T> count_sketch(Var<T> x, const SketchSeed& seed) {
  detail::require_rank("count_sketch", x, 1);
  int n = x.shape()[0];
  if (static_cast<int>(seed.h.size()) != n)
    throw std::invalid_argument("count_sketch: seed length " + std::to_string(seed.h.size()) +
                                " != input length " + std::to_string(n));
  Graph<T>& g = *x.graph;
  const auto& xv = x.val();
  std::vector<T> out(seed.dim, T(0));
  for (int i = 0; i < n; ++i) out[seed.h[i]] += static_cast<T>(seed.s[i]) * xv[i];
  int ix = x.id;
  std::vector<int> hz = seed.h;
  std::vector<int8_t> sz = seed.s;
  return g.make({seed.dim}, std::move(out), {ix},
                [ix, hz = std::move(hz), sz = std::move(sz), n](Graph<T>& gr, int self) {
                  auto* gx = gr.grad_buffer(ix);
                  if (!gx) return;
                  const auto& gout = gr.node(self).grad;
                  for (int i = 0; i < n; ++i) (*gx)[i] += static_cast<T>(sz[i]) * gout[hz[i]];
                });
}

namespace detail {

inline bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

inline constexpr double kPi = 3.14159265358979323846;

/// Iterative radix-2 FFT, in place. inverse=true applies the 1/N scaling.
template <class T>
void fft_radix2(std::vector<std::complex<T>>& a, bool inverse) {
  const int n = static_cast<int>(a.size());
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * kPi / len * (inverse ? 1.0 : -1.0);
    std::complex<T> wl(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
    for (int i = 0; i < n; i += len) {
      std::complex<T> w(1);
      for (int j = 0; j < len / 2; ++j) {
        std::complex<T> u = a[i + j];
        std::complex<T> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& v : a) v /= static_cast<T>(n);
}

/// Circular convolution of two equal-length real vectors via FFT.
template <class T>
std::vector<T> circular_convolve(const std::vector<T>& a, const std::vector<T>& b) {
  const int d = static_cast<int>(a.size());
  std::vector<std::complex<T>> fa(a.begin(), a.end()), fb(b.begin(), b.end());
  fft_radix2(fa, false);
  fft_radix2(fb, false);
  for (int i = 0; i < d; ++i) fa[i] *= fb[i];
  fft_radix2(fa, true);
  std::vector<T> out(d);
  for (int i = 0; i < d; ++i) out[i] = fa[i].real();
  return out;
}

template <class T>
std::vector<T> reverse_cyclic(const std::vector<T>& v) {
  const int d = static_cast<int>(v.size());
  std::vector<T> out(d);
  for (int i = 0; i < d; ++i) out[i] = v[(d - i) % d];
  return out;
}

}  // namespace detail

/// Circular convolution via FFT elementwise products; requires equal
/// power-of-two lengths. Differentiable in both inputs.
template <class T>
Var<T> circular_conv_fft(Var<T> a, Var<T> b) {
  detail::require_same_graph("circular_conv_fft", a, b);
  detail::require_rank("circular_conv_fft", a, 1);
  detail::require_rank("circular_conv_fft", b, 1);
  if (a.shape()[0] != b.shape()[0])
    throw std::invalid_argument("circular_conv_fft: length mismatch " +
                                std::to_string(a.shape()[0]) + " vs " +
                                std::to_string(b.shape()[0]));
  int d = a.shape()[0];
  if (!detail::is_power_of_two(d))
    throw std::invalid_argument("circular_conv_fft: length " + std::to_string(d) +
                                " is not a power of two");
  Graph<T>& g = *a.graph;
  std::vector<T> out = detail::circular_convolve(a.val(), b.val());
  int ia = a.id, ib = b.id;
  return g.make({d}, std::move(out), {ia, ib}, [ia, ib](Graph<T>& gr, int self) {
    const auto& gout = gr.node(self).grad;
    // d/da circ(a,b) = circ(g, reverse(b)); symmetric for b.
    if (auto* ga = gr.grad_buffer(ia)) {
      auto gback = detail::circular_convolve(gout, detail::reverse_cyclic(gr.node(ib).val));
      for (size_t i = 0; i < gback.size(); ++i) (*ga)[i] += gback[i];
    }
    if (auto* gb = gr.grad_buffer(ib)) {
      auto gback = detail::circular_convolve(gout, detail::reverse_cyclic(gr.node(ia).val));
      for (size_t i = 0; i < gback.size(); ++i) (*gb)[i] += gback[i];
    }
  });
}

/// x / ||x||_2, or the zero vector when ||x|| = 0.
template <class T>
Var<T> l2_normalize(Var<T> x) {
  detail::require_rank("l2_normalize", x, 1);
  Graph<T>& g = *x.graph;
  const auto& xv = x.val();
  T nsq = T(0);
  for (T v : xv) nsq += v * v;
  T norm = std::sqrt(nsq);
  std::vector<T> out(xv.size(), T(0));
  if (norm > T(0))
    for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] / norm;
  int ix = x.id;
  return g.make(x.shape(), std::move(out), {ix}, [ix, norm](Graph<T>& gr, int self) {
    auto* gx = gr.grad_buffer(ix);
    if (!gx || norm <= T(0)) return;
    const auto& gout = gr.node(self).grad;
    const auto& xv2 = gr.node(ix).val;
    T dot = T(0);
    for (size_t i = 0; i < gout.size(); ++i) dot += gout[i] * xv2[i];
    T n3 = norm * norm * norm;
    for (size_t i = 0; i < gout.size(); ++i)
      (*gx)[i] += gout[i] / norm - xv2[i] * dot / n3;
  });
}

/// Valid-mode weighted window mean per channel with an odd square kernel
/// (used for SSIM Gaussian windows). [C,H,W] -> [C,H-k+1,W-k+1].
template <class T>
Var<T> window_filter(Var<T> x, const std::vector<T>& kernel, int k) {
  detail::require_rank("window_filter", x, 3);
  if (static_cast<int>(kernel.size()) != k * k)
    throw std::invalid_argument("window_filter: kernel size mismatch");
  const Shape& s = x.shape();
  int c = s[0], h = s[1], w = s[2];
  if (h < k || w < k)
    throw std::invalid_argument("window_filter: image " + shape_str(s) +
                                " smaller than window " + std::to_string(k));
  int oh = h - k + 1, ow = w - k + 1;
  Graph<T>& g = *x.graph;
  const auto& xv = x.val();
  std::vector<T> out(static_cast<size_t>(c) * oh * ow, T(0));
  for (int ch = 0; ch < c; ++ch) {
    const T* xp = xv.data() + static_cast<size_t>(ch) * h * w;
    T* op = out.data() + static_cast<size_t>(ch) * oh * ow;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T wk = kernel[ky * k + kx];
        for (int y = 0; y < oh; ++y) {
          const T* xrow = xp + static_cast<size_t>(y + ky) * w + kx;
          T* orow = op + static_cast<size_t>(y) * ow;
          for (int xx = 0; xx < ow; ++xx) orow[xx] += wk * xrow[xx];
        }
      }
  }
  int ix = x.id;
  std::vector<T> kern = kernel;
  return g.make({c, oh, ow}, std::move(out), {ix},
                [ix, kern, k, c, h, w, oh, ow](Graph<T>& gr, int self) {
                  auto* gx = gr.grad_buffer(ix);
                  if (!gx) return;
                  const auto& gout = gr.node(self).grad;
                  for (int ch = 0; ch < c; ++ch) {
                    T* gxp = gx->data() + static_cast<size_t>(ch) * h * w;
                    const T* gp = gout.data() + static_cast<size_t>(ch) * oh * ow;
                    for (int ky = 0; ky < k; ++ky)
                      for (int kx = 0; kx < k; ++kx) {
                        T wk = kern[ky * k + kx];
                        for (int y = 0; y < oh; ++y) {
                          T* gxrow = gxp + static_cast<size_t>(y + ky) * w + kx;
                          const T* grow = gp + static_cast<size_t>(y) * ow;
                          for (int xx = 0; xx < ow; ++xx) gxrow[xx] += wk * grow[xx];
                        }
                      }
                  }
                });
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

/// Central-difference check of backward() for a scalar-valued function of one
/// DiffArray. Returns the maximum relative error across coordinates listed in
/// `indices` (all coordinates when empty). Meant for T = double.
template <class T>
double grad_check(const std::function<Var<T>(Graph<T>&, Var<T>)>& f, const Tensor<T>& x, T eps,
                  const std::vector<int64_t>& indices = {}) {
  Graph<T> g;
  Var<T> xv = g.leaf(x);
  Var<T> y = f(g, xv);
  if (y.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  g.backward(y);
  std::vector<T> analytic = xv.grad();

  auto eval = [&f](const Tensor<T>& xe) {
    Graph<T> ge;
    Var<T> v = ge.leaf(xe);
    return f(ge, v).val()[0];
  };

  std::vector<int64_t> idx = indices;
  if (idx.empty()) {
    idx.resize(x.data.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
  }

  double max_rel = 0.0;
  for (int64_t i : idx) {
    Tensor<T> xp = x;
    xp.data[i] += eps;
    double fp = eval(xp);
    xp.data[i] = x.data[i] - eps;
    double fm = eval(xp);
    double fd = (fp - fm) / (2.0 * static_cast<double>(eps));
    double an = static_cast<double>(analytic[i]);
    double denom = std::max({std::abs(fd), std::abs(an), 1e-7});
    max_rel = std::max(max_rel, std::abs(fd - an) / denom);
  }
  return max_rel;
}

}  // namespace cudkit::tensor
