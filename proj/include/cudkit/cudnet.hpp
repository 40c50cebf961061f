// SPDX-License-Identifier: Apache-2.0
//
// The neural color filter: three weight-shared convolutional feature streams
// over the (original, simulated, map) HSV inputs, compact bilinear fusion,
// regression to 64 curve knots, and a multiplicative piecewise-linear filter
// on the S and V channels of the original image.
#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cudkit/colorlab.hpp"
#include "cudkit/image.hpp"
#include "cudkit/preprocess.hpp"
#include "cudkit/tensor.hpp"

namespace cudkit::cudnet {

using tensor::Graph;
using tensor::SketchSeed;
using tensor::Tensor;
using tensor::Var;

constexpr int kKnotsPerChannel = 32;
constexpr int kHeadOutputs = 2 * kKnotsPerChannel;
constexpr int kMinImageSize = 16;  // four pooling halvings

struct ModelConfig {
  std::array<int, 4> channels{16, 32, 64, 64};
  int sketch_dim = 512;  // power of two (FFT constraint)

  static ModelConfig standard() { return {}; }
  // The reduced-bottleneck variant: last feature width 16.
  static ModelConfig low_bottleneck() {
    ModelConfig c;
    c.channels = {16, 32, 64, 16};
    return c;
  }
  bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct ConvLayer {
  Tensor<T> w;  // [C_out, C_in, 3, 3]
  Tensor<T> b;  // [C_out]
};

/// All model parameters. The four conv layers are shared by the three
/// streams; the Count-Sketch seeds are fixed at initialization and the
/// regression head maps the fused feature to 64 knots.
template <class T>
struct Weights {
  ModelConfig cfg;
  std::array<ConvLayer<T>, 4> conv;
  std::array<std::array<SketchSeed, 2>, 3> seeds;  // per MCB stage: (left, right)
  Tensor<T> head_w;  // [64, d]
  Tensor<T> head_b;  // [64]

  static Weights init(const ModelConfig& cfg, uint64_t seed) {
    Weights w;
    w.cfg = cfg;
    Rng rng(seed);
    auto uniform_init = [&rng](Tensor<T>& t, int fan_in, int fan_out) {
      double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
    };
    int c_prev = 3;
    for (int k = 0; k < 4; ++k) {
      int c_out = cfg.channels[k];
      w.conv[k].w = Tensor<T>::zeros({c_out, c_prev, 3, 3});
      w.conv[k].b = Tensor<T>::zeros({c_out});
      uniform_init(w.conv[k].w, c_prev * 9, c_out * 9);
      c_prev = c_out;
    }
    w.head_w = Tensor<T>::zeros({kHeadOutputs, cfg.sketch_dim});
    w.head_b = Tensor<T>::zeros({kHeadOutputs});
    uniform_init(w.head_w, cfg.sketch_dim, kHeadOutputs);
    const int c4 = cfg.channels[3];
    const int d = cfg.sketch_dim;
    const int stage_left[3] = {c4, d, d};
    for (int stage = 0; stage < 3; ++stage) {
      w.seeds[stage][0] = SketchSeed::init(stage_left[stage], d, rng);
      w.seeds[stage][1] = SketchSeed::init(c4, d, rng);
    }
    return w;
  }

  template <class U>
  Weights<U> cast() const {
    Weights<U> out;
    out.cfg = cfg;
    for (int k = 0; k < 4; ++k) {
      out.conv[k].w = conv[k].w.template cast<U>();
      out.conv[k].b = conv[k].b.template cast<U>();
    }
    out.seeds = seeds;
    out.head_w = head_w.template cast<U>();
    out.head_b = head_b.template cast<U>();
    return out;
  }

  /// Trainable arrays in the fixed serialization order.
  std::vector<std::pair<std::string, Tensor<T>*>> named_trainable() {
    std::vector<std::pair<std::string, Tensor<T>*>> v;
    for (int k = 0; k < 4; ++k) {
      v.emplace_back("conv" + std::to_string(k + 1) + ".w", &conv[k].w);
      v.emplace_back("conv" + std::to_string(k + 1) + ".b", &conv[k].b);
    }
    v.emplace_back("head.w", &head_w);
    v.emplace_back("head.b", &head_b);
    return v;
  }
};

/// The regressed knot vectors; knot j sits at abscissa j/31 and scales the
/// channel value multiplicatively.
struct CurveParams {
  std::array<double, kKnotsPerChannel> s_knots{};
  std::array<double, kKnotsPerChannel> v_knots{};
};

/// Piecewise-linear curve evaluation: with M = 31 intervals,
/// S(x) = k_0 + sum_m (k_{m+1} - k_m) * clip01(31x - m). Continuous, with
/// S(j/31) = k_j.
inline double apply_curve(double x, std::span<const double> knots) {
  const int m_intervals = static_cast<int>(knots.size()) - 1;
  double acc = knots[0];
  for (int m = 0; m < m_intervals; ++m) {
    double t = m_intervals * x - m;
    t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
    acc += (knots[m + 1] - knots[m]) * t;
  }
  return acc;
}

/// Handles to the weight leaves inside one graph.
template <class T>
struct WeightVars {
  std::array<std::pair<Var<T>, Var<T>>, 4> conv;  // (w, b) per layer
  Var<T> head_w, head_b;
};

template <class T>
WeightVars<T> register_weights(Graph<T>& g, const Weights<T>& w) {
  WeightVars<T> vars;
  for (int k = 0; k < 4; ++k)
    vars.conv[k] = {g.leaf(w.conv[k].w), g.leaf(w.conv[k].b)};
  vars.head_w = g.leaf(w.head_w);
  vars.head_b = g.leaf(w.head_b);
  return vars;
}

/// One feature stream: 4 x (conv3x3 -> avg pool -> tanh), then global average
/// pooling. Output length is channels[3] regardless of the input size.
template <class T>
Var<T> extract_features(Var<T> x, const WeightVars<T>& w) {
  const tensor::Shape& s = x.shape();
  if (s.size() != 3 || s[0] != 3)
    throw std::invalid_argument("extract_features: expected [3,H,W], got " +
                                tensor::shape_str(s));
  if (s[1] < kMinImageSize || s[2] < kMinImageSize)
    throw std::invalid_argument("extract_features: image " + std::to_string(s[1]) + "x" +
                                std::to_string(s[2]) + " below minimum " +
                                std::to_string(kMinImageSize) + "x" +
                                std::to_string(kMinImageSize));
  Var<T> h = x;
  for (int k = 0; k < 4; ++k) {
    h = tensor::conv2d(h, w.conv[k].first, w.conv[k].second);
    h = tensor::avg_pool2d(h);
    h = tensor::tanh_act(h);
  }
  return tensor::global_avg_pool(h);
}

/// One compact-bilinear stage: sketch both inputs, convolve in FFT space,
/// then signed square root and L2 normalization.
template <class T>
Var<T> mcb(Var<T> a, Var<T> b, const SketchSeed& sa, const SketchSeed& sb) {
  Var<T> pa = tensor::count_sketch(a, sa);
  Var<T> pb = tensor::count_sketch(b, sb);
  Var<T> c = tensor::circular_conv_fft(pa, pb);
  return tensor::l2_normalize(tensor::signed_sqrt(c));
}

/// Three chained MCB stages; the original-image stream enters twice (stages
/// 1 and 3) to weight its properties more heavily in the fused feature.
template <class T>
Var<T> fuse(Var<T> f_n, Var<T> f_d, Var<T> f_m, const Weights<T>& w) {
  Var<T> g1 = mcb(f_n, f_d, w.seeds[0][0], w.seeds[0][1]);
  Var<T> g2 = mcb(g1, f_m, w.seeds[1][0], w.seeds[1][1]);
  return mcb(g2, f_n, w.seeds[2][0], w.seeds[2][1]);
}

/// Map the fused feature to 64 knots in (0,2): k = 1 + tanh(dense(g)).
/// Zero-initialized head weights give the identity filter (all knots 1).
template <class T>
Var<T> regress_nodes(Var<T> g, const WeightVars<T>& w) {
  return tensor::add_scalar(tensor::tanh_act(tensor::dense(g, w.head_w, w.head_b)), T(1));
}

/// out[p] = x[p] * S(x[p]) where S is the piecewise-linear curve over the
/// knots. x is constant per-pixel channel data; only the knots take grads.
template <class T>
Var<T> curve_scale(Var<T> knots, const Tensor<T>& x) {
  if (knots.shape() != tensor::Shape{kKnotsPerChannel})
    throw std::invalid_argument("curve_scale: expected " + std::to_string(kKnotsPerChannel) +
                                " knots, got " + tensor::shape_str(knots.shape()));
  Graph<T>& g = *knots.graph;
  const auto& kv = knots.val();
  const int m_intervals = kKnotsPerChannel - 1;
  const size_t n = x.data.size();
  std::vector<T> out(n);
  std::vector<int> cell(n);
  std::vector<T> frac(n);
  for (size_t p = 0; p < n; ++p) {
    T xv = x.data[p];
    T t = static_cast<T>(m_intervals) * xv;
    int i = static_cast<int>(t);
    if (i > m_intervals - 1) i = m_intervals - 1;
    if (i < 0) i = 0;
    T f = t - static_cast<T>(i);
    cell[p] = i;
    frac[p] = f;
    T s = kv[i] + (kv[i + 1] - kv[i]) * f;
    out[p] = xv * s;
  }
  int ik = knots.id;
  Tensor<T> xc = x;
  return g.make(x.shape, std::move(out), {ik},
                [ik, xc = std::move(xc), cell = std::move(cell),
                 frac = std::move(frac)](Graph<T>& gr, int self) {
                  auto* gk = gr.grad_buffer(ik);
                  if (!gk) return;
                  const auto& gout = gr.node(self).grad;
                  for (size_t p = 0; p < gout.size(); ++p) {
                    T gxp = gout[p] * xc.data[p];
                    (*gk)[cell[p]] += gxp * (T(1) - frac[p]);
                    (*gk)[cell[p] + 1] += gxp * frac[p];
                  }
                });
}

/// HSV -> companded sRGB with constant hue and differentiable S, V planes.
/// Matches colorlab::hsv_to_rgb_pixel values; gradients follow the active
/// hue sector. [H,W] inputs -> [3,H,W].
template <class T>
Var<T> hsv_to_rgb_sv(const Tensor<T>& hue, Var<T> s, Var<T> v) {
  tensor::detail::require_same_graph("hsv_to_rgb_sv", s, v);
  tensor::detail::require_same_shape("hsv_to_rgb_sv", s, v);
  if (hue.shape != s.shape())
    throw std::invalid_argument("hsv_to_rgb_sv: hue shape " + tensor::shape_str(hue.shape) +
                                " != S/V shape " + tensor::shape_str(s.shape()));
  Graph<T>& g = *s.graph;
  const size_t n = hue.data.size();
  // Per pixel and output channel, rgb = v * (1 - s * a) with constant a:
  //   a = 0 for the "v" leg, 1 for "p", f for "q", (1-f) for "t".
  std::vector<T> coef(n * 3);
  for (size_t p = 0; p < n; ++p) {
    double h = static_cast<double>(hue.data[p]);
    h -= std::floor(h);
    double x = h * 6.0;
    int sector = std::min(5, static_cast<int>(x));
    double f = x - sector;
    double q = f, t = 1.0 - f;
    double a[3];
    switch (sector) {
      case 0: a[0] = 0; a[1] = t; a[2] = 1; break;   // (v, t, p)
      case 1: a[0] = q; a[1] = 0; a[2] = 1; break;   // (q, v, p)
      case 2: a[0] = 1; a[1] = 0; a[2] = t; break;   // (p, v, t)
      case 3: a[0] = 1; a[1] = q; a[2] = 0; break;   // (p, q, v)
      case 4: a[0] = t; a[1] = 1; a[2] = 0; break;   // (t, p, v)
      default: a[0] = 0; a[1] = 1; a[2] = q; break;  // (v, p, q)
    }
    for (int c = 0; c < 3; ++c) coef[static_cast<size_t>(c) * n + p] = static_cast<T>(a[c]);
  }
  const auto& sv = s.val();
  const auto& vv = v.val();
  tensor::Shape out_shape{3, s.shape()[0], s.shape()[1]};
  std::vector<T> out(n * 3);
  for (int c = 0; c < 3; ++c)
    for (size_t p = 0; p < n; ++p) {
      T a = coef[static_cast<size_t>(c) * n + p];
      out[static_cast<size_t>(c) * n + p] = vv[p] * (T(1) - sv[p] * a);
    }
  int is = s.id, iv = v.id;
  return g.make(std::move(out_shape), std::move(out), {is, iv},
                [is, iv, coef = std::move(coef), n](Graph<T>& gr, int self) {
                  const auto& gout = gr.node(self).grad;
                  const auto& sv2 = gr.node(is).val;
                  const auto& vv2 = gr.node(iv).val;
                  auto* gs = gr.grad_buffer(is);
                  auto* gv = gr.grad_buffer(iv);
                  for (int c = 0; c < 3; ++c) {
                    const T* gp = gout.data() + static_cast<size_t>(c) * n;
                    const T* ap = coef.data() + static_cast<size_t>(c) * n;
                    if (gv)
                      for (size_t p = 0; p < n; ++p)
                        (*gv)[p] += gp[p] * (T(1) - sv2[p] * ap[p]);
                    if (gs)
                      for (size_t p = 0; p < n; ++p) (*gs)[p] -= gp[p] * vv2[p] * ap[p];
                  }
                });
}

/// Full differentiable pipeline output for one image.
template <class T>
struct Forward {
  Var<T> pred_rgb;  // [3,H,W], companded sRGB in [0,1]
  Var<T> knots;     // [64], S knots then V knots
  CurveParams curve;
};

template <class T>
Forward<T> forward(Graph<T>& g, const RgbImage& i_n, const Weights<T>& w,
                   const WeightVars<T>& wv, CvdKind kind) {
  if (i_n.height < kMinImageSize || i_n.width < kMinImageSize)
    throw std::invalid_argument("forward: image " + std::to_string(i_n.height) + "x" +
                                std::to_string(i_n.width) + " below minimum " +
                                std::to_string(kMinImageSize) + "x" +
                                std::to_string(kMinImageSize));
  preprocess::InputTriplet triplet = preprocess::build_triplet(i_n, kind);
  Tensor<T> packed = preprocess::to_model_input<T>(triplet);

  const int h = i_n.height, wd = i_n.width;
  const int64_t plane = static_cast<int64_t>(h) * wd;
  Tensor<T> hue({h, wd}, {packed.data.begin(), packed.data.begin() + plane});
  Tensor<T> sat({h, wd}, {packed.data.begin() + plane, packed.data.begin() + 2 * plane});
  Tensor<T> val({h, wd}, {packed.data.begin() + 2 * plane, packed.data.begin() + 3 * plane});

  Var<T> input = g.constant(packed);
  Var<T> f_n = extract_features(tensor::slice_front(input, 0, 3), wv);
  Var<T> f_d = extract_features(tensor::slice_front(input, 3, 3), wv);
  Var<T> f_m = extract_features(tensor::slice_front(input, 6, 3), wv);
  Var<T> fused = fuse(f_n, f_d, f_m, w);
  Var<T> knots = regress_nodes(fused, wv);

  Var<T> s_knots = tensor::slice_front(knots, 0, kKnotsPerChannel);
  Var<T> v_knots = tensor::slice_front(knots, kKnotsPerChannel, kKnotsPerChannel);
  Var<T> s_out = clamp01_diff(curve_scale(s_knots, sat));
  Var<T> v_out = clamp01_diff(curve_scale(v_knots, val));
  Var<T> pred = hsv_to_rgb_sv(hue, s_out, v_out);

  Forward<T> out{pred, knots, {}};
  for (int j = 0; j < kKnotsPerChannel; ++j) {
    out.curve.s_knots[j] = static_cast<double>(knots.val()[j]);
    out.curve.v_knots[j] = static_cast<double>(knots.val()[kKnotsPerChannel + j]);
  }
  return out;
}

/// Convenience single-image prediction on a throwaway graph.
template <class T>
std::pair<RgbImage, CurveParams> predict(const RgbImage& i_n, const Weights<T>& w, CvdKind kind) {
  Graph<T> g;
  WeightVars<T> wv = register_weights(g, w);
  Forward<T> fw = forward(g, i_n, w, wv, kind);
  RgbImage out(i_n.height, i_n.width);
  const auto& pv = fw.pred_rgb.val();
  const int64_t plane = static_cast<int64_t>(i_n.height) * i_n.width;
  for (int64_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c)
      out.data[p * 3 + c] = static_cast<double>(pv[static_cast<size_t>(c) * plane + p]);
  return {std::move(out), fw.curve};
}

}  // namespace cudkit::cudnet
