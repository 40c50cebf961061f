// SPDX-License-Identifier: Apache-2.0
//
// The training objective: stencil masking, conjugate prediction on the L
// channel, CIELab L1 + MS-SSIM loss, differentiable histogram loss, and the
// identity term. Everything here is differentiable end to end.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cudkit/colorlab.hpp"
#include "cudkit/cudnet.hpp"
#include "cudkit/image.hpp"
#include "cudkit/tensor.hpp"

namespace cudkit::losses {

using tensor::Graph;
using tensor::Tensor;
using tensor::Var;

/// Per-pixel change mask; true where input and target differ after 8-bit
/// quantization (the non-CUD region that the filter is supposed to move).
struct ChangeMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> changed;  // 1 = differs

  size_t count_changed() const {
    size_t n = 0;
    for (uint8_t v : changed) n += v;
    return n;
  }
};

inline ChangeMask stencil_mask(const RgbImage& i, const RgbImage& t) {
  if (!i.same_shape(t))
    throw std::invalid_argument("stencil_mask: dimension mismatch " + std::to_string(i.height) +
                                "x" + std::to_string(i.width) + " vs " + std::to_string(t.height) +
                                "x" + std::to_string(t.width));
  ChangeMask m{i.height, i.width, std::vector<uint8_t>(i.pixels(), 0)};
  for (size_t p = 0; p < i.pixels(); ++p) {
    for (int c = 0; c < 3; ++c) {
      int qi = static_cast<int>(quantize8(i.data[p * 3 + c]) * 255.0 + 0.5);
      int qt = static_cast<int>(quantize8(t.data[p * 3 + c]) * 255.0 + 0.5);
      if (qi != qt) {
        m.changed[p] = 1;
        break;
      }
    }
  }
  return m;
}

namespace detail {

/// [3,H,W] tensor from an interleaved image.
template <class T>
Tensor<T> planar(const RgbImage& img) {
  const int64_t plane = static_cast<int64_t>(img.height) * img.width;
  Tensor<T> t = Tensor<T>::zeros({3, img.height, img.width});
  for (int64_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c)
      t.data[static_cast<int64_t>(c) * plane + p] = static_cast<T>(img.data[p * 3 + c]);
  return t;
}

/// [1,H,W] CIELab L (0..100) of an image, computed outside the graph.
template <class T>
Tensor<T> lightness_plane(const RgbImage& img) {
  Tensor<T> t = Tensor<T>::zeros({1, img.height, img.width});
  for (size_t p = 0; p < img.pixels(); ++p)
    t.data[p] = static_cast<T>(
        colorlab::lab_lightness_pixel(img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]));
  return t;
}

}  // namespace detail

/// Replace unchanged pixels by the target values and block their gradients;
/// losses downstream only penalize the changed (non-CUD) region.
template <class T>
Var<T> apply_stencil(Var<T> pred_rgb, const RgbImage& t, const ChangeMask& mask) {
  const tensor::Shape& s = pred_rgb.shape();
  if (s.size() != 3 || s[0] != 3 || s[1] != mask.height || s[2] != mask.width)
    throw std::invalid_argument("apply_stencil: prediction shape " + tensor::shape_str(s) +
                                " does not match mask " + std::to_string(mask.height) + "x" +
                                std::to_string(mask.width));
  if (t.height != mask.height || t.width != mask.width)
    throw std::invalid_argument("apply_stencil: target does not match mask dimensions");
  Graph<T>& g = *pred_rgb.graph;
  const int64_t plane = static_cast<int64_t>(mask.height) * mask.width;
  const auto& pv = pred_rgb.val();
  std::vector<T> out(pv.size());
  for (int c = 0; c < 3; ++c)
    for (int64_t p = 0; p < plane; ++p)
      out[c * plane + p] = mask.changed[p] ? pv[c * plane + p]
                                           : static_cast<T>(t.data[p * 3 + c]);
  int ip = pred_rgb.id;
  std::vector<uint8_t> m = mask.changed;
  return g.make(s, std::move(out), {ip},
                [ip, m = std::move(m), plane](Graph<T>& gr, int self) {
                  auto* gp = gr.grad_buffer(ip);
                  if (!gp) return;
                  const auto& gout = gr.node(self).grad;
                  for (int c = 0; c < 3; ++c)
                    for (int64_t p = 0; p < plane; ++p)
                      if (m[p]) (*gp)[c * plane + p] += gout[c * plane + p];
                });
}

/// Differentiable CIELab lightness of a companded sRGB [3,H,W] tensor;
/// output [1,H,W] with L in [0,100].
template <class T>
Var<T> lab_lightness(Var<T> rgb) {
  tensor::detail::require_rank("lab_lightness", rgb, 3);
  if (rgb.shape()[0] != 3)
    throw std::invalid_argument("lab_lightness: expected 3 channels, got " +
                                tensor::shape_str(rgb.shape()));
  Graph<T>& g = *rgb.graph;
  const int64_t plane = static_cast<int64_t>(rgb.shape()[1]) * rgb.shape()[2];
  constexpr double kW[3] = {0.2126729, 0.7151522, 0.0721750};
  constexpr double kEps = 216.0 / 24389.0;
  constexpr double kKappa = 24389.0 / 27.0;
  const auto& xv = rgb.val();
  std::vector<T> out(plane);
  for (int64_t p = 0; p < plane; ++p) {
    double y = 0.0;
    for (int c = 0; c < 3; ++c)
      y += kW[c] * colorlab::srgb_decompand(static_cast<double>(xv[c * plane + p]));
    double fy = y > kEps ? std::cbrt(y) : (kKappa * y + 16.0) / 116.0;
    out[p] = static_cast<T>(116.0 * fy - 16.0);
  }
  int ir = rgb.id;
  return g.make({1, rgb.shape()[1], rgb.shape()[2]}, std::move(out), {ir},
                [ir, plane](Graph<T>& gr, int self) {
                  auto* gx = gr.grad_buffer(ir);
                  if (!gx) return;
                  const auto& gout = gr.node(self).grad;
                  const auto& xv2 = gr.node(ir).val;
                  for (int64_t p = 0; p < plane; ++p) {
                    double y = 0.0;
                    double dlin[3];
                    for (int c = 0; c < 3; ++c) {
                      double cv = static_cast<double>(xv2[c * plane + p]);
                      y += kW[c] * colorlab::srgb_decompand(cv);
                      dlin[c] = cv <= 0.04045
                                    ? 1.0 / 12.92
                                    : (2.4 / 1.055) * std::pow((cv + 0.055) / 1.055, 1.4);
                    }
                    double dfy = y > kEps ? std::cbrt(y * y) : 0.0;  // cbrt(y)^2
                    double dLdy = y > kEps ? 116.0 / (3.0 * dfy) : 116.0 * kKappa / 116.0;
                    double go = static_cast<double>(gout[p]) * dLdy;
                    for (int c = 0; c < 3; ++c)
                      (*gx)[c * plane + p] += static_cast<T>(go * kW[c] * dlin[c]);
                  }
                });
}

/// Conjugate prediction on L channels. Per pixel the reflection about the
/// input, R1 = 2*in - pred, and the raw prediction R2 = pred are clipped at
/// the target (max when in > tgt, min otherwise) and the candidate closer to
/// the target wins; ties go to R2. Gradient flows through the winner with
/// chain factor -1 (R1), +1 (R2) or 0 where the clip is active.
template <class T>
Var<T> conjugate_select(Var<T> pred_L, const Tensor<T>& in_L, const Tensor<T>& tgt_L) {
  if (pred_L.shape() != in_L.shape || pred_L.shape() != tgt_L.shape)
    throw std::invalid_argument("conjugate_select: dimension mismatch pred " +
                                tensor::shape_str(pred_L.shape()) + " in " +
                                tensor::shape_str(in_L.shape) + " tgt " +
                                tensor::shape_str(tgt_L.shape));
  Graph<T>& g = *pred_L.graph;
  const auto& pv = pred_L.val();
  const size_t n = pv.size();
  std::vector<T> out(n);
  std::vector<int8_t> factor(n);
  for (size_t p = 0; p < n; ++p) {
    T in = in_L.data[p], tgt = tgt_L.data[p], pred = pv[p];
    T r1 = T(2) * in - pred, r2 = pred;
    bool above = in > tgt;
    T c1 = above ? std::max(r1, tgt) : std::min(r1, tgt);
    T c2 = above ? std::max(r2, tgt) : std::min(r2, tgt);
    T d1 = (c1 - tgt) * (c1 - tgt), d2 = (c2 - tgt) * (c2 - tgt);
    if (d1 < d2) {
      out[p] = c1;
      factor[p] = (c1 == r1) ? -1 : 0;
    } else {
      out[p] = c2;
      factor[p] = (c2 == r2) ? 1 : 0;
    }
  }
  int ip = pred_L.id;
  return g.make(pred_L.shape(), std::move(out), {ip},
                [ip, factor = std::move(factor)](Graph<T>& gr, int self) {
                  auto* gp = gr.grad_buffer(ip);
                  if (!gp) return;
                  const auto& gout = gr.node(self).grad;
                  for (size_t p = 0; p < gout.size(); ++p)
                    (*gp)[p] += gout[p] * static_cast<T>(factor[p]);
                });
}

// ---------------------------------------------------------------------------
// Differentiable MS-SSIM (on single-channel [1,H,W] data in [0,1])
// ---------------------------------------------------------------------------

constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

namespace detail {

template <class T>
std::vector<T> gaussian_window(int k, double sigma) {
  std::vector<T> w(static_cast<size_t>(k) * k);
  double c = (k - 1) / 2.0, sum = 0.0;
  for (int y = 0; y < k; ++y)
    for (int x = 0; x < k; ++x) {
      double v = std::exp(-((y - c) * (y - c) + (x - c) * (x - c)) / (2.0 * sigma * sigma));
      w[static_cast<size_t>(y) * k + x] = static_cast<T>(v);
      sum += v;
    }
  for (auto& v : w) v = static_cast<T>(static_cast<double>(v) / sum);
  return w;
}

/// window size: 11 when it fits, otherwise the largest odd size that does.
inline int ssim_window_size(int h, int w) {
  int k = std::min({11, h, w});
  if (k % 2 == 0) --k;
  if (k < 1) throw std::invalid_argument("ssim: image smaller than any usable window");
  return k;
}

/// number of dyadic scales (ceil halving) that keep min(H,W) >= window.
inline int ms_ssim_scales(int h, int w, int window, int max_scales = 5) {
  int m = 0;
  while (m < max_scales && std::min(h, w) >= window) {
    ++m;
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return std::max(1, m);
}

}  // namespace detail

/// Multi-scale SSIM between two [1,H,W] vars in [0,1]. Images smaller than
/// the standard 11x11 window fall back to a smaller odd window; the scale
/// count shrinks (weights renormalized) until the coarsest scale still fits
/// one window. Negative contrast terms are clipped at zero before the
/// fractional powers.
template <class T>
Var<T> ms_ssim_diff(Var<T> a, Var<T> b) {
  tensor::detail::require_same_graph("ms_ssim_diff", a, b);
  tensor::detail::require_same_shape("ms_ssim_diff", a, b);
  tensor::detail::require_rank("ms_ssim_diff", a, 3);
  const int h = a.shape()[1], w = a.shape()[2];
  const int k = detail::ssim_window_size(h, w);
  const int scales = detail::ms_ssim_scales(h, w, k);
  const std::vector<T> window = detail::gaussian_window<T>(k, 1.5);
  double wsum = 0.0;
  for (int j = 0; j < scales; ++j) wsum += kMsSsimWeights[j];

  const T c1 = static_cast<T>(0.01 * 0.01);  // (0.01*R)^2, R=1
  const T c2 = static_cast<T>(0.03 * 0.03);

  Var<T> result = a.graph->scalar_const(T(1));
  Var<T> xa = a, xb = b;
  for (int j = 0; j < scales; ++j) {
    Var<T> mu_a = tensor::window_filter(xa, window, k);
    Var<T> mu_b = tensor::window_filter(xb, window, k);
    Var<T> aa = tensor::window_filter(mul(xa, xa), window, k);
    Var<T> bb = tensor::window_filter(mul(xb, xb), window, k);
    Var<T> ab = tensor::window_filter(mul(xa, xb), window, k);
    Var<T> var_a = sub(aa, mul(mu_a, mu_a));
    Var<T> var_b = sub(bb, mul(mu_b, mu_b));
    Var<T> cov = sub(ab, mul(mu_a, mu_b));
    Var<T> cs_map = div(add_scalar(scale(cov, T(2)), c2), add_scalar(add(var_a, var_b), c2));
    Var<T> term;
    if (j + 1 < scales) {
      term = mean(cs_map);
      xa = tensor::avg_pool2d(xa);
      xb = tensor::avg_pool2d(xb);
    } else {
      Var<T> l_map = div(add_scalar(scale(mul(mu_a, mu_b), T(2)), c1),
                         add_scalar(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), c1));
      term = mean(mul(l_map, cs_map));
    }
    result = mul(result, tensor::pow_const(tensor::relu(term), kMsSsimWeights[j] / wsum));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Loss terms
// ---------------------------------------------------------------------------

struct HistParams {
  int bins = 64;
  double sigma = 1.0 / 64.0;
  double weight = 1.0;  // numerator of the 1/(H*W) scale
};

/// Lab loss on L data already extracted (0..100 units): mean L1 of L/100
/// plus (1 - MS-SSIM of L/100). Returns the two terms separately.
template <class T>
std::pair<Var<T>, Var<T>> lab_loss_terms_on_L(Var<T> pred_L, Var<T> tgt_L) {
  Var<T> ps = scale(pred_L, static_cast<T>(0.01));
  Var<T> ts = scale(tgt_L, static_cast<T>(0.01));
  Var<T> l1 = mean(abs_diff(sub(ps, ts)));
  Var<T> ms = sub(ps.graph->scalar_const(T(1)), ms_ssim_diff(ps, ts));
  return {l1, ms};
}

/// Lab loss between two RGB images (pred differentiable, target constant).
template <class T>
std::pair<Var<T>, Var<T>> lab_loss_terms(Var<T> pred_rgb, const RgbImage& tgt) {
  const tensor::Shape& s = pred_rgb.shape();
  if (s.size() != 3 || s[0] != 3 || s[1] != tgt.height || s[2] != tgt.width)
    throw std::invalid_argument("lab_loss: prediction shape " + tensor::shape_str(s) +
                                " does not match target " + std::to_string(tgt.height) + "x" +
                                std::to_string(tgt.width));
  Graph<T>& g = *pred_rgb.graph;
  Var<T> pred_L = lab_lightness(pred_rgb);
  Var<T> tgt_L = g.constant(detail::lightness_plane<T>(tgt));
  return lab_loss_terms_on_L(pred_L, tgt_L);
}

template <class T>
Var<T> lab_loss(Var<T> pred_rgb, const RgbImage& tgt) {
  auto [l1, ms] = lab_loss_terms(pred_rgb, tgt);
  return add(l1, ms);
}

/// Soft histogram: N_b = sum_p exp(-(p - c_b)^2 / (2 sigma^2)) with bin
/// centers c_b = (b + 0.5)/B. Unnormalized counts, fully differentiable.
template <class T>
Var<T> soft_histogram(Var<T> x, int bins, double sigma) {
  if (bins < 2) throw std::invalid_argument("soft_histogram: need at least 2 bins");
  Graph<T>& g = *x.graph;
  const auto& xv = x.val();
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  std::vector<T> out(bins, T(0));
  for (size_t p = 0; p < xv.size(); ++p) {
    double v = static_cast<double>(xv[p]);
    for (int b = 0; b < bins; ++b) {
      double d = v - (b + 0.5) / bins;
      out[b] += static_cast<T>(std::exp(-d * d * inv2s2));
    }
  }
  int ix = x.id;
  return g.make({bins}, std::move(out), {ix},
                [ix, bins, inv2s2](Graph<T>& gr, int self) {
                  auto* gx = gr.grad_buffer(ix);
                  if (!gx) return;
                  const auto& gout = gr.node(self).grad;
                  const auto& xv2 = gr.node(ix).val;
                  const double sigma2inv = 2.0 * inv2s2;  // 1/sigma^2
                  for (size_t p = 0; p < xv2.size(); ++p) {
                    double v = static_cast<double>(xv2[p]);
                    double acc = 0.0;
                    for (int b = 0; b < bins; ++b) {
                      double c = (b + 0.5) / bins;
                      double d = v - c;
                      acc += static_cast<double>(gout[b]) * std::exp(-d * d * inv2s2) *
                             (-d * sigma2inv);
                    }
                    (*gx)[p] += static_cast<T>(acc);
                  }
                });
}

/// Histogram loss: per-RGB-channel L1 distance between soft histograms of
/// prediction and target, scaled by weight/(H*W).
template <class T>
Var<T> histogram_loss(Var<T> pred_rgb, const RgbImage& tgt, const HistParams& hp = {}) {
  const tensor::Shape& s = pred_rgb.shape();
  if (s.size() != 3 || s[0] != 3 || s[1] != tgt.height || s[2] != tgt.width)
    throw std::invalid_argument("histogram_loss: prediction shape " + tensor::shape_str(s) +
                                " does not match target " + std::to_string(tgt.height) + "x" +
                                std::to_string(tgt.width));
  Graph<T>& g = *pred_rgb.graph;
  Var<T> tgt_planar = g.constant(detail::planar<T>(tgt));
  Var<T> acc = g.scalar_const(T(0));
  for (int c = 0; c < 3; ++c) {
    Var<T> hp_pred = soft_histogram(tensor::slice_front(pred_rgb, c, 1), hp.bins, hp.sigma);
    Var<T> hp_tgt = soft_histogram(tensor::slice_front(tgt_planar, c, 1), hp.bins, hp.sigma);
    acc = add(acc, sum(abs_diff(sub(hp_pred, hp_tgt))));
  }
  T omega = static_cast<T>(hp.weight / (static_cast<double>(tgt.height) * tgt.width));
  return scale(acc, omega);
}

/// Identity term: run the filter on the target and ask it to change nothing.
/// No conjugate prediction and no stencil.
template <class T>
Var<T> identity_loss(Graph<T>& g, const RgbImage& tgt, const cudnet::Weights<T>& w,
                     const cudnet::WeightVars<T>& wv, CvdKind kind, const HistParams& hp = {}) {
  cudnet::Forward<T> fw = cudnet::forward(g, tgt, w, wv, kind);
  auto [l1, ms] = lab_loss_terms(fw.pred_rgb, tgt);
  return add(add(l1, ms), histogram_loss(fw.pred_rgb, tgt, hp));
}

/// Per-step loss breakdown; total = lab_l1 + ms_ssim_term + hist + lambda_id * identity.
struct LossReport {
  double lab_l1 = 0;
  double ms_ssim_term = 0;
  double hist = 0;
  double identity = 0;
  double total = 0;
};

template <class T>
struct TotalLoss {
  Var<T> value;  // scalar
  LossReport report;
};

/// Full objective for one (input, target) pair. The Lab term sees the
/// conjugate-selected, stencil-masked prediction; the histogram term sees
/// the raw prediction.
template <class T>
TotalLoss<T> total_loss(Graph<T>& g, const RgbImage& input, const RgbImage& tgt,
                        const cudnet::Weights<T>& w, const cudnet::WeightVars<T>& wv,
                        CvdKind kind, double lambda_id = 1.0, const HistParams& hp = {}) {
  if (!input.same_shape(tgt))
    throw std::invalid_argument("total_loss: input and target dimensions differ");
  cudnet::Forward<T> fw = cudnet::forward(g, input, w, wv, kind);

  ChangeMask mask = stencil_mask(input, tgt);
  Var<T> masked = apply_stencil(fw.pred_rgb, tgt, mask);
  Var<T> pred_L = lab_lightness(masked);
  Tensor<T> in_L = detail::lightness_plane<T>(input);
  Tensor<T> tgt_L = detail::lightness_plane<T>(tgt);
  Var<T> selected = conjugate_select(pred_L, in_L, tgt_L);
  auto [l1, ms] = lab_loss_terms_on_L(selected, g.constant(tgt_L));

  Var<T> hist = histogram_loss(fw.pred_rgb, tgt, hp);
  Var<T> ident = identity_loss(g, tgt, w, wv, kind, hp);

  Var<T> total = add(add(add(l1, ms), hist), scale(ident, static_cast<T>(lambda_id)));
  TotalLoss<T> out{total, {}};
  out.report.lab_l1 = static_cast<double>(l1.val()[0]);
  out.report.ms_ssim_term = static_cast<double>(ms.val()[0]);
  out.report.hist = static_cast<double>(hist.val()[0]);
  out.report.identity = static_cast<double>(ident.val()[0]);
  out.report.total = static_cast<double>(total.val()[0]);
  return out;
}

}  // namespace cudkit::losses
