// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "cudkit/colorlab.hpp"
#include "cudkit/image.hpp"
#include "cudkit/tensor.hpp"

namespace cudkit::preprocess {

/// The three-image expanded input: the original image, its CVD simulation,
/// and the map image |invert(i_n) - invert(i_d)| clipped to [0,1].
struct InputTriplet {
  RgbImage i_n;
  RgbImage i_d;
  RgbImage i_m;
};

InputTriplet build_triplet(const RgbImage& i_n, CvdKind kind);

/// Pack the triplet as a [9,H,W] tensor of HSV channels in stream order
/// (i_n, i_d, i_m). The result is model input data, not part of any
/// differentiation graph.
template <class T>
tensor::Tensor<T> to_model_input(const InputTriplet& t) {
  const int h = t.i_n.height, w = t.i_n.width;
  tensor::Tensor<T> out = tensor::Tensor<T>::zeros({9, h, w});
  const RgbImage* imgs[3] = {&t.i_n, &t.i_d, &t.i_m};
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int k = 0; k < 3; ++k) {
    HsvImage hsv = colorlab::rgb_to_hsv(*imgs[k]);
    for (int64_t p = 0; p < plane; ++p)
      for (int c = 0; c < 3; ++c)
        out.data[(static_cast<int64_t>(k) * 3 + c) * plane + p] =
            static_cast<T>(hsv.data[p * 3 + c]);
  }
  return out;
}

}  // namespace cudkit::preprocess
