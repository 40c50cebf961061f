// SPDX-License-Identifier: Apache-2.0
#include "cudkit/preprocess.hpp"

#include <cmath>

namespace cudkit::preprocess {

InputTriplet build_triplet(const RgbImage& i_n, CvdKind kind) {
  InputTriplet t;
  t.i_n = i_n;
  t.i_d = colorlab::simulate_cvd(i_n, kind);
  // |invert(i_n) - invert(i_d)| = |i_d - i_n|; inversion cancels in the
  // absolute difference, but the clip keeps the published form intact.
  RgbImage m(i_n.height, i_n.width);
  for (size_t i = 0; i < m.data.size(); ++i)
    m.data[i] = std::abs((1.0 - t.i_n.data[i]) - (1.0 - t.i_d.data[i]));
  t.i_m = colorlab::clamp01(m);
  return t;
}

}  // namespace cudkit::preprocess
