// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

#include "cudkit/image.hpp"

namespace cudkit::io {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Read an 8-bit RGB PNG. Grayscale and palette images are expanded, 16-bit
/// depth is stripped to 8, and alpha is flattened over a white background.
/// Channel values decode as v/255.0.
RgbImage read_png(const std::string& path);

/// Write an 8-bit RGB PNG; channel values encode as floor(v*255 + 0.5) after
/// clamping to [0,1].
void write_png(const RgbImage& img, const std::string& path);

}  // namespace cudkit::io
