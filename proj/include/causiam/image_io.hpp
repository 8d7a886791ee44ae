#pragma once

#include <string>

#include "causiam/tensor.hpp"

namespace causiam {

/// Load a PNG or binary PPM (P6) image; the file extension selects the codec.
/// Values are scaled to [0,1] by the format's max value.
Image load_image(const std::string& path);

/// Save as 8-bit PNG or PPM P6 (extension selects codec).
/// Quantization is round-half-up: byte = floor(clamp(v)*255 + 0.5).
void save_image(const Image& img, const std::string& path);

}  // namespace causiam
