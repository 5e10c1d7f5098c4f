#pragma once

#include <string>

#include "ntnt/tensor.hpp"

namespace ntnt {

/// Decodes an 8-bit RGB image file to [3, H, W] with scalars in [0, 1].
/// Supported: PPM (P6), BMP (24-bit uncompressed), PNG, JPEG. Grayscale and
/// alpha-carrying PNG/JPEG inputs are expanded/stripped to RGB.
Tensor<float> decode_image_file(const std::string& path);

/// Writes a binary P6 PPM (used by tests and tooling fixtures).
void write_ppm(const std::string& path, const Tensor<float>& img);

} // namespace ntnt
