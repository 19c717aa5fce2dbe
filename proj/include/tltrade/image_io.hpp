#pragma once

#include <filesystem>

#include "tltrade/tensor.hpp"

namespace tlt {

// Netpbm codec (P2/P3 ASCII, P5/P6 binary, 8 or 16 bit). Pixels decode to
// unit-interval reals; the result is height x width x {1,3}.
Tensor read_image(const std::filesystem::path& path);

// Writes an 8-bit P5 (1 channel) or P6 (3 channels) file. Values are clamped
// to [0, 1] and rounded to the nearest of 256 levels.
void write_image(const std::filesystem::path& path, const Tensor& image);

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

}  // namespace tlt
