#pragma once

#include <string>

#include "dgsp/tensor.hpp"

namespace dgsp {

// Decodes an 8- or 16-bit grayscale PNG into (H,W) floats in [0,1].
// Gray+alpha inputs have the alpha channel dropped.
Tensor<float> read_png_gray(const std::string& path);

// Writes (H,W) floats as 8-bit grayscale; values are clamped to [0,1] and
// rounded to the nearest level.
void write_png_gray8(const std::string& path, const Tensor<float>& img);

// Writes (H,W) floats as 16-bit grayscale.
void write_png_gray16(const std::string& path, const Tensor<float>& img);

// Writes a binary mask: pixels above 0.5 become 255, the rest 0.
void write_png_mask(const std::string& path, const Tensor<float>& mask);

}  // namespace dgsp
