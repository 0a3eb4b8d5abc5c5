#pragma once

#include <string>

#include "sidkit/core/tensor.hpp"

namespace sidkit {

// Binary PPM (P6) / PGM (P5) image files, 8-bit.
// Tensors are [3, H, W] (PGM loads replicate the gray channel), values in
// [0, 1] on the 1/255 grid, so write -> read round-trips exactly.

Tensor read_image(const std::string& path);
void write_ppm(const std::string& path, const Tensor& chw);
void write_pgm(const std::string& path, const Tensor& hw);  // single channel [H, W]

}  // namespace sidkit
