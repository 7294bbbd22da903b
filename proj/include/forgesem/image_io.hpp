#pragma once

#include <string>

#include "forgesem/tensor.hpp"

namespace forgesem {

// Images are CxHxW float tensors. PNG I/O quantizes to 8 bits; the raw
// .bin container round-trips f32 exactly.

Tensor read_png(const std::string& path);
void write_png(const std::string& path, const Tensor& img); // values clamped to [0,1]

Tensor read_bin(const std::string& path);
void write_bin(const std::string& path, const Tensor& img);

// dispatches on extension (.png or .bin)
Tensor read_image(const std::string& path);

Tensor resize_bilinear_image(const Tensor& img, int out_h, int out_w);

} // namespace forgesem
