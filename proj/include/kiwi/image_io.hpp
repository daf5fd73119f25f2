#pragma once

#include <string>

#include "kiwi/tensor.hpp"

namespace kiwi::img {

// 8-bit PNG I/O. Images are (H,W,3) tensors, masks (H,W); values are
// multiples of 1/255 so a write/read roundtrip is bit-exact.
void write_png(const std::string& path, const Tensor& image);
Tensor read_png(const std::string& path);

void write_png_gray(const std::string& path, const Tensor& mask);
Tensor read_png_gray(const std::string& path);

} // namespace kiwi::img
