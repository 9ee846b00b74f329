#pragma once

#include "stainr/tensor.hpp"

#include <string>

namespace stainr {

/// Binary P6 with maxval 255. Values are rounded to the nearest 8-bit level
/// after clamping to [0,1]. Throws DataError on I/O failure.
void write_ppm(const std::string& path, const Tensor<double>& image);
/// Reads a P6 file (maxval 255) into a [3,H,W] tensor with values k/255.
Tensor<double> read_ppm(const std::string& path);

}  // namespace stainr
