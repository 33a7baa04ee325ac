#pragma once

// Flat array container: one JSON header line
//   {"dtype":"f32le","order":"row-major","shape":[...]}\n
// followed by raw little-endian float32 payload in row-major order.
// Parse failures report the byte offset where the problem sits.

#include <string>

#include "dx2ct/tensor.hpp"

namespace dx2ct::io {

void write_array(const std::string& path, const Tensor<float>& t);
Tensor<float> read_array(const std::string& path);

// Rank-checked conveniences.
Tensor<float> read_volume(const std::string& path);  // rank 3
Tensor<float> read_image(const std::string& path);   // rank 2

}  // namespace dx2ct::io
