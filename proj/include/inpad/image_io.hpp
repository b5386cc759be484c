// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "inpad/types.hpp"

namespace inpad {

/// Binary PPM (P6, 8-bit) round trip; values quantized to 1/255 steps.
void write_ppm(const std::string& path, const ImageTensor& image);
ImageTensor read_ppm(const std::string& path);

/// Binary PGM (P5). Masks use maxval 255 with 0/255 coding.
void write_pgm_mask(const std::string& path, const Mask& mask);
Mask read_pgm_mask(const std::string& path);

/// 16-bit PGM for anomaly maps; values scaled by the map maximum, which is
/// recorded alongside in the raw export.
void write_pgm16(const std::string& path, const Tensor& map);

/// Raw double array with a small header (rows, cols).
void write_raw_map(const std::string& path, const Tensor& map);
Tensor read_raw_map(const std::string& path);

} // namespace inpad
