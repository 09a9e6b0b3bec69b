#pragma once

#include <filesystem>

#include "lumenseg/maps.hpp"
#include "lumenseg/tensor.hpp"

namespace lumenseg::data {

// Binary PPM (P6) images with maxval 255, decoded to [p, q, 3] in [0, 1].
Tensor<float> read_image(const std::filesystem::path& path);
// Values are rounded to the nearest of 256 levels; out-of-range or
// non-finite values are a NumericError.
void write_image(const Tensor<float>& image, const std::filesystem::path& path);

// Binary PGM (P5) masks with maxval 255 holding only 0 and 255.
BinaryMask read_mask(const std::filesystem::path& path);
void write_mask(const BinaryMask& mask, const std::filesystem::path& path);

}  // namespace lumenseg::data
