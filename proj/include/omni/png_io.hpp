#pragma once

#include <string>

#include "omni/image.hpp"

namespace omni {

// 8-bit RGB, values mapped to/from [0,1].
void write_png_rgb8(const std::string& path, const ColorImage& img);
ColorImage read_png_rgb8(const std::string& path);

// 16-bit grayscale carrying raw integer values (depth millimeters or mask
// indices).
void write_png_gray16(const std::string& path, const LabelImage& img);
LabelImage read_png_gray16(const std::string& path);

}  // namespace omni
