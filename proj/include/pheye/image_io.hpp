#pragma once

#include <string>
#include <string_view>

#include "pheye/vision.hpp"

namespace pheye {

// Binary (P6) or ASCII (P3) PPM, 8-bit or 16-bit. Values scaled to [0, 1].
Image decode_ppm(std::string_view bytes);
std::string encode_ppm(const Image& image);

// PPM always; PNG when built with libpng. Dispatches on the file signature.
Image load_image(const std::string& path);
bool png_supported();

}  // namespace pheye
