#pragma once

#include <string>

#include "artifact/image.hpp"

namespace artifact {

// Reads a PNG or JPEG file (by content sniffing) into an RGB image in [0,1].
// Throws std::runtime_error with the path on decode failure.
Image read_image(const std::string& path);

// Writes an 8-bit RGB PNG. Output bytes depend only on pixel content.
void write_png(const std::string& path, const Image& img);

}  // namespace artifact
