#pragma once

#include <string>

#include "adair/degrade.hpp"

namespace adair {

/// Binary PPM (P6, maxval ≤ 255) into a 3×H×W image scaled by 1/maxval.
/// Header comments are accepted. Errors: MalformedHeader, TruncatedPayload, Io.
Image read_image(const std::string& path);
Image decode_ppm(const std::string& bytes);

/// Writes P6 with maxval 255; values are clamped to [0,1] and rounded.
void write_image(const std::string& path, const Image& img);
std::string encode_ppm(const Image& img);

}  // namespace adair
