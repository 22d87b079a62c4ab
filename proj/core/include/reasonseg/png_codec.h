#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "reasonseg/imaging.h"

namespace reasonseg {

using Bytes = std::vector<std::uint8_t>;

/// 8-bit single-channel PNG; true -> 255, false -> 0.
Bytes mask_to_png(const BinaryMask& mask);
/// Raw 8-bit grayscale raster, row-major.
Bytes gray_to_png(int width, int height, std::span<const std::uint8_t> pixels);
/// Accepts only 8-bit grayscale PNGs whose pixels are all 0 or 255.
/// Throws DecodeError otherwise.
BinaryMask png_to_mask(std::span<const std::uint8_t> bytes);

/// 8-bit RGB PNG.
Bytes image_to_png(const ImageBuffer& image);
/// Any PNG libpng understands, flattened to RGB. Throws DecodeError on
/// malformed input and InvalidInput when the result violates ImageBuffer
/// invariants.
ImageBuffer png_to_image(std::span<const std::uint8_t> bytes);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace reasonseg
