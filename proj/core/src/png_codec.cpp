#include "reasonseg/png_codec.h"

#include <png.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "reasonseg/errors.h"

namespace reasonseg {
namespace {

// Owns a png_image so the libpng read state is released on every path.
struct PngImage {
  png_image img;
  PngImage() {
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&img); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

Bytes encode(int width, int height, png_uint_32 format, const std::uint8_t* pixels) {
  PngImage png;
  png.img.width = static_cast<png_uint_32>(width);
  png.img.height = static_cast<png_uint_32>(height);
  png.img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png.img, nullptr, &size, 0, pixels, 0, nullptr)) {
    throw std::runtime_error(std::string("png encode failed: ") + png.img.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&png.img, out.data(), &size, 0, pixels, 0, nullptr)) {
    throw std::runtime_error(std::string("png encode failed: ") + png.img.message);
  }
  out.resize(size);
  return out;
}

}  // namespace

Bytes mask_to_png(const BinaryMask& mask) {
  std::vector<std::uint8_t> px(mask.size());
  auto bits = mask.bits();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = bits[i] ? 255 : 0;
  return encode(mask.width(), mask.height(), PNG_FORMAT_GRAY, px.data());
}

Bytes gray_to_png(int width, int height, std::span<const std::uint8_t> pixels) {
  if (width <= 0 || height <= 0 || pixels.size() != static_cast<std::size_t>(width) * height) {
    throw InvalidInput("gray raster size does not match dimensions");
  }
  return encode(width, height, PNG_FORMAT_GRAY, pixels.data());
}

BinaryMask png_to_mask(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw DecodeError("empty mask data");
  PngImage png;
  if (!png_image_begin_read_from_memory(&png.img, bytes.data(), bytes.size())) {
    throw DecodeError(std::string("malformed mask png: ") + png.img.message);
  }
  if ((png.img.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_ALPHA)) != 0) {
    throw DecodeError("mask png must be single-channel grayscale");
  }
  png.img.format = PNG_FORMAT_GRAY;
  const int w = static_cast<int>(png.img.width);
  const int h = static_cast<int>(png.img.height);
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(png.img));
  if (!png_image_finish_read(&png.img, nullptr, px.data(), 0, nullptr)) {
    throw DecodeError(std::string("malformed mask png: ") + png.img.message);
  }
  std::vector<std::uint8_t> bits(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (px[i] == 255) {
      bits[i] = 1;
    } else if (px[i] != 0) {
      throw DecodeError("mask png contains non-binary value " + std::to_string(px[i]));
    }
  }
  return BinaryMask(w, h, std::move(bits));
}

Bytes image_to_png(const ImageBuffer& image) {
  auto data = image.data();
  std::vector<std::uint8_t> px(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    px[i] = static_cast<std::uint8_t>(std::lround(data[i] * 255.0f));
  }
  return encode(image.width(), image.height(), PNG_FORMAT_RGB, px.data());
}

ImageBuffer png_to_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw DecodeError("empty image data");
  PngImage png;
  if (!png_image_begin_read_from_memory(&png.img, bytes.data(), bytes.size())) {
    throw DecodeError(std::string("malformed image png: ") + png.img.message);
  }
  png.img.format = PNG_FORMAT_RGB;
  const int w = static_cast<int>(png.img.width);
  const int h = static_cast<int>(png.img.height);
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(png.img));
  if (!png_image_finish_read(&png.img, nullptr, px.data(), 0, nullptr)) {
    throw DecodeError(std::string("malformed image png: ") + png.img.message);
  }
  std::vector<float> data(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) data[i] = px[i] / 255.0f;
  return ImageBuffer(w, h, std::move(data));
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace reasonseg
