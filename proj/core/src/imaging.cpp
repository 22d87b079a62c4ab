#include "reasonseg/imaging.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "reasonseg/errors.h"

namespace reasonseg {

ImageBuffer::ImageBuffer(int width, int height, std::vector<float> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (width < kMinSide || height < kMinSide) {
    throw InvalidInput("image must be at least 8x8, got " + std::to_string(width) + "x" +
                       std::to_string(height));
  }
  if (data_.size() != static_cast<std::size_t>(width) * height * kChannels) {
    throw InvalidInput("image data length does not match width*height*3");
  }
  for (float v : data_) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw InvalidInput("image intensity outside [0,1] or non-finite");
    }
  }
}

ImageBuffer ImageBuffer::filled(int width, int height, float value) {
  return ImageBuffer(width, height,
                     std::vector<float>(static_cast<std::size_t>(width) * height * kChannels, value));
}

ImageBuffer ImageBuffer::resized(int width, int height) const {
  if (width == width_ && height == height_) return *this;
  std::vector<float> out(static_cast<std::size_t>(width) * height * kChannels);
  const double sx = static_cast<double>(width_) / width;
  const double sy = static_cast<double>(height_) / height;
  for (int y = 0; y < height; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(height_ - 1));
    int y0 = static_cast<int>(std::floor(fy));
    int y1 = std::min(y0 + 1, height_ - 1);
    double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(width_ - 1));
      int x0 = static_cast<int>(std::floor(fx));
      int x1 = std::min(x0 + 1, width_ - 1);
      double wx = fx - x0;
      for (int c = 0; c < kChannels; ++c) {
        double top = at(x0, y0, c) * (1 - wx) + at(x1, y0, c) * wx;
        double bot = at(x0, y1, c) * (1 - wx) + at(x1, y1, c) * wx;
        double v = top * (1 - wy) + bot * wy;
        out[(static_cast<std::size_t>(y) * width + x) * kChannels + c] =
            static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return ImageBuffer(width, height, std::move(out));
}

Canvas::Canvas(int w, int h, float r, float g, float b)
    : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3) {
  for (std::size_t i = 0; i < data.size(); i += 3) {
    data[i] = r;
    data[i + 1] = g;
    data[i + 2] = b;
  }
}

void Canvas::set(int x, int y, float r, float g, float b) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  data[i] = r;
  data[i + 1] = g;
  data[i + 2] = b;
}

BinaryMask::BinaryMask(int width, int height, bool fill)
    : width_(width), height_(height),
      bits_(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), fill ? 1 : 0) {
  if (width <= 0 || height <= 0) throw InvalidInput("mask dimensions must be positive");
}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
  if (width <= 0 || height <= 0) throw InvalidInput("mask dimensions must be positive");
  if (bits_.size() != static_cast<std::size_t>(width) * height) {
    throw InvalidInput("mask bit count does not match width*height");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

BinaryMask BinaryMask::resized(int width, int height) const {
  if (width == width_ && height == height_) return *this;
  BinaryMask out(width, height);
  for (int y = 0; y < height; ++y) {
    int sy = std::min(height_ - 1, static_cast<int>((y + 0.5) * height_ / height));
    for (int x = 0; x < width; ++x) {
      int sx = std::min(width_ - 1, static_cast<int>((x + 0.5) * width_ / width));
      out.set(x, y, at(sx, sy));
    }
  }
  return out;
}

std::size_t mask_area(const BinaryMask& mask) {
  std::size_t n = 0;
  for (auto b : mask.bits()) n += b;
  return n;
}

namespace {
void require_same_shape(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) {
    throw InvalidInput("mask dimension mismatch: " + std::to_string(a.width()) + "x" +
                       std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                       std::to_string(b.height()));
  }
}
}  // namespace

std::size_t mask_intersection(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b);
  auto ab = a.bits();
  auto bb = b.bits();
  std::size_t n = 0;
  for (std::size_t i = 0; i < ab.size(); ++i) n += ab[i] & bb[i];
  return n;
}

std::size_t mask_union(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b);
  auto ab = a.bits();
  auto bb = b.bits();
  std::size_t n = 0;
  for (std::size_t i = 0; i < ab.size(); ++i) n += ab[i] | bb[i];
  return n;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  std::size_t u = mask_union(a, b);
  if (u == 0) return 1.0;
  return static_cast<double>(mask_intersection(a, b)) / static_cast<double>(u);
}

std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::Fine: return "fine";
    case Granularity::Medium: return "medium";
    case Granularity::Coarse: return "coarse";
  }
  return "fine";
}

Granularity granularity_from_string(std::string_view s) {
  if (s == "fine") return Granularity::Fine;
  if (s == "medium") return Granularity::Medium;
  if (s == "coarse") return Granularity::Coarse;
  throw InvalidInput("unknown granularity label: " + std::string(s));
}

GranularityLabel classify_granularity(std::uint64_t area_px, double s) {
  if (!(s > 0.0) || !std::isfinite(s)) throw InvalidInput("granularity scale factor must be positive");
  const double fine_below = (s * 32.0) * (s * 32.0);
  const double coarse_above = (s * 96.0) * (s * 96.0);
  const double a = static_cast<double>(area_px);
  GranularityLabel label{Granularity::Medium, area_px, s};
  if (a < fine_below) {
    label.value = Granularity::Fine;
  } else if (a > coarse_above) {
    label.value = Granularity::Coarse;
  }
  return label;
}

double standardized_area(std::size_t native_area, int width, int height) {
  if (width <= 0 || height <= 0) throw InvalidInput("image dimensions must be positive");
  const double side = kStandardImageSide;
  return static_cast<double>(native_area) * (side * side) / (static_cast<double>(width) * height);
}

}  // namespace reasonseg
