#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace reasonseg {

/// Row-major RGB raster with intensities normalized to [0,1].
class ImageBuffer {
 public:
  static constexpr int kChannels = 3;
  static constexpr int kMinSide = 8;

  ImageBuffer() = default;
  /// Throws InvalidInput when the side is below kMinSide, the data length is
  /// wrong, or any value is non-finite or outside [0,1].
  ImageBuffer(int width, int height, std::vector<float> data);
  /// Filled with a constant intensity.
  static ImageBuffer filled(int width, int height, float value);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return data_.empty(); }
  std::span<const float> data() const noexcept { return data_; }

  float at(int x, int y, int c) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }

  /// Bilinear resample (half-pixel centers, edge clamped).
  ImageBuffer resized(int width, int height) const;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// Mutable pixel scratch space used while painting scenes; converted to an
/// ImageBuffer once complete.
struct Canvas {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  Canvas(int w, int h, float r, float g, float b);
  void set(int x, int y, float r, float g, float b);
  ImageBuffer finish() const { return ImageBuffer(width, height, data); }
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, bool fill = false);
  BinaryMask(int width, int height, std::vector<std::uint8_t> bits);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return bits_.size(); }

  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  bool same_shape(const BinaryMask& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }
  /// Nearest-neighbour resample.
  BinaryMask resized(int width, int height) const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;  // one byte per pixel, 0 or 1
};

std::size_t mask_area(const BinaryMask& mask);
std::size_t mask_intersection(const BinaryMask& a, const BinaryMask& b);
std::size_t mask_union(const BinaryMask& a, const BinaryMask& b);

/// |a∩b| / |a∪b|; 1.0 when both are empty. Throws InvalidInput on a shape
/// mismatch.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

enum class Granularity { Fine, Medium, Coarse };

std::string_view to_string(Granularity g);
Granularity granularity_from_string(std::string_view s);

struct GranularityLabel {
  Granularity value = Granularity::Fine;
  std::uint64_t area_px = 0;
  double scale_factor = 1.6;
};

inline constexpr double kDefaultGranularityScale = 1.6;
/// Side of the square image that mask areas are standardized to before
/// classification.
inline constexpr int kStandardImageSide = 1024;

/// Fine below (s*32)^2, Coarse above (s*96)^2, Medium on the closed interval
/// between. Throws InvalidInput when s <= 0.
GranularityLabel classify_granularity(std::uint64_t area_px, double s = kDefaultGranularityScale);

/// Area rescaled to a kStandardImageSide square image.
double standardized_area(std::size_t native_area, int width, int height);

}  // namespace reasonseg
