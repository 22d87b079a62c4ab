#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "reasonseg/imaging.h"

namespace reasonseg {

/// A visible object in an image. `gt_mask` is only known for synthetic
/// scenes.
struct SceneElement {
  std::string id;
  std::string name;
  std::map<std::string, std::string> attributes;
  std::string description;
  std::optional<BinaryMask> gt_mask;
};

struct ColourSpec {
  std::string_view name;
  std::array<float, 3> rgb;
  std::string_view clue;  // something commonly that colour
};

struct ShapeSpec {
  std::string_view name;
  std::string_view clue;  // verb phrase, "has no corners at all"
};

const std::vector<ColourSpec>& scene_colours();
const std::vector<ShapeSpec>& scene_shapes();

struct SceneConfig {
  int size = 256;
  int min_elements = 2;
  int max_elements = 6;
  // Fine / Medium / Coarse sampling weights for element sizes.
  std::array<double, 3> granularity_mix = {0.53, 0.25, 0.22};
  double granularity_scale = kDefaultGranularityScale;
  // Largest element area as a fraction of the image.
  double max_area_fraction = 0.12;

  void validate() const;
};

struct SyntheticScene {
  ImageBuffer image;
  std::vector<SceneElement> elements;
  std::string caption;
};

/// Procedural scene of non-overlapping flat shapes, each with a unique
/// colour. Fully determined by (config, seed). Elements that cannot be
/// placed without overlap are dropped.
SyntheticScene generate_scene(const SceneConfig& config, std::uint64_t seed);

/// "top left", "center", ... from a mask centroid on a 3 x 3 grid.
std::string position_word(const BinaryMask& mask);
std::string size_word(Granularity g);

/// Deterministic 64-bit mix of a seed and a stream index.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace reasonseg
