#include "reasonseg/scene.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "reasonseg/errors.h"

namespace reasonseg {
namespace {

constexpr double kPi = 3.14159265358979323846;

struct Placed {
  std::size_t colour;
  std::size_t shape;
  double native_area;
};

// Half extents of a shape with the given area, and its pixel test.
struct ShapeGeometry {
  double half_w;
  double half_h;
  double size;  // shape-specific parameter
};

ShapeGeometry geometry(std::string_view shape, double area) {
  if (shape == "circle") {
    const double r = std::sqrt(area / kPi);
    return {r, r, r};
  }
  if (shape == "square") {
    const double a = std::sqrt(area);
    return {a / 2, a / 2, a};
  }
  if (shape == "triangle") {
    const double b = std::sqrt(2 * area);
    return {b / 2, b / 2, b};
  }
  if (shape == "diamond") {
    const double h = std::sqrt(area / 2);
    return {h, h, h};
  }
  if (shape == "ring") {
    const double r = std::sqrt(area / (0.75 * kPi));
    return {r, r, r};
  }
  const double h = std::sqrt(area / 3);  // bar
  return {1.5 * h, h / 2, h};
}

bool inside(std::string_view shape, const ShapeGeometry& g, double dx, double dy) {
  if (shape == "circle") return dx * dx + dy * dy <= g.size * g.size;
  if (shape == "square") return std::abs(dx) <= g.size / 2 && std::abs(dy) <= g.size / 2;
  if (shape == "triangle") {
    const double t = (dy + g.size / 2) / g.size;
    return t >= 0 && t <= 1 && std::abs(dx) <= t * g.size / 2;
  }
  if (shape == "diamond") return std::abs(dx) + std::abs(dy) <= g.size;
  if (shape == "ring") {
    const double d2 = dx * dx + dy * dy;
    return d2 <= g.size * g.size && d2 >= g.size * g.size / 4;
  }
  return std::abs(dx) <= g.half_w && std::abs(dy) <= g.half_h;
}

std::string number_word(std::size_t n) {
  static const char* words[] = {"zero", "one", "two", "three", "four", "five",
                                "six",  "seven", "eight", "nine", "ten"};
  return n < 11 ? words[n] : std::to_string(n);
}

}  // namespace

const std::vector<ColourSpec>& scene_colours() {
  static const std::vector<ColourSpec> colours = {
      {"red", {0.86f, 0.16f, 0.16f}, "ripe strawberries"},
      {"green", {0.18f, 0.70f, 0.25f}, "fresh grass"},
      {"blue", {0.16f, 0.32f, 0.86f}, "a clear sky"},
      {"yellow", {0.95f, 0.85f, 0.15f}, "a ripe banana"},
      {"purple", {0.55f, 0.22f, 0.70f}, "lavender flowers"},
      {"orange", {0.98f, 0.55f, 0.10f}, "a pumpkin"},
      {"cyan", {0.15f, 0.80f, 0.85f}, "tropical sea water"},
      {"pink", {0.97f, 0.55f, 0.75f}, "cherry blossoms"},
      {"white", {0.96f, 0.96f, 0.96f}, "fresh snow"},
      {"brown", {0.55f, 0.35f, 0.17f}, "tree bark"},
  };
  return colours;
}

const std::vector<ShapeSpec>& scene_shapes() {
  static const std::vector<ShapeSpec> shapes = {
      {"circle", "has no corners at all"},
      {"square", "has four equal sides"},
      {"triangle", "has exactly three corners"},
      {"diamond", "stands on one of its corners"},
      {"ring", "has a hole in its middle"},
      {"bar", "is much wider than it is tall"},
  };
  return shapes;
}

void SceneConfig::validate() const {
  if (size < ImageBuffer::kMinSide) throw InvalidInput("scene size must be at least 8");
  if (min_elements < 0 || max_elements < min_elements) throw InvalidInput("invalid scene element range");
  if (max_elements > static_cast<int>(scene_colours().size())) {
    throw InvalidInput("a scene holds at most " + std::to_string(scene_colours().size()) + " elements");
  }
  double total = 0;
  for (double w : granularity_mix) {
    if (w < 0) throw InvalidInput("granularity weights must be non-negative");
    total += w;
  }
  if (!(total > 0)) throw InvalidInput("granularity weights must not all be zero");
  if (!(granularity_scale > 0)) throw InvalidInput("granularity scale must be positive");
  if (!(max_area_fraction > 0 && max_area_fraction < 1)) throw InvalidInput("max_area_fraction must be in (0,1)");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::string position_word(const BinaryMask& mask) {
  double sx = 0, sy = 0;
  std::size_t n = 0;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.at(x, y)) {
        sx += x + 0.5;
        sy += y + 0.5;
        ++n;
      }
  if (n == 0) return "center";
  const int col = std::clamp(static_cast<int>(3 * sx / n / mask.width()), 0, 2);
  const int row = std::clamp(static_cast<int>(3 * sy / n / mask.height()), 0, 2);
  static const char* names[3][3] = {{"top left", "top", "top right"},
                                    {"left", "center", "right"},
                                    {"bottom left", "bottom", "bottom right"}};
  return names[row][col];
}

std::string size_word(Granularity g) {
  switch (g) {
    case Granularity::Fine: return "small";
    case Granularity::Medium: return "medium-sized";
    case Granularity::Coarse: return "large";
  }
  return "small";
}

SyntheticScene generate_scene(const SceneConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const int side = config.size;
  const double to_standard = static_cast<double>(kStandardImageSide) * kStandardImageSide / (double(side) * side);
  const double s = config.granularity_scale;
  const double fine_hi = std::pow(s * 32, 2), coarse_lo = std::pow(s * 96, 2);
  const double max_std = config.max_area_fraction * kStandardImageSide * kStandardImageSide;
  // Standardized-area ranges, kept clear of the class boundaries so that
  // rasterization does not push an element into a neighbouring class.
  const std::array<std::pair<double, double>, 3> ranges = {
      std::pair{304.0 * 1.05, fine_hi * 0.85}, std::pair{fine_hi * 1.2, coarse_lo * 0.85},
      std::pair{coarse_lo * 1.2, std::max(coarse_lo * 1.3, max_std)}};

  std::uniform_int_distribution<int> count_dist(config.min_elements, config.max_elements);
  const int n = count_dist(rng);
  std::discrete_distribution<int> class_dist(config.granularity_mix.begin(), config.granularity_mix.end());
  std::uniform_int_distribution<std::size_t> shape_dist(0, scene_shapes().size() - 1);
  std::vector<std::size_t> colour_order(scene_colours().size());
  std::iota(colour_order.begin(), colour_order.end(), 0);
  std::shuffle(colour_order.begin(), colour_order.end(), rng);

  std::vector<Placed> wanted;
  for (int i = 0; i < n; ++i) {
    const auto [lo, hi] = ranges[static_cast<std::size_t>(class_dist(rng))];
    std::uniform_real_distribution<double> log_area(std::log(lo), std::log(hi));
    wanted.push_back({colour_order[static_cast<std::size_t>(i)], shape_dist(rng), std::exp(log_area(rng)) / to_standard});
  }
  // Largest first so big shapes still find room.
  std::stable_sort(wanted.begin(), wanted.end(),
                   [](const Placed& a, const Placed& b) { return a.native_area > b.native_area; });

  std::uniform_real_distribution<float> grey(0.30f, 0.45f);
  const float bg = grey(rng);
  Canvas canvas(side, side, bg, bg, bg);
  for (int y = 0; y < side; ++y) {
    const float shade = bg + 0.06f * (static_cast<float>(y) / side - 0.5f);
    for (int x = 0; x < side; ++x) canvas.set(x, y, shade, shade, shade);
  }

  BinaryMask blocked(side, side);  // occupied pixels plus a safety margin
  constexpr int kMargin = 2;
  SyntheticScene scene;
  for (const auto& w : wanted) {
    const auto& shape = scene_shapes()[w.shape];
    const ShapeGeometry g = geometry(shape.name, w.native_area);
    const double lo_x = g.half_w + 1, hi_x = side - g.half_w - 1;
    const double lo_y = g.half_h + 1, hi_y = side - g.half_h - 1;
    if (lo_x >= hi_x || lo_y >= hi_y) continue;
    std::uniform_real_distribution<double> ux(lo_x, hi_x), uy(lo_y, hi_y);
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double cx = ux(rng), cy = uy(rng);
      BinaryMask m(side, side);
      bool clash = false;
      const int x0 = std::max(0, static_cast<int>(cx - g.half_w) - 1);
      const int x1 = std::min(side - 1, static_cast<int>(cx + g.half_w) + 1);
      const int y0 = std::max(0, static_cast<int>(cy - g.half_h) - 1);
      const int y1 = std::min(side - 1, static_cast<int>(cy + g.half_h) + 1);
      std::size_t area = 0;
      for (int y = y0; y <= y1 && !clash; ++y)
        for (int x = x0; x <= x1; ++x) {
          if (!inside(shape.name, g, x + 0.5 - cx, y + 0.5 - cy)) continue;
          if (blocked.at(x, y)) {
            clash = true;
            break;
          }
          m.set(x, y, true);
          ++area;
        }
      if (clash || area == 0) continue;

      const auto& colour = scene_colours()[w.colour];
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          if (!m.at(x, y)) continue;
          canvas.set(x, y, colour.rgb[0], colour.rgb[1], colour.rgb[2]);
          for (int by = std::max(0, y - kMargin); by <= std::min(side - 1, y + kMargin); ++by)
            for (int bx = std::max(0, x - kMargin); bx <= std::min(side - 1, x + kMargin); ++bx)
              blocked.set(bx, by, true);
        }

      const auto label = classify_granularity(
          static_cast<std::uint64_t>(std::llround(standardized_area(area, side, side))), s);
      SceneElement e;
      e.name = std::string(colour.name) + " " + std::string(shape.name);
      e.attributes = {{"colour", std::string(colour.name)},
                      {"shape", std::string(shape.name)},
                      {"size", size_word(label.value)},
                      {"position", position_word(m)}};
      e.description = "the " + e.attributes["size"] + " " + e.name + " in the " + e.attributes["position"] +
                      " part of the image";
      e.gt_mask = std::move(m);
      scene.elements.push_back(std::move(e));
      break;
    }
  }
  // Ids follow name order rather than placement order.
  std::sort(scene.elements.begin(), scene.elements.end(), [](const SceneElement& a, const SceneElement& b) {
    return a.name < b.name;
  });
  for (std::size_t i = 0; i < scene.elements.size(); ++i) scene.elements[i].id = "e" + std::to_string(i);

  scene.image = canvas.finish();
  if (scene.elements.empty()) {
    scene.caption = "An empty grey background .";
  } else {
    scene.caption = "There " + std::string(scene.elements.size() == 1 ? "is " : "are ") +
                    number_word(scene.elements.size()) + (scene.elements.size() == 1 ? " shape" : " shapes") +
                    " on a grey background :";
    for (std::size_t i = 0; i < scene.elements.size(); ++i) {
      if (i > 0) scene.caption += i + 1 == scene.elements.size() ? " and" : " ,";
      scene.caption += " a " + scene.elements[i].name;
    }
    scene.caption += " .";
  }
  return scene;
}

}  // namespace reasonseg
