#include "reasonseg/dataset.h"

#include <fstream>

#include "reasonseg/errors.h"
#include "reasonseg/png_codec.h"

namespace reasonseg {

using nlohmann::json;

void to_json(json& j, const Turn& t) { j = json{{"role", to_string(t.role)}, {"text", t.text}}; }

void from_json(const json& j, Turn& t) {
  t.role = role_from_string(j.at("role").get<std::string>());
  t.text = j.at("text").get<std::string>();
}

void to_json(json& j, const GranularityLabel& g) {
  j = json{{"value", to_string(g.value)}, {"area_px", g.area_px}, {"scale_factor", g.scale_factor}};
}

void from_json(const json& j, GranularityLabel& g) {
  g.value = granularity_from_string(j.at("value").get<std::string>());
  g.area_px = j.at("area_px").get<std::uint64_t>();
  g.scale_factor = j.value("scale_factor", kDefaultGranularityScale);
}

void to_json(json& j, const DialogueSample& s) {
  j = json{{"sample_id", s.sample_id},       {"image_path", s.image_path}, {"turns", s.turns},
           {"target_class", s.target_class}, {"mask_path", s.mask_path},   {"granularity", s.granularity},
           {"split", s.split}};
  if (s.source_tree) j["source_tree"] = *s.source_tree;
  if (!s.scene_caption.empty()) j["scene_caption"] = s.scene_caption;
}

void from_json(const json& j, DialogueSample& s) {
  s.sample_id = j.at("sample_id").get<std::string>();
  s.image_path = j.at("image_path").get<std::string>();
  s.turns = j.at("turns").get<std::vector<Turn>>();
  s.target_class = j.at("target_class").get<std::string>();
  s.mask_path = j.at("mask_path").get<std::string>();
  s.granularity = j.at("granularity").get<GranularityLabel>();
  s.split = j.value("split", "");
  if (j.contains("source_tree")) s.source_tree = j["source_tree"].get<std::string>();
  s.scene_caption = j.value("scene_caption", "");
}

void to_json(json& j, const ImageStatus& s) {
  j = json{{"image_id", s.image_id}, {"status", s.status}, {"samples", s.samples}};
  if (!s.reason.empty()) j["reason"] = s.reason;
}

void from_json(const json& j, ImageStatus& s) {
  s.image_id = j.at("image_id").get<std::string>();
  s.status = j.at("status").get<std::string>();
  s.reason = j.value("reason", "");
  s.samples = j.value("samples", 0);
}

ImageBuffer Dataset::load_image(const DialogueSample& s) const { return png_to_image(read_file(root / s.image_path)); }

BinaryMask Dataset::load_mask(const DialogueSample& s) const { return png_to_mask(read_file(root / s.mask_path)); }

std::vector<const DialogueSample*> Dataset::split(const std::string& name) const {
  std::vector<const DialogueSample*> out;
  for (const auto& s : samples) {
    if (name.empty() || s.split == name) out.push_back(&s);
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw NotFound("dataset manifest not found: " + manifest.string());
  Dataset ds;
  ds.root = manifest.parent_path();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      if (j.contains("sample_id")) {
        auto s = j.get<DialogueSample>();
        validate_dialogue(s);
        ds.samples.push_back(std::move(s));
      } else {
        ds.images.push_back(j.get<ImageStatus>());
      }
    } catch (const json::exception& e) {
      throw InvalidInput(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const InvalidInput& e) {
      throw InvalidInput(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return ds;
}

}  // namespace reasonseg
