#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reasonseg/dialogue.h"
#include "reasonseg/imaging.h"

namespace reasonseg {

void to_json(nlohmann::json& j, const Turn& t);
void from_json(const nlohmann::json& j, Turn& t);
void to_json(nlohmann::json& j, const GranularityLabel& g);
void from_json(const nlohmann::json& j, GranularityLabel& g);
void to_json(nlohmann::json& j, const DialogueSample& s);
void from_json(const nlohmann::json& j, DialogueSample& s);

/// Outcome of one source image during dataset generation.
struct ImageStatus {
  std::string image_id;
  std::string status;  // "ok", "skipped" or "failed"
  std::string reason;
  int samples = 0;
};
void to_json(nlohmann::json& j, const ImageStatus& s);
void from_json(const nlohmann::json& j, ImageStatus& s);

/// A dataset on disk: `manifest.jsonl` beside `images/` and `masks/`.
/// Manifest lines carrying a `sample_id` are samples; lines carrying an
/// `image_id` and `status` are per-image generation records.
struct Dataset {
  std::filesystem::path root;
  std::vector<DialogueSample> samples;
  std::vector<ImageStatus> images;

  ImageBuffer load_image(const DialogueSample& s) const;
  BinaryMask load_mask(const DialogueSample& s) const;
  /// Samples whose split tag equals `split`; every sample when empty.
  std::vector<const DialogueSample*> split(const std::string& split) const;
};

/// Reads and validates a manifest. Throws NotFound for a missing file and
/// InvalidInput for malformed lines or samples violating the dialogue
/// invariants.
Dataset load_dataset(const std::filesystem::path& manifest);

}  // namespace reasonseg
