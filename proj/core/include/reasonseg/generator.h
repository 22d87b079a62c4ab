#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "reasonseg/reasoning.h"
#include "reasonseg/scene.h"

namespace reasonseg {

struct GenConfig {
  std::string backend = "synthetic";  // "synthetic" or "llm"
  int num_images = 100;
  std::uint64_t seed = 0;
  int k_min = 2;
  int k_max = 4;
  int max_depth = kMaxTreeDepth;
  int max_children = kMaxTreeChildren;
  int max_side_branches = 2;
  SceneConfig scene;
  // train / val / test
  std::array<double, 3> split_ratio = {0.88, 0.06, 0.06};
  std::filesystem::path out_dir;
  // Source PNGs for the llm backend, taken in file name order.
  std::filesystem::path images_dir;
  double max_failure_fraction = 0.10;

  void validate() const;
};
void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);

struct GenerationReport {
  int images = 0;
  int ok = 0;
  int skipped = 0;
  int failed = 0;
  int samples = 0;
  int quarantined = 0;
  // split -> Fine / Medium / Coarse counts
  std::map<std::string, std::array<int, 3>> histogram;

  double failure_fraction() const { return images > 0 ? static_cast<double>(failed) / images : 0.0; }
};
void to_json(nlohmann::json& j, const GenerationReport& r);

/// Runs the generation pipeline and writes `manifest.jsonl`, `images/`,
/// `masks/`, `trees.jsonl`, `stats.json` and `quarantine.jsonl` under
/// `config.out_dir`. Output is a pure function of the config; nothing
/// time-dependent is written. `backend` is required for the llm backend
/// and ignored for the synthetic one.
GenerationReport generate_dataset(const GenConfig& config, GeneratorBackend* backend = nullptr);

/// Train / val / test tag per image, stratified by the granularity of each
/// image's first target so every split sees the same size mix.
std::map<std::string, std::string> assign_splits(const std::map<std::string, Granularity>& image_strata,
                                                 const std::array<double, 3>& ratio, std::uint64_t seed);

struct AgreementReport {
  double mean_iou = 0;
  double kappa = 0;
};

/// Cohen's kappa over the pooled per-pixel labels of aligned mask pairs.
/// Defined as 1 when both annotators label every pixel identically.
double cohen_kappa(std::span<const BinaryMask> a, std::span<const BinaryMask> b);

/// Throws InvalidInput for empty or misaligned lists and per-pair shape
/// mismatches.
AgreementReport agreement_report(std::span<const BinaryMask> a, std::span<const BinaryMask> b);

}  // namespace reasonseg
