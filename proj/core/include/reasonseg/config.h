#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

namespace reasonseg {

/// Dual-resolution vision encoder. high_res is the image side seen by the
/// convolutional branch; low_res the side seen by the patch transformer.
struct EncoderConfig {
  int high_res = 128;
  int low_res = 64;
  int d_model = 128;
  int conv_stages = 3;
  int patch_size = 8;
  int heads = 4;
  int ffn_mult = 4;  // fusion MLP hidden width = ffn_mult * d_model, GELU

  int high_grid() const { return high_res >> conv_stages; }
  int low_grid() const { return low_res / patch_size; }
  int low_tokens() const { return low_grid() * low_grid(); }
  void validate() const;
};

struct LmConfig {
  int layers = 4;
  int heads = 4;
  int d_model = 128;
  int context = 512;
  int ffn_mult = 4;
  void validate() const;
};

struct SegConfig {
  int d_seg = 64;
  int pixel_grid = 32;  // pixel encoder output side; stride = high_res / pixel_grid
  int heads = 4;
  int decoder_blocks = 2;
  int ffn_mult = 4;
  void validate(int high_res) const;
};

struct ModelConfig {
  EncoderConfig vision;
  LmConfig lm;
  SegConfig seg;
  std::uint64_t init_seed = 0;

  void validate() const;
  /// "desk" (the defaults) or "tiny" (small enough for CPU overfit runs and
  /// unit tests).
  static ModelConfig preset(const std::string& name);
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const LmConfig& c);
void from_json(const nlohmann::json& j, LmConfig& c);
void to_json(nlohmann::json& j, const SegConfig& c);
void from_json(const nlohmann::json& j, SegConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace reasonseg
