#include "reasonseg/config.h"

#include "reasonseg/errors.h"

namespace reasonseg {
namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

void check(bool cond, const std::string& what) {
  if (!cond) throw InvalidInput("invalid model config: " + what);
}

// Reads `key` into `out` when present; missing keys keep their defaults.
template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void EncoderConfig::validate() const {
  check(high_res >= 8 && low_res >= 8, "resolutions must be at least 8");
  check(conv_stages >= 1 && (high_res % (1 << conv_stages)) == 0, "high_res must be divisible by 2^conv_stages");
  check(patch_size > 0 && low_res % patch_size == 0, "patch_size must divide low_res");
  check(heads > 0 && d_model % heads == 0, "vision d_model must be divisible by heads");
  check(d_model % (1 << (conv_stages - 1)) == 0, "vision d_model must be divisible by 2^(conv_stages-1)");
  check(ffn_mult > 0, "ffn_mult must be positive");
}

void LmConfig::validate() const {
  check(layers >= 1, "lm layers must be positive");
  check(heads > 0 && d_model % heads == 0, "lm d_model must be divisible by heads");
  check(context >= 16, "lm context too small");
  check(ffn_mult > 0, "ffn_mult must be positive");
}

void SegConfig::validate(int high_res) const {
  check(pixel_grid > 0 && high_res % pixel_grid == 0, "pixel_grid must divide high_res");
  const int stride = high_res / pixel_grid;
  check(is_pow2(stride) && stride >= 2, "pixel stride must be a power of two >= 2");
  check(heads > 0 && d_seg % heads == 0, "d_seg must be divisible by heads");
  check(d_seg % stride == 0 && d_seg / stride >= 1, "d_seg must be divisible by the pixel stride");
  check(decoder_blocks >= 1, "decoder needs at least one block");
}

void ModelConfig::validate() const {
  vision.validate();
  lm.validate();
  seg.validate(vision.high_res);
  check(lm.context > vision.low_tokens() + 8, "lm context must exceed the image prefix");
}

ModelConfig ModelConfig::preset(const std::string& name) {
  ModelConfig c;
  if (name == "desk") return c;
  if (name == "tiny") {
    c.vision = {64, 32, 32, 3, 8, 2, 2};
    c.lm = {2, 2, 64, 256, 2};
    c.seg = {32, 16, 2, 2, 2};
    return c;
  }
  throw InvalidInput("unknown model preset: " + name);
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"high_res", c.high_res}, {"low_res", c.low_res},   {"d_model", c.d_model}, {"conv_stages", c.conv_stages},
       {"patch_size", c.patch_size}, {"heads", c.heads}, {"ffn_mult", c.ffn_mult}};
}
void from_json(const nlohmann::json& j, EncoderConfig& c) {
  read(j, "high_res", c.high_res);
  read(j, "low_res", c.low_res);
  read(j, "d_model", c.d_model);
  read(j, "conv_stages", c.conv_stages);
  read(j, "patch_size", c.patch_size);
  read(j, "heads", c.heads);
  read(j, "ffn_mult", c.ffn_mult);
}
void to_json(nlohmann::json& j, const LmConfig& c) {
  j = {{"layers", c.layers}, {"heads", c.heads}, {"d_model", c.d_model}, {"context", c.context}, {"ffn_mult", c.ffn_mult}};
}
void from_json(const nlohmann::json& j, LmConfig& c) {
  read(j, "layers", c.layers);
  read(j, "heads", c.heads);
  read(j, "d_model", c.d_model);
  read(j, "context", c.context);
  read(j, "ffn_mult", c.ffn_mult);
}
void to_json(nlohmann::json& j, const SegConfig& c) {
  j = {{"d_seg", c.d_seg}, {"pixel_grid", c.pixel_grid}, {"heads", c.heads},
       {"decoder_blocks", c.decoder_blocks}, {"ffn_mult", c.ffn_mult}};
}
void from_json(const nlohmann::json& j, SegConfig& c) {
  read(j, "d_seg", c.d_seg);
  read(j, "pixel_grid", c.pixel_grid);
  read(j, "heads", c.heads);
  read(j, "decoder_blocks", c.decoder_blocks);
  read(j, "ffn_mult", c.ffn_mult);
}
void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vision", c.vision}, {"lm", c.lm}, {"seg", c.seg}, {"init_seed", c.init_seed}};
}
void from_json(const nlohmann::json& j, ModelConfig& c) {
  read(j, "vision", c.vision);
  read(j, "lm", c.lm);
  read(j, "seg", c.seg);
  read(j, "init_seed", c.init_seed);
}

}  // namespace reasonseg
