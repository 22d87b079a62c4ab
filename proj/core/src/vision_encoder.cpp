#include "reasonseg/vision_encoder.h"

#include <cmath>
#include <string>

#include "reasonseg/errors.h"

namespace reasonseg {
namespace {

void require_side(const ag::Matrix& pixels, int side, const char* which) {
  if (pixels.rows() != static_cast<Eigen::Index>(side) * side || pixels.cols() != ImageBuffer::kChannels) {
    throw InvalidInput(std::string(which) + " encoder expects a " + std::to_string(side) + "x" +
                       std::to_string(side) + " RGB input");
  }
  if (!pixels.allFinite()) throw InvalidInput(std::string(which) + " encoder input has non-finite pixels");
}

}  // namespace

ag::Matrix image_to_matrix(const ImageBuffer& image) {
  auto data = image.data();
  ag::Matrix m(static_cast<Eigen::Index>(image.width()) * image.height(), ImageBuffer::kChannels);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = data[static_cast<std::size_t>(i)];
  return m;
}

TransformerBlock::TransformerBlock(nn::ParameterStore& store, nn::Initializer& init, const std::string& name,
                                   const std::string& group, int dim, int heads, int ffn_mult)
    : ln1_(store, name + ".ln1", group, dim),
      ln2_(store, name + ".ln2", group, dim),
      attn_(store, init, name + ".attn", group, dim, heads),
      ffn_(store, init, name + ".ffn", group, dim, ffn_mult * dim, dim) {}

ag::Var TransformerBlock::operator()(const ag::Var& x, bool causal) const {
  ag::Var h = ln1_(x);
  ag::Var y = ag::add(x, attn_(h, h, causal));
  return ag::add(y, ffn_(ln2_(y)));
}

VisionEncoder::VisionEncoder(nn::ParameterStore& store, nn::Initializer& init, const EncoderConfig& config)
    : config_(config) {
  config_.validate();
  const int d = config_.d_model;
  int in_c = ImageBuffer::kChannels;
  for (int s = 0; s < config_.conv_stages; ++s) {
    const int out_c = d >> (config_.conv_stages - 1 - s);
    conv_.emplace_back(store, init, "vision.high.conv" + std::to_string(s), "vision.high", in_c, out_c, 3, 2, 1);
    in_c = out_c;
  }
  high_norm_ = nn::LayerNorm(store, "vision.high.norm", "vision.high", d);

  const int p = config_.patch_size;
  patch_proj_ = nn::Linear(store, init, "vision.low.patch", "vision.low", p * p * ImageBuffer::kChannels, d);
  low_pos_ = store.create("vision.low.pos", "vision.low", init.normal(config_.low_tokens(), d, 0.02));
  low_block_ = TransformerBlock(store, init, "vision.low.block0", "vision.low", d, config_.heads, config_.ffn_mult);
  low_norm_ = nn::LayerNorm(store, "vision.low.norm", "vision.low", d);

  cross_ = nn::MultiHeadAttention(store, init, "vision.fuse.attn", "vision.fuse", d, config_.heads);
  fuse_mlp_ = nn::FeedForward(store, init, "vision.fuse.mlp", "vision.fuse", d, config_.ffn_mult * d, d);
}

FeatureGrid VisionEncoder::encode_high(const ImageBuffer& image) const {
  return encode_high(image_to_matrix(image));
}

FeatureGrid VisionEncoder::encode_high(const ag::Matrix& pixels) const {
  require_side(pixels, config_.high_res, "high-resolution");
  ag::Var x = ag::constant(pixels);
  int h = config_.high_res;
  int w = config_.high_res;
  for (std::size_t s = 0; s < conv_.size(); ++s) {
    auto out = conv_[s](x, h, w);
    x = s + 1 < conv_.size() ? ag::gelu(out.x) : out.x;
    h = out.height;
    w = out.width;
  }
  return {high_norm_(x), h, w};
}

FeatureGrid VisionEncoder::encode_low(const ImageBuffer& image) const {
  return encode_low(image_to_matrix(image));
}

ag::Var VisionEncoder::patch_embed(const ag::Matrix& pixels) const {
  require_side(pixels, config_.low_res, "low-resolution");
  const int p = config_.patch_size;
  ag::ConvGeometry g{config_.low_res, config_.low_res, ImageBuffer::kChannels, p, p, 0};
  return patch_proj_(ag::im2col(ag::constant(pixels), g));
}

FeatureGrid VisionEncoder::encode_low(const ag::Matrix& pixels) const {
  ag::Var x = ag::add(patch_embed(pixels), low_pos_);
  x = low_norm_(low_block_(x, false));
  return {x, config_.low_grid(), config_.low_grid()};
}

FeatureGrid VisionEncoder::fuse(const FeatureGrid& low, const FeatureGrid& high,
                                std::vector<ag::Matrix>* attention) const {
  if (low.dim() != config_.d_model || high.dim() != config_.d_model) {
    throw InvalidInput("fuse: feature widths must both equal d_model");
  }
  ag::Var attended = cross_(low.tokens, high.tokens, false, attention);
  return {ag::add(fuse_mlp_(attended), attended), low.grid_h, low.grid_w};
}

FeatureGrid VisionEncoder::encode(const ImageBuffer& image) const {
  ImageBuffer high = image.resized(config_.high_res, config_.high_res);
  return encode(high, high.resized(config_.low_res, config_.low_res));
}

FeatureGrid VisionEncoder::encode(const ImageBuffer& high, const ImageBuffer& low) const {
  return fuse(encode_low(low), encode_high(high));
}

}  // namespace reasonseg
