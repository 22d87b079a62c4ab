#pragma once

#include <vector>

#include "reasonseg/config.h"
#include "reasonseg/imaging.h"
#include "reasonseg/nn.h"

namespace reasonseg {

/// Token grid produced by an encoder: tokens is (grid_h*grid_w) x dim.
struct FeatureGrid {
  ag::Var tokens;
  int grid_h = 0;
  int grid_w = 0;

  int dim() const { return static_cast<int>(tokens.cols()); }
  int count() const { return static_cast<int>(tokens.rows()); }
};

/// (H*W) x 3 pixel matrix in row-major spatial order.
ag::Matrix image_to_matrix(const ImageBuffer& image);

/// Pre-norm transformer block shared by the patch encoder and the language
/// model.
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(nn::ParameterStore& store, nn::Initializer& init, const std::string& name,
                   const std::string& group, int dim, int heads, int ffn_mult);
  ag::Var operator()(const ag::Var& x, bool causal) const;

 private:
  nn::LayerNorm ln1_, ln2_;
  nn::MultiHeadAttention attn_;
  nn::FeedForward ffn_;
};

/// High-resolution convolutional branch, low-resolution patch-transformer
/// branch, and their cross-attention fusion:
///   E' = CrossAttn(Q = low, K = V = high),  E = MLP(E') + E'.
class VisionEncoder {
 public:
  VisionEncoder(nn::ParameterStore& store, nn::Initializer& init, const EncoderConfig& config);

  const EncoderConfig& config() const { return config_; }

  /// Expects a high_res x high_res image.
  FeatureGrid encode_high(const ImageBuffer& image) const;
  FeatureGrid encode_high(const ag::Matrix& pixels) const;
  /// Expects a low_res x low_res image.
  FeatureGrid encode_low(const ImageBuffer& image) const;
  FeatureGrid encode_low(const ag::Matrix& pixels) const;
  /// Per-patch linear embedding only (no positions, no attention).
  ag::Var patch_embed(const ag::Matrix& pixels) const;

  /// Output has the low grid's token count. `attention` receives per-head
  /// weights when non-null.
  FeatureGrid fuse(const FeatureGrid& low, const FeatureGrid& high,
                   std::vector<ag::Matrix>* attention = nullptr) const;

  /// Resizes to high_res, bilinearly downsamples to low_res, encodes both and
  /// fuses them.
  FeatureGrid encode(const ImageBuffer& image) const;
  FeatureGrid encode(const ImageBuffer& high, const ImageBuffer& low) const;

 private:
  EncoderConfig config_;
  std::vector<nn::Conv2d> conv_;
  nn::LayerNorm high_norm_;
  nn::Linear patch_proj_;
  ag::Var low_pos_;
  TransformerBlock low_block_;
  nn::LayerNorm low_norm_;
  nn::MultiHeadAttention cross_;
  nn::FeedForward fuse_mlp_;
};

}  // namespace reasonseg
