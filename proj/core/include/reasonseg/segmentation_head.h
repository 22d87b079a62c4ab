#pragma once

#include <vector>

#include "reasonseg/config.h"
#include "reasonseg/imaging.h"
#include "reasonseg/nn.h"

namespace reasonseg {

/// Pixel encoder output: (grid_h*grid_w) x d_seg tokens.
struct PixelFeatures {
  ag::Var tokens;
  int grid_h = 0;
  int grid_w = 0;
  int image_h = 0;
  int image_w = 0;
};

struct MaskPrediction {
  ag::Var logits;  // image_h x image_w
  BinaryMask mask;  // logits > 0
};

class SegmentationHead {
 public:
  SegmentationHead(nn::ParameterStore& store, nn::Initializer& init, const SegConfig& config, int lm_dim,
                   int image_res);

  const SegConfig& config() const { return config_; }
  int image_res() const { return image_res_; }

  /// Expects an image_res x image_res input.
  PixelFeatures encode_pixels(const ImageBuffer& image) const;
  PixelFeatures encode_pixels(const ag::Matrix& pixels) const;

  /// Projects the [OBJ]..[SEG] hidden states to d_seg and collapses them with
  /// single-query cross-attention (query = projected [SEG] state).
  /// Returns 1 x d_seg.
  ag::Var align_semantics(const ag::Var& sequence, const ag::Var& query,
                          std::vector<ag::Matrix>* attention = nullptr) const;

  /// Two-way attention decoder, learned upsampling to image resolution, and
  /// per-pixel affinity with the prompt. Throws NumericError on non-finite
  /// logits.
  MaskPrediction decode_mask(const PixelFeatures& features, const ag::Var& prompt) const;

 private:
  struct DecoderBlock {
    nn::MultiHeadAttention prompt_to_features;
    nn::MultiHeadAttention features_to_prompt;
    nn::FeedForward prompt_ffn;
    nn::FeedForward feature_ffn;
    nn::LayerNorm norm_p1, norm_f1, norm_p2, norm_f2;
  };
  struct UpsampleStage {
    nn::Linear expand;  // c_in -> 4 * c_out, then pixel shuffle by 2
    nn::LayerNorm norm;
  };

  SegConfig config_;
  int image_res_;
  std::vector<nn::Conv2d> pixel_convs_;
  nn::LayerNorm pixel_norm_;
  nn::Linear lm_to_seg_;
  nn::MultiHeadAttention align_;
  std::vector<DecoderBlock> blocks_;
  std::vector<UpsampleStage> upsample_;
  nn::FeedForward hyper_;
  ag::Var logit_bias_;
};

}  // namespace reasonseg
