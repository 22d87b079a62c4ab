#include "reasonseg/segmentation_head.h"

#include <string>

#include "reasonseg/errors.h"
#include "reasonseg/vision_encoder.h"

namespace reasonseg {
namespace {

int log2_int(int v) {
  int n = 0;
  while ((1 << n) < v) ++n;
  return n;
}

}  // namespace

SegmentationHead::SegmentationHead(nn::ParameterStore& store, nn::Initializer& init, const SegConfig& config,
                                   int lm_dim, int image_res)
    : config_(config), image_res_(image_res) {
  config_.validate(image_res);
  const int d = config_.d_seg;
  const int stages = log2_int(image_res / config_.pixel_grid);

  int in_c = ImageBuffer::kChannels;
  for (int s = 0; s < stages; ++s) {
    const int out_c = d >> (stages - 1 - s);
    pixel_convs_.emplace_back(store, init, "seg.pixel.conv" + std::to_string(s), "seg.pixel_encoder", in_c, out_c,
                              3, 2, 1);
    in_c = out_c;
  }
  pixel_norm_ = nn::LayerNorm(store, "seg.pixel.norm", "seg.pixel_encoder", d);

  lm_to_seg_ = nn::Linear(store, init, "proj.lm_seg", "proj.lm_seg", lm_dim, d);
  align_ = nn::MultiHeadAttention(store, init, "seg.align.attn", "seg.align", d, config_.heads);

  for (int b = 0; b < config_.decoder_blocks; ++b) {
    const std::string n = "seg.decoder.block" + std::to_string(b);
    const std::string g = "seg.decoder";
    blocks_.push_back(DecoderBlock{
        nn::MultiHeadAttention(store, init, n + ".p2f", g, d, config_.heads),
        nn::MultiHeadAttention(store, init, n + ".f2p", g, d, config_.heads),
        nn::FeedForward(store, init, n + ".pffn", g, d, config_.ffn_mult * d, d),
        nn::FeedForward(store, init, n + ".fffn", g, d, config_.ffn_mult * d, d),
        nn::LayerNorm(store, n + ".norm_p1", g, d),
        nn::LayerNorm(store, n + ".norm_f1", g, d),
        nn::LayerNorm(store, n + ".norm_p2", g, d),
        nn::LayerNorm(store, n + ".norm_f2", g, d),
    });
  }
  int c = d;
  for (int s = 0; s < stages; ++s) {
    const int out_c = c / 2;
    const std::string n = "seg.decoder.up" + std::to_string(s);
    upsample_.push_back({nn::Linear(store, init, n, "seg.decoder", c, 4 * out_c),
                         nn::LayerNorm(store, n + ".norm", "seg.decoder", out_c)});
    c = out_c;
  }
  hyper_ = nn::FeedForward(store, init, "seg.decoder.hyper", "seg.decoder", d, d, c);
  logit_bias_ = store.create("seg.decoder.logit_bias", "seg.decoder", ag::Matrix::Zero(1, 1));
}

PixelFeatures SegmentationHead::encode_pixels(const ImageBuffer& image) const {
  return encode_pixels(image_to_matrix(image));
}

PixelFeatures SegmentationHead::encode_pixels(const ag::Matrix& pixels) const {
  if (pixels.rows() != static_cast<Eigen::Index>(image_res_) * image_res_ || pixels.cols() != 3) {
    throw InvalidInput("pixel encoder expects a " + std::to_string(image_res_) + "x" + std::to_string(image_res_) +
                       " RGB input");
  }
  if (!pixels.allFinite()) throw InvalidInput("pixel encoder input has non-finite pixels");
  ag::Var x = ag::constant(pixels);
  int h = image_res_;
  int w = image_res_;
  for (std::size_t s = 0; s < pixel_convs_.size(); ++s) {
    auto out = pixel_convs_[s](x, h, w);
    x = s + 1 < pixel_convs_.size() ? ag::gelu(out.x) : out.x;
    h = out.height;
    w = out.width;
  }
  return {pixel_norm_(x), h, w, image_res_, image_res_};
}

ag::Var SegmentationHead::align_semantics(const ag::Var& sequence, const ag::Var& query,
                                          std::vector<ag::Matrix>* attention) const {
  if (!sequence.defined() || sequence.rows() < 1) throw InvalidInput("align_semantics: empty [OBJ]..[SEG] span");
  if (query.rows() != 1) throw InvalidInput("align_semantics: query must be a single row");
  return align_(lm_to_seg_(query), lm_to_seg_(sequence), false, attention);
}

MaskPrediction SegmentationHead::decode_mask(const PixelFeatures& features, const ag::Var& prompt) const {
  const int d = config_.d_seg;
  if (features.tokens.cols() != d || prompt.cols() != d || prompt.rows() != 1) {
    throw InvalidInput("decode_mask: prompt and features must share d_seg");
  }
  ag::Var f = features.tokens;
  ag::Var p = prompt;
  for (const auto& b : blocks_) {
    p = b.norm_p1(ag::add(p, b.prompt_to_features(p, f)));
    f = b.norm_f1(ag::add(f, b.features_to_prompt(f, p)));
    p = b.norm_p2(ag::add(p, b.prompt_ffn(p)));
    f = b.norm_f2(ag::add(f, b.feature_ffn(f)));
  }
  int h = features.grid_h;
  int w = features.grid_w;
  for (std::size_t s = 0; s < upsample_.size(); ++s) {
    f = ag::pixel_shuffle(upsample_[s].expand(f), h, w, 2);
    f = upsample_[s].norm(f);
    if (s + 1 < upsample_.size()) f = ag::gelu(f);
    h *= 2;
    w *= 2;
  }
  ag::Var weights = hyper_(p);  // 1 x c
  ag::Var flat = ag::matmul_nt(f, weights);  // (h*w) x 1
  ag::Var logits = ag::reshape(ag::add_row(flat, logit_bias_), h, w);
  if (!logits.value().allFinite()) throw NumericError("mask decoder produced non-finite logits");

  MaskPrediction out{logits, BinaryMask(w, h)};
  const auto& v = logits.value();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.mask.set(x, y, v(y, x) > 0.0);
  return out;
}

}  // namespace reasonseg
