#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reasonseg/config.h"
#include "reasonseg/dialogue.h"
#include "reasonseg/language_model.h"
#include "reasonseg/segmentation_head.h"
#include "reasonseg/tokenizer.h"
#include "reasonseg/vision_encoder.h"

namespace reasonseg {

/// An input image resampled once to both encoder resolutions.
struct PreparedImage {
  int width = 0;   // original
  int height = 0;  // original
  ImageBuffer high;
  ImageBuffer low;
};

/// Resamples to high_res, then bilinearly down to low_res.
PreparedImage prepare_image(const ImageBuffer& image, const EncoderConfig& config);

/// Parameter groups trained under the default freezing policy.
const std::vector<std::string>& trainable_groups();
/// Parameter groups frozen under the default freezing policy.
const std::vector<std::string>& frozen_groups();

/// Vision encoders, language model and segmentation head sharing one
/// parameter store.
class ReasoningSegModel {
 public:
  ReasoningSegModel(const ModelConfig& config, Tokenizer tokenizer);
  ReasoningSegModel(const ReasoningSegModel&) = delete;
  ReasoningSegModel& operator=(const ReasoningSegModel&) = delete;

  const ModelConfig& config() const { return config_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }
  const VisionEncoder& vision() const { return *vision_; }
  const LanguageModel& lm() const { return *lm_; }
  const SegmentationHead& seg() const { return *seg_; }

  int image_tokens() const { return config_.vision.low_tokens(); }
  PreparedImage prepare(const ImageBuffer& image) const;

  /// Frozen groups stop receiving gradient unless `unfreeze_all`.
  void apply_freezing_policy(bool unfreeze_all);

  struct Pass {
    FeatureGrid image;
    LanguageModel::Output lm;
  };
  Pass forward(const PreparedImage& image, std::span<const int> ids) const;

  struct Segmentation {
    SegSpan span;
    std::optional<MaskPrediction> prediction;  // at high_res
  };
  /// Runs the segmentation head when ids[from, to) holds exactly one span.
  Segmentation segment(const PreparedImage& image, const ag::Var& hidden, std::span<const int> ids,
                       std::size_t from = 0, std::size_t to = std::numeric_limits<std::size_t>::max()) const;

  struct Reply {
    std::string text;
    std::vector<int> generated;  // without the trailing <eos>
    SegSpan span;
    std::optional<BinaryMask> mask;  // at the original image size
  };
  /// Greedy decoding of the next assistant turn. `history` must end with a
  /// user turn.
  Reply respond(const PreparedImage& image, std::span<const Turn> history, int max_new_tokens = 48) const;

 private:
  ModelConfig config_;
  Tokenizer tokenizer_;
  nn::ParameterStore store_;
  std::unique_ptr<VisionEncoder> vision_;
  std::unique_ptr<LanguageModel> lm_;
  std::unique_ptr<SegmentationHead> seg_;
};

}  // namespace reasonseg
