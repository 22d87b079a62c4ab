#include "reasonseg/model.h"

#include <limits>

#include "reasonseg/errors.h"

namespace reasonseg {

const std::vector<std::string>& trainable_groups() {
  static const std::vector<std::string> groups = {"proj.vision_lm", "proj.lm_seg", "seg.align", "seg.decoder"};
  return groups;
}

const std::vector<std::string>& frozen_groups() {
  static const std::vector<std::string> groups = {"vision.high", "vision.low",  "vision.fuse",      "lm.embed",
                                                  "lm.blocks",   "lm.head",     "seg.pixel_encoder"};
  return groups;
}

ReasoningSegModel::ReasoningSegModel(const ModelConfig& config, Tokenizer tokenizer)
    : config_(config), tokenizer_(std::move(tokenizer)) {
  config_.validate();
  nn::Initializer init(config_.init_seed);
  vision_ = std::make_unique<VisionEncoder>(store_, init, config_.vision);
  lm_ = std::make_unique<LanguageModel>(store_, init, config_.lm, tokenizer_.size(), config_.vision.d_model);
  seg_ = std::make_unique<SegmentationHead>(store_, init, config_.seg, config_.lm.d_model, config_.vision.high_res);
}

PreparedImage prepare_image(const ImageBuffer& image, const EncoderConfig& config) {
  PreparedImage p;
  p.width = image.width();
  p.height = image.height();
  p.high = image.resized(config.high_res, config.high_res);
  p.low = p.high.resized(config.low_res, config.low_res);
  return p;
}

PreparedImage ReasoningSegModel::prepare(const ImageBuffer& image) const { return prepare_image(image, config_.vision); }

void ReasoningSegModel::apply_freezing_policy(bool unfreeze_all) {
  store_.set_all_trainable(true);
  if (unfreeze_all) return;
  for (const auto& g : frozen_groups()) store_.set_group_trainable(g, false);
}

ReasoningSegModel::Pass ReasoningSegModel::forward(const PreparedImage& image, std::span<const int> ids) const {
  FeatureGrid grid = vision_->encode(image.high, image.low);
  auto out = lm_->forward(grid, ids);
  return {grid, out};
}

ReasoningSegModel::Segmentation ReasoningSegModel::segment(const PreparedImage& image, const ag::Var& hidden,
                                                           std::span<const int> ids, std::size_t from,
                                                           std::size_t to) const {
  Segmentation out;
  SegStates states = extract_seg_states(hidden, ids, from, to);
  out.span = states.span;
  if (states.span.outcome != SegOutcome::Ok) return out;
  ag::Var prompt = seg_->align_semantics(states.sequence, states.query);
  out.prediction = seg_->decode_mask(seg_->encode_pixels(image.high), prompt);
  return out;
}

ReasoningSegModel::Reply ReasoningSegModel::respond(const PreparedImage& image, std::span<const Turn> history,
                                                    int max_new_tokens) const {
  if (history.empty() || history.back().role != Role::User) {
    throw InvalidInput("respond: history must end with a user turn");
  }
  ag::NoGradGuard no_grad;
  RenderedPrompt prompt = render_turns(tokenizer_, history, image_tokens(), config_.lm.context);
  std::vector<int> ids = prompt.ids;
  const std::size_t reply_start = ids.size();

  FeatureGrid grid = vision_->encode(image.high, image.low);
  // Tokens a reply may contain: words, [OBJ], [SEG] and <eos>.
  std::vector<bool> banned(static_cast<std::size_t>(tokenizer_.size()), false);
  for (int s : {Tokenizer::kPad, Tokenizer::kUnk, Tokenizer::kImg, Tokenizer::kUser, Tokenizer::kAssistant}) {
    banned[static_cast<std::size_t>(s)] = true;
  }

  Reply reply;
  bool finished = false;
  for (int step = 0; step < max_new_tokens && ids.size() < static_cast<std::size_t>(config_.lm.context); ++step) {
    auto out = lm_->forward(grid, ids);
    const auto& logits = out.logits.value();
    auto last = logits.row(logits.rows() - 1);
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (Eigen::Index v = 0; v < last.size(); ++v) {
      if (banned[static_cast<std::size_t>(v)]) continue;
      if (last(v) > best_score) {
        best_score = last(v);
        best = static_cast<int>(v);
      }
    }
    if (best == Tokenizer::kEos) {
      finished = true;
      break;
    }
    ids.push_back(best);
    reply.generated.push_back(best);
  }
  (void)finished;
  reply.text = tokenizer_.decode(reply.generated);

  reply.span = find_seg_span(ids, reply_start);
  if (reply.span.outcome == SegOutcome::Ok) {
    auto out = lm_->forward(grid, ids);
    auto seg = segment(image, out.hidden, ids, reply_start);
    if (seg.prediction) reply.mask = seg.prediction->mask.resized(image.width, image.height);
  }
  return reply;
}

}  // namespace reasonseg
