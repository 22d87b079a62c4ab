#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "reasonseg/config.h"
#include "reasonseg/dialogue.h"
#include "reasonseg/nn.h"
#include "reasonseg/tokenizer.h"
#include "reasonseg/vision_encoder.h"

namespace reasonseg {

struct RenderedPrompt {
  std::vector<int> ids;
  // 1 where ids[i] belongs to an assistant reply (including its <eos>).
  std::vector<std::uint8_t> assistant;
  int image_tokens = 0;
  int dropped_turns = 0;
};

/// `[IMG]` x image_tokens, then each turn as `<user> ...` or
/// `<assistant> ... <eos>`. When the turns end with a user turn, a trailing
/// `<assistant>` opens the reply to be generated. If the result exceeds
/// `context`, the oldest user/assistant pairs are dropped; the final two
/// turns are never dropped (InvalidInput if they alone do not fit).
RenderedPrompt render_turns(const Tokenizer& tok, std::span<const Turn> turns, int image_tokens, int context);

/// Renders a dataset sample. Throws InvalidInput for an empty target class.
RenderedPrompt render_prompt(const Tokenizer& tok, const DialogueSample& sample, int image_tokens, int context);

enum class SegOutcome { Ok, NoSegmentation, Ambiguous };
std::string_view to_string(SegOutcome o);

/// Inclusive token span from `[OBJ]` through `[SEG]`.
struct SegSpan {
  SegOutcome outcome = SegOutcome::NoSegmentation;
  int begin = -1;
  int end = -1;
  int length() const { return outcome == SegOutcome::Ok ? end - begin + 1 : 0; }
};

/// Looks for `[OBJ] ... [SEG]` spans inside ids[from, to). A `[SEG]` pairs
/// with the nearest preceding unpaired `[OBJ]`; zero spans is
/// NoSegmentation, more than one Ambiguous.
SegSpan find_seg_span(std::span<const int> ids, std::size_t from = 0,
                      std::size_t to = std::numeric_limits<std::size_t>::max());

struct SegStates {
  SegSpan span;
  ag::Var sequence;  // N_sub x d, rows begin..end of hidden
  ag::Var query;     // 1 x d, the [SEG] row
};

SegStates extract_seg_states(const ag::Var& hidden, std::span<const int> ids, std::size_t from = 0,
                             std::size_t to = std::numeric_limits<std::size_t>::max());

/// Decoder-only transformer. `[IMG]` positions take the projected image
/// tokens; all other positions take learned token embeddings.
class LanguageModel {
 public:
  LanguageModel(nn::ParameterStore& store, nn::Initializer& init, const LmConfig& config, int vocab_size,
                int vision_dim);

  struct Output {
    ag::Var logits;  // L x V; row t scores the token at t+1
    ag::Var hidden;  // L x d, final layer after normalization
  };

  /// ids must start with exactly image_prefix.count() `[IMG]` tokens.
  Output forward(const FeatureGrid& image_prefix, std::span<const int> ids) const;
  ag::Var project_image(const FeatureGrid& image_prefix) const;

  const LmConfig& config() const { return config_; }
  int vocab_size() const { return vocab_size_; }

 private:
  LmConfig config_;
  int vocab_size_;
  nn::FeedForward projector_;
  ag::Var token_embedding_;
  ag::Var position_embedding_;
  std::vector<TransformerBlock> blocks_;
  nn::LayerNorm final_norm_;
  nn::Linear head_;
};

}  // namespace reasonseg
