#include "reasonseg/language_model.h"

#include <string>

#include "reasonseg/errors.h"

namespace reasonseg {
namespace {

struct TurnTokens {
  std::vector<int> ids;
  std::vector<std::uint8_t> assistant;
};

TurnTokens render_turn(const Tokenizer& tok, const Turn& turn, bool close) {
  TurnTokens t;
  const bool is_assistant = turn.role == Role::Assistant;
  t.ids.push_back(is_assistant ? Tokenizer::kAssistant : Tokenizer::kUser);
  t.assistant.push_back(0);
  for (int id : tok.encode(turn.text)) {
    t.ids.push_back(id);
    t.assistant.push_back(is_assistant ? 1 : 0);
  }
  if (is_assistant && close) {
    t.ids.push_back(Tokenizer::kEos);
    t.assistant.push_back(1);
  }
  return t;
}

}  // namespace

RenderedPrompt render_turns(const Tokenizer& tok, std::span<const Turn> turns, int image_tokens, int context) {
  if (turns.empty()) throw InvalidInput("cannot render an empty dialogue");
  for (std::size_t i = 0; i < turns.size(); ++i) {
    if (turns[i].role != (i % 2 == 0 ? Role::User : Role::Assistant)) {
      throw InvalidInput("dialogue roles must alternate starting with the user");
    }
  }
  std::vector<TurnTokens> rendered;
  std::size_t total = static_cast<std::size_t>(image_tokens);
  for (const auto& t : turns) {
    rendered.push_back(render_turn(tok, t, true));
    total += rendered.back().ids.size();
  }
  const bool open = turns.back().role == Role::User;
  if (open) total += 1;

  std::size_t first = 0;
  while (total > static_cast<std::size_t>(context) && rendered.size() - first >= 4) {
    total -= rendered[first].ids.size() + rendered[first + 1].ids.size();
    first += 2;
  }
  if (total > static_cast<std::size_t>(context)) {
    throw InvalidInput("final exchange does not fit in the context window of " + std::to_string(context));
  }

  RenderedPrompt out;
  out.image_tokens = image_tokens;
  out.dropped_turns = static_cast<int>(first);
  out.ids.assign(static_cast<std::size_t>(image_tokens), Tokenizer::kImg);
  out.assistant.assign(static_cast<std::size_t>(image_tokens), 0);
  for (std::size_t i = first; i < rendered.size(); ++i) {
    out.ids.insert(out.ids.end(), rendered[i].ids.begin(), rendered[i].ids.end());
    out.assistant.insert(out.assistant.end(), rendered[i].assistant.begin(), rendered[i].assistant.end());
  }
  if (open) {
    out.ids.push_back(Tokenizer::kAssistant);
    out.assistant.push_back(0);
  }
  return out;
}

RenderedPrompt render_prompt(const Tokenizer& tok, const DialogueSample& sample, int image_tokens, int context) {
  if (sample.target_class.empty()) throw InvalidInput("sample " + sample.sample_id + " has an empty target class");
  return render_turns(tok, sample.turns, image_tokens, context);
}

std::string_view to_string(SegOutcome o) {
  switch (o) {
    case SegOutcome::Ok: return "ok";
    case SegOutcome::NoSegmentation: return "no-segmentation";
    case SegOutcome::Ambiguous: return "ambiguous-segmentation";
  }
  return "no-segmentation";
}

SegSpan find_seg_span(std::span<const int> ids, std::size_t from, std::size_t to) {
  to = std::min(to, ids.size());
  SegSpan span;
  int spans = 0;
  int open_obj = -1;
  for (std::size_t i = from; i < to; ++i) {
    if (ids[i] == Tokenizer::kObj) {
      open_obj = static_cast<int>(i);
    } else if (ids[i] == Tokenizer::kSeg) {
      if (open_obj < 0) {
        // A stray [SEG] still counts toward ambiguity.
        ++spans;
        continue;
      }
      ++spans;
      span.begin = open_obj;
      span.end = static_cast<int>(i);
      open_obj = -1;
    }
  }
  if (spans == 1 && span.begin >= 0) {
    span.outcome = SegOutcome::Ok;
  } else {
    span.outcome = spans > 1 ? SegOutcome::Ambiguous : SegOutcome::NoSegmentation;
    span.begin = span.end = -1;
  }
  return span;
}

SegStates extract_seg_states(const ag::Var& hidden, std::span<const int> ids, std::size_t from, std::size_t to) {
  if (static_cast<std::size_t>(hidden.rows()) != ids.size()) {
    throw InvalidInput("hidden states and token ids are not aligned");
  }
  SegStates out;
  out.span = find_seg_span(ids, from, to);
  if (out.span.outcome != SegOutcome::Ok) return out;
  out.sequence = ag::slice_rows(hidden, out.span.begin, out.span.length());
  out.query = ag::slice_rows(hidden, out.span.end, 1);
  return out;
}

LanguageModel::LanguageModel(nn::ParameterStore& store, nn::Initializer& init, const LmConfig& config,
                             int vocab_size, int vision_dim)
    : config_(config), vocab_size_(vocab_size) {
  config_.validate();
  const int d = config_.d_model;
  projector_ = nn::FeedForward(store, init, "proj.vision_lm", "proj.vision_lm", vision_dim, d, d);
  token_embedding_ = store.create("lm.embed.tokens", "lm.embed", init.normal(vocab_size, d, 0.02));
  position_embedding_ = store.create("lm.embed.positions", "lm.embed", init.normal(config_.context, d, 0.02));
  for (int l = 0; l < config_.layers; ++l) {
    blocks_.emplace_back(store, init, "lm.block" + std::to_string(l), "lm.blocks", d, config_.heads, config_.ffn_mult);
  }
  final_norm_ = nn::LayerNorm(store, "lm.final_norm", "lm.blocks", d);
  head_ = nn::Linear(store, init, "lm.head", "lm.head", d, vocab_size);
}

ag::Var LanguageModel::project_image(const FeatureGrid& image_prefix) const { return projector_(image_prefix.tokens); }

LanguageModel::Output LanguageModel::forward(const FeatureGrid& image_prefix, std::span<const int> ids) const {
  const std::size_t prefix = static_cast<std::size_t>(image_prefix.count());
  if (ids.size() > static_cast<std::size_t>(config_.context)) {
    throw InvalidInput("sequence of " + std::to_string(ids.size()) + " tokens exceeds the context window");
  }
  if (ids.size() <= prefix) throw InvalidInput("sequence has no text after the image prefix");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab_size_) throw InvalidInput("token id out of vocabulary: " + std::to_string(ids[i]));
    const bool should_be_img = i < prefix;
    if ((ids[i] == Tokenizer::kImg) != should_be_img) {
      throw InvalidInput("[IMG] placeholders must exactly cover the image prefix");
    }
  }
  std::vector<ag::Var> parts = {project_image(image_prefix), ag::gather_rows(token_embedding_, ids.subspan(prefix))};
  ag::Var x = ag::concat_rows(parts);
  x = ag::add(x, ag::slice_rows(position_embedding_, 0, static_cast<Eigen::Index>(ids.size())));
  for (const auto& block : blocks_) x = block(x, true);
  ag::Var hidden = final_norm_(x);
  return {head_(hidden), hidden};
}

}  // namespace reasonseg
