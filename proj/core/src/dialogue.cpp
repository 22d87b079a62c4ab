#include "reasonseg/dialogue.h"

#include <algorithm>
#include <cctype>

#include "reasonseg/errors.h"

namespace reasonseg {

std::string_view to_string(Role r) { return r == Role::User ? "user" : "assistant"; }

Role role_from_string(std::string_view s) {
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  throw InvalidInput("unknown role: " + std::string(s));
}

std::string segmentation_response(std::string_view target_class) {
  return "Sure , the target is [OBJ] " + std::string(target_class) + " [SEG] .";
}

bool is_segmentation_instruction(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  return lower.find("segment") != std::string::npos;
}

int count_seg_markers(std::string_view text) {
  int n = 0;
  for (std::size_t pos = text.find("[SEG]"); pos != std::string_view::npos; pos = text.find("[SEG]", pos + 5)) ++n;
  return n;
}

std::vector<std::string> dialogue_violations(const DialogueSample& s) {
  std::vector<std::string> v;
  if (s.sample_id.empty()) v.push_back("empty sample_id");
  if (s.target_class.empty()) v.push_back("empty target_class");
  if (s.turns.size() < 4) v.push_back("fewer than 4 utterances");
  for (std::size_t i = 0; i < s.turns.size(); ++i) {
    Role expected = i % 2 == 0 ? Role::User : Role::Assistant;
    if (s.turns[i].role != expected) {
      v.push_back("roles do not alternate at turn " + std::to_string(i));
      break;
    }
    if (s.turns[i].text.empty()) v.push_back("empty utterance at turn " + std::to_string(i));
  }
  if (s.turns.size() >= 2) {
    const Turn& last = s.turns.back();
    const Turn& last_user = s.turns[s.turns.size() - 2];
    if (last.role != Role::Assistant) v.push_back("dialogue does not end with an assistant turn");
    if (last_user.role != Role::User || !is_segmentation_instruction(last_user.text)) {
      v.push_back("last user turn is not a segmentation instruction");
    }
    int total = 0;
    for (const auto& t : s.turns) total += count_seg_markers(t.text);
    const auto obj = last.text.find("[OBJ]");
    const auto seg = last.text.find("[SEG]");
    if (total != 1 || count_seg_markers(last.text) != 1) {
      v.push_back("dialogue must contain exactly one [SEG], in the last assistant turn");
    } else if (obj == std::string::npos || obj > seg) {
      v.push_back("[SEG] is not preceded by [OBJ] in the last assistant turn");
    }
  }
  return v;
}

void validate_dialogue(const DialogueSample& sample) {
  auto v = dialogue_violations(sample);
  if (v.empty()) return;
  std::string msg = "invalid dialogue " + sample.sample_id + ":";
  for (const auto& s : v) msg += " " + s + ";";
  throw InvalidInput(msg);
}

}  // namespace reasonseg
