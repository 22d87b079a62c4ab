#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "reasonseg/imaging.h"

namespace reasonseg {

enum class Role { User, Assistant };

std::string_view to_string(Role r);
Role role_from_string(std::string_view s);

struct Turn {
  Role role = Role::User;
  std::string text;
  friend bool operator==(const Turn&, const Turn&) = default;
};

/// The canonical final user instruction of every generated dialogue.
inline constexpr std::string_view kSegmentInstruction =
    "Please segment the core objects according to the above dialogue";

/// Assistant reply carrying the segmentation span for `target_class`.
std::string segmentation_response(std::string_view target_class);

/// True when the utterance asks for a segmentation.
bool is_segmentation_instruction(std::string_view text);

/// Number of [SEG] markers in a piece of text.
int count_seg_markers(std::string_view text);

/// One dialogue record: image, ordered turns, target and mask.
struct DialogueSample {
  std::string sample_id;
  std::string image_path;
  std::vector<Turn> turns;
  std::string target_class;
  std::string mask_path;
  GranularityLabel granularity;
  // Image id plus index of the reasoning path this dialogue linearizes.
  std::optional<std::string> source_tree;
  std::string split;
  // Caption of the whole scene; used to build caption-style training data.
  std::string scene_caption;
};

/// Every DialogueSample invariant that does not hold; empty when valid.
std::vector<std::string> dialogue_violations(const DialogueSample& sample);
/// Throws InvalidInput listing the violations.
void validate_dialogue(const DialogueSample& sample);

}  // namespace reasonseg
