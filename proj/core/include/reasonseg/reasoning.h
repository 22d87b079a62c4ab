#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reasonseg/dialogue.h"
#include "reasonseg/scene.h"

namespace reasonseg {

struct ReasoningQuestion {
  std::string target_id;
  std::string text;
};

/// A question/answer node. By convention children[0] continues the
/// reasoning path; any further children are side branches.
struct ReasoningNode {
  std::string question;
  std::string answer;
  std::vector<ReasoningNode> children;
};

struct QaPair {
  std::string question;
  std::string answer;
};

struct ReasoningPath {
  std::string target_id;
  std::vector<QaPair> steps;
  int depth() const { return static_cast<int>(steps.size()); }
};

struct ReasoningTree {
  std::string image_id;
  std::vector<ReasoningNode> roots;  // one per path
  std::vector<ReasoningPath> paths;
  std::vector<std::string> warnings;
  int k() const { return static_cast<int>(paths.size()); }
};

void to_json(nlohmann::json& j, const ReasoningNode& n);
void to_json(nlohmann::json& j, const ReasoningTree& t);

inline constexpr int kMaxTreeChildren = 3;
inline constexpr int kMaxTreeDepth = 7;
inline constexpr int kMinTreeDepth = 2;

/// Source of elements, questions, decompositions and phrasing.
class GeneratorBackend {
 public:
  virtual ~GeneratorBackend() = default;
  virtual std::string name() const = 0;

  virtual std::vector<SceneElement> extract_elements(const std::string& image_id, const ImageBuffer& image) = 0;
  virtual ReasoningQuestion form_question(const std::string& image_id, const ImageBuffer& image,
                                          const SceneElement& target, std::span<const SceneElement> elements) = 0;
  /// Root of a question/answer chain ending at the target. May exceed the
  /// tree bounds; build_tree enforces them.
  virtual ReasoningNode decompose(const std::string& image_id, const ImageBuffer& image,
                                  const ReasoningQuestion& question, std::span<const SceneElement> elements,
                                  int max_depth) = 0;
  /// Rewrites path steps as alternating user/assistant turns (2 per step).
  virtual std::vector<Turn> phrase_dialogue(const std::string& image_id, const ReasoningPath& path,
                                            std::span<const SceneElement> elements);
  /// One-sentence scene caption, empty when unavailable.
  virtual std::string caption(const std::string& image_id, std::span<const SceneElement> elements);
};

/// K distinct elements with K uniform on [k_min, min(N, k_max)], chosen
/// uniformly without replacement. Throws InvalidInput when N < k_min.
std::vector<SceneElement> select_targets(std::span<const SceneElement> elements, std::mt19937_64& rng,
                                         int k_min = 2, int k_max = 4);

/// One path per question. Nodes with more than max_children children and
/// paths deeper than max_depth are truncated (warnings recorded); a
/// max_depth above 7 is lowered to 7. Throws InvalidInput unless there are
/// 2 to 4 questions, PipelineError when a path is shallower than 2.
ReasoningTree build_tree(const std::string& image_id, const ImageBuffer& image,
                         std::span<const ReasoningQuestion> questions, std::span<const SceneElement> elements,
                         GeneratorBackend& backend, int max_children = kMaxTreeChildren,
                         int max_depth = kMaxTreeDepth);

/// Path steps as turns, then the segmentation instruction and the
/// `[OBJ] {class} [SEG]` reply. Throws InvalidInput for an empty path or an
/// unknown target. The result has 2 * depth + 2 turns.
DialogueSample assemble_dialogue(const std::string& image_id, const ReasoningPath& path,
                                 std::span<const SceneElement> elements, GeneratorBackend& backend);

/// Implicit-question templates of the synthetic backend. The question names
/// neither the colour nor the shape; parse_question inverts it.
std::string synthetic_question(const std::string& colour, const std::string& shape, int template_index);
int synthetic_template_count();
struct ParsedQuestion {
  std::string colour;
  std::string shape;
  int template_index = -1;
};
std::optional<ParsedQuestion> parse_question(const std::string& text);

/// Deterministic backend over procedurally generated scenes.
class SyntheticBackend : public GeneratorBackend {
 public:
  explicit SyntheticBackend(std::uint64_t seed, int max_side_branches = 2, int depth_limit = kMaxTreeDepth)
      : seed_(seed), max_side_branches_(max_side_branches), depth_limit_(depth_limit) {}

  /// Makes a scene's construction list visible to extract_elements.
  void register_scene(const std::string& image_id, SyntheticScene scene);

  std::string name() const override { return "synthetic"; }
  std::vector<SceneElement> extract_elements(const std::string& image_id, const ImageBuffer& image) override;
  ReasoningQuestion form_question(const std::string& image_id, const ImageBuffer& image, const SceneElement& target,
                                  std::span<const SceneElement> elements) override;
  ReasoningNode decompose(const std::string& image_id, const ImageBuffer& image, const ReasoningQuestion& question,
                          std::span<const SceneElement> elements, int max_depth) override;
  std::string caption(const std::string& image_id, std::span<const SceneElement> elements) override;

 private:
  std::mt19937_64 rng_for(const std::string& image_id, const std::string& salt) const;

  std::uint64_t seed_;
  int max_side_branches_;
  int depth_limit_;
  std::map<std::string, SyntheticScene> scenes_;
};

}  // namespace reasonseg
