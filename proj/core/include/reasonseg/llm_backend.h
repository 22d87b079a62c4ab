#pragma once

#include <string>

#include "reasonseg/http_client.h"
#include "reasonseg/reasoning.h"

namespace reasonseg {

/// Generator backend that delegates every stage to a vision-language chat
/// model. A failed or malformed reply is retried once; the second failure
/// raises PipelineError carrying the image id. Elements carry no masks, so
/// their dialogues are quarantined until masks are annotated.
class LlmBackend : public GeneratorBackend {
 public:
  explicit LlmBackend(ChatClient& client) : client_(client) {}

  std::string name() const override { return "llm"; }
  std::vector<SceneElement> extract_elements(const std::string& image_id, const ImageBuffer& image) override;
  ReasoningQuestion form_question(const std::string& image_id, const ImageBuffer& image, const SceneElement& target,
                                  std::span<const SceneElement> elements) override;
  ReasoningNode decompose(const std::string& image_id, const ImageBuffer& image, const ReasoningQuestion& question,
                          std::span<const SceneElement> elements, int max_depth) override;
  std::vector<Turn> phrase_dialogue(const std::string& image_id, const ReasoningPath& path,
                                    std::span<const SceneElement> elements) override;

 private:
  ChatClient& client_;
};

/// The JSON value embedded in a model reply, tolerating surrounding prose
/// and code fences. Throws DecodeError when none parses.
nlohmann::json extract_json(const std::string& reply);

}  // namespace reasonseg
