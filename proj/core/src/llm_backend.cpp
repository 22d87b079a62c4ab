#include "reasonseg/llm_backend.h"

#include <cctype>

#include <spdlog/spdlog.h>

#include "reasonseg/errors.h"

namespace reasonseg {
namespace {

const char* kSystemPrompt =
    "You are a careful annotator of images. Follow the requested output format exactly.";

template <class F>
auto with_retry(const std::string& image_id, const std::string& stage, F&& attempt) {
  for (int i = 0;; ++i) {
    try {
      return attempt();
    } catch (const IoError& e) {
      if (i > 0) throw PipelineError(image_id, stage + " failed after retry: " + e.what());
      spdlog::warn("{}: {} failed, retrying: {}", image_id, stage, e.what());
    } catch (const DecodeError& e) {
      if (i > 0) throw PipelineError(image_id, stage + " failed after retry: " + e.what());
      spdlog::warn("{}: {} returned a malformed reply, retrying: {}", image_id, stage, e.what());
    }
  }
}

std::string element_list(std::span<const SceneElement> elements) {
  std::string out;
  for (const auto& e : elements) out += "- " + e.name + ": " + e.description + "\n";
  return out;
}

ReasoningNode node_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DecodeError("tree node is not an object");
  ReasoningNode n;
  n.question = j.value("question", "");
  n.answer = j.value("answer", "");
  if (n.question.empty() || n.answer.empty()) throw DecodeError("tree node without question or answer");
  if (j.contains("children")) {
    if (!j["children"].is_array()) throw DecodeError("children is not an array");
    for (const auto& c : j["children"]) n.children.push_back(node_from_json(c));
  }
  return n;
}

}  // namespace

nlohmann::json extract_json(const std::string& reply) {
  const auto open = reply.find_first_of("[{");
  if (open == std::string::npos) throw DecodeError("reply contains no JSON");
  const char close = reply[open] == '[' ? ']' : '}';
  for (auto end = reply.rfind(close); end != std::string::npos && end > open; end = reply.rfind(close, end - 1)) {
    auto parsed = nlohmann::json::parse(reply.substr(open, end - open + 1), nullptr, false);
    if (!parsed.is_discarded()) return parsed;
  }
  throw DecodeError("reply contains no parseable JSON");
}

std::vector<SceneElement> LlmBackend::extract_elements(const std::string& image_id, const ImageBuffer& image) {
  const Bytes png = image_to_png(image);
  return with_retry(image_id, "element extraction", [&] {
    const std::string reply = client_.complete(
        {{"system", kSystemPrompt, std::nullopt},
         {"user",
          "List every clearly visible object in the image. Reply with a JSON array only. Each entry has "
          "\"name\" (a short noun phrase), \"attributes\" (an object mapping attribute names such as colour "
          "and position to values) and \"description\" (one sentence locating the object).",
          png}});
    const auto j = extract_json(reply);
    if (!j.is_array()) throw DecodeError("element list is not an array");
    std::vector<SceneElement> out;
    for (const auto& item : j) {
      SceneElement e;
      e.id = "e" + std::to_string(out.size());
      e.name = item.value("name", "");
      e.description = item.value("description", "");
      if (item.contains("attributes") && item["attributes"].is_object()) {
        for (const auto& [k, v] : item["attributes"].items())
          e.attributes[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
      if (e.name.empty() || e.description.empty() || e.attributes.empty()) {
        throw DecodeError("element without name, description or attributes");
      }
      out.push_back(std::move(e));
    }
    return out;
  });
}

ReasoningQuestion LlmBackend::form_question(const std::string& image_id, const ImageBuffer& image,
                                            const SceneElement& target, std::span<const SceneElement> elements) {
  const Bytes png = image_to_png(image);
  return with_retry(image_id, "question formation", [&] {
    std::string text = client_.complete(
        {{"system", kSystemPrompt, std::nullopt},
         {"user",
          "Objects in the image:\n" + element_list(elements) + "\nWrite one complex question about the image whose "
              "answer is the object \"" + target.name + "\". Do not name the object; refer to it through its "
              "function, context or attributes. Reply with the question only.",
          png}});
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
    if (text.empty()) throw DecodeError("empty question");
    return ReasoningQuestion{target.id, text};
  });
}

ReasoningNode LlmBackend::decompose(const std::string& image_id, const ImageBuffer& image,
                                    const ReasoningQuestion& question, std::span<const SceneElement> elements,
                                    int max_depth) {
  const Bytes png = image_to_png(image);
  return with_retry(image_id, "tree construction", [&] {
    const std::string reply = client_.complete(
        {{"system", kSystemPrompt, std::nullopt},
         {"user",
          "Objects in the image:\n" + element_list(elements) + "\nQuestion: " + question.text +
              "\nDecompose the question into progressively finer question/answer steps that end by identifying "
              "the answer object. Reply with JSON only: {\"question\": ..., \"answer\": ..., \"children\": "
              "[...]}. The first child continues the reasoning; other children are alternatives that were "
              "ruled out. Use at most " + std::to_string(kMaxTreeChildren) + " children per node and at most " +
              std::to_string(max_depth) + " levels.",
          png}});
    return node_from_json(extract_json(reply));
  });
}

std::vector<Turn> LlmBackend::phrase_dialogue(const std::string& image_id, const ReasoningPath& path,
                                              std::span<const SceneElement>) {
  return with_retry(image_id, "dialogue assembly", [&] {
    std::string steps;
    for (const auto& s : path.steps) steps += "Q: " + s.question + "\nA: " + s.answer + "\n";
    const std::string reply = client_.complete(
        {{"system", kSystemPrompt, std::nullopt},
         {"user",
          "Rewrite these reasoning steps as a natural conversation between a user and an assistant, one user "
          "turn and one assistant turn per step, in the same order:\n" + steps +
              "Reply with a JSON array of {\"role\": \"user\" or \"assistant\", \"text\": ...}.",
          std::nullopt}});
    const auto j = extract_json(reply);
    if (!j.is_array() || j.size() != 2 * path.steps.size()) throw DecodeError("wrong number of dialogue turns");
    std::vector<Turn> turns;
    for (std::size_t i = 0; i < j.size(); ++i) {
      const std::string role = j[i].value("role", "");
      const std::string text = j[i].value("text", "");
      const std::string expected = i % 2 == 0 ? "user" : "assistant";
      if (role != expected || text.empty()) throw DecodeError("dialogue turns do not alternate");
      turns.push_back({i % 2 == 0 ? Role::User : Role::Assistant, text});
    }
    return turns;
  });
}

}  // namespace reasonseg
