#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "reasonseg/png_codec.h"

namespace reasonseg {

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string text;
  // Attached as an inline data URL in the OpenAI vision message format.
  std::optional<Bytes> image_png;
};

/// Anything that answers a list of chat messages with one completion.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  /// Throws IoError on transport failures and non-2xx replies.
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

struct ChatEndpoint {
  std::string url;  // full URL of the chat-completions route
  std::string api_key;
  std::string model;
  double temperature = 0.0;
  int timeout_seconds = 60;

  /// Reads `<PREFIX>_URL`, `<PREFIX>_API_KEY` and `<PREFIX>_MODEL`. Throws
  /// InvalidInput when the URL variable is unset.
  static ChatEndpoint from_env(const std::string& prefix);
};

/// Client for a chat-completions-style JSON endpoint over http or https.
class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(ChatEndpoint endpoint);
  std::string complete(const std::vector<ChatMessage>& messages) override;

 private:
  ChatEndpoint endpoint_;
  std::string origin_;
  std::string path_;
};

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws DecodeError on malformed input.
Bytes base64_decode(const std::string& text);

}  // namespace reasonseg
