#include "reasonseg/http_client.h"

#include <cstdlib>
#include <regex>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "reasonseg/errors.h"

namespace reasonseg {
namespace {

std::string env_or_empty(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  return v ? std::string(v) : std::string();
}

// Replaces inline image payloads so debug logs stay readable and small.
nlohmann::json redacted(nlohmann::json body) {
  for (auto& m : body["messages"]) {
    if (!m["content"].is_array()) continue;
    for (auto& part : m["content"])
      if (part.value("type", "") == "image_url") part["image_url"]["url"] = "<image>";
  }
  return body;
}

}  // namespace

ChatEndpoint ChatEndpoint::from_env(const std::string& prefix) {
  ChatEndpoint e;
  e.url = env_or_empty(prefix + "_URL");
  e.api_key = env_or_empty(prefix + "_API_KEY");
  e.model = env_or_empty(prefix + "_MODEL");
  if (e.url.empty()) throw InvalidInput(prefix + "_URL is not set");
  return e;
}

HttpChatClient::HttpChatClient(ChatEndpoint endpoint) : endpoint_(std::move(endpoint)) {
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(endpoint_.url, m, url_re)) throw InvalidInput("malformed endpoint URL: " + endpoint_.url);
  origin_ = m[1];
  path_ = m[2].matched ? std::string(m[2]) : "/";
}

std::string HttpChatClient::complete(const std::vector<ChatMessage>& messages) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) {
    if (!m.image_png) {
      msgs.push_back({{"role", m.role}, {"content", m.text}});
      continue;
    }
    const std::string url = "data:image/png;base64," + base64_encode(*m.image_png);
    msgs.push_back({{"role", m.role},
                    {"content", nlohmann::json::array({{{"type", "text"}, {"text", m.text}},
                                                       {{"type", "image_url"}, {"image_url", {{"url", url}}}}})}});
  }
  nlohmann::json body{{"messages", msgs}, {"temperature", endpoint_.temperature}};
  if (!endpoint_.model.empty()) body["model"] = endpoint_.model;
  spdlog::debug("chat request to {}: {}", endpoint_.url, redacted(body).dump());

  httplib::Client client(origin_);
  client.set_connection_timeout(endpoint_.timeout_seconds);
  client.set_read_timeout(endpoint_.timeout_seconds);
  httplib::Headers headers;
  if (!endpoint_.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint_.api_key);
  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) throw IoError("chat endpoint unreachable: " + httplib::to_string(res.error()));
  spdlog::debug("chat response {}: {}", res->status, res->body);
  if (res->status < 200 || res->status >= 300) {
    throw IoError("chat endpoint returned HTTP " + std::to_string(res->status));
  }
  try {
    const auto reply = nlohmann::json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("unexpected chat response shape: ") + e.what());
  }
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Bytes base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw DecodeError("base64 length is not a multiple of 4");
  Bytes out(text.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw DecodeError("malformed base64");
  // EVP_DecodeBlock keeps the zero bytes that padding stands for.
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') pad = text.size() >= 2 && text[text.size() - 2] == '=' ? 2 : 1;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

}  // namespace reasonseg
