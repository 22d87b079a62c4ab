#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace reasonseg {

/// Word-level vocabulary: whitespace separates words, each punctuation
/// character is its own token, and the special markers below are matched
/// whole. Special ids are fixed and precede all word ids.
class Tokenizer {
 public:
  enum Special : int {
    kPad = 0,
    kUnk = 1,
    kEos = 2,
    kImg = 3,
    kObj = 4,
    kSeg = 5,
    kUser = 6,
    kAssistant = 7,
    kNumSpecials = 8,
  };
  static constexpr std::string_view kSpecialText[kNumSpecials] = {
      "<pad>", "<unk>", "<eos>", "[IMG]", "[OBJ]", "[SEG]", "<user>", "<assistant>"};

  Tokenizer();

  /// Splits text into token strings (no vocabulary lookup).
  static std::vector<std::string> split(std::string_view text);

  /// Adds every word of every text, in first-seen order.
  void fit(std::span<const std::string> corpus);
  void add_word(const std::string& word);

  std::vector<int> encode(std::string_view text) const;
  /// Tokens joined by single spaces.
  std::string decode(std::span<const int> ids) const;
  /// Canonical spacing of text: decode(encode(t)) == canonical(t) for text
  /// made of in-vocabulary tokens.
  static std::string canonical(std::string_view text);

  int id(std::string_view token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  bool contains(std::string_view token) const;

  /// One token per line, specials first.
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

  friend bool operator==(const Tokenizer& a, const Tokenizer& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace reasonseg
