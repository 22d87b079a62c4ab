#include "reasonseg/tokenizer.h"

#include <cctype>
#include <fstream>

#include "reasonseg/errors.h"

namespace reasonseg {

Tokenizer::Tokenizer() {
  for (auto s : kSpecialText) add_word(std::string(s));
}

std::vector<std::string> Tokenizer::split(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (c == '[' || c == '<') {
      bool matched = false;
      for (auto s : kSpecialText) {
        if (text.substr(i, s.size()) == s) {
          flush();
          out.emplace_back(s);
          i += s.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      word.push_back(static_cast<char>(c));
    }
    ++i;
  }
  flush();
  return out;
}

void Tokenizer::fit(std::span<const std::string> corpus) {
  for (const auto& text : corpus)
    for (auto& w : split(text)) add_word(w);
}

void Tokenizer::add_word(const std::string& word) {
  if (word.empty() || ids_.count(word)) return;
  ids_.emplace(word, static_cast<int>(tokens_.size()));
  tokens_.push_back(word);
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split(text)) {
    auto it = ids_.find(w);
    ids.push_back(it == ids_.end() ? kUnk : it->second);
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

std::string Tokenizer::canonical(std::string_view text) {
  std::string out;
  for (const auto& w : split(text)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

int Tokenizer::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Tokenizer::token(int id) const {
  if (id < 0 || id >= size()) throw InvalidInput("token id out of vocabulary: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

bool Tokenizer::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

void Tokenizer::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("vocabulary file not found: " + path.string());
  Tokenizer tok;
  std::string line;
  int index = 0;
  while (std::getline(in, line)) {
    if (index < kNumSpecials) {
      if (line != kSpecialText[index]) throw DecodeError("vocabulary file does not start with the special tokens");
    } else {
      if (line.empty() || tok.contains(line)) throw DecodeError("vocabulary file has an empty or duplicate entry");
      tok.add_word(line);
    }
    ++index;
  }
  if (index < kNumSpecials) throw DecodeError("vocabulary file is truncated");
  return tok;
}

}  // namespace reasonseg
