#include <string>
#include <string_view>

#include "reasonseg/evaluation.h"

namespace reasonseg {
namespace {

// Working state of one word; `k` is one past the last letter of the stem
// currently under consideration.
class Stemmer {
 public:
  explicit Stemmer(std::string w) : b_(std::move(w)) {}

  std::string run() {
    if (b_.size() <= 2) return b_;
    step1ab();
    step1c();
    step2();
    step3();
    step4();
    step5();
    return b_;
  }

 private:
  bool consonant(std::size_t i) const {
    switch (b_[i]) {
      case 'a': case 'e': case 'i': case 'o': case 'u': return false;
      case 'y': return i == 0 ? true : !consonant(i - 1);
      default: return true;
    }
  }

  // Number of VC sequences in b_[0, j).
  int measure(std::size_t j) const {
    int n = 0;
    std::size_t i = 0;
    while (i < j && consonant(i)) ++i;
    while (i < j) {
      while (i < j && !consonant(i)) ++i;
      if (i >= j) break;
      ++n;
      while (i < j && consonant(i)) ++i;
    }
    return n;
  }

  bool has_vowel(std::size_t j) const {
    for (std::size_t i = 0; i < j; ++i)
      if (!consonant(i)) return true;
    return false;
  }

  bool double_consonant(std::size_t j) const {
    return j >= 2 && b_[j - 1] == b_[j - 2] && consonant(j - 1);
  }

  // b_[0, j) ends consonant-vowel-consonant and the last is not w, x or y.
  bool cvc(std::size_t j) const {
    if (j < 3 || !consonant(j - 1) || consonant(j - 2) || !consonant(j - 3)) return false;
    const char c = b_[j - 1];
    return c != 'w' && c != 'x' && c != 'y';
  }

  bool ends(std::string_view s) const { return b_.size() >= s.size() && b_.compare(b_.size() - s.size(), s.size(), s) == 0; }
  std::size_t stem_len(std::string_view suffix) const { return b_.size() - suffix.size(); }
  void replace_suffix(std::string_view suffix, std::string_view with) {
    b_.replace(stem_len(suffix), suffix.size(), with);
  }

  // Replaces the first matching suffix when the stem measure exceeds `m`.
  template <std::size_t N>
  void rule_table(const std::pair<std::string_view, std::string_view> (&rules)[N], int m) {
    for (const auto& [suffix, with] : rules) {
      if (!ends(suffix)) continue;
      if (measure(stem_len(suffix)) > m) replace_suffix(suffix, with);
      return;
    }
  }

  void step1ab() {
    if (ends("sses")) replace_suffix("sses", "ss");
    else if (ends("ies")) replace_suffix("ies", "i");
    else if (ends("ss")) {}
    else if (ends("s")) b_.pop_back();

    bool extra = false;
    if (ends("eed")) {
      if (measure(stem_len("eed")) > 0) b_.pop_back();
    } else if (ends("ed") && has_vowel(stem_len("ed"))) {
      b_.resize(stem_len("ed"));
      extra = true;
    } else if (ends("ing") && has_vowel(stem_len("ing"))) {
      b_.resize(stem_len("ing"));
      extra = true;
    }
    if (!extra) return;
    if (ends("at") || ends("bl") || ends("iz")) {
      b_ += 'e';
    } else if (double_consonant(b_.size())) {
      const char c = b_.back();
      if (c != 'l' && c != 's' && c != 'z') b_.pop_back();
    } else if (measure(b_.size()) == 1 && cvc(b_.size())) {
      b_ += 'e';
    }
  }

  void step1c() {
    if (ends("y") && has_vowel(b_.size() - 1)) b_.back() = 'i';
  }

  void step2() {
    static const std::pair<std::string_view, std::string_view> rules[] = {
        {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},  {"anci", "ance"},   {"izer", "ize"},
        {"abli", "able"},   {"alli", "al"},     {"entli", "ent"},  {"eli", "e"},       {"ousli", "ous"},
        {"ization", "ize"}, {"ation", "ate"},   {"ator", "ate"},   {"alism", "al"},    {"iveness", "ive"},
        {"fulness", "ful"}, {"ousness", "ous"}, {"aliti", "al"},   {"iviti", "ive"},   {"biliti", "ble"}};
    rule_table(rules, 0);
  }

  void step3() {
    static const std::pair<std::string_view, std::string_view> rules[] = {
        {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"}, {"ical", "ic"}, {"ful", ""}, {"ness", ""}};
    rule_table(rules, 0);
  }

  void step4() {
    static const std::string_view suffixes[] = {"al",  "ance", "ence", "er",  "ic",  "able", "ible",
                                                "ant", "ement", "ment", "ent", "ion", "ou",   "ism",
                                                "ate", "iti",  "ous",  "ive", "ize"};
    // Longest match wins: "ement" before "ment" before "ent".
    std::string_view best;
    for (auto s : suffixes)
      if (ends(s) && s.size() > best.size()) best = s;
    if (best.empty()) return;
    const std::size_t j = stem_len(best);
    if (best == "ion" && !(j > 0 && (b_[j - 1] == 's' || b_[j - 1] == 't'))) return;
    if (measure(j) > 1) b_.resize(j);
  }

  void step5() {
    if (ends("e")) {
      const std::size_t j = b_.size() - 1;
      const int m = measure(j);
      if (m > 1 || (m == 1 && !cvc(j))) b_.pop_back();
    }
    if (ends("ll") && measure(b_.size()) > 1) b_.pop_back();
  }

  std::string b_;
};

}  // namespace

std::string porter_stem(const std::string& word) { return Stemmer(word).run(); }

}  // namespace reasonseg
