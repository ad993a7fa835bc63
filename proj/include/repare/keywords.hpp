#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace repare {

/// Lower-cased stopwords. File format: one token per line, '#' comments.
class Stoplist {
 public:
  Stoplist() = default;
  explicit Stoplist(std::set<std::string> words) : words_(std::move(words)) {}

  /// The SMART stoplist shipped in data/smart_stoplist.txt.
  static Stoplist smart();
  static Stoplist parse(std::string_view text);
  static Stoplist from_file(const std::filesystem::path& path);

  bool contains(const std::string& word) const { return words_.count(word) > 0; }
  void add(std::string word);
  std::size_t size() const { return words_.size(); }

 private:
  std::set<std::string> words_;
};

struct KeywordPhrase {
  std::string phrase;
  double score = 0.0;
  bool operator==(const KeywordPhrase&) const = default;
};

struct KeywordResult {
  std::vector<KeywordPhrase> phrases;  // score non-increasing
};

struct WordToken {
  std::string text;  // lower-cased
  bool is_word = false;
};

/// Splits on whitespace; punctuation becomes its own (non-word) token.
/// Apostrophes and hyphens inside a word are kept, non-ASCII bytes count as
/// word characters.
std::vector<WordToken> tokenize_words(std::string_view text);

/// RAKE over a single question. Candidate phrases are maximal runs of
/// non-stopword words. For each word, frequency is its number of
/// occurrences in candidates and degree is the summed length of the
/// candidate occurrences containing it. A phrase scores the sum of
/// degree/frequency over its words. Distinct phrases are returned by
/// descending score, ties in order of first occurrence.
KeywordResult extract_keywords(std::string_view question, const Stoplist& stoplist);

}  // namespace repare
