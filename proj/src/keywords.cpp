#include "repare/keywords.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "repare/embedded_data.hpp"
#include "repare/error.hpp"
#include "text_util.hpp"

namespace repare {

namespace {

bool is_word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

bool is_joiner(char c) { return c == '\'' || c == '-'; }

}  // namespace

Stoplist Stoplist::smart() { return parse(embedded::smart_stoplist()); }

Stoplist Stoplist::parse(std::string_view text) {
  std::set<std::string> words;
  for (const auto& line : text::split_lines(text)) {
    auto t = text::trim(line);
    if (t.empty() || t[0] == '#') continue;
    words.insert(text::to_lower(t));
  }
  return Stoplist(std::move(words));
}

Stoplist Stoplist::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string(), "cannot open stoplist");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void Stoplist::add(std::string word) { words_.insert(text::to_lower(word)); }

std::vector<WordToken> tokenize_words(std::string_view s) {
  std::vector<WordToken> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (text::is_space(s[i])) {
      ++i;
    } else if (is_word_byte(c)) {
      std::size_t j = i;
      while (j < s.size()) {
        const auto cj = static_cast<unsigned char>(s[j]);
        if (is_word_byte(cj)) {
          ++j;
        } else if (is_joiner(s[j]) && j + 1 < s.size() &&
                   is_word_byte(static_cast<unsigned char>(s[j + 1]))) {
          j += 2;
        } else {
          break;
        }
      }
      out.push_back({text::to_lower(s.substr(i, j - i)), true});
      i = j;
    } else {
      out.push_back({std::string(1, s[i]), false});
      ++i;
    }
  }
  return out;
}

KeywordResult extract_keywords(std::string_view question, const Stoplist& stoplist) {
  std::vector<std::vector<std::string>> candidates;
  std::vector<std::string> current;
  for (const auto& tok : tokenize_words(question)) {
    if (tok.is_word && !stoplist.contains(tok.text)) {
      current.push_back(tok.text);
    } else if (!current.empty()) {
      candidates.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) candidates.push_back(std::move(current));

  std::map<std::string, double> frequency;
  std::map<std::string, double> degree;
  for (const auto& phrase : candidates) {
    std::set<std::string> seen;
    for (const auto& w : phrase) {
      frequency[w] += 1.0;
      if (seen.insert(w).second) degree[w] += static_cast<double>(phrase.size());
    }
  }

  KeywordResult result;
  std::set<std::string> emitted;
  for (const auto& phrase : candidates) {
    std::string joined = text::join(phrase, " ");
    if (!emitted.insert(joined).second) continue;
    double score = 0.0;
    for (const auto& w : phrase) score += degree[w] / frequency[w];
    result.phrases.push_back({std::move(joined), score});
  }
  std::stable_sort(result.phrases.begin(), result.phrases.end(),
                   [](const KeywordPhrase& a, const KeywordPhrase& b) { return a.score > b.score; });
  return result;
}

}  // namespace repare
