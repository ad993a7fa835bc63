#include "repare/metrics.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "repare/error.hpp"
#include "text_util.hpp"

namespace repare {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == '\t') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

bool parse_int(const std::string& s, int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

struct Pending {
  ParsedSentence sentence;
  std::size_t first_line = 0;
  std::vector<std::size_t> lines;
};

void finish(Pending& p, std::vector<ParsedSentence>& out) {
  if (p.sentence.tokens.empty()) {
    p = {};
    return;
  }
  const int n = static_cast<int>(p.sentence.tokens.size());
  int roots = 0;
  for (std::size_t i = 0; i < p.sentence.tokens.size(); ++i) {
    const auto& t = p.sentence.tokens[i];
    if (t.head < 0 || t.head > n)
      throw ParseError(p.lines[i], "head " + std::to_string(t.head) + " out of range 0.." + std::to_string(n));
    if (t.head == t.index) throw ParseError(p.lines[i], "token is its own head");
    if (t.head == 0) ++roots;
  }
  if (roots != 1)
    throw ParseError(p.first_line, "sentence has " + std::to_string(roots) + " roots; expected 1");
  out.push_back(std::move(p.sentence));
  p = {};
}

bool counts_for_id(const std::string& upos, const MetricOptions& options) {
  static const std::set<std::string> tags{"VERB", "ADJ", "ADV", "ADP", "CCONJ", "SCONJ"};
  return tags.count(upos) > 0 || (options.id_count_aux && upos == "AUX");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::vector<ParsedSentence> parse_conllu(std::string_view text) {
  std::vector<ParsedSentence> out;
  Pending pending;
  const auto lines = text::split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::size_t line_no = ln + 1;
    const std::string& line = lines[ln];
    if (text::trim(line).empty()) {
      finish(pending, out);
      continue;
    }
    if (line[0] == '#') {
      const std::string body = text::trim(std::string_view(line).substr(1));
      if (body.rfind("sent_id", 0) == 0) {
        const auto eq = body.find('=');
        if (eq != std::string::npos) pending.sentence.id = text::trim(std::string_view(body).substr(eq + 1));
      }
      continue;
    }
    const auto fields = split_tabs(line);
    if (fields.size() != 10)
      throw ParseError(line_no, "expected 10 tab-separated fields, found " + std::to_string(fields.size()));
    const auto& id = fields[0];
    if (id.find('-') != std::string::npos || id.find('.') != std::string::npos) continue;
    ParsedToken tok;
    if (!parse_int(id, tok.index)) throw ParseError(line_no, "bad token id '" + id + "'");
    if (!parse_int(fields[6], tok.head)) throw ParseError(line_no, "bad head '" + fields[6] + "'");
    tok.form = fields[1];
    tok.upos = fields[3];
    if (tok.index != static_cast<int>(pending.sentence.tokens.size()) + 1)
      throw ParseError(line_no, "token id " + id + " is not contiguous");
    if (pending.sentence.tokens.empty()) pending.first_line = line_no;
    pending.sentence.tokens.push_back(std::move(tok));
    pending.lines.push_back(line_no);
  }
  finish(pending, out);
  return out;
}

std::vector<ParsedSentence> ingest_conllu(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw LoadError(file.string(), "cannot open CoNLL-U file");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_conllu(buf.str());
  } catch (const ParseError& e) {
    throw LoadError(file.string(), e.what());
  }
}

double add_metric(const ParsedSentence& sentence) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& t : sentence.tokens) {
    if (t.head == 0 || t.upos == "PUNCT") continue;
    sum += std::abs(t.index - t.head);
    ++count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

double id_metric(const ParsedSentence& sentence, const MetricOptions& options) {
  std::size_t words = 0, ideas = 0;
  for (const auto& t : sentence.tokens) {
    if (t.upos == "PUNCT") continue;
    ++words;
    if (counts_for_id(t.upos, options)) ++ideas;
  }
  return words == 0 ? 0.0 : static_cast<double>(ideas) / static_cast<double>(words);
}

GroupComplexity group_complexity(const std::vector<ParsedSentence>& group,
                                 const MetricOptions& options) {
  GroupComplexity g;
  g.sentences = group.size();
  if (group.empty()) return g;
  for (const auto& s : group) {
    g.mean_add += add_metric(s);
    g.mean_id += id_metric(s, options);
  }
  g.mean_add /= static_cast<double>(group.size());
  g.mean_id /= static_cast<double>(group.size());
  return g;
}

ComplexityComparison compare_complexity(const std::vector<ParsedSentence>& original,
                                        const std::vector<ParsedSentence>& rephrased,
                                        const MetricOptions& options) {
  if (original.empty() || rephrased.empty())
    throw ValidationError("complexity comparison needs two non-empty groups");
  ComplexityComparison c;
  c.original = group_complexity(original, options);
  c.rephrased = group_complexity(rephrased, options);
  c.delta_add = c.rephrased.mean_add - c.original.mean_add;
  c.delta_id = c.rephrased.mean_id - c.original.mean_id;
  return c;
}

std::string complexity_csv(const ComplexityComparison& c) {
  std::ostringstream out;
  out << "group,sentences,add,id\n";
  out << "original," << c.original.sentences << ',' << fmt(c.original.mean_add) << ','
      << fmt(c.original.mean_id) << '\n';
  out << "rephrased," << c.rephrased.sentences << ',' << fmt(c.rephrased.mean_add) << ','
      << fmt(c.rephrased.mean_id) << '\n';
  out << "delta,," << fmt(c.delta_add) << ',' << fmt(c.delta_id) << '\n';
  return out.str();
}

}  // namespace repare
