#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace repare {

struct ParsedToken {
  int index = 0;  // 1-based
  std::string form;
  std::string upos;
  int head = 0;  // 0 = root
};

struct ParsedSentence {
  std::string id;  // from a "# sent_id =" comment when present
  std::vector<ParsedToken> tokens;
};

/// Reads CoNLL-U text. Multiword-token ranges (3-4) and empty nodes (5.1)
/// are skipped; comments are ignored. Throws ParseError with the 1-based
/// line number on malformed input, non-contiguous indices, out-of-range
/// heads, or a sentence without exactly one root.
std::vector<ParsedSentence> parse_conllu(std::string_view text);
std::vector<ParsedSentence> ingest_conllu(const std::filesystem::path& file);

struct MetricOptions {
  bool id_count_aux = false;  // count AUX as a verb for idea density
};

/// Average dependency distance: mean |index - head| over non-punctuation
/// tokens that are not the root. 0 when there are none.
double add_metric(const ParsedSentence& sentence);

/// Idea density: share of non-punctuation tokens tagged VERB, ADJ, ADV,
/// ADP, CCONJ or SCONJ (plus AUX when enabled).
double id_metric(const ParsedSentence& sentence, const MetricOptions& options = {});

struct GroupComplexity {
  std::size_t sentences = 0;
  double mean_add = 0.0;
  double mean_id = 0.0;
};

struct ComplexityComparison {
  GroupComplexity original;
  GroupComplexity rephrased;
  double delta_add = 0.0;  // rephrased - original
  double delta_id = 0.0;
};

GroupComplexity group_complexity(const std::vector<ParsedSentence>& group,
                                 const MetricOptions& options = {});

/// Throws ValidationError when either group is empty.
ComplexityComparison compare_complexity(const std::vector<ParsedSentence>& original,
                                        const std::vector<ParsedSentence>& rephrased,
                                        const MetricOptions& options = {});

/// Rows: original, rephrased, delta; columns: group,sentences,add,id.
std::string complexity_csv(const ComplexityComparison& comparison);

}  // namespace repare
