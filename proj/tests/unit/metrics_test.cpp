#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "repare/error.hpp"
#include "repare/metrics.hpp"
#include "testkit.hpp"

namespace repare {
namespace {

using nlohmann::json;

const std::string kDir = REPARE_FIXTURES_DIR "/conllu/";

double ratio(const json& pair) { return pair[0].get<double>() / pair[1].get<double>(); }

TEST(Conllu, FixturesMatchHandValues) {
  const auto expected = json::parse(testkit::read_file(kDir + "expected.json"));
  ASSERT_EQ(expected.size(), 10u);
  for (const auto& [name, e] : expected.items()) {
    const auto sentences = ingest_conllu(kDir + name + ".conllu");
    ASSERT_EQ(sentences.size(), 1u) << name;
    EXPECT_EQ(sentences[0].id, name);
    EXPECT_EQ(add_metric(sentences[0]), ratio(e["add"])) << name;
    EXPECT_EQ(id_metric(sentences[0]), ratio(e["id"])) << name;
    EXPECT_EQ(id_metric(sentences[0], {true}), ratio(e["id_aux"])) << name;
  }
}

std::vector<ParsedSentence> group(const std::string& prefix) {
  std::vector<ParsedSentence> out;
  for (int i = 1; i <= 5; ++i) {
    auto s = ingest_conllu(kDir + prefix + "_0" + std::to_string(i) + ".conllu");
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

TEST(Conllu, GroupMeansMatchHandValues) {
  const auto c = compare_complexity(group("orig"), group("reph"));
  // Hand means: ADD (2.2 + 1.6 + 1 + 2.5 + 2.25) / 5 and
  // (25/9 + 23/9 + 13/8 + 24/9 + 3.4) / 5; ID likewise from the fixture ratios.
  EXPECT_NEAR(c.original.mean_add, 1.91, 1e-12);
  EXPECT_NEAR(c.rephrased.mean_add, 2.605, 1e-12);
  EXPECT_NEAR(c.original.mean_id, (1.0 / 6 + 1.0 / 6 + 3.0 / 5 + 1.0 / 5 + 2.0 / 5) / 5, 1e-12);
  EXPECT_NEAR(c.rephrased.mean_id, (3.0 / 10 + 3.0 / 10 + 5.0 / 9 + 4.0 / 10 + 6.0 / 11) / 5, 1e-12);
  EXPECT_NEAR(c.delta_add, 2.605 - 1.91, 1e-12);
  EXPECT_GT(c.delta_add, 0.0);
  EXPECT_GT(c.delta_id, 0.0);
  EXPECT_EQ(c.original.sentences, 5u);
}

TEST(Conllu, CsvLayout) {
  const auto c = compare_complexity(group("orig"), group("reph"));
  EXPECT_EQ(complexity_csv(c),
            "group,sentences,add,id\n"
            "original,5,1.9100,0.3067\n"
            "rephrased,5,2.6050,0.4202\n"
            "delta,,0.6950,0.1135\n");
}

TEST(Conllu, MultipleSentencesAndComments) {
  const std::string text =
      "# sent_id = a\n1\tHi\thi\tINTJ\t_\t_\t0\troot\t_\t_\n\n"
      "# newdoc\n1\tGo\tgo\tVERB\t_\t_\t0\troot\t_\t_\n2\t!\t!\tPUNCT\t_\t_\t1\tpunct\t_\t_\n";
  const auto s = parse_conllu(text);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].id, "a");
  EXPECT_EQ(s[1].id, "");
  EXPECT_EQ(add_metric(s[0]), 0.0);
  EXPECT_EQ(add_metric(s[1]), 0.0);
  EXPECT_EQ(id_metric(s[1]), 1.0);
}

std::size_t error_line(const std::string& text) {
  try {
    parse_conllu(text);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

TEST(Conllu, MalformedInputReportsLine) {
  const std::string ok = "1\tA\ta\tNOUN\t_\t_\t0\troot\t_\t_\n";
  EXPECT_EQ(error_line(ok + "2\tB\tb\tNOUN\t_\t_\n"), 2u);
  EXPECT_EQ(error_line(ok + "3\tB\tb\tNOUN\t_\t_\t1\tdep\t_\t_\n"), 2u);
  EXPECT_EQ(error_line(ok + "2\tB\tb\tNOUN\t_\t_\t9\tdep\t_\t_\n"), 2u);
  EXPECT_EQ(error_line(ok + "2\tB\tb\tNOUN\t_\t_\t2\tdep\t_\t_\n"), 2u);
  EXPECT_EQ(error_line(ok + "2\tB\tb\tNOUN\t_\t_\t0\troot\t_\t_\n"), 1u);
  EXPECT_EQ(error_line("x\tB\tb\tNOUN\t_\t_\t0\troot\t_\t_\n"), 1u);
  EXPECT_EQ(error_line(ok), 0u);
}

TEST(Conllu, IngestWrapsErrors) {
  testkit::TempDir dir("conllu");
  testkit::write_file(dir.path() / "bad.conllu", "1\tA\n");
  EXPECT_THROW(ingest_conllu(dir.path() / "bad.conllu"), LoadError);
  EXPECT_THROW(ingest_conllu(dir.path() / "missing.conllu"), LoadError);
}

TEST(Conllu, EmptyGroupThrows) {
  EXPECT_THROW(compare_complexity({}, group("reph")), ValidationError);
  EXPECT_EQ(group_complexity({}).sentences, 0u);
}

}  // namespace
}  // namespace repare
