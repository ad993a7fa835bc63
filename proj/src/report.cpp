#include <fstream>
#include <map>

#include "repare/error.hpp"
#include "repare/pipeline.hpp"

namespace repare {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError(path.string(), "cannot open for writing");
  out << content;
  out.flush();
  if (!out) throw LoadError(path.string(), "write failed");
}

}  // namespace

std::vector<EvalReport> emit_report(const std::vector<RunRecord>& records,
                                    const std::vector<QuestionInstance>& instances,
                                    const PipelineConfig& config) {
  if (records.empty()) throw ValidationError("no records to report");
  const auto reports = build_reports(records, instances);
  if (reports.empty()) throw ValidationError("no record carries a scored answer; nothing to report");

  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec) throw LoadError(config.output_dir.string(), "cannot create output directory: " + ec.message());

  write_file(config.output_dir / "report.csv", reports_to_csv(reports));

  json settings = config.fingerprint();
  settings["score_formula"] = "exp(mean(answer token logprobs))";
  settings["soft_accuracy"] = config.official_vqa_averaging ? "leave-one-out average of min(matches/3, 1)"
                                                            : "min(matches/3, 1)";
  json doc{{"settings", settings}, {"reports", reports_to_json(reports)}};
  write_file(config.output_dir / "report.json", doc.dump(2) + "\n");

  // Questions before and after selection, one per line, for external parsing.
  std::map<std::string, const RunRecord*> by_id;
  for (const auto& r : records) by_id[r.question_id] = &r;
  std::string original, rephrased;
  for (const auto& inst : instances) {
    auto it = by_id.find(inst.question_id);
    if (it == by_id.end() || it->second->errored) continue;
    for (const auto& m : it->second->modes) {
      if (m.mode != "confidence") continue;
      original += inst.question + "\n";
      rephrased += m.question + "\n";
    }
  }
  write_file(config.output_dir / "questions_original.txt", original);
  write_file(config.output_dir / "questions_rephrased.txt", rephrased);
  return reports;
}

}  // namespace repare
