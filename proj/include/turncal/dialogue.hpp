#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace turncal {

enum class TaskKind { TWENTYQ, GUESS, GRACE, TRICKME, CUSTOM };
enum class Source { GENERATED, INGESTED };
enum class Target { MODEL_ANSWER, GOLD_ANSWER };
enum class Condition { MULTITURN, SUMMARY, PLACEBO };
enum class ParseStatus { OK, FALLBACK, FAILED };
enum class MethodKind { VANILLA_VERB, COT_VERB, SC, P_TRUE, P_SUFFICIENT };

std::string to_string(TaskKind k);
std::string to_string(Source s);
std::string to_string(Target t);
std::string to_string(Condition c);
std::string to_string(ParseStatus p);
std::string to_string(MethodKind m);

TaskKind task_kind_from_string(const std::string& s);
Source source_from_string(const std::string& s);
Target target_from_string(const std::string& s);
Condition condition_from_string(const std::string& s);
ParseStatus parse_status_from_string(const std::string& s);
MethodKind method_kind_from_string(const std::string& s);

struct HintTurn {
  int index = 0;  // 1-based position within the dialogue
  std::optional<std::string> question;  // absent for clue-only tasks
  std::string reveal;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

struct Dialogue {
  std::string id;
  TaskKind task_kind = TaskKind::CUSTOM;
  std::string preamble;
  std::string gold_answer;
  std::vector<std::string> aliases;
  std::vector<HintTurn> turns;
  Source source = Source::INGESTED;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  int length() const { return static_cast<int>(turns.size()); }
};

struct MethodConfig {
  MethodKind kind = MethodKind::VANILLA_VERB;
  int samples_m = 20;              // SC sample count
  double gen_temperature = 0.0;    // greedy elicitation
  double sample_temperature = 1.0; // SC sampling
  int top_k_logprobs = 20;         // probe methods

  // Stable identifier used in record files and report rows, e.g. "sc_m20".
  std::string id() const;
};

struct EvalRecord {
  std::string dialogue_id;
  int turn_index = 0;
  double normalized_level = 0.0;  // i / L
  std::string method;             // MethodConfig::id()
  Target target = Target::MODEL_ANSWER;
  Condition condition = Condition::MULTITURN;
  std::string answer;      // elicited answer (gold answer for GOLD_ANSWER target)
  double confidence = 0.0;  // in [0,1]
  bool correct = false;
  ParseStatus parse_status = ParseStatus::OK;
  nlohmann::ordered_json raw = nlohmann::ordered_json::object();
};

struct SchemaViolation {
  int line = 0;            // 1-based line in the JSONL file, 0 if not line-bound
  std::string path;        // field path, e.g. "turns[2].reveal"
  std::string message;
};

class DatasetError : public std::runtime_error {
 public:
  DatasetError(std::string what, std::vector<SchemaViolation> violations)
      : std::runtime_error(std::move(what)), violations_(std::move(violations)) {}
  const std::vector<SchemaViolation>& violations() const { return violations_; }

 private:
  std::vector<SchemaViolation> violations_;
};

// Invariant checks beyond JSON shape: non-empty id/gold, contiguous 1-based
// turn indices, at least one turn, non-empty reveals. Returns human-readable
// problems; empty means valid. Never throws.
std::vector<std::string> validate_dialogue(const Dialogue& d);

nlohmann::ordered_json dialogue_to_json(const Dialogue& d);
// Throws DatasetError (single line 0 entry) on shape violations.
Dialogue dialogue_from_json(const nlohmann::ordered_json& j);

nlohmann::ordered_json record_to_json(const EvalRecord& r);
EvalRecord record_from_json(const nlohmann::ordered_json& j);

// One dialogue per line. Collects every malformed line / field before
// throwing a DatasetError that lists them all.
std::vector<Dialogue> read_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues);

std::vector<EvalRecord> read_records(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path, const std::vector<EvalRecord>& records);

}  // namespace turncal
