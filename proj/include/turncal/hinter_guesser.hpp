#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "turncal/dialogue.hpp"
#include "turncal/estimators.hpp"
#include "turncal/gateway.hpp"

namespace turncal {

struct GenerationJob {
  std::string secret_entity;
  TaskKind task_kind = TaskKind::TWENTYQ;
  int max_turns = 20;
  std::string hinter_model;
  std::string guesser_model;
  std::uint64_t seed = 0;
};

struct GuesserVerdict {
  std::string guess;
  bool unique = false;
  bool parse_ok = true;  // false after both verdict parses fail; guess stays empty
};

enum class RejectReason { LEAKED, NON_CONVERGED, HINT_PARSE_FAILED, GATEWAY_ERROR };

std::string to_string(RejectReason reason);

struct RejectedJob {
  GenerationJob job;
  RejectReason reason = RejectReason::NON_CONVERGED;
  std::string detail;
};

// Thrown out of hint_step when three attempts in a row leak the secret or
// fail to parse; carries which of the two happened last.
class HintStepError : public std::runtime_error {
 public:
  HintStepError(RejectReason reason, const std::string& what)
      : std::runtime_error(what), reason_(reason) {}
  RejectReason reason() const { return reason_; }

 private:
  RejectReason reason_;
};

// Preamble the evaluation prompts use for generated dialogues of this kind.
std::string default_preamble(TaskKind kind);

// One hinter call: next question + truthful reveal about the secret, retried
// up to three times when the reveal leaks the secret or the output does not
// parse. TWENTYQ reveals are canonicalized to "Yes"/"No".
HintTurn hint_step(Gateway& gateway, const PromptTemplates& templates, const GenerationJob& job,
                   const std::vector<HintTurn>& history, const TokenLimits& limits = {});

// One guesser call over the history alone (never the secret): best guess plus
// a uniqueness flag. An unparseable verdict is retried once, then returned as
// parse_ok=false (wrong and non-unique).
GuesserVerdict guess_step(Gateway& gateway, const PromptTemplates& templates,
                          const GenerationJob& job, const std::vector<HintTurn>& history,
                          const TokenLimits& limits = {});

struct GenerationResult {
  std::vector<Dialogue> dialogues;
  std::vector<RejectedJob> rejected;
};

struct GenerationOptions {
  int workers = 8;
  TokenLimits limits;
};

// Alternates hint_step/guess_step per job until the guess matches the secret
// with unique=true (dialogue kept, stopping turn included) or max_turns pass
// (rejected NON_CONVERGED). Leaks, unparseable hints, and gateway failures
// reject the job with their own reasons; one bad job never sinks the batch.
GenerationResult run_generation(Gateway& gateway, const PromptTemplates& templates,
                                const std::vector<GenerationJob>& jobs,
                                const GenerationOptions& options = {});

struct CorpusStats {
  int dialogue_count = 0;
  int turn_count = 0;
  int entity_count = 0;  // distinct gold answers
  std::map<int, int> length_histogram;
};

CorpusStats corpus_stats(const std::vector<Dialogue>& dialogues);

// One secret per line; blank lines skipped.
std::vector<std::string> read_entity_list(const std::filesystem::path& path);

void write_rejection_log(const std::filesystem::path& path,
                         const std::vector<RejectedJob>& rejected);

}  // namespace turncal
