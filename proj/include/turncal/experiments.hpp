#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "turncal/dialogue.hpp"
#include "turncal/estimators.hpp"
#include "turncal/gateway.hpp"
#include "turncal/metrics.hpp"

namespace turncal {

inline constexpr std::string_view kGuessCue = "Now guess what it is:";

struct PlaceboItem {
  std::string question;
  std::string answer;
};

// Length-control QA pairs that add a turn without adding information.
struct PlaceboPools {
  std::vector<PlaceboItem> twentyq;
  std::vector<PlaceboItem> guess;

  const std::vector<PlaceboItem>& for_kind(TaskKind kind) const;
};

PlaceboPools load_placebo_pools(const std::filesystem::path& assets_dir);

// Deterministic pick for (dialogue, i): a per-dialogue seeded shuffle of the
// pool indexed by i-2, so turns within one dialogue never repeat an item
// until the pool wraps.
PlaceboItem pick_placebo_item(const std::vector<PlaceboItem>& pool, const std::string& dialogue_id,
                              int turn_index, std::uint64_t seed);

struct PromptPlan {
  std::string dialogue_id;
  int turn_index = 0;
  Condition condition = Condition::MULTITURN;
  std::vector<ChatMessage> messages;
  std::optional<std::string> summary_text;
  std::optional<HintTurn> placebo_turn;
};

struct PromptOptions {
  const PlaceboPools* pools = nullptr;     // PLACEBO only
  std::uint64_t placebo_seed = 0;
  const std::string* summary = nullptr;    // SUMMARY only
};

// MULTITURN: preamble, then turns 1..i as assistant-question/user-reveal
// pairs (clue-only turns render as user messages), then the guess cue.
// PLACEBO: turns 1..i-1 plus one pool-drawn QA pair standing in for turn i.
// SUMMARY: preamble, one user message holding the summary, then the cue.
PromptPlan build_prompt(const Dialogue& dialogue, int turn_index, Condition condition,
                        const PromptOptions& options = {});

// Turns 1..i condensed to a short factual statement by the summarizer model.
std::string summarize_hints(Gateway& gateway, const PromptTemplates& templates,
                            const Dialogue& dialogue, int turn_index,
                            const std::string& summarizer_model, const TokenLimits& limits = {});

struct EvalOptions {
  std::string model_id;
  std::string summarizer_model_id;  // empty: use model_id
  const PlaceboPools* pools = nullptr;
  std::uint64_t seed = 0;
  int workers = 8;
  TokenLimits limits;
};

// Answer-first protocol over every (dialogue, turn): elicit the answer,
// score it against gold, then estimate confidence in the elicited answer
// (MODEL_ANSWER) or the gold answer (GOLD_ANSWER). Per-item failures become
// FAILED records; the run never aborts. Output sorted by (dialogue_id,
// turn_index). PLACEBO covers turns 2..L, other conditions 1..L.
std::vector<EvalRecord> evaluate(Gateway& gateway, const PromptTemplates& templates,
                                 const std::vector<Dialogue>& dialogues,
                                 const MethodConfig& method, Target target, Condition condition,
                                 const EvalOptions& options);

struct PlaceboTriple {
  std::string dialogue_id;
  int turn_index = 0;  // i >= 2
  double conf_baseline = 0.0;  // turn i-1, original prompt
  double conf_placebo = 0.0;   // turn i with the placebo pair
  double conf_original = 0.0;  // turn i, original prompt
  bool correct_baseline = false;
  bool correct_placebo = false;
  bool correct_original = false;
};

struct PlaceboReport {
  std::vector<PlaceboTriple> triples;
  double mean_baseline = 0.0;
  double mean_placebo = 0.0;
  double mean_original = 0.0;
  SignificanceResult placebo_vs_baseline;
  SignificanceResult original_vs_baseline;
  SignificanceTest test = SignificanceTest::PAIRED_T;
  std::vector<EvalRecord> multiturn_records;
  std::vector<EvalRecord> placebo_records;
};

// Does confidence move with information or with mere length: compares each
// turn's confidence against the previous turn and against a placebo-extended
// version of the same prefix.
PlaceboReport placebo_experiment(Gateway& gateway, const PromptTemplates& templates,
                                 const std::vector<Dialogue>& dialogues,
                                 const MethodConfig& method, const EvalOptions& options,
                                 SignificanceTest test = SignificanceTest::PAIRED_T);

struct FormatComparison {
  std::vector<EvalRecord> multiturn_records;
  std::vector<EvalRecord> summary_records;
  double acc_multiturn = 0.0, acc_summary = 0.0;
  double conf_multiturn = 0.0, conf_summary = 0.0;
  InfoEceResult ece_multiturn, ece_summary;
};

// MULTITURN vs SUMMARY on identical (dialogue, turn) pairs.
FormatComparison format_comparison(Gateway& gateway, const PromptTemplates& templates,
                                   const std::vector<Dialogue>& dialogues,
                                   const MethodConfig& method, const EvalOptions& options,
                                   int bins = 5, BinScheme scheme = BinScheme::EQUAL_WIDTH);

}  // namespace turncal
