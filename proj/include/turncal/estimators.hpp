#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "turncal/dialogue.hpp"
#include "turncal/gateway.hpp"

namespace turncal {

// Prompt texts shipped as assets; placeholders {Question} and {Answer}.
struct PromptTemplates {
  std::string generation;
  std::string vanilla_verb;
  std::string cot_verb;
  std::string p_true;
  std::string p_sufficient;
  std::string summarize;
  std::string hinter_twentyq;
  std::string hinter_guess;
  std::string guesser;
};

PromptTemplates load_templates(const std::filesystem::path& assets_dir);
std::map<std::string, std::string> template_digests(const PromptTemplates& templates);

// Per-call completion budgets.
struct TokenLimits {
  int answer = 256;
  int verbalized = 1024;
  int probe = 16;
  int summary = 512;
  int hint = 512;
  int guess = 512;
};

// Content of the LAST complete \boxed{...}, with balanced-brace scanning so
// nested braces survive. Absent when no complete box exists.
std::optional<std::string> extract_boxed(const std::string& text);

// lowercase, underscores to spaces, strip surrounding punctuation, collapse
// whitespace, drop one leading English article
std::string normalize_answer(const std::string& text);

bool match_answer(const std::string& predicted, const std::string& gold,
                  const std::vector<std::string>& aliases);

struct VerbalizedParse {
  double confidence = 0.5;
  ParseStatus status = ParseStatus::FAILED;
};

// Last numeric \boxed{N} wins (OK); otherwise the last bare
// "### Confidence: N" line (FALLBACK); otherwise 0.5 (FAILED).
// N is on the 0-100 scale and is clamped before rescaling.
VerbalizedParse parse_verbalized_confidence(const std::string& text);

// Renormalized probability of `target` ('A' or 'B') read from the first
// decision token's top-k list. A decision token is one of the first 5 tokens
// whose text, trimmed of whitespace and asterisks, is exactly "A" or "B".
// A letter missing from top-k gets floor mass 1e-6. Absent when no decision
// token is found.
std::optional<double> letter_probability(const ChatResponse& response, char target);

struct AnswerOutput {
  std::string answer;
  ParseStatus parse_status = ParseStatus::OK;
  std::string text;  // full completion, for audit
};

// Greedy completion of the generation template over the rendered dialogue
// context; boxed answer, falling back to the last non-empty line.
AnswerOutput elicit_answer(Gateway& gateway, const PromptTemplates& templates,
                           const std::vector<ChatMessage>& context, const std::string& model_id,
                           const TokenLimits& limits = {});

struct ConfidenceOutput {
  double confidence = 0.5;
  std::string method;  // MethodConfig id
  ParseStatus parse_status = ParseStatus::FAILED;
  nlohmann::ordered_json evidence = nlohmann::ordered_json::object();
};

ConfidenceOutput vanilla_verb(Gateway& gateway, const PromptTemplates& templates,
                              const std::vector<ChatMessage>& context, const std::string& answer,
                              const std::string& model_id, const MethodConfig& config,
                              const TokenLimits& limits = {});

ConfidenceOutput cot_verb(Gateway& gateway, const PromptTemplates& templates,
                          const std::vector<ChatMessage>& context, const std::string& answer,
                          const std::string& model_id, const MethodConfig& config,
                          const TokenLimits& limits = {});

// Fraction of m temperature-1 samples whose boxed answer matches `answer`.
// `aliases` widens the match when the target is the gold answer.
ConfidenceOutput self_consistency(Gateway& gateway, const PromptTemplates& templates,
                                  const std::vector<ChatMessage>& context,
                                  const std::string& answer,
                                  const std::vector<std::string>& aliases,
                                  const std::string& model_id, const MethodConfig& config,
                                  const TokenLimits& limits = {});

ConfidenceOutput p_true(Gateway& gateway, const PromptTemplates& templates,
                        const std::vector<ChatMessage>& context, const std::string& answer,
                        const std::string& model_id, const MethodConfig& config,
                        const TokenLimits& limits = {});

ConfidenceOutput p_sufficient(Gateway& gateway, const PromptTemplates& templates,
                              const std::vector<ChatMessage>& context, const std::string& answer,
                              const std::string& model_id, const MethodConfig& config,
                              const TokenLimits& limits = {});

// Dispatch on config.kind.
ConfidenceOutput estimate_confidence(Gateway& gateway, const PromptTemplates& templates,
                                     const MethodConfig& config,
                                     const std::vector<ChatMessage>& context,
                                     const std::string& answer,
                                     const std::vector<std::string>& aliases,
                                     const std::string& model_id, const TokenLimits& limits = {});

}  // namespace turncal
