#include "turncal/hinter_guesser.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "turncal/util.hpp"

namespace turncal {

namespace {
using json = nlohmann::ordered_json;
}

std::string to_string(RejectReason reason) {
  switch (reason) {
    case RejectReason::LEAKED: return "LEAKED";
    case RejectReason::NON_CONVERGED: return "NON_CONVERGED";
    case RejectReason::HINT_PARSE_FAILED: return "HINT_PARSE_FAILED";
    case RejectReason::GATEWAY_ERROR: return "GATEWAY_ERROR";
  }
  return "?";
}

std::string default_preamble(TaskKind kind) {
  switch (kind) {
    case TaskKind::GUESS:
      return "Given the following information, name the single CITY that best fits them. If "
             "unsure, provide your best guess. The answer should be concise. You have some clues "
             "about the answer:";
    default:
      return "Given the following information, provide the title of the Wikipedia page that best "
             "answers the last question fragment. If unsure, provide your best guess. The answer "
             "should be concise. You have some clues about the answer:";
  }
}

namespace {

std::string render_history(const std::vector<HintTurn>& history) {
  if (history.empty()) return "None yet.";
  std::string block;
  for (const HintTurn& t : history) {
    if (!block.empty()) block += '\n';
    if (t.question) {
      block += "Q: " + *t.question + "\nA: " + t.reveal;
    } else {
      block += t.reveal;
    }
  }
  return block;
}

// First complete \boxed{...} after `label`; empty optional when the label is
// missing or its box never closes.
std::optional<std::string> boxed_after(const std::string& text, const std::string& label) {
  size_t at = text.find(label);
  if (at == std::string::npos) return std::nullopt;
  const std::string marker = "\\boxed{";
  size_t open = text.find(marker, at + label.size());
  if (open == std::string::npos) return std::nullopt;
  size_t pos = open + marker.size();
  int depth = 1;
  std::string content;
  while (pos < text.size()) {
    char c = text[pos];
    if (c == '{') ++depth;
    if (c == '}') {
      --depth;
      if (depth == 0) return content;
    }
    content += c;
    ++pos;
  }
  return std::nullopt;
}

std::optional<std::string> canonical_yes_no(const std::string& text) {
  std::string lowered = to_lower(trim(text));
  if (lowered == "yes") return "Yes";
  if (lowered == "no") return "No";
  return std::nullopt;
}

bool leaks_secret(const std::string& reveal, const std::string& secret) {
  std::string needle = normalize_answer(secret);
  if (needle.empty()) return false;
  return normalize_answer(reveal).find(needle) != std::string::npos;
}

const std::string& hinter_template(const PromptTemplates& templates, TaskKind kind) {
  return kind == TaskKind::GUESS ? templates.hinter_guess : templates.hinter_twentyq;
}

}  // namespace

HintTurn hint_step(Gateway& gateway, const PromptTemplates& templates, const GenerationJob& job,
                   const std::vector<HintTurn>& history, const TokenLimits& limits) {
  if (job.secret_entity.empty()) throw std::invalid_argument("job has an empty secret");
  if (static_cast<int>(history.size()) >= job.max_turns)
    throw std::invalid_argument("history already at max_turns for secret '" + job.secret_entity +
                                "'");

  std::string prompt = hinter_template(templates, job.task_kind);
  prompt = replace_all(prompt, "{Secret}", job.secret_entity);
  prompt = replace_all(prompt, "{History}", render_history(history));

  const int attempts = 3;
  RejectReason last_reason = RejectReason::HINT_PARSE_FAILED;
  std::string last_detail = "no attempt ran";
  for (int attempt = 0; attempt < attempts; ++attempt) {
    ChatRequest request;
    request.model_id = job.hinter_model;
    request.messages.push_back({Role::USER, prompt});
    request.temperature = 1.0;
    request.max_tokens = limits.hint;
    request.seed_hint = job.seed + static_cast<std::uint64_t>(attempt);
    ChatResponse response = gateway.complete(request);

    std::optional<std::string> question = boxed_after(response.text, "### Hint Question:");
    std::optional<std::string> answer = boxed_after(response.text, "### Hint Answer:");
    if (!question || !answer || trim(*question).empty() || trim(*answer).empty()) {
      last_reason = RejectReason::HINT_PARSE_FAILED;
      last_detail = "attempt " + std::to_string(attempt + 1) + ": missing question or answer box";
      continue;
    }
    std::string reveal = trim(*answer);
    // leak first: a reveal naming the secret aborts as a leak even when it
    // also breaks the Yes/No format
    if (leaks_secret(reveal, job.secret_entity)) {
      last_reason = RejectReason::LEAKED;
      last_detail = "attempt " + std::to_string(attempt + 1) + ": reveal contains the secret";
      continue;
    }
    if (job.task_kind == TaskKind::TWENTYQ) {
      std::optional<std::string> yes_no = canonical_yes_no(reveal);
      if (!yes_no) {
        last_reason = RejectReason::HINT_PARSE_FAILED;
        last_detail = "attempt " + std::to_string(attempt + 1) + ": reveal '" + reveal +
                      "' is not Yes/No";
        continue;
      }
      reveal = *yes_no;
    }

    HintTurn turn;
    turn.index = static_cast<int>(history.size()) + 1;
    turn.question = trim(*question);
    turn.reveal = reveal;
    return turn;
  }
  throw HintStepError(last_reason, "hint generation gave up after " + std::to_string(attempts) +
                                       " attempts; " + last_detail);
}

GuesserVerdict guess_step(Gateway& gateway, const PromptTemplates& templates,
                          const GenerationJob& job, const std::vector<HintTurn>& history,
                          const TokenLimits& limits) {
  if (history.empty()) throw std::invalid_argument("guess_step needs a non-empty history");

  std::string prompt = replace_all(templates.guesser, "{History}", render_history(history));

  for (int attempt = 0; attempt < 2; ++attempt) {
    ChatRequest request;
    request.model_id = job.guesser_model;
    request.messages.push_back({Role::USER, prompt});
    request.temperature = 0.0;
    request.max_tokens = limits.guess;
    if (attempt > 0) request.seed_hint = static_cast<std::uint64_t>(attempt);
    ChatResponse response = gateway.complete(request);

    std::optional<std::string> guess = boxed_after(response.text, "### Guess:");
    std::optional<std::string> unique = boxed_after(response.text, "### Unique:");
    if (!guess || !unique || trim(*guess).empty()) continue;
    std::string flag = to_lower(trim(*unique));
    if (flag != "yes" && flag != "no") continue;

    GuesserVerdict verdict;
    verdict.guess = trim(*guess);
    verdict.unique = flag == "yes";
    return verdict;
  }

  GuesserVerdict failed;
  failed.parse_ok = false;
  failed.unique = false;
  return failed;
}

namespace {

std::string id_slug(const std::string& secret) {
  std::string slug;
  for (char c : to_lower(secret)) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      slug += c;
    else if (!slug.empty() && slug.back() != '-')
      slug += '-';
  }
  while (!slug.empty() && slug.back() == '-') slug.pop_back();
  return slug.empty() ? "entity" : slug;
}

struct JobOutcome {
  bool kept = false;
  Dialogue dialogue;
  RejectedJob rejection;
};

JobOutcome run_job(Gateway& gateway, const PromptTemplates& templates, const GenerationJob& job,
                   size_t job_index, const GenerationOptions& options) {
  JobOutcome outcome;
  outcome.rejection.job = job;
  try {
    if (job.secret_entity.empty()) throw std::invalid_argument("job has an empty secret");
    if (job.max_turns < 1) throw std::invalid_argument("max_turns must be at least 1");

    std::vector<HintTurn> history;
    for (int turn = 1; turn <= job.max_turns; ++turn) {
      history.push_back(hint_step(gateway, templates, job, history, options.limits));
      GuesserVerdict verdict = guess_step(gateway, templates, job, history, options.limits);
      if (verdict.parse_ok && verdict.unique &&
          match_answer(verdict.guess, job.secret_entity, {})) {
        char index_buf[16];
        std::snprintf(index_buf, sizeof index_buf, "%04zu", job_index);
        Dialogue d;
        d.id = std::string("gen-") + index_buf + "-" + id_slug(job.secret_entity);
        d.task_kind = job.task_kind;
        d.preamble = default_preamble(job.task_kind);
        d.gold_answer = job.secret_entity;
        d.turns = std::move(history);
        d.source = Source::GENERATED;
        outcome.kept = true;
        outcome.dialogue = std::move(d);
        return outcome;
      }
    }
    outcome.rejection.reason = RejectReason::NON_CONVERGED;
    outcome.rejection.detail =
        "no unique correct guess within " + std::to_string(job.max_turns) + " turns";
  } catch (const HintStepError& e) {
    outcome.rejection.reason = e.reason();
    outcome.rejection.detail = e.what();
  } catch (const GatewayError& e) {
    outcome.rejection.reason = RejectReason::GATEWAY_ERROR;
    outcome.rejection.detail = e.what();
  } catch (const std::exception& e) {
    outcome.rejection.reason = RejectReason::GATEWAY_ERROR;
    outcome.rejection.detail = e.what();
  }
  return outcome;
}

}  // namespace

GenerationResult run_generation(Gateway& gateway, const PromptTemplates& templates,
                                const std::vector<GenerationJob>& jobs,
                                const GenerationOptions& options) {
  if (jobs.empty()) throw std::invalid_argument("run_generation needs at least one job");

  std::vector<JobOutcome> outcomes(jobs.size());
  parallel_for(jobs.size(), options.workers, [&](size_t n) {
    outcomes[n] = run_job(gateway, templates, jobs[n], n, options);
  });

  GenerationResult result;
  for (JobOutcome& outcome : outcomes) {
    if (outcome.kept)
      result.dialogues.push_back(std::move(outcome.dialogue));
    else
      result.rejected.push_back(std::move(outcome.rejection));
  }
  return result;
}

CorpusStats corpus_stats(const std::vector<Dialogue>& dialogues) {
  CorpusStats stats;
  std::set<std::string> entities;
  for (const Dialogue& d : dialogues) {
    ++stats.dialogue_count;
    stats.turn_count += d.length();
    entities.insert(d.gold_answer);
    ++stats.length_histogram[d.length()];
  }
  stats.entity_count = static_cast<int>(entities.size());
  return stats;
}

std::vector<std::string> read_entity_list(const std::filesystem::path& path) {
  std::vector<std::string> entities;
  for (const std::string& line : split_lines(read_text_file(path))) {
    std::string secret = trim(line);
    if (!secret.empty()) entities.push_back(secret);
  }
  return entities;
}

void write_rejection_log(const std::filesystem::path& path,
                         const std::vector<RejectedJob>& rejected) {
  std::string out;
  for (const RejectedJob& r : rejected) {
    json row;
    row["secret_entity"] = r.job.secret_entity;
    row["task_kind"] = to_string(r.job.task_kind);
    row["reason"] = to_string(r.reason);
    row["detail"] = r.detail;
    out += row.dump();
    out += '\n';
  }
  write_text_file_atomic(path, out);
}

}  // namespace turncal
