#include "turncal/experiments.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <stdexcept>

#include "turncal/util.hpp"

namespace turncal {

namespace {
using json = nlohmann::ordered_json;
}

const std::vector<PlaceboItem>& PlaceboPools::for_kind(TaskKind kind) const {
  // the city pool is GUESS-specific; the 20Q items are entity-generic and
  // serve every other kind
  return kind == TaskKind::GUESS ? guess : twentyq;
}

namespace {

std::vector<PlaceboItem> pool_from_json(const json& j) {
  std::vector<PlaceboItem> pool;
  for (const json& item : j)
    pool.push_back({item.at("question").get<std::string>(), item.at("answer").get<std::string>()});
  return pool;
}

}  // namespace

PlaceboPools load_placebo_pools(const std::filesystem::path& assets_dir) {
  PlaceboPools pools;
  pools.twentyq =
      pool_from_json(json::parse(read_text_file(assets_dir / "placebo" / "twentyq.json")));
  pools.guess = pool_from_json(json::parse(read_text_file(assets_dir / "placebo" / "guess.json")));
  return pools;
}

PlaceboItem pick_placebo_item(const std::vector<PlaceboItem>& pool, const std::string& dialogue_id,
                              int turn_index, std::uint64_t seed) {
  if (pool.empty()) throw std::invalid_argument("placebo pool is empty");
  if (turn_index < 2) throw std::invalid_argument("placebo needs turn_index >= 2");
  std::mt19937_64 rng(fnv1a64(dialogue_id) ^ seed);
  std::vector<size_t> perm(pool.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  // hand-rolled Fisher-Yates: std::shuffle is implementation-defined, and the
  // pick must reproduce across platforms
  for (size_t i = perm.size() - 1; i > 0; --i) {
    size_t j = static_cast<size_t>(rng() % (i + 1));
    std::swap(perm[i], perm[j]);
  }
  size_t slot = static_cast<size_t>(turn_index - 2) % pool.size();
  return pool[perm[slot]];
}

namespace {

void append_turn(std::vector<ChatMessage>& messages, const HintTurn& turn) {
  if (turn.question) {
    messages.push_back({Role::ASSISTANT, *turn.question});
    messages.push_back({Role::USER, turn.reveal});
  } else {
    messages.push_back({Role::USER, turn.reveal});
  }
}

}  // namespace

PromptPlan build_prompt(const Dialogue& dialogue, int turn_index, Condition condition,
                        const PromptOptions& options) {
  int L = dialogue.length();
  if (turn_index < 1 || turn_index > L)
    throw std::out_of_range("turn index " + std::to_string(turn_index) +
                            " out of range for dialogue '" + dialogue.id + "' of length " +
                            std::to_string(L));

  PromptPlan plan;
  plan.dialogue_id = dialogue.id;
  plan.turn_index = turn_index;
  plan.condition = condition;
  plan.messages.push_back({Role::USER, dialogue.preamble});

  switch (condition) {
    case Condition::MULTITURN:
      for (int i = 0; i < turn_index; ++i) append_turn(plan.messages, dialogue.turns[i]);
      break;
    case Condition::PLACEBO: {
      if (turn_index < 2)
        throw std::out_of_range("placebo condition needs turn_index >= 2, got " +
                                std::to_string(turn_index));
      if (!options.pools) throw std::invalid_argument("placebo condition needs pools");
      for (int i = 0; i < turn_index - 1; ++i) append_turn(plan.messages, dialogue.turns[i]);
      PlaceboItem item = pick_placebo_item(options.pools->for_kind(dialogue.task_kind),
                                           dialogue.id, turn_index, options.placebo_seed);
      HintTurn placebo;
      placebo.index = turn_index;
      placebo.question = item.question;
      placebo.reveal = item.answer;
      append_turn(plan.messages, placebo);
      plan.placebo_turn = std::move(placebo);
      break;
    }
    case Condition::SUMMARY: {
      if (!options.summary)
        throw std::invalid_argument("summary condition needs summary text for dialogue '" +
                                    dialogue.id + "' turn " + std::to_string(turn_index));
      plan.messages.push_back({Role::USER, *options.summary});
      plan.summary_text = *options.summary;
      break;
    }
  }

  plan.messages.push_back({Role::USER, std::string(kGuessCue)});
  return plan;
}

namespace {

std::string hint_block(const Dialogue& dialogue, int upto) {
  std::string block;
  for (int i = 0; i < upto; ++i) {
    const HintTurn& t = dialogue.turns[i];
    if (!block.empty()) block += '\n';
    if (t.question) {
      block += "Q: " + *t.question + "\nA: " + t.reveal;
    } else {
      block += t.reveal;
    }
  }
  return block;
}

}  // namespace

std::string summarize_hints(Gateway& gateway, const PromptTemplates& templates,
                            const Dialogue& dialogue, int turn_index,
                            const std::string& summarizer_model, const TokenLimits& limits) {
  if (turn_index < 1 || turn_index > dialogue.length())
    throw std::out_of_range("turn index " + std::to_string(turn_index) +
                            " out of range for dialogue '" + dialogue.id + "'");
  ChatRequest request;
  request.model_id = summarizer_model;
  request.messages.push_back(
      {Role::USER, templates.summarize + "\n\n" + hint_block(dialogue, turn_index)});
  request.temperature = 0.0;
  request.max_tokens = limits.summary;
  ChatResponse response = gateway.complete(request);
  std::string summary = trim(response.text);
  if (summary.empty())
    throw std::runtime_error("EMPTY_SUMMARY for dialogue '" + dialogue.id + "' turn " +
                             std::to_string(turn_index));
  return summary;
}

namespace {

struct WorkItem {
  const Dialogue* dialogue;
  int turn_index;
};

EvalRecord failed_record(const WorkItem& item, const MethodConfig& method, Target target,
                         Condition condition, const std::string& model_id,
                         const std::string& error) {
  EvalRecord record;
  record.dialogue_id = item.dialogue->id;
  record.turn_index = item.turn_index;
  record.normalized_level = normalized_level(item.turn_index, item.dialogue->length());
  record.method = method.id();
  record.target = target;
  record.condition = condition;
  // the gold-target invariant (answer == gold) must hold even for failures
  record.answer = target == Target::GOLD_ANSWER ? item.dialogue->gold_answer : "";
  record.confidence = 0.5;
  record.correct = false;
  record.parse_status = ParseStatus::FAILED;
  record.raw = json{{"model_id", model_id}, {"error", error}};
  return record;
}

}  // namespace

std::vector<EvalRecord> evaluate(Gateway& gateway, const PromptTemplates& templates,
                                 const std::vector<Dialogue>& dialogues,
                                 const MethodConfig& method, Target target, Condition condition,
                                 const EvalOptions& options) {
  if (options.model_id.empty()) throw std::invalid_argument("evaluate needs a model_id");
  if (condition == Condition::PLACEBO && !options.pools)
    throw std::invalid_argument("placebo evaluation needs placebo pools");

  std::vector<WorkItem> items;
  for (const Dialogue& d : dialogues) {
    int first = condition == Condition::PLACEBO ? 2 : 1;
    for (int i = first; i <= d.length(); ++i) items.push_back({&d, i});
  }

  const std::string summarizer =
      options.summarizer_model_id.empty() ? options.model_id : options.summarizer_model_id;

  std::vector<EvalRecord> records(items.size());
  parallel_for(items.size(), options.workers, [&](size_t n) {
    const WorkItem& item = items[n];
    const Dialogue& d = *item.dialogue;
    try {
      PromptOptions popts;
      popts.pools = options.pools;
      popts.placebo_seed = options.seed;
      std::string summary;
      if (condition == Condition::SUMMARY) {
        summary =
            summarize_hints(gateway, templates, d, item.turn_index, summarizer, options.limits);
        popts.summary = &summary;
      }
      PromptPlan plan = build_prompt(d, item.turn_index, condition, popts);

      AnswerOutput elicited =
          elicit_answer(gateway, templates, plan.messages, options.model_id, options.limits);
      bool z = match_answer(elicited.answer, d.gold_answer, d.aliases);

      const std::string& conf_target =
          target == Target::GOLD_ANSWER ? d.gold_answer : elicited.answer;
      const std::vector<std::string> no_aliases;
      const std::vector<std::string>& match_aliases =
          target == Target::GOLD_ANSWER ? d.aliases : no_aliases;
      ConfidenceOutput conf =
          estimate_confidence(gateway, templates, method, plan.messages, conf_target,
                              match_aliases, options.model_id, options.limits);

      EvalRecord record;
      record.dialogue_id = d.id;
      record.turn_index = item.turn_index;
      record.normalized_level = normalized_level(item.turn_index, d.length());
      record.method = method.id();
      record.target = target;
      record.condition = condition;
      record.answer = target == Target::GOLD_ANSWER ? d.gold_answer : elicited.answer;
      record.confidence = conf.confidence;
      record.correct = z;
      record.parse_status = conf.parse_status;

      json raw = json::object();
      raw["model_id"] = options.model_id;
      raw["elicited"] = json{{"answer", elicited.answer},
                             {"parse_status", to_string(elicited.parse_status)},
                             {"text", elicited.text}};
      raw["evidence"] = conf.evidence;
      if (plan.summary_text) raw["summary"] = *plan.summary_text;
      if (plan.placebo_turn)
        raw["placebo"] = json{{"question", plan.placebo_turn->question.value_or("")},
                              {"reveal", plan.placebo_turn->reveal}};
      record.raw = std::move(raw);
      records[n] = std::move(record);
    } catch (const std::exception& e) {
      records[n] = failed_record(item, method, target, condition, options.model_id, e.what());
    }
  });

  std::stable_sort(records.begin(), records.end(), [](const EvalRecord& a, const EvalRecord& b) {
    if (a.dialogue_id != b.dialogue_id) return a.dialogue_id < b.dialogue_id;
    return a.turn_index < b.turn_index;
  });
  return records;
}

PlaceboReport placebo_experiment(Gateway& gateway, const PromptTemplates& templates,
                                 const std::vector<Dialogue>& dialogues,
                                 const MethodConfig& method, const EvalOptions& options,
                                 SignificanceTest test) {
  bool any_eligible =
      std::any_of(dialogues.begin(), dialogues.end(), [](const Dialogue& d) { return d.length() >= 2; });
  if (!any_eligible) throw std::invalid_argument("placebo experiment needs a dialogue with L >= 2");

  PlaceboReport report;
  report.test = test;
  report.multiturn_records = evaluate(gateway, templates, dialogues, method,
                                      Target::MODEL_ANSWER, Condition::MULTITURN, options);
  report.placebo_records = evaluate(gateway, templates, dialogues, method, Target::MODEL_ANSWER,
                                    Condition::PLACEBO, options);

  std::map<std::pair<std::string, int>, const EvalRecord*> multiturn, placebo;
  for (const EvalRecord& r : report.multiturn_records)
    multiturn[{r.dialogue_id, r.turn_index}] = &r;
  for (const EvalRecord& r : report.placebo_records) placebo[{r.dialogue_id, r.turn_index}] = &r;

  std::vector<double> baseline_conf, placebo_conf, original_conf;
  for (const Dialogue& d : dialogues) {
    for (int i = 2; i <= d.length(); ++i) {
      const EvalRecord* base = multiturn.at({d.id, i - 1});
      const EvalRecord* orig = multiturn.at({d.id, i});
      const EvalRecord* plac = placebo.at({d.id, i});
      PlaceboTriple triple;
      triple.dialogue_id = d.id;
      triple.turn_index = i;
      triple.conf_baseline = base->confidence;
      triple.conf_placebo = plac->confidence;
      triple.conf_original = orig->confidence;
      triple.correct_baseline = base->correct;
      triple.correct_placebo = plac->correct;
      triple.correct_original = orig->correct;
      report.triples.push_back(triple);
      baseline_conf.push_back(base->confidence);
      placebo_conf.push_back(plac->confidence);
      original_conf.push_back(orig->confidence);
    }
  }

  auto mean = [](const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    return v.empty() ? 0.0 : sum / static_cast<double>(v.size());
  };
  report.mean_baseline = mean(baseline_conf);
  report.mean_placebo = mean(placebo_conf);
  report.mean_original = mean(original_conf);
  report.placebo_vs_baseline = paired_significance(baseline_conf, placebo_conf, test);
  report.original_vs_baseline = paired_significance(baseline_conf, original_conf, test);
  return report;
}

FormatComparison format_comparison(Gateway& gateway, const PromptTemplates& templates,
                                   const std::vector<Dialogue>& dialogues,
                                   const MethodConfig& method, const EvalOptions& options,
                                   int bins, BinScheme scheme) {
  FormatComparison cmp;
  cmp.multiturn_records = evaluate(gateway, templates, dialogues, method, Target::MODEL_ANSWER,
                                   Condition::MULTITURN, options);
  cmp.summary_records = evaluate(gateway, templates, dialogues, method, Target::MODEL_ANSWER,
                                 Condition::SUMMARY, options);

  auto mean_conf = [](const std::vector<EvalRecord>& records) {
    double sum = 0.0;
    for (const EvalRecord& r : records) sum += r.confidence;
    return records.empty() ? 0.0 : sum / static_cast<double>(records.size());
  };
  cmp.acc_multiturn = accuracy(cmp.multiturn_records);
  cmp.acc_summary = accuracy(cmp.summary_records);
  cmp.conf_multiturn = mean_conf(cmp.multiturn_records);
  cmp.conf_summary = mean_conf(cmp.summary_records);
  cmp.ece_multiturn = info_ece(cmp.multiturn_records, bins, scheme);
  cmp.ece_summary = info_ece(cmp.summary_records, bins, scheme);
  return cmp;
}

}  // namespace turncal
