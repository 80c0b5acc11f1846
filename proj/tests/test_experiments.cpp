#include <doctest.h>

#include <set>

#include "turncal/experiments.hpp"
#include "turncal/mock_backend.hpp"

using namespace turncal;

namespace {

PromptTemplates assets() {
  static PromptTemplates t = load_templates(TURNCAL_ASSETS_DIR);
  return t;
}

PlaceboPools pools() {
  static PlaceboPools p = load_placebo_pools(TURNCAL_ASSETS_DIR);
  return p;
}

ChatResponse reply(const std::string& text) {
  ChatResponse r;
  r.text = text;
  return r;
}

MockRule rule(std::vector<std::string> needles, const std::string& text) {
  MockRule r;
  r.needles = std::move(needles);
  r.replies.push_back(reply(text));
  return r;
}

Dialogue qa_dialogue() {
  Dialogue d;
  d.id = "exp-a";
  d.task_kind = TaskKind::TWENTYQ;
  d.preamble = "Let's play a guessing game about an object.";
  d.gold_answer = "television";
  d.aliases = {"TV"};
  d.turns = {
      {1, "Is it alive?", "No.", {}},
      {2, "Is it electronic?", "Yes.", {}},
  };
  return d;
}

Dialogue clue_dialogue() {
  Dialogue d;
  d.id = "exp-clues";
  d.task_kind = TaskKind::GRACE;
  d.preamble = "Guess the person from the clues.";
  d.gold_answer = "Marie_Curie";
  d.turns = {
      {1, std::nullopt, "She coined the term radioactivity.", {}},
      {2, std::nullopt, "She discovered polonium and radium.", {}},
  };
  return d;
}

// answer and confidence rules for qa_dialogue, deepest turn first so the
// longest matching prefix wins
std::vector<MockRule> qa_rules() {
  return {
      rule({"Is it electronic?", "wrap your answer"}, "\\boxed{television}"),
      rule({"Is it alive?", "wrap your answer"}, "\\boxed{radio}"),
      rule({"Is it electronic?", "The confidence score"}, "### Confidence: \\boxed{60}"),
      rule({"Is it alive?", "The confidence score"}, "### Confidence: \\boxed{40}"),
  };
}

std::shared_ptr<MockBackend> backend(std::vector<MockRule> rules) {
  MockScript script;
  script.rules = std::move(rules);
  script.strict = true;
  return std::make_shared<MockBackend>(std::move(script));
}

EvalOptions eval_options(int workers = 2) {
  EvalOptions opts;
  opts.model_id = "m1";
  opts.workers = workers;
  opts.seed = 7;
  return opts;
}

MethodConfig vanilla() {
  MethodConfig c;
  c.kind = MethodKind::VANILLA_VERB;
  return c;
}

}  // namespace

TEST_CASE("multiturn prompts replay the dialogue and end with the cue") {
  Dialogue d = qa_dialogue();
  PromptPlan plan = build_prompt(d, 2, Condition::MULTITURN);

  REQUIRE(plan.messages.size() == 6);
  CHECK(plan.messages[0] == ChatMessage{Role::USER, d.preamble});
  CHECK(plan.messages[1] == ChatMessage{Role::ASSISTANT, "Is it alive?"});
  CHECK(plan.messages[2] == ChatMessage{Role::USER, "No."});
  CHECK(plan.messages[3] == ChatMessage{Role::ASSISTANT, "Is it electronic?"});
  CHECK(plan.messages[4] == ChatMessage{Role::USER, "Yes."});
  CHECK(plan.messages[5] == ChatMessage{Role::USER, std::string(kGuessCue)});

  PromptPlan first = build_prompt(d, 1, Condition::MULTITURN);
  REQUIRE(first.messages.size() == 4);

  // each turn extends the previous prompt; only the cue moves
  for (size_t k = 0; k + 1 < first.messages.size(); ++k)
    CHECK(first.messages[k] == plan.messages[k]);

  CHECK_THROWS_AS(build_prompt(d, 0, Condition::MULTITURN), std::out_of_range);
  CHECK_THROWS_AS(build_prompt(d, 3, Condition::MULTITURN), std::out_of_range);
}

TEST_CASE("clue-only turns render as user messages") {
  Dialogue d = clue_dialogue();
  PromptPlan plan = build_prompt(d, 2, Condition::MULTITURN);
  REQUIRE(plan.messages.size() == 4);
  CHECK(plan.messages[1] == ChatMessage{Role::USER, "She coined the term radioactivity."});
  CHECK(plan.messages[2] == ChatMessage{Role::USER, "She discovered polonium and radium."});
}

TEST_CASE("placebo prompts swap the last turn for a pool item") {
  Dialogue d = qa_dialogue();
  PlaceboPools p = pools();
  PromptOptions opts;
  opts.pools = &p;
  opts.placebo_seed = 7;

  PromptPlan plan = build_prompt(d, 2, Condition::PLACEBO, opts);
  REQUIRE(plan.messages.size() == 6);
  // the prefix is the real dialogue up to turn 1
  CHECK(plan.messages[1] == ChatMessage{Role::ASSISTANT, "Is it alive?"});
  CHECK(plan.messages[2] == ChatMessage{Role::USER, "No."});
  // then the placebo pair in the same shape
  REQUIRE(plan.placebo_turn.has_value());
  PlaceboItem expected = pick_placebo_item(p.twentyq, d.id, 2, 7);
  CHECK(plan.messages[3] == ChatMessage{Role::ASSISTANT, expected.question});
  CHECK(plan.messages[4] == ChatMessage{Role::USER, expected.answer});
  CHECK(plan.placebo_turn->question == expected.question);
  CHECK(plan.placebo_turn->index == 2);
  CHECK(plan.messages[5].content == std::string(kGuessCue));

  CHECK_THROWS_AS(build_prompt(d, 1, Condition::PLACEBO, opts), std::out_of_range);
  CHECK_THROWS_AS(build_prompt(d, 2, Condition::PLACEBO), std::invalid_argument);
}

TEST_CASE("placebo picks are deterministic and cycle through the pool") {
  PlaceboPools p = pools();
  REQUIRE(p.twentyq.size() == 26);
  REQUIRE(p.guess.size() == 30);

  PlaceboItem again = pick_placebo_item(p.twentyq, "dlg-1", 5, 42);
  CHECK(pick_placebo_item(p.twentyq, "dlg-1", 5, 42).question == again.question);

  // one dialogue walks the whole pool before repeating
  std::set<std::string> seen;
  int n = static_cast<int>(p.twentyq.size());
  for (int i = 2; i < 2 + n; ++i)
    seen.insert(pick_placebo_item(p.twentyq, "dlg-1", i, 42).question);
  CHECK(static_cast<int>(seen.size()) == n);
  CHECK(pick_placebo_item(p.twentyq, "dlg-1", 2 + n, 42).question ==
        pick_placebo_item(p.twentyq, "dlg-1", 2, 42).question);

  // different dialogues draw different orders (first slots disagree
  // somewhere over a handful of ids)
  bool differs = false;
  for (const char* id : {"dlg-2", "dlg-3", "dlg-4", "dlg-5"})
    differs = differs || pick_placebo_item(p.twentyq, id, 2, 42).question !=
                             pick_placebo_item(p.twentyq, "dlg-1", 2, 42).question;
  CHECK(differs);

  CHECK_THROWS_AS(pick_placebo_item({}, "dlg-1", 2, 0), std::invalid_argument);
  CHECK_THROWS_AS(pick_placebo_item(p.twentyq, "dlg-1", 1, 0), std::invalid_argument);
}

TEST_CASE("the city pool serves guess dialogues, the generic pool the rest") {
  PlaceboPools p = pools();
  CHECK(&p.for_kind(TaskKind::GUESS) == &p.guess);
  CHECK(&p.for_kind(TaskKind::TWENTYQ) == &p.twentyq);
  CHECK(&p.for_kind(TaskKind::GRACE) == &p.twentyq);
  CHECK(&p.for_kind(TaskKind::TRICKME) == &p.twentyq);
  CHECK(&p.for_kind(TaskKind::CUSTOM) == &p.twentyq);

  for (const PlaceboItem& item : p.twentyq) {
    CHECK_FALSE(item.question.empty());
    CHECK((item.answer == "Yes" || item.answer == "No"));
  }
  for (const PlaceboItem& item : p.guess) CHECK(item.answer == "Yes");
}

TEST_CASE("summary prompts replace the dialogue with one statement") {
  Dialogue d = qa_dialogue();
  std::string summary = "A non-living electronic object.";
  PromptOptions opts;
  opts.summary = &summary;

  PromptPlan plan = build_prompt(d, 2, Condition::SUMMARY, opts);
  REQUIRE(plan.messages.size() == 3);
  CHECK(plan.messages[0].content == d.preamble);
  CHECK(plan.messages[1] == ChatMessage{Role::USER, summary});
  CHECK(plan.messages[2].content == std::string(kGuessCue));
  CHECK(plan.summary_text == summary);

  CHECK_THROWS_AS(build_prompt(d, 2, Condition::SUMMARY), std::invalid_argument);
}

TEST_CASE("summarize_hints condenses the revealed turns") {
  auto mock = backend({
      rule({"Summarize the hints", "Is it electronic?"}, "A non-living electronic object."),
      rule({"Summarize the hints", "Is it alive?"}, "Something that is not alive."),
  });
  Gateway gateway(mock);
  Dialogue d = qa_dialogue();

  CHECK(summarize_hints(gateway, assets(), d, 1, "m1") == "Something that is not alive.");
  CHECK(summarize_hints(gateway, assets(), d, 2, "m1") == "A non-living electronic object.");

  auto prompt = mock->calls().at(0).messages;
  REQUIRE(prompt.size() == 1);
  CHECK(prompt[0].content.find("Q: Is it alive?\nA: No.") != std::string::npos);
  CHECK(mock->calls().at(0).temperature == 0.0);
  auto deeper = mock->calls().at(1).messages[0].content;
  CHECK(deeper.find("Q: Is it alive?\nA: No.\nQ: Is it electronic?\nA: Yes.") !=
        std::string::npos);
}

TEST_CASE("summarize_hints renders clue-only turns as bare lines") {
  auto mock = backend({rule({"Summarize the hints"}, "A radioactivity pioneer.")});
  Gateway gateway(mock);
  summarize_hints(gateway, assets(), clue_dialogue(), 2, "m1");
  auto content = mock->calls().at(0).messages[0].content;
  CHECK(content.find("She coined the term radioactivity.\nShe discovered polonium and radium.") !=
        std::string::npos);
  CHECK(content.find("Q:") == std::string::npos);
}

TEST_CASE("an empty summary is an error, not a silent empty prompt") {
  auto mock = backend({rule({"Summarize the hints"}, "   ")});
  Gateway gateway(mock);
  Dialogue d = qa_dialogue();
  CHECK_THROWS_WITH_AS(summarize_hints(gateway, assets(), d, 1, "m1"),
                       doctest::Contains("EMPTY_SUMMARY"), std::runtime_error);
}

TEST_CASE("evaluate walks every turn answer-first") {
  auto mock = backend(qa_rules());
  Gateway gateway(mock);
  auto records = evaluate(gateway, assets(), {qa_dialogue()}, vanilla(), Target::MODEL_ANSWER,
                          Condition::MULTITURN, eval_options());

  REQUIRE(records.size() == 2);
  CHECK(records[0].turn_index == 1);
  CHECK(records[0].answer == "radio");
  CHECK_FALSE(records[0].correct);
  CHECK(records[0].confidence == 0.40);
  CHECK(records[0].normalized_level == 0.5);
  CHECK(records[0].method == "vanilla_verb");
  CHECK(records[0].condition == Condition::MULTITURN);
  CHECK(records[0].parse_status == ParseStatus::OK);
  CHECK(records[0].raw.at("model_id") == "m1");
  CHECK(records[0].raw.at("elicited").at("answer") == "radio");

  CHECK(records[1].turn_index == 2);
  CHECK(records[1].answer == "television");
  CHECK(records[1].correct);
  CHECK(records[1].confidence == 0.60);
}

TEST_CASE("gold-target records estimate the gold answer whatever the model said") {
  auto mock = backend(qa_rules());
  Gateway gateway(mock);
  auto records = evaluate(gateway, assets(), {qa_dialogue()}, vanilla(), Target::GOLD_ANSWER,
                          Condition::MULTITURN, eval_options());

  REQUIRE(records.size() == 2);
  for (const auto& r : records) {
    CHECK(r.answer == "television");
    CHECK(r.target == Target::GOLD_ANSWER);
  }
  // turn 1 elicits "radio" (wrong), but correctness still scores the
  // elicited answer, not the target of the confidence question
  CHECK_FALSE(records[0].correct);
  CHECK(records[1].correct);
  // the prompt asked about the gold answer
  bool asked_gold = false;
  for (const auto& call : mock->calls())
    for (const auto& m : call.messages)
      asked_gold = asked_gold || m.content.find("Proposed Answer: television") != std::string::npos;
  CHECK(asked_gold);
}

TEST_CASE("per-turn failures become failed records instead of aborting the run") {
  // confidence rules keyed on the proposed answer, which only turn 1 elicits;
  // the turn 2 item matches nothing and fails
  auto mock = backend({
      rule({"Is it electronic?", "wrap your answer"}, "\\boxed{television}"),
      rule({"Is it alive?", "wrap your answer"}, "\\boxed{radio}"),
      rule({"Proposed Answer: radio", "The confidence score"}, "### Confidence: \\boxed{40}"),
  });
  Gateway gateway(mock);
  auto records = evaluate(gateway, assets(), {qa_dialogue()}, vanilla(), Target::MODEL_ANSWER,
                          Condition::MULTITURN, eval_options());

  REQUIRE(records.size() == 2);
  CHECK(records[0].confidence == 0.40);
  CHECK(records[0].parse_status == ParseStatus::OK);

  CHECK(records[1].confidence == 0.5);
  CHECK(records[1].parse_status == ParseStatus::FAILED);
  CHECK(records[1].answer == "");
  CHECK_FALSE(records[1].correct);
  std::string error = records[1].raw.at("error").get<std::string>();
  CHECK(error.find("no mock rule matches") != std::string::npos);

  // gold target keeps its invariant through failures: both turns now propose
  // the gold answer, which no confidence rule covers
  auto gold = evaluate(gateway, assets(), {qa_dialogue()}, vanilla(), Target::GOLD_ANSWER,
                       Condition::MULTITURN, eval_options());
  CHECK(gold[1].parse_status == ParseStatus::FAILED);
  CHECK(gold[1].answer == "television");
}

TEST_CASE("evaluate is deterministic across worker counts") {
  auto corpus = std::vector<Dialogue>{qa_dialogue(), clue_dialogue()};
  std::vector<MockRule> rules = qa_rules();
  rules.push_back(rule({"polonium and radium", "wrap your answer"}, "\\boxed{Marie Curie}"));
  rules.push_back(rule({"radioactivity", "wrap your answer"}, "\\boxed{a chemist}"));
  rules.push_back(rule({"polonium and radium", "The confidence score"},
                       "### Confidence: \\boxed{90}"));
  rules.push_back(rule({"radioactivity", "The confidence score"}, "### Confidence: \\boxed{10}"));

  auto run = [&](int workers) {
    auto mock = backend(rules);
    Gateway gateway(mock);
    auto records = evaluate(gateway, assets(), corpus, vanilla(), Target::MODEL_ANSWER,
                            Condition::MULTITURN, eval_options(workers));
    nlohmann::ordered_json dump = nlohmann::ordered_json::array();
    for (const auto& r : records) dump.push_back(record_to_json(r));
    return dump.dump();
  };
  auto once = run(1);
  CHECK(run(4) == once);
  CHECK(run(8) == once);
}

TEST_CASE("evaluate records are sorted by dialogue then turn") {
  std::vector<MockRule> rules = qa_rules();
  rules.push_back(rule({"polonium and radium", "wrap your answer"}, "\\boxed{Marie Curie}"));
  rules.push_back(rule({"radioactivity", "wrap your answer"}, "\\boxed{Marie Curie}"));
  rules.push_back(rule({"polonium and radium", "The confidence score"},
                       "### Confidence: \\boxed{90}"));
  rules.push_back(rule({"radioactivity", "The confidence score"}, "### Confidence: \\boxed{10}"));
  auto mock = backend(std::move(rules));
  Gateway gateway(mock);

  // input order reversed relative to id order
  auto records = evaluate(gateway, assets(), {qa_dialogue(), clue_dialogue()}, vanilla(),
                          Target::MODEL_ANSWER, Condition::MULTITURN, eval_options(4));
  REQUIRE(records.size() == 4);
  CHECK(records[0].dialogue_id == "exp-a");
  CHECK(records[1].dialogue_id == "exp-a");
  CHECK(records[2].dialogue_id == "exp-clues");
  CHECK(records[3].dialogue_id == "exp-clues");
  CHECK(records[2].turn_index == 1);
  CHECK(records[3].turn_index == 2);
}

TEST_CASE("placebo evaluation covers turns 2..L and records the swapped pair") {
  std::vector<MockRule> rules = qa_rules();
  auto mock = backend(std::move(rules));
  Gateway gateway(mock);
  EvalOptions opts = eval_options();
  PlaceboPools p = pools();
  opts.pools = &p;

  auto records = evaluate(gateway, assets(), {qa_dialogue()}, vanilla(), Target::MODEL_ANSWER,
                          Condition::PLACEBO, opts);
  REQUIRE(records.size() == 1);
  CHECK(records[0].turn_index == 2);
  CHECK(records[0].condition == Condition::PLACEBO);
  // the prompt held turn 1 plus a placebo pair, so the turn-1 rules answered
  CHECK(records[0].confidence == 0.40);
  CHECK(records[0].answer == "radio");
  PlaceboItem expected = pick_placebo_item(p.twentyq, "exp-a", 2, opts.seed);
  CHECK(records[0].raw.at("placebo").at("question") == expected.question);

  CHECK_THROWS_AS(evaluate(gateway, assets(), {qa_dialogue()}, vanilla(), Target::MODEL_ANSWER,
                           Condition::PLACEBO, eval_options()),
                  std::invalid_argument);
}

TEST_CASE("placebo_experiment separates information gain from added length") {
  // two dialogues; confidence rises with real turns, and the placebo prompt
  // matches the turn-1 rules, so added length moves nothing
  std::vector<MockRule> rules = qa_rules();
  Dialogue second = qa_dialogue();
  second.id = "exp-b";
  second.turns = {
      {1, "Is it a place?", "Yes, it is.", {}},
      {2, "Is it in Europe?", "No, it is not.", {}},
  };
  second.gold_answer = "Kyoto";
  second.aliases = {};
  rules.push_back(rule({"Is it in Europe?", "wrap your answer"}, "\\boxed{Kyoto}"));
  rules.push_back(rule({"Is it a place?", "wrap your answer"}, "\\boxed{Lyon}"));
  rules.push_back(rule({"Is it in Europe?", "The confidence score"}, "### Confidence: \\boxed{60}"));
  rules.push_back(rule({"Is it a place?", "The confidence score"}, "### Confidence: \\boxed{40}"));

  auto mock = backend(std::move(rules));
  Gateway gateway(mock);
  EvalOptions opts = eval_options();
  PlaceboPools p = pools();
  opts.pools = &p;

  PlaceboReport report = placebo_experiment(gateway, assets(), {qa_dialogue(), second}, vanilla(),
                                            opts, SignificanceTest::PAIRED_T);

  REQUIRE(report.triples.size() == 2);
  CHECK(report.triples[0].dialogue_id == "exp-a");
  CHECK(report.triples[0].turn_index == 2);
  CHECK(report.triples[0].conf_baseline == 0.40);
  CHECK(report.triples[0].conf_placebo == 0.40);
  CHECK(report.triples[0].conf_original == 0.60);
  CHECK(report.triples[0].correct_original);
  CHECK_FALSE(report.triples[0].correct_baseline);

  CHECK(report.mean_baseline == 0.40);
  CHECK(report.mean_placebo == 0.40);
  CHECK(report.mean_original == 0.60);

  // placebo turns moved nothing: p = 1 by the all-zero rule
  CHECK(report.placebo_vs_baseline.p_value == 1.0);
  CHECK(report.placebo_vs_baseline.statistic == 0.0);
  // identical +0.2 gains: zero variance, infinite t
  CHECK(report.original_vs_baseline.p_value == 0.0);
  CHECK(report.original_vs_baseline.statistic > 0);
  CHECK(report.test == SignificanceTest::PAIRED_T);

  CHECK(report.multiturn_records.size() == 4);
  CHECK(report.placebo_records.size() == 2);
}

TEST_CASE("placebo_experiment refuses corpora with no eligible dialogue") {
  Dialogue solo = qa_dialogue();
  solo.turns.resize(1);
  auto mock = backend({});
  Gateway gateway(mock);
  EvalOptions opts = eval_options();
  PlaceboPools p = pools();
  opts.pools = &p;
  CHECK_THROWS_AS(placebo_experiment(gateway, assets(), {solo}, vanilla(), opts),
                  std::invalid_argument);
}

TEST_CASE("format_comparison pits the dialogue prompt against its summary") {
  std::vector<MockRule> rules = qa_rules();
  // the summarizer prompt contains the turn texts but not the answer or
  // confidence tails, so it needs its own rules
  rules.push_back(rule({"Summarize the hints", "Is it electronic?"}, "Electronic, not alive."));
  rules.push_back(rule({"Summarize the hints", "Is it alive?"}, "Not alive."));
  rules.push_back(rule({"Electronic, not alive.", "wrap your answer"}, "\\boxed{television}"));
  rules.push_back(rule({"Not alive.", "wrap your answer"}, "\\boxed{a rock}"));
  rules.push_back(rule({"Electronic, not alive.", "The confidence score"},
                       "### Confidence: \\boxed{50}"));
  rules.push_back(rule({"Not alive.", "The confidence score"}, "### Confidence: \\boxed{20}"));

  auto mock = backend(std::move(rules));
  Gateway gateway(mock);
  FormatComparison cmp = format_comparison(gateway, assets(), {qa_dialogue()}, vanilla(),
                                           eval_options(), 5, BinScheme::EQUAL_WIDTH);

  REQUIRE(cmp.multiturn_records.size() == 2);
  REQUIRE(cmp.summary_records.size() == 2);
  CHECK(cmp.summary_records[0].condition == Condition::SUMMARY);
  CHECK(cmp.summary_records[0].raw.at("summary") == "Not alive.");
  CHECK(cmp.summary_records[1].raw.at("summary") == "Electronic, not alive.");

  CHECK(cmp.acc_multiturn == 0.5);   // radio wrong, television right
  CHECK(cmp.acc_summary == 0.5);     // a rock wrong, television right
  CHECK(cmp.conf_multiturn == 0.5);  // mean of 0.40 and 0.60
  CHECK(cmp.conf_summary == doctest::Approx(0.35));
  CHECK(cmp.ece_multiturn.bins.size() == 5);
  CHECK(cmp.ece_summary.bins.size() == 5);
}
