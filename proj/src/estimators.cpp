#include "turncal/estimators.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <regex>

#include "turncal/util.hpp"

namespace turncal {

namespace {
using json = nlohmann::ordered_json;
}

PromptTemplates load_templates(const std::filesystem::path& assets_dir) {
  auto prompts = assets_dir / "prompts";
  PromptTemplates t;
  t.generation = read_text_file(prompts / "generation.txt");
  t.vanilla_verb = read_text_file(prompts / "vanilla_verb.txt");
  t.cot_verb = read_text_file(prompts / "cot_verb.txt");
  t.p_true = read_text_file(prompts / "p_true.txt");
  t.p_sufficient = read_text_file(prompts / "p_sufficient.txt");
  t.summarize = read_text_file(prompts / "summarize.txt");
  t.hinter_twentyq = read_text_file(prompts / "hinter_twentyq.txt");
  t.hinter_guess = read_text_file(prompts / "hinter_guess.txt");
  t.guesser = read_text_file(prompts / "guesser.txt");
  return t;
}

std::map<std::string, std::string> template_digests(const PromptTemplates& t) {
  return {
      {"generation", sha256_hex(t.generation)},
      {"vanilla_verb", sha256_hex(t.vanilla_verb)},
      {"cot_verb", sha256_hex(t.cot_verb)},
      {"p_true", sha256_hex(t.p_true)},
      {"p_sufficient", sha256_hex(t.p_sufficient)},
      {"summarize", sha256_hex(t.summarize)},
      {"hinter_twentyq", sha256_hex(t.hinter_twentyq)},
      {"hinter_guess", sha256_hex(t.hinter_guess)},
      {"guesser", sha256_hex(t.guesser)},
  };
}

namespace {

std::vector<std::string> all_boxed(const std::string& text) {
  static const std::string marker = "\\boxed{";
  std::vector<std::string> boxes;
  size_t pos = 0;
  while (true) {
    size_t hit = text.find(marker, pos);
    if (hit == std::string::npos) break;
    size_t start = hit + marker.size();
    int depth = 1;
    size_t end = start;
    while (end < text.size() && depth > 0) {
      if (text[end] == '{')
        ++depth;
      else if (text[end] == '}')
        --depth;
      if (depth > 0) ++end;
    }
    if (depth == 0) {
      boxes.push_back(text.substr(start, end - start));
      pos = end + 1;
    } else {
      pos = start;  // unterminated box: skip the marker, keep scanning
    }
  }
  return boxes;
}

}  // namespace

std::optional<std::string> extract_boxed(const std::string& text) {
  std::vector<std::string> boxes = all_boxed(text);
  if (boxes.empty()) return std::nullopt;
  return boxes.back();
}

std::string normalize_answer(const std::string& text) {
  std::string s = to_lower(text);
  std::replace(s.begin(), s.end(), '_', ' ');
  auto is_edge_punct = [](unsigned char c) {
    return std::ispunct(c) && c != '\0';
  };
  size_t b = 0, e = s.size();
  while (b < e && (std::isspace(static_cast<unsigned char>(s[b])) ||
                   is_edge_punct(static_cast<unsigned char>(s[b]))))
    ++b;
  while (e > b && (std::isspace(static_cast<unsigned char>(s[e - 1])) ||
                   is_edge_punct(static_cast<unsigned char>(s[e - 1]))))
    --e;
  s = collapse_whitespace(s.substr(b, e - b));
  for (const char* article : {"the ", "an ", "a "}) {
    if (s.rfind(article, 0) == 0) {
      s = s.substr(std::string(article).size());
      break;
    }
  }
  return s;
}

bool match_answer(const std::string& predicted, const std::string& gold,
                  const std::vector<std::string>& aliases) {
  std::string p = normalize_answer(predicted);
  if (p.empty()) return false;
  if (p == normalize_answer(gold)) return true;
  return std::any_of(aliases.begin(), aliases.end(),
                     [&](const std::string& a) { return p == normalize_answer(a); });
}

namespace {

std::optional<double> parse_score(const std::string& raw) {
  std::string s = trim(raw);
  if (!s.empty() && s.back() == '%') s = trim(s.substr(0, s.size() - 1));
  if (s.empty()) return std::nullopt;
  const char* begin = s.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin) return std::nullopt;
  while (*end != '\0' && std::isspace(static_cast<unsigned char>(*end))) ++end;
  if (*end != '\0') return std::nullopt;
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

double rescale(double score) { return std::clamp(score, 0.0, 100.0) / 100.0; }

}  // namespace

VerbalizedParse parse_verbalized_confidence(const std::string& text) {
  std::vector<std::string> boxes = all_boxed(text);
  for (auto it = boxes.rbegin(); it != boxes.rend(); ++it) {
    if (auto score = parse_score(*it)) return {rescale(*score), ParseStatus::OK};
  }
  // bare "### Confidence: 85" without a box still counts, with a flag
  static const std::regex bare(R"(###\s*Confidence:\s*([0-9]+(?:\.[0-9]+)?))",
                               std::regex::icase);
  std::optional<double> last;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), bare);
       it != std::sregex_iterator(); ++it)
    last = std::stod((*it)[1].str());
  if (last) return {rescale(*last), ParseStatus::FALLBACK};
  return {0.5, ParseStatus::FAILED};
}

namespace {

// decision-token text cleanup: whitespace and markdown emphasis only
std::string strip_decoration(const std::string& token) {
  size_t b = 0, e = token.size();
  auto droppable = [](unsigned char c) { return std::isspace(c) || c == '*'; };
  while (b < e && droppable(static_cast<unsigned char>(token[b]))) ++b;
  while (e > b && droppable(static_cast<unsigned char>(token[e - 1]))) --e;
  return token.substr(b, e - b);
}

}  // namespace

std::optional<double> letter_probability(const ChatResponse& response, char target) {
  if (target != 'A' && target != 'B')
    throw std::invalid_argument("letter_probability target must be 'A' or 'B'");
  size_t scan = std::min<size_t>(response.tokens.size(), 5);
  const TokenLogprobs* decision = nullptr;
  for (size_t i = 0; i < scan; ++i) {
    std::string s = strip_decoration(response.tokens[i].token);
    if (s == "A" || s == "B") {
      decision = &response.tokens[i];
      break;
    }
  }
  if (!decision) return std::nullopt;

  constexpr double kFloor = 1e-6;
  double mass_a = 0.0, mass_b = 0.0;
  for (const TopLogprob& entry : decision->top_k) {
    std::string s = strip_decoration(entry.token);
    if (s == "A")
      mass_a += std::exp(entry.logprob);
    else if (s == "B")
      mass_b += std::exp(entry.logprob);
  }
  if (mass_a <= 0.0) mass_a = kFloor;
  if (mass_b <= 0.0) mass_b = kFloor;
  double p_a = mass_a / (mass_a + mass_b);
  return target == 'A' ? p_a : 1.0 - p_a;
}

namespace {

constexpr std::string_view kQuestionSlot = "{Question}";

// Every estimation template leads with {Question}; the rendered dialogue
// context stands in for it, so the template's remainder is appended to the
// final user message and earlier messages pass through untouched.
std::vector<ChatMessage> render_over_context(const std::string& tmpl,
                                             const std::vector<ChatMessage>& context,
                                             const std::string& answer) {
  if (tmpl.rfind(kQuestionSlot, 0) != 0)
    throw std::invalid_argument("template must start with {Question}");
  if (context.empty() || context.back().role != Role::USER)
    throw std::invalid_argument("context must end with a user message");
  std::string suffix = tmpl.substr(kQuestionSlot.size());
  suffix = replace_all(suffix, "{Answer}", answer);
  std::vector<ChatMessage> messages = context;
  messages.back().content += suffix;
  return messages;
}

ChatRequest base_request(const std::string& model_id, std::vector<ChatMessage> messages,
                         double temperature, int max_tokens) {
  ChatRequest r;
  r.model_id = model_id;
  r.messages = std::move(messages);
  r.temperature = temperature;
  r.max_tokens = max_tokens;
  return r;
}

ConfidenceOutput verbalized(Gateway& gateway, const std::string& tmpl,
                            const std::vector<ChatMessage>& context, const std::string& answer,
                            const std::string& model_id, const MethodConfig& config,
                            int max_tokens) {
  ChatRequest request = base_request(
      model_id, render_over_context(tmpl, context, answer), config.gen_temperature, max_tokens);
  ChatResponse response = gateway.complete(request);
  VerbalizedParse parsed = parse_verbalized_confidence(response.text);
  ConfidenceOutput out;
  out.confidence = parsed.confidence;
  out.method = config.id();
  out.parse_status = parsed.status;
  out.evidence = json{{"text", response.text}};
  return out;
}

ConfidenceOutput probe(Gateway& gateway, const std::string& tmpl,
                       const std::vector<ChatMessage>& context, const std::string& answer,
                       const std::string& model_id, const MethodConfig& config, int max_tokens) {
  ChatRequest request = base_request(
      model_id, render_over_context(tmpl, context, answer), config.gen_temperature, max_tokens);
  request.top_k_logprobs = config.top_k_logprobs;
  ChatResponse response = gateway.complete(request);
  std::optional<double> p = letter_probability(response, 'A');
  ConfidenceOutput out;
  out.method = config.id();
  out.evidence = json{{"text", response.text}};
  if (p) {
    out.confidence = *p;
    out.parse_status = ParseStatus::OK;
    out.evidence["p_a"] = *p;
  } else {
    out.confidence = 0.5;
    out.parse_status = ParseStatus::FAILED;
  }
  return out;
}

}  // namespace

AnswerOutput elicit_answer(Gateway& gateway, const PromptTemplates& templates,
                           const std::vector<ChatMessage>& context, const std::string& model_id,
                           const TokenLimits& limits) {
  ChatRequest request = base_request(
      model_id, render_over_context(templates.generation, context, ""), 0.0, limits.answer);
  ChatResponse response = gateway.complete(request);

  AnswerOutput out;
  out.text = response.text;
  if (auto boxed = extract_boxed(response.text)) {
    out.answer = trim(*boxed);
    out.parse_status = ParseStatus::OK;
    return out;
  }
  // no box anywhere: take the last non-empty line as the answer
  std::string last_line;
  for (const std::string& line : split_lines(response.text)) {
    std::string t = trim(line);
    if (!t.empty()) last_line = t;
  }
  out.answer = last_line;
  out.parse_status = last_line.empty() ? ParseStatus::FAILED : ParseStatus::FALLBACK;
  return out;
}

ConfidenceOutput vanilla_verb(Gateway& gateway, const PromptTemplates& templates,
                              const std::vector<ChatMessage>& context, const std::string& answer,
                              const std::string& model_id, const MethodConfig& config,
                              const TokenLimits& limits) {
  return verbalized(gateway, templates.vanilla_verb, context, answer, model_id, config,
                    limits.verbalized);
}

ConfidenceOutput cot_verb(Gateway& gateway, const PromptTemplates& templates,
                          const std::vector<ChatMessage>& context, const std::string& answer,
                          const std::string& model_id, const MethodConfig& config,
                          const TokenLimits& limits) {
  return verbalized(gateway, templates.cot_verb, context, answer, model_id, config,
                    limits.verbalized);
}

ConfidenceOutput self_consistency(Gateway& gateway, const PromptTemplates& templates,
                                  const std::vector<ChatMessage>& context,
                                  const std::string& answer,
                                  const std::vector<std::string>& aliases,
                                  const std::string& model_id, const MethodConfig& config,
                                  const TokenLimits& limits) {
  if (config.samples_m < 1) throw std::invalid_argument("self_consistency needs samples_m >= 1");
  ChatRequest request =
      base_request(model_id, render_over_context(templates.generation, context, ""),
                   config.sample_temperature, limits.answer);
  std::vector<ChatResponse> samples = gateway.sample_n(request, config.samples_m);

  int matches = 0;
  json extracted = json::array();
  for (const ChatResponse& sample : samples) {
    auto boxed = extract_boxed(sample.text);
    if (boxed && match_answer(*boxed, answer, aliases)) ++matches;
    extracted.push_back(boxed ? json(trim(*boxed)) : json(nullptr));
  }

  ConfidenceOutput out;
  out.confidence = static_cast<double>(matches) / static_cast<double>(config.samples_m);
  out.method = config.id();
  out.parse_status = ParseStatus::OK;
  out.evidence = json{{"m", config.samples_m}, {"matches", matches}, {"answers", extracted}};
  return out;
}

ConfidenceOutput p_true(Gateway& gateway, const PromptTemplates& templates,
                        const std::vector<ChatMessage>& context, const std::string& answer,
                        const std::string& model_id, const MethodConfig& config,
                        const TokenLimits& limits) {
  return probe(gateway, templates.p_true, context, answer, model_id, config, limits.probe);
}

ConfidenceOutput p_sufficient(Gateway& gateway, const PromptTemplates& templates,
                              const std::vector<ChatMessage>& context, const std::string& answer,
                              const std::string& model_id, const MethodConfig& config,
                              const TokenLimits& limits) {
  return probe(gateway, templates.p_sufficient, context, answer, model_id, config, limits.probe);
}

ConfidenceOutput estimate_confidence(Gateway& gateway, const PromptTemplates& templates,
                                     const MethodConfig& config,
                                     const std::vector<ChatMessage>& context,
                                     const std::string& answer,
                                     const std::vector<std::string>& aliases,
                                     const std::string& model_id, const TokenLimits& limits) {
  switch (config.kind) {
    case MethodKind::VANILLA_VERB:
      return vanilla_verb(gateway, templates, context, answer, model_id, config, limits);
    case MethodKind::COT_VERB:
      return cot_verb(gateway, templates, context, answer, model_id, config, limits);
    case MethodKind::SC:
      return self_consistency(gateway, templates, context, answer, aliases, model_id, config,
                              limits);
    case MethodKind::P_TRUE:
      return p_true(gateway, templates, context, answer, model_id, config, limits);
    case MethodKind::P_SUFFICIENT:
      return p_sufficient(gateway, templates, context, answer, model_id, config, limits);
  }
  throw std::logic_error("unmapped method kind");
}

}  // namespace turncal
