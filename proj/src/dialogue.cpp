#include "turncal/dialogue.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "turncal/util.hpp"

namespace turncal {

namespace {

using json = nlohmann::ordered_json;

template <typename Enum>
struct EnumName {
  Enum value;
  const char* name;
};

constexpr EnumName<TaskKind> kTaskKinds[] = {
    {TaskKind::TWENTYQ, "TWENTYQ"}, {TaskKind::GUESS, "GUESS"},   {TaskKind::GRACE, "GRACE"},
    {TaskKind::TRICKME, "TRICKME"}, {TaskKind::CUSTOM, "CUSTOM"},
};
constexpr EnumName<Source> kSources[] = {
    {Source::GENERATED, "GENERATED"},
    {Source::INGESTED, "INGESTED"},
};
constexpr EnumName<Target> kTargets[] = {
    {Target::MODEL_ANSWER, "MODEL_ANSWER"},
    {Target::GOLD_ANSWER, "GOLD_ANSWER"},
};
constexpr EnumName<Condition> kConditions[] = {
    {Condition::MULTITURN, "MULTITURN"},
    {Condition::SUMMARY, "SUMMARY"},
    {Condition::PLACEBO, "PLACEBO"},
};
constexpr EnumName<ParseStatus> kParseStatuses[] = {
    {ParseStatus::OK, "OK"},
    {ParseStatus::FALLBACK, "FALLBACK"},
    {ParseStatus::FAILED, "FAILED"},
};
constexpr EnumName<MethodKind> kMethodKinds[] = {
    {MethodKind::VANILLA_VERB, "VANILLA_VERB"}, {MethodKind::COT_VERB, "COT_VERB"},
    {MethodKind::SC, "SC"},                     {MethodKind::P_TRUE, "P_TRUE"},
    {MethodKind::P_SUFFICIENT, "P_SUFFICIENT"},
};

template <typename Enum, size_t N>
std::string enum_to_string(const EnumName<Enum> (&table)[N], Enum v) {
  for (const auto& e : table)
    if (e.value == v) return e.name;
  throw std::logic_error("unmapped enum value");
}

template <typename Enum, size_t N>
Enum enum_from_string(const EnumName<Enum> (&table)[N], const std::string& s,
                      const char* what) {
  std::string upper;
  upper.reserve(s.size());
  for (char c : s) upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  for (const auto& e : table)
    if (upper == e.name) return e.value;
  std::string allowed;
  for (const auto& e : table) {
    if (!allowed.empty()) allowed += ", ";
    allowed += e.name;
  }
  throw std::invalid_argument(std::string("unknown ") + what + " '" + s + "' (expected one of: " +
                              allowed + ")");
}

struct FieldReader {
  const json& obj;
  std::string base;  // path prefix for violation messages
  std::vector<SchemaViolation>* out;
  std::set<std::string> consumed;

  bool fail(const std::string& field, const std::string& msg) {
    out->push_back({0, base.empty() ? field : base + "." + field, msg});
    return false;
  }

  bool require(const std::string& field, json::value_t type, const char* type_name) {
    consumed.insert(field);
    auto it = obj.find(field);
    if (it == obj.end()) return fail(field, "missing required field");
    if (type == json::value_t::number_integer) {
      if (!it->is_number_integer()) return fail(field, std::string("expected ") + type_name);
    } else if (it->type() != type) {
      return fail(field, std::string("expected ") + type_name);
    }
    return true;
  }

  std::string str(const std::string& field) { return obj.at(field).get<std::string>(); }

  // Everything not consumed by the schema is kept verbatim.
  json leftovers() const {
    json extra = json::object();
    for (auto it = obj.begin(); it != obj.end(); ++it)
      if (!consumed.count(it.key())) extra[it.key()] = it.value();
    return extra;
  }
};

std::optional<HintTurn> turn_from_json(const json& j, const std::string& base,
                                       std::vector<SchemaViolation>* out) {
  if (!j.is_object()) {
    out->push_back({0, base, "expected object"});
    return std::nullopt;
  }
  FieldReader r{j, base, out, {}};
  bool ok = true;
  ok &= r.require("index", json::value_t::number_integer, "integer");
  ok &= r.require("reveal", json::value_t::string, "string");
  r.consumed.insert("question");
  if (auto it = j.find("question"); it != j.end() && !it->is_string()) {
    ok = r.fail("question", "expected string");
  }
  if (!ok) return std::nullopt;
  HintTurn t;
  t.index = j.at("index").get<int>();
  t.reveal = r.str("reveal");
  if (auto it = j.find("question"); it != j.end()) t.question = it->get<std::string>();
  t.extra = r.leftovers();
  return t;
}

}  // namespace

std::string to_string(TaskKind k) { return enum_to_string(kTaskKinds, k); }
std::string to_string(Source s) { return enum_to_string(kSources, s); }
std::string to_string(Target t) { return enum_to_string(kTargets, t); }
std::string to_string(Condition c) { return enum_to_string(kConditions, c); }
std::string to_string(ParseStatus p) { return enum_to_string(kParseStatuses, p); }
std::string to_string(MethodKind m) { return enum_to_string(kMethodKinds, m); }

TaskKind task_kind_from_string(const std::string& s) {
  return enum_from_string(kTaskKinds, s, "task_kind");
}
Source source_from_string(const std::string& s) { return enum_from_string(kSources, s, "source"); }
Target target_from_string(const std::string& s) { return enum_from_string(kTargets, s, "target"); }
Condition condition_from_string(const std::string& s) {
  return enum_from_string(kConditions, s, "condition");
}
ParseStatus parse_status_from_string(const std::string& s) {
  return enum_from_string(kParseStatuses, s, "parse_status");
}
MethodKind method_kind_from_string(const std::string& s) {
  return enum_from_string(kMethodKinds, s, "method");
}

std::string MethodConfig::id() const {
  switch (kind) {
    case MethodKind::VANILLA_VERB: return "vanilla_verb";
    case MethodKind::COT_VERB: return "cot_verb";
    case MethodKind::SC: return "sc_m" + std::to_string(samples_m);
    case MethodKind::P_TRUE: return "p_true";
    case MethodKind::P_SUFFICIENT: return "p_sufficient";
  }
  throw std::logic_error("unmapped method kind");
}

std::vector<std::string> validate_dialogue(const Dialogue& d) {
  std::vector<std::string> problems;
  if (d.id.empty()) problems.push_back("id is empty");
  if (d.gold_answer.empty()) problems.push_back("gold_answer is empty");
  if (d.turns.empty()) problems.push_back("turns empty");
  for (size_t i = 0; i < d.turns.size(); ++i) {
    const HintTurn& t = d.turns[i];
    int expected = static_cast<int>(i) + 1;
    std::string where = "turn " + std::to_string(expected);
    if (t.index != expected)
      problems.push_back(where + ": index is " + std::to_string(t.index) + ", expected " +
                         std::to_string(expected));
    if (t.reveal.empty()) problems.push_back(where + ": reveal is empty");
    if (d.task_kind == TaskKind::TWENTYQ && !t.reveal.empty()) {
      std::string reveal = trim(t.reveal);
      if (reveal != "Yes" && reveal != "No") problems.push_back(where + ": reveal not Yes/No");
    }
    if (t.question && t.question->empty())
      problems.push_back(where + ": question is present but empty");
  }
  for (size_t i = 0; i < d.aliases.size(); ++i)
    if (d.aliases[i].empty()) problems.push_back("aliases[" + std::to_string(i) + "] is empty");
  return problems;
}

nlohmann::ordered_json dialogue_to_json(const Dialogue& d) {
  json j = json::object();
  j["id"] = d.id;
  j["task_kind"] = to_string(d.task_kind);
  j["preamble"] = d.preamble;
  j["gold_answer"] = d.gold_answer;
  j["aliases"] = d.aliases;
  json turns = json::array();
  for (const HintTurn& t : d.turns) {
    json tj = json::object();
    tj["index"] = t.index;
    if (t.question) tj["question"] = *t.question;
    tj["reveal"] = t.reveal;
    for (auto it = t.extra.begin(); it != t.extra.end(); ++it) tj[it.key()] = it.value();
    turns.push_back(std::move(tj));
  }
  j["turns"] = std::move(turns);
  j["source"] = to_string(d.source);
  for (auto it = d.extra.begin(); it != d.extra.end(); ++it) j[it.key()] = it.value();
  return j;
}

Dialogue dialogue_from_json(const nlohmann::ordered_json& j) {
  std::vector<SchemaViolation> violations;
  if (!j.is_object()) {
    violations.push_back({0, "", "expected JSON object"});
    throw DatasetError("malformed dialogue", std::move(violations));
  }
  FieldReader r{j, "", &violations, {}};
  r.require("id", json::value_t::string, "string");
  r.require("task_kind", json::value_t::string, "string");
  r.require("preamble", json::value_t::string, "string");
  r.require("gold_answer", json::value_t::string, "string");
  bool aliases_ok = r.require("aliases", json::value_t::array, "array");
  bool turns_ok = r.require("turns", json::value_t::array, "array");
  r.require("source", json::value_t::string, "string");

  Dialogue d;
  if (aliases_ok) {
    const json& arr = j.at("aliases");
    for (size_t i = 0; i < arr.size(); ++i) {
      if (!arr[i].is_string())
        violations.push_back({0, "aliases[" + std::to_string(i) + "]", "expected string"});
      else
        d.aliases.push_back(arr[i].get<std::string>());
    }
  }
  if (turns_ok) {
    const json& arr = j.at("turns");
    for (size_t i = 0; i < arr.size(); ++i) {
      auto t = turn_from_json(arr[i], "turns[" + std::to_string(i) + "]", &violations);
      if (t) d.turns.push_back(std::move(*t));
    }
  }
  auto parse_enum = [&](const char* field, auto parser, auto& dest) {
    if (auto it = j.find(field); it != j.end() && it->is_string()) {
      try {
        dest = parser(it->get<std::string>());
      } catch (const std::invalid_argument& e) {
        violations.push_back({0, field, e.what()});
      }
    }
  };
  parse_enum("task_kind", task_kind_from_string, d.task_kind);
  parse_enum("source", source_from_string, d.source);
  if (!violations.empty()) throw DatasetError("malformed dialogue", std::move(violations));

  d.id = r.str("id");
  d.preamble = r.str("preamble");
  d.gold_answer = r.str("gold_answer");
  d.extra = r.leftovers();
  return d;
}

nlohmann::ordered_json record_to_json(const EvalRecord& r) {
  json j = json::object();
  j["dialogue_id"] = r.dialogue_id;
  j["turn_index"] = r.turn_index;
  j["normalized_level"] = r.normalized_level;
  j["method"] = r.method;
  j["target"] = to_string(r.target);
  j["condition"] = to_string(r.condition);
  j["answer"] = r.answer;
  j["confidence"] = r.confidence;
  j["correct"] = r.correct;
  j["parse_status"] = to_string(r.parse_status);
  if (!r.raw.empty()) j["raw"] = r.raw;
  return j;
}

EvalRecord record_from_json(const nlohmann::ordered_json& j) {
  std::vector<SchemaViolation> violations;
  if (!j.is_object()) {
    violations.push_back({0, "", "expected JSON object"});
    throw DatasetError("malformed record", std::move(violations));
  }
  FieldReader r{j, "", &violations, {}};
  r.require("dialogue_id", json::value_t::string, "string");
  r.require("turn_index", json::value_t::number_integer, "integer");
  r.consumed.insert("normalized_level");
  if (auto it = j.find("normalized_level"); it == j.end() || !it->is_number())
    violations.push_back({0, "normalized_level", "expected number"});
  r.require("method", json::value_t::string, "string");
  r.require("target", json::value_t::string, "string");
  r.require("condition", json::value_t::string, "string");
  r.require("answer", json::value_t::string, "string");
  r.consumed.insert("confidence");
  if (auto it = j.find("confidence"); it == j.end() || !it->is_number())
    violations.push_back({0, "confidence", "expected number"});
  r.require("correct", json::value_t::boolean, "boolean");
  r.require("parse_status", json::value_t::string, "string");
  r.consumed.insert("raw");
  if (!violations.empty()) throw DatasetError("malformed record", std::move(violations));

  EvalRecord rec;
  rec.dialogue_id = r.str("dialogue_id");
  rec.turn_index = j.at("turn_index").get<int>();
  rec.normalized_level = j.at("normalized_level").get<double>();
  rec.method = r.str("method");
  try {
    rec.target = target_from_string(r.str("target"));
    rec.condition = condition_from_string(r.str("condition"));
    rec.parse_status = parse_status_from_string(r.str("parse_status"));
  } catch (const std::invalid_argument& e) {
    throw DatasetError("malformed record", {{0, "", e.what()}});
  }
  rec.answer = r.str("answer");
  rec.confidence = j.at("confidence").get<double>();
  rec.correct = j.at("correct").get<bool>();
  if (auto it = j.find("raw"); it != j.end() && it->is_object()) rec.raw = *it;
  return rec;
}

namespace {

template <typename T, typename ParseFn>
std::vector<T> read_jsonl(const std::filesystem::path& path, ParseFn parse, const char* what) {
  std::string content = read_text_file(path);
  std::vector<T> out;
  std::vector<SchemaViolation> violations;
  int line_no = 0;
  for (const std::string& line : split_lines(content)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      violations.push_back({line_no, "", std::string("invalid JSON: ") + e.what()});
      continue;
    }
    try {
      out.push_back(parse(j));
    } catch (const DatasetError& e) {
      for (SchemaViolation v : e.violations()) {
        v.line = line_no;
        violations.push_back(std::move(v));
      }
    }
  }
  if (!violations.empty()) {
    std::ostringstream msg;
    msg << path.string() << ": " << violations.size() << " schema violation"
        << (violations.size() == 1 ? "" : "s") << " in " << what;
    for (const SchemaViolation& v : violations) {
      msg << "\n  line " << v.line;
      if (!v.path.empty()) msg << ", field '" << v.path << "'";
      msg << ": " << v.message;
    }
    throw DatasetError(msg.str(), std::move(violations));
  }
  return out;
}

template <typename T, typename DumpFn>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items, DumpFn dump) {
  std::string out;
  for (const T& item : items) {
    out += dump(item).dump();
    out += '\n';
  }
  write_text_file_atomic(path, out);
}

}  // namespace

std::vector<Dialogue> read_dataset(const std::filesystem::path& path) {
  return read_jsonl<Dialogue>(path, dialogue_from_json, "dataset");
}

void write_dataset(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues) {
  write_jsonl(path, dialogues, dialogue_to_json);
}

std::vector<EvalRecord> read_records(const std::filesystem::path& path) {
  return read_jsonl<EvalRecord>(path, record_from_json, "records");
}

void write_records(const std::filesystem::path& path, const std::vector<EvalRecord>& records) {
  write_jsonl(path, records, record_to_json);
}

}  // namespace turncal
