#include "turncal/config.hpp"

#include <nlohmann/json.hpp>

#include "turncal/http_backend.hpp"
#include "turncal/mock_backend.hpp"
#include "turncal/util.hpp"

namespace turncal {

namespace {

using json = nlohmann::ordered_json;

struct Problems {
  std::vector<std::string> items;
  void add(const std::string& message) { items.push_back(message); }
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& raw) {
  std::filesystem::path p(raw);
  return p.is_absolute() ? p : base / p;
}

MethodConfig method_from_json(const json& j, Problems& problems) {
  MethodConfig method;
  try {
    if (j.is_string()) {
      method.kind = method_kind_from_string(j.get<std::string>());
      return method;
    }
    if (!j.is_object()) {
      problems.add("methods: entry must be a string or an object");
      return method;
    }
    method.kind = method_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("samples_m")) method.samples_m = j["samples_m"].get<int>();
    if (j.contains("gen_temperature")) method.gen_temperature = j["gen_temperature"].get<double>();
    if (j.contains("sample_temperature"))
      method.sample_temperature = j["sample_temperature"].get<double>();
    if (j.contains("top_k_logprobs")) method.top_k_logprobs = j["top_k_logprobs"].get<int>();
    if (method.samples_m < 1) problems.add("methods: samples_m must be at least 1");
    if (method.top_k_logprobs < 1) problems.add("methods: top_k_logprobs must be at least 1");
  } catch (const std::exception& e) {
    problems.add(std::string("methods: ") + e.what());
  }
  return method;
}

}  // namespace

RunConfig load_config(const std::filesystem::path& path) {
  Problems problems;
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what(), {e.what()});
  }

  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what(), {e.what()});
  }

  std::filesystem::path base = path.has_parent_path() ? path.parent_path() : ".";
  RunConfig config;

  try {
    if (j.contains("backend")) {
      const json& b = j["backend"];
      if (b.contains("kind")) config.backend.kind = b["kind"].get<std::string>();
      if (b.contains("mock_script"))
        config.backend.mock_script = resolve(base, b["mock_script"].get<std::string>());
      if (b.contains("base_url")) config.backend.base_url = b["base_url"].get<std::string>();
      if (b.contains("model_id")) config.backend.model_id = b["model_id"].get<std::string>();
      if (b.contains("credential_env"))
        config.backend.credential_env = b["credential_env"].get<std::string>();
      if (b.contains("parallelism")) config.backend.parallelism = b["parallelism"].get<int>();
      if (b.contains("requests_per_second"))
        config.backend.requests_per_second = b["requests_per_second"].get<double>();
      if (b.contains("max_attempts")) config.backend.max_attempts = b["max_attempts"].get<int>();
      for (const char* banned : {"api_key", "token", "credential", "secret"}) {
        if (b.contains(banned))
          problems.add(std::string("backend: '") + banned +
                       "' does not belong in the config; set the environment variable named by "
                       "credential_env instead");
      }
    }

    if (j.contains("datasets")) {
      for (const json& d : j["datasets"]) {
        DatasetRef ref;
        ref.name = d.at("name").get<std::string>();
        ref.path = resolve(base, d.at("path").get<std::string>());
        config.datasets.push_back(std::move(ref));
      }
    }

    if (j.contains("methods")) {
      config.methods.clear();
      for (const json& m : j["methods"]) config.methods.push_back(method_from_json(m, problems));
    }

    if (j.contains("targets")) {
      config.targets.clear();
      for (const json& t : j["targets"])
        config.targets.push_back(target_from_string(t.get<std::string>()));
    }
    if (j.contains("conditions")) {
      config.conditions.clear();
      for (const json& c : j["conditions"])
        config.conditions.push_back(condition_from_string(c.get<std::string>()));
    }

    if (j.contains("bins")) {
      const json& b = j["bins"];
      if (b.contains("count")) config.bins = b["count"].get<int>();
      if (b.contains("scheme"))
        config.scheme = bin_scheme_from_string(b["scheme"].get<std::string>());
    }

    if (j.contains("seed")) config.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("workers")) config.workers = j["workers"].get<int>();
    if (j.contains("summarizer_model_id"))
      config.summarizer_model_id = j["summarizer_model_id"].get<std::string>();
    if (j.contains("significance")) {
      std::string name = to_lower(j["significance"].get<std::string>());
      if (name == "paired_t")
        config.significance = SignificanceTest::PAIRED_T;
      else if (name == "wilcoxon")
        config.significance = SignificanceTest::WILCOXON;
      else
        problems.add("significance: expected 'paired_t' or 'wilcoxon', got '" + name + "'");
    }
    if (j.contains("assets_dir"))
      config.assets_dir = resolve(base, j["assets_dir"].get<std::string>());
    if (j.contains("output_dir"))
      config.output_dir = resolve(base, j["output_dir"].get<std::string>());
    if (j.contains("cache_dir")) config.cache_dir = resolve(base, j["cache_dir"].get<std::string>());

    if (j.contains("generation")) {
      const json& g = j["generation"];
      GenerationConfig gen;
      gen.entity_file = resolve(base, g.at("entity_file").get<std::string>());
      if (g.contains("task_kind"))
        gen.task_kind = task_kind_from_string(g["task_kind"].get<std::string>());
      if (g.contains("max_turns")) gen.max_turns = g["max_turns"].get<int>();
      gen.hinter_model = g.contains("hinter_model") ? g["hinter_model"].get<std::string>()
                                                    : config.backend.model_id;
      gen.guesser_model = g.contains("guesser_model") ? g["guesser_model"].get<std::string>()
                                                      : config.backend.model_id;
      if (g.contains("seed")) gen.seed = g["seed"].get<std::uint64_t>();
      if (g.contains("output_name")) gen.output_name = g["output_name"].get<std::string>();
      config.generation = std::move(gen);
    }
  } catch (const json::exception& e) {
    problems.add(e.what());
  }

  if (config.backend.kind != "mock" && config.backend.kind != "http")
    problems.add("backend.kind: expected 'mock' or 'http', got '" + config.backend.kind + "'");
  if (config.backend.kind == "mock" && config.backend.mock_script.empty())
    problems.add("backend: mock backend needs mock_script");
  if (config.backend.kind == "http" && config.backend.base_url.empty())
    problems.add("backend: http backend needs base_url");
  if (config.backend.model_id.empty()) problems.add("backend: model_id is required");
  if (config.backend.parallelism < 1) problems.add("backend: parallelism must be at least 1");
  if (config.backend.max_attempts < 1) problems.add("backend: max_attempts must be at least 1");
  if (config.bins < 1) problems.add("bins.count must be at least 1");
  if (config.workers < 1) problems.add("workers must be at least 1");
  if (config.targets.empty()) problems.add("targets must not be empty");
  if (config.conditions.empty()) problems.add("conditions must not be empty");

  if (config.backend.kind == "mock" && !config.backend.mock_script.empty() &&
      !std::filesystem::exists(config.backend.mock_script))
    problems.add("backend.mock_script: no such file: " + config.backend.mock_script.string());
  for (const DatasetRef& d : config.datasets) {
    if (!std::filesystem::exists(d.path))
      problems.add("datasets['" + d.name + "']: no such file: " + d.path.string());
  }
  if (!std::filesystem::exists(config.assets_dir))
    problems.add("assets_dir: no such directory: " + config.assets_dir.string());
  if (config.generation && !std::filesystem::exists(config.generation->entity_file))
    problems.add("generation.entity_file: no such file: " +
                 config.generation->entity_file.string());

  if (!problems.items.empty()) {
    std::string what = "config has " + std::to_string(problems.items.size()) + " problem(s):";
    for (const std::string& p : problems.items) what += "\n  - " + p;
    throw ConfigError(what, problems.items);
  }
  return config;
}

std::unique_ptr<ChatBackend> make_backend(const RunConfig& config) {
  if (config.backend.kind == "mock") {
    return std::make_unique<MockBackend>(load_mock_script(config.backend.mock_script));
  }
  HttpBackend::Options options;
  options.base_url = config.backend.base_url;
  options.credential_env = config.backend.credential_env;
  return std::make_unique<HttpBackend>(options);
}

std::unique_ptr<Gateway> make_gateway(const RunConfig& config,
                                      std::shared_ptr<ChatBackend> backend) {
  GatewayOptions options;
  options.cache_dir = config.cache_dir;
  options.parallelism = config.backend.parallelism;
  options.requests_per_second = config.backend.requests_per_second;
  options.max_attempts = config.backend.max_attempts;
  return std::make_unique<Gateway>(std::move(backend), options);
}

}  // namespace turncal
