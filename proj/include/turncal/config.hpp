#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "turncal/dialogue.hpp"
#include "turncal/gateway.hpp"
#include "turncal/metrics.hpp"

namespace turncal {

struct BackendConfig {
  std::string kind = "mock";  // "mock" or "http"
  std::filesystem::path mock_script;
  std::string base_url;
  std::string model_id;
  std::string credential_env = "OPENAI_API_KEY";
  int parallelism = 4;
  double requests_per_second = 0.0;
  int max_attempts = 5;
};

struct DatasetRef {
  std::string name;
  std::filesystem::path path;
};

struct GenerationConfig {
  std::filesystem::path entity_file;
  TaskKind task_kind = TaskKind::TWENTYQ;
  int max_turns = 20;
  std::string hinter_model;
  std::string guesser_model;
  std::uint64_t seed = 0;
  std::string output_name = "generated";
};

struct RunConfig {
  BackendConfig backend;
  std::vector<DatasetRef> datasets;
  std::vector<MethodConfig> methods;
  std::vector<Target> targets{Target::MODEL_ANSWER};
  std::vector<Condition> conditions{Condition::MULTITURN};
  int bins = 10;
  BinScheme scheme = BinScheme::EQUAL_WIDTH;
  std::uint64_t seed = 0;
  int workers = 8;
  std::string summarizer_model_id;
  SignificanceTest significance = SignificanceTest::PAIRED_T;
  std::filesystem::path assets_dir = "assets";
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> cache_dir;
  std::optional<GenerationConfig> generation;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::vector<std::string> problems)
      : std::runtime_error(what), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

// Parses the JSON config file; relative paths resolve against the file's
// directory. Collects every problem before throwing ConfigError.
RunConfig load_config(const std::filesystem::path& path);

std::unique_ptr<ChatBackend> make_backend(const RunConfig& config);
std::unique_ptr<Gateway> make_gateway(const RunConfig& config,
                                      std::shared_ptr<ChatBackend> backend);

}  // namespace turncal
