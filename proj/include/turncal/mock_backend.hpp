#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "turncal/gateway.hpp"

namespace turncal {

// Unmatched or exhausted scripted request.
class ScriptError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

struct MockRule {
  // all needles must appear as substrings of the concatenated message contents
  std::vector<std::string> needles;
  std::vector<ChatResponse> replies;
  // ordinal rules consume replies in call order; otherwise the request's
  // sample index picks reply seed_hint % replies.size(), which keeps parallel
  // dispatch deterministic
  bool ordinal = false;
  int fail_times = 0;  // scripted transient failures before the first reply
};

struct MockScript {
  std::vector<MockRule> rules;
  bool strict = false;
  std::optional<ChatResponse> fallback;
};

class MockBackend : public ChatBackend {
 public:
  explicit MockBackend(MockScript script);

  ChatResponse complete(const ChatRequest& request) override;
  std::string name() const override { return "mock"; }

  std::vector<ChatRequest> calls() const;
  size_t call_count() const;
  // peak number of requests inside complete() at once; used to verify the
  // gateway's parallelism bound
  int max_in_flight() const;
  void set_latency(std::chrono::milliseconds latency);

 private:
  MockScript script_;
  std::chrono::milliseconds latency_{0};
  mutable std::mutex mutex_;
  std::vector<ChatRequest> calls_;
  std::vector<int> rule_hits_;
  int in_flight_ = 0;
  int max_in_flight_ = 0;
};

ChatResponse mock_reply_from_json(const nlohmann::ordered_json& j);
MockScript mock_script_from_json(const nlohmann::ordered_json& j);
MockScript load_mock_script(const std::filesystem::path& path);

}  // namespace turncal
