#pragma once

#include <string>

#include "turncal/gateway.hpp"

namespace turncal {

// Chat-completions endpoint speaking the OpenAI-compatible JSON shape, as
// served by hosted APIs and local inference servers alike. The request body
// carries model/messages/temperature/max_tokens plus logprobs+top_logprobs
// when token probabilities are needed; the response is read from
// choices[0].message.content and choices[0].logprobs.content[*].top_logprobs.
class HttpBackend : public ChatBackend {
 public:
  struct Options {
    std::string base_url;                         // e.g. http://localhost:8000/v1
    std::string credential_env = "OPENAI_API_KEY";  // env var holding the key
    int timeout_seconds = 120;
  };

  explicit HttpBackend(Options options);

  ChatResponse complete(const ChatRequest& request) override;
  std::string name() const override;

  // Cheap connectivity probe so runs can fail before spending any budget.
  bool reachable(std::string* why) const;

 private:
  Options options_;
  std::string api_key_;
  std::string origin_;       // scheme://host[:port]
  std::string path_prefix_;  // anything after the origin, no trailing slash
};

}  // namespace turncal
