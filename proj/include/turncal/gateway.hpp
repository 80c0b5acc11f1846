#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace turncal {

enum class Role { SYSTEM, USER, ASSISTANT };

std::string to_string(Role r);
Role role_from_string(const std::string& s);

struct ChatMessage {
  Role role = Role::USER;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::string model_id;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 256;
  int top_k_logprobs = 0;  // 0 disables logprob capture
  std::optional<int> seed_hint;
};

struct TopLogprob {
  std::string token;
  double logprob = 0.0;
};

struct TokenLogprobs {
  std::string token;
  std::vector<TopLogprob> top_k;  // sorted by descending logprob
};

struct ChatResponse {
  std::string text;
  std::vector<TokenLogprobs> tokens;
  std::string finish_reason;
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

nlohmann::ordered_json response_to_json(const ChatResponse& r);
ChatResponse response_from_json(const nlohmann::ordered_json& j);

class GatewayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Connection-level failure: DNS, refused, timeout. Always retryable.
class TransportError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

// Backend answered with a non-2xx status.
class ApiError : public GatewayError {
 public:
  ApiError(int status, const std::string& what) : GatewayError(what), status_(status) {}
  int status() const { return status_; }
  bool retryable() const { return status_ == 429 || (status_ >= 500 && status_ < 600); }

 private:
  int status_ = 0;
};

// The request needs a feature the backend did not provide (e.g. logprobs).
class CapabilityError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
  virtual std::string name() const = 0;
};

struct GatewayOptions {
  std::optional<std::filesystem::path> cache_dir;  // unset: in-memory cache only
  int parallelism = 4;
  double requests_per_second = 0.0;  // 0 disables rate limiting
  int max_attempts = 5;
  int backoff_base_ms = 100;
  std::uint64_t jitter_seed = 0;
};

struct GatewayStats {
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t backend_calls = 0;
  std::uint64_t retries = 0;
};

// Canonical digest of everything that determines a completion. complete()
// uses sample_index = seed_hint (0 when unset); sample_n stamps 0..n-1.
std::string cache_key(const ChatRequest& request);

// Caching, retrying, rate-limited front of a ChatBackend. Shareable across
// threads; bounded parallelism is enforced here, so callers may oversubscribe.
class Gateway {
 public:
  Gateway(std::shared_ptr<ChatBackend> backend, GatewayOptions options = {});
  ~Gateway();

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  ChatResponse complete(const ChatRequest& request);

  // n temperature-sampled completions, distinct cache keys per sample index,
  // dispatched concurrently. Result order follows sample_index.
  std::vector<ChatResponse> sample_n(const ChatRequest& request, int n);

  GatewayStats stats() const;
  const GatewayOptions& options() const { return options_; }
  std::string backend_name() const { return backend_->name(); }

 private:
  ChatResponse complete_uncached(const ChatRequest& request);
  ChatResponse call_with_retries(const ChatRequest& request);
  void rate_limit_wait();

  std::shared_ptr<ChatBackend> backend_;
  GatewayOptions options_;

  std::mutex cache_mutex_;
  std::map<std::string, ChatResponse> memory_cache_;
  std::map<std::string, std::shared_future<ChatResponse>> in_flight_;

  // counting semaphore with a runtime bound
  std::mutex slot_mutex_;
  std::condition_variable slot_cv_;
  int slots_in_use_ = 0;

  std::mutex rate_mutex_;
  std::chrono::steady_clock::time_point next_dispatch_{};

  std::mutex jitter_mutex_;
  std::uint64_t jitter_state_ = 0;

  mutable std::mutex stats_mutex_;
  GatewayStats stats_;
};

}  // namespace turncal
