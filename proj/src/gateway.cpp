#include "turncal/gateway.hpp"

#include <algorithm>
#include <thread>

#include "turncal/util.hpp"

namespace turncal {

namespace {
using json = nlohmann::ordered_json;
}

std::string to_string(Role r) {
  switch (r) {
    case Role::SYSTEM: return "system";
    case Role::USER: return "user";
    case Role::ASSISTANT: return "assistant";
  }
  throw std::logic_error("unmapped role");
}

Role role_from_string(const std::string& s) {
  std::string lower = to_lower(s);
  if (lower == "system") return Role::SYSTEM;
  if (lower == "user") return Role::USER;
  if (lower == "assistant") return Role::ASSISTANT;
  throw std::invalid_argument("unknown role '" + s + "'");
}

nlohmann::ordered_json response_to_json(const ChatResponse& r) {
  json j = json::object();
  j["text"] = r.text;
  json tokens = json::array();
  for (const TokenLogprobs& t : r.tokens) {
    json tj = json::object();
    tj["token"] = t.token;
    json top = json::array();
    for (const TopLogprob& e : t.top_k) top.push_back({{"token", e.token}, {"logprob", e.logprob}});
    tj["top_k"] = std::move(top);
    tokens.push_back(std::move(tj));
  }
  j["tokens"] = std::move(tokens);
  j["finish_reason"] = r.finish_reason;
  j["prompt_tokens"] = r.prompt_tokens;
  j["completion_tokens"] = r.completion_tokens;
  return j;
}

ChatResponse response_from_json(const nlohmann::ordered_json& j) {
  ChatResponse r;
  r.text = j.at("text").get<std::string>();
  if (auto it = j.find("tokens"); it != j.end()) {
    for (const json& tj : *it) {
      TokenLogprobs t;
      t.token = tj.at("token").get<std::string>();
      if (auto top = tj.find("top_k"); top != tj.end()) {
        for (const json& e : *top)
          t.top_k.push_back({e.at("token").get<std::string>(), e.at("logprob").get<double>()});
      }
      r.tokens.push_back(std::move(t));
    }
  }
  if (auto it = j.find("finish_reason"); it != j.end()) r.finish_reason = it->get<std::string>();
  if (auto it = j.find("prompt_tokens"); it != j.end()) r.prompt_tokens = it->get<int>();
  if (auto it = j.find("completion_tokens"); it != j.end())
    r.completion_tokens = it->get<int>();
  return r;
}

namespace {

json canonical_request(const ChatRequest& request) {
  json j = json::object();
  j["model_id"] = request.model_id;
  json messages = json::array();
  for (const ChatMessage& m : request.messages)
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  j["messages"] = std::move(messages);
  j["temperature"] = request.temperature;
  j["max_tokens"] = request.max_tokens;
  j["top_k_logprobs"] = request.top_k_logprobs;
  j["sample_index"] = request.seed_hint.value_or(0);
  return j;
}

}  // namespace

std::string cache_key(const ChatRequest& request) {
  return sha256_hex(canonical_request(request).dump());
}

Gateway::Gateway(std::shared_ptr<ChatBackend> backend, GatewayOptions options)
    : backend_(std::move(backend)), options_(std::move(options)) {
  if (!backend_) throw std::invalid_argument("gateway needs a backend");
  if (options_.parallelism < 1) throw std::invalid_argument("parallelism must be >= 1");
  if (options_.max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
  jitter_state_ = options_.jitter_seed ? options_.jitter_seed : 0x9E3779B97F4A7C15ull;
  if (options_.cache_dir) std::filesystem::create_directories(*options_.cache_dir);
}

Gateway::~Gateway() = default;

GatewayStats Gateway::stats() const {
  std::lock_guard lock(stats_mutex_);
  return stats_;
}

ChatResponse Gateway::complete(const ChatRequest& request) {
  if (request.messages.empty()) throw std::invalid_argument("request has no messages");
  const std::string key = cache_key(request);

  std::shared_future<ChatResponse> pending;
  std::promise<ChatResponse> promise;
  {
    std::unique_lock lock(cache_mutex_);
    if (auto it = memory_cache_.find(key); it != memory_cache_.end()) {
      std::lock_guard slock(stats_mutex_);
      stats_.cache_hits++;
      return it->second;
    }
    if (auto it = in_flight_.find(key); it != in_flight_.end()) {
      pending = it->second;
    } else {
      in_flight_.emplace(key, promise.get_future().share());
    }
  }
  if (pending.valid()) {
    ChatResponse r = pending.get();  // rethrows the originator's failure
    std::lock_guard slock(stats_mutex_);
    stats_.cache_hits++;
    return r;
  }

  try {
    ChatResponse response = complete_uncached(request);
    {
      std::unique_lock lock(cache_mutex_);
      memory_cache_[key] = response;
      in_flight_.erase(key);
    }
    promise.set_value(response);
    return response;
  } catch (...) {
    {
      std::unique_lock lock(cache_mutex_);
      in_flight_.erase(key);
    }
    promise.set_exception(std::current_exception());
    throw;
  }
}

ChatResponse Gateway::complete_uncached(const ChatRequest& request) {
  const std::string key = cache_key(request);
  if (options_.cache_dir) {
    std::filesystem::path file = *options_.cache_dir / (key + ".json");
    if (std::filesystem::exists(file)) {
      json j = json::parse(read_text_file(file));
      std::lock_guard slock(stats_mutex_);
      stats_.cache_hits++;
      return response_from_json(j.at("response"));
    }
  }
  {
    std::lock_guard slock(stats_mutex_);
    stats_.cache_misses++;
  }
  ChatResponse response = call_with_retries(request);
  if (options_.cache_dir) {
    std::filesystem::path file = *options_.cache_dir / (key + ".json");
    if (!std::filesystem::exists(file)) {
      json j = json::object();
      j["request"] = canonical_request(request);
      j["response"] = response_to_json(response);
      write_text_file_atomic(file, j.dump(2) + "\n");
    }
  }
  return response;
}

namespace {

class SlotGuard {
 public:
  SlotGuard(std::mutex& m, std::condition_variable& cv, int& in_use, int limit)
      : mutex_(m), cv_(cv), in_use_(in_use) {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return in_use_ < limit; });
    ++in_use_;
  }
  ~SlotGuard() {
    {
      std::lock_guard lock(mutex_);
      --in_use_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex& mutex_;
  std::condition_variable& cv_;
  int& in_use_;
};

bool is_retryable(const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const TransportError&) {
    return true;
  } catch (const ApiError& e) {
    return e.retryable();
  } catch (...) {
    return false;
  }
}

}  // namespace

void Gateway::rate_limit_wait() {
  if (options_.requests_per_second <= 0.0) return;
  auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(1.0 / options_.requests_per_second));
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(rate_mutex_);
    auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_dispatch_);
    next_dispatch_ = slot + interval;
  }
  std::this_thread::sleep_until(slot);
}

ChatResponse Gateway::call_with_retries(const ChatRequest& request) {
  std::exception_ptr last_error;
  for (int attempt = 0; attempt < options_.max_attempts; ++attempt) {
    if (attempt > 0) {
      long long delay_ms =
          static_cast<long long>(options_.backoff_base_ms) * (1LL << (attempt - 1));
      delay_ms = std::min(delay_ms, 10'000LL);
      {
        std::lock_guard lock(jitter_mutex_);
        // xorshift: deterministic jitter stream given jitter_seed
        jitter_state_ ^= jitter_state_ << 13;
        jitter_state_ ^= jitter_state_ >> 7;
        jitter_state_ ^= jitter_state_ << 17;
        delay_ms += static_cast<long long>(jitter_state_ % (delay_ms / 2 + 1));
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      std::lock_guard slock(stats_mutex_);
      stats_.retries++;
    }
    try {
      SlotGuard slot(slot_mutex_, slot_cv_, slots_in_use_, options_.parallelism);
      rate_limit_wait();
      {
        std::lock_guard slock(stats_mutex_);
        stats_.backend_calls++;
      }
      ChatResponse response = backend_->complete(request);
      if (request.top_k_logprobs > 0 && response.tokens.empty())
        throw CapabilityError("backend '" + backend_->name() +
                              "' returned no token logprobs but top_k_logprobs=" +
                              std::to_string(request.top_k_logprobs) + " was requested");
      return response;
    } catch (...) {
      last_error = std::current_exception();
      if (!is_retryable(last_error)) std::rethrow_exception(last_error);
    }
  }
  try {
    std::rethrow_exception(last_error);
  } catch (const GatewayError& e) {
    throw TransportError("exhausted " + std::to_string(options_.max_attempts) +
                         " attempts; last error: " + e.what());
  }
}

std::vector<ChatResponse> Gateway::sample_n(const ChatRequest& request, int n) {
  if (n < 1) throw std::invalid_argument("sample_n needs n >= 1");
  if (request.temperature <= 0.0)
    throw std::invalid_argument("sample_n needs a positive sampling temperature");
  std::vector<std::future<ChatResponse>> futures;
  futures.reserve(n);
  for (int i = 0; i < n; ++i) {
    ChatRequest sample = request;
    sample.seed_hint = i;
    futures.push_back(
        std::async(std::launch::async, [this, sample] { return complete(sample); }));
  }
  std::vector<ChatResponse> responses;
  responses.reserve(n);
  for (auto& f : futures) responses.push_back(f.get());
  return responses;
}

}  // namespace turncal
