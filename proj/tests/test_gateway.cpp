#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "turncal/gateway.hpp"
#include "turncal/http_backend.hpp"
#include "turncal/mock_backend.hpp"
#include "turncal/util.hpp"

using namespace turncal;
namespace fs = std::filesystem;

namespace {

ChatResponse reply(const std::string& text) {
  ChatResponse r;
  r.text = text;
  r.finish_reason = "stop";
  return r;
}

ChatRequest ask(const std::string& content) {
  ChatRequest r;
  r.model_id = "test-model";
  r.messages = {{Role::USER, content}};
  return r;
}

MockRule rule(std::vector<std::string> needles, std::vector<std::string> texts) {
  MockRule r;
  r.needles = std::move(needles);
  for (const auto& t : texts) r.replies.push_back(reply(t));
  return r;
}

std::shared_ptr<MockBackend> backend(std::vector<MockRule> rules, bool strict = false) {
  MockScript script;
  script.rules = std::move(rules);
  script.strict = strict;
  return std::make_shared<MockBackend>(std::move(script));
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("turncal_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// a backend whose only job is to throw; exercises retry classification
class ThrowingBackend : public ChatBackend {
 public:
  explicit ThrowingBackend(int status) : status_(status) {}
  ChatResponse complete(const ChatRequest&) override {
    ++calls_;
    throw ApiError(status_, "scripted status " + std::to_string(status_));
  }
  std::string name() const override { return "throwing"; }
  int calls() const { return calls_.load(); }

 private:
  int status_;
  std::atomic<int> calls_{0};
};

}  // namespace

TEST_CASE("cache_key distinguishes every request ingredient") {
  ChatRequest a = ask("hello");
  ChatRequest b = ask("hello");
  CHECK(cache_key(a) == cache_key(b));

  b.temperature = 1.0;
  CHECK(cache_key(a) != cache_key(b));

  b = ask("hello");
  b.seed_hint = 1;
  CHECK(cache_key(a) != cache_key(b));

  // unset seed hint and explicit sample 0 are the same completion
  b = ask("hello");
  b.seed_hint = 0;
  CHECK(cache_key(a) == cache_key(b));

  b = ask("goodbye");
  CHECK(cache_key(a) != cache_key(b));
  b = ask("hello");
  b.model_id = "other-model";
  CHECK(cache_key(a) != cache_key(b));
}

TEST_CASE("repeated requests are served from memory") {
  auto mock = backend({rule({"ping"}, {"pong"})});
  Gateway gateway(mock);
  CHECK(gateway.complete(ask("ping")).text == "pong");
  CHECK(gateway.complete(ask("ping")).text == "pong");
  CHECK(gateway.complete(ask("ping")).text == "pong");
  CHECK(mock->call_count() == 1);
  auto stats = gateway.stats();
  CHECK(stats.backend_calls == 1);
  CHECK(stats.cache_hits == 2);
  CHECK(stats.cache_misses == 1);
}

TEST_CASE("disk cache outlives the gateway and is written once") {
  fs::path dir = fresh_dir("disk_cache");
  ChatRequest req = ask("ping");
  fs::path entry = dir / (cache_key(req) + ".json");

  {
    auto mock = backend({rule({"ping"}, {"pong"})});
    Gateway gateway(mock, {.cache_dir = dir});
    CHECK(gateway.complete(req).text == "pong");
    REQUIRE(fs::exists(entry));
  }
  auto written = fs::last_write_time(entry);

  auto mock = backend({rule({"ping"}, {"from backend, should not be hit"})});
  Gateway gateway(mock, {.cache_dir = dir});
  CHECK(gateway.complete(req).text == "pong");
  CHECK(mock->call_count() == 0);
  CHECK(gateway.stats().cache_hits == 1);
  CHECK(fs::last_write_time(entry) == written);

  // the entry keeps the request alongside the response for auditing
  auto j = nlohmann::ordered_json::parse(read_text_file(entry));
  CHECK(j.at("request").at("model_id") == "test-model");
  CHECK(j.at("response").at("text") == "pong");
}

TEST_CASE("concurrent identical requests collapse into one backend call") {
  auto mock = backend({rule({"ping"}, {"pong"})});
  mock->set_latency(std::chrono::milliseconds(80));
  Gateway gateway(mock, {.parallelism = 4});

  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int i = 0; i < 4; ++i)
    threads.emplace_back([&] {
      if (gateway.complete(ask("ping")).text == "pong") ++ok;
    });
  for (auto& t : threads) t.join();

  CHECK(ok == 4);
  CHECK(mock->call_count() == 1);
  CHECK(gateway.stats().cache_hits == 3);
}

TEST_CASE("parallelism bounds simultaneous backend calls") {
  std::vector<MockRule> rules;
  for (int i = 0; i < 8; ++i) rules.push_back(rule({"q" + std::to_string(i) + "!"}, {"a"}));
  auto mock = backend(std::move(rules));
  mock->set_latency(std::chrono::milliseconds(30));
  Gateway gateway(mock, {.parallelism = 2});

  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i)
    threads.emplace_back([&gateway, i] { gateway.complete(ask("q" + std::to_string(i) + "!")); });
  for (auto& t : threads) t.join();

  CHECK(mock->call_count() == 8);
  CHECK(mock->max_in_flight() <= 2);
}

TEST_CASE("scripted transient failures are retried to success") {
  MockRule r = rule({"ping"}, {"pong"});
  r.fail_times = 2;
  auto mock = backend({r});
  Gateway gateway(mock, {.max_attempts = 5, .backoff_base_ms = 1});
  CHECK(gateway.complete(ask("ping")).text == "pong");
  CHECK(mock->call_count() == 3);
  CHECK(gateway.stats().retries == 2);
}

TEST_CASE("retry budget exhaustion reports the last error") {
  MockRule r = rule({"ping"}, {"pong"});
  r.fail_times = 100;
  auto mock = backend({r});
  Gateway gateway(mock, {.max_attempts = 3, .backoff_base_ms = 1});
  CHECK_THROWS_WITH_AS(gateway.complete(ask("ping")),
                       doctest::Contains("exhausted 3 attempts"), TransportError);
  CHECK(mock->call_count() == 3);
}

TEST_CASE("http 429 retries but 400 does not") {
  {
    auto throwing = std::make_shared<ThrowingBackend>(429);
    Gateway gateway(throwing, {.max_attempts = 3, .backoff_base_ms = 1});
    CHECK_THROWS_AS(gateway.complete(ask("x")), TransportError);
    CHECK(throwing->calls() == 3);
  }
  {
    auto throwing = std::make_shared<ThrowingBackend>(400);
    Gateway gateway(throwing, {.max_attempts = 3, .backoff_base_ms = 1});
    CHECK_THROWS_AS(gateway.complete(ask("x")), ApiError);
    CHECK(throwing->calls() == 1);
  }
}

TEST_CASE("requesting logprobs from a text-only backend fails loudly") {
  auto mock = backend({rule({"ping"}, {"pong"})});
  Gateway gateway(mock);
  ChatRequest req = ask("ping");
  req.top_k_logprobs = 5;
  CHECK_THROWS_WITH_AS(gateway.complete(req), doctest::Contains("no token logprobs"),
                       CapabilityError);
}

TEST_CASE("sample_n fans out distinct seeds and keeps sample order") {
  auto mock = backend({rule({"ping"}, {"r0", "r1", "r2"})});
  Gateway gateway(mock, {.parallelism = 8});
  ChatRequest req = ask("ping");
  req.temperature = 1.0;

  auto responses = gateway.sample_n(req, 5);
  REQUIRE(responses.size() == 5);
  CHECK(responses[0].text == "r0");
  CHECK(responses[1].text == "r1");
  CHECK(responses[2].text == "r2");
  CHECK(responses[3].text == "r0");  // seed 3 % 3 replies
  CHECK(responses[4].text == "r1");
  CHECK(mock->call_count() == 5);

  // the same fan-out replays from cache
  gateway.sample_n(req, 5);
  CHECK(mock->call_count() == 5);
  CHECK(gateway.stats().cache_hits == 5);

  SUBCASE("sampling at temperature zero is a bug in the caller") {
    req.temperature = 0.0;
    CHECK_THROWS_AS(gateway.sample_n(req, 3), std::invalid_argument);
  }
}

TEST_CASE("rate limiting spaces out dispatches") {
  auto mock = backend({rule({"q"}, {"a"})});
  Gateway gateway(mock, {.requests_per_second = 100.0});
  auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 3; ++i) gateway.complete(ask("q #" + std::to_string(i)));
  auto elapsed = std::chrono::steady_clock::now() - start;
  // 100 rps means 10ms spacing; three calls need at least two gaps
  CHECK(std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count() >= 15);
}

TEST_CASE("gateway rejects unusable configuration") {
  auto mock = backend({});
  CHECK_THROWS_AS(Gateway(nullptr), std::invalid_argument);
  CHECK_THROWS_AS(Gateway(mock, {.parallelism = 0}), std::invalid_argument);
  CHECK_THROWS_AS(Gateway(mock, {.max_attempts = 0}), std::invalid_argument);
  Gateway gateway(mock);
  CHECK_THROWS_AS(gateway.complete(ChatRequest{}), std::invalid_argument);
}

TEST_CASE("mock matches on all needles and takes the first matching rule") {
  auto mock = backend({
      rule({"alpha", "beta"}, {"both"}),
      rule({"alpha"}, {"alpha only"}),
  });
  CHECK(mock->complete(ask("alpha and beta here")).text == "both");
  CHECK(mock->complete(ask("just alpha")).text == "alpha only");
  CHECK_THROWS_WITH_AS(mock->complete(ask("neither, but a long prompt to clip")),
                       doctest::Contains("no mock rule matches"), ScriptError);
  CHECK_THROWS_WITH_AS(mock->complete(ask("beta alone")), doctest::Contains("beta alone"),
                       ScriptError);

  auto recorded = mock->calls();
  REQUIRE(recorded.size() == 4);
  CHECK(recorded[1].messages[0].content == "just alpha");
}

TEST_CASE("mock fallback catches unmatched prompts") {
  MockScript script;
  script.rules = {rule({"known"}, {"scripted"})};
  script.fallback = reply("generic");
  MockBackend mock(std::move(script));
  CHECK(mock.complete(ask("known question")).text == "scripted");
  CHECK(mock.complete(ask("anything else")).text == "generic");
}

TEST_CASE("ordinal rules consume replies in call order") {
  MockRule r = rule({"next"}, {"first", "second"});
  r.ordinal = true;

  SUBCASE("lenient scripts repeat the last reply") {
    auto mock = backend({r});
    CHECK(mock->complete(ask("next")).text == "first");
    CHECK(mock->complete(ask("next")).text == "second");
    CHECK(mock->complete(ask("next")).text == "second");
  }
  SUBCASE("strict scripts refuse to improvise") {
    auto mock = backend({r}, true);
    mock->complete(ask("next"));
    mock->complete(ask("next"));
    CHECK_THROWS_WITH_AS(mock->complete(ask("next")), doctest::Contains("exhausted after 2"),
                         ScriptError);
  }
}

TEST_CASE("seeded replies select by sample index") {
  auto mock = backend({rule({"q"}, {"r0", "r1", "r2"})});
  ChatRequest req = ask("q");
  CHECK(mock->complete(req).text == "r0");  // no hint acts as sample 0
  req.seed_hint = 4;
  CHECK(mock->complete(req).text == "r1");
}

TEST_CASE("mock scripts load from json") {
  auto j = nlohmann::ordered_json::parse(R"({
    "strict": true,
    "rules": [
      {"needles": ["capital of France"], "replies": [{"text": "Paris"}], "fail_times": 1},
      {"needles": ["count"], "ordinal": true,
       "replies": [{"text": "one"}, {"text": "two"}]}
    ]
  })");
  MockScript script = mock_script_from_json(j);
  CHECK(script.strict);
  REQUIRE(script.rules.size() == 2);
  CHECK(script.rules[0].fail_times == 1);
  CHECK(script.rules[1].ordinal);

  MockBackend mock(std::move(script));
  CHECK_THROWS_AS(mock.complete(ask("capital of France?")), TransportError);
  CHECK(mock.complete(ask("capital of France?")).text == "Paris");
}

TEST_CASE("http backend speaks the chat-completions shape") {
  setenv("TURNCAL_TEST_KEY", "sk-local-test", 1);

  std::string seen_auth, seen_body;
  std::atomic<int> flaky_calls{0};

  httplib::Server server;
  server.Post("/v1/chat/completions",
              [&](const httplib::Request& req, httplib::Response& res) {
                seen_auth = req.get_header_value("Authorization");
                seen_body = req.body;
                res.set_content(R"({
                  "choices": [{
                    "message": {"role": "assistant", "content": "Paris"},
                    "finish_reason": "stop",
                    "logprobs": {"content": [
                      {"token": "Paris", "logprob": -0.1,
                       "top_logprobs": [
                         {"token": "Paris", "logprob": -0.1},
                         {"token": "Lyon", "logprob": -2.5}
                       ]}
                    ]}
                  }],
                  "usage": {"prompt_tokens": 12, "completion_tokens": 1}
                })",
                                "application/json");
              });
  server.Post("/v1/broken/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    res.status = 503;
    res.set_content("upstream worker crashed", "text/plain");
  });
  server.Post("/v1/flaky/chat/completions",
              [&](const httplib::Request&, httplib::Response& res) {
                if (flaky_calls++ < 2) {
                  res.status = 429;
                  res.set_content("slow down", "text/plain");
                } else {
                  res.set_content(R"({"choices": [{"message": {"content": "ok"}}]})",
                                  "application/json");
                }
              });

  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  std::string base = "http://127.0.0.1:" + std::to_string(port) + "/v1";

  SUBCASE("request and response round trip, credential from the environment") {
    HttpBackend http({.base_url = base, .credential_env = "TURNCAL_TEST_KEY"});
    std::string why;
    CHECK(http.reachable(&why));

    ChatRequest req = ask("What is the capital of France?");
    req.top_k_logprobs = 2;
    req.temperature = 0.5;
    ChatResponse resp = http.complete(req);

    CHECK(resp.text == "Paris");
    CHECK(resp.finish_reason == "stop");
    CHECK(resp.prompt_tokens == 12);
    REQUIRE(resp.tokens.size() == 1);
    REQUIRE(resp.tokens[0].top_k.size() == 2);
    CHECK(resp.tokens[0].top_k[1].token == "Lyon");
    CHECK(resp.tokens[0].top_k[1].logprob == -2.5);

    CHECK(seen_auth == "Bearer sk-local-test");
    auto body = nlohmann::ordered_json::parse(seen_body);
    CHECK(body.at("model") == "test-model");
    CHECK(body.at("logprobs") == true);
    CHECK(body.at("top_logprobs") == 2);
    CHECK(body.at("messages")[0].at("content") == "What is the capital of France?");
  }

  SUBCASE("non-2xx answers carry their status") {
    HttpBackend http({.base_url = base + "/broken", .credential_env = "TURNCAL_TEST_KEY"});
    try {
      http.complete(ask("q"));
      FAIL("expected ApiError");
    } catch (const ApiError& e) {
      CHECK(e.status() == 503);
      CHECK(e.retryable());
      CHECK(std::string(e.what()).find("upstream worker crashed") != std::string::npos);
    }
  }

  SUBCASE("gateway retries through http 429") {
    auto http = std::make_shared<HttpBackend>(
        HttpBackend::Options{.base_url = base + "/flaky", .credential_env = "TURNCAL_TEST_KEY"});
    Gateway gateway(http, {.max_attempts = 5, .backoff_base_ms = 1});
    CHECK(gateway.complete(ask("q")).text == "ok");
    CHECK(flaky_calls == 3);
  }

  server.stop();
  server_thread.join();
}

TEST_CASE("unreachable endpoints fail as transport errors") {
  // nothing listens on port 1
  HttpBackend http({.base_url = "http://127.0.0.1:1/v1", .credential_env = ""});
  std::string why;
  CHECK_FALSE(http.reachable(&why));
  CHECK(why.find("cannot connect") != std::string::npos);
  CHECK_THROWS_AS(http.complete(ask("q")), TransportError);
}

TEST_CASE("responses round trip through json") {
  ChatResponse r = reply("answer");
  r.tokens.push_back({"ans", {{"ans", -0.2}, {"alt", -1.7}}});
  r.prompt_tokens = 9;
  r.completion_tokens = 3;
  ChatResponse back = response_from_json(response_to_json(r));
  CHECK(back.text == r.text);
  CHECK(back.finish_reason == r.finish_reason);
  REQUIRE(back.tokens.size() == 1);
  CHECK(back.tokens[0].top_k[1].token == "alt");
  CHECK(back.tokens[0].top_k[1].logprob == -1.7);
  CHECK(back.prompt_tokens == 9);
  CHECK(back.completion_tokens == 3);
}
