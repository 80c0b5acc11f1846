#include "turncal/http_backend.hpp"

#include <httplib.h>

#include <cstdlib>

namespace turncal {

namespace {

using json = nlohmann::ordered_json;

void split_base_url(const std::string& base_url, std::string* origin, std::string* prefix) {
  size_t scheme = base_url.find("://");
  if (scheme == std::string::npos)
    throw std::invalid_argument("base_url must include a scheme: " + base_url);
  size_t path = base_url.find('/', scheme + 3);
  if (path == std::string::npos) {
    *origin = base_url;
    *prefix = "";
  } else {
    *origin = base_url.substr(0, path);
    *prefix = base_url.substr(path);
  }
  while (!prefix->empty() && prefix->back() == '/') prefix->pop_back();
}

json request_body(const ChatRequest& request) {
  json body = json::object();
  body["model"] = request.model_id;
  json messages = json::array();
  for (const ChatMessage& m : request.messages)
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  body["messages"] = std::move(messages);
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_tokens;
  if (request.top_k_logprobs > 0) {
    body["logprobs"] = true;
    body["top_logprobs"] = request.top_k_logprobs;
  }
  if (request.seed_hint) body["seed"] = *request.seed_hint;
  return body;
}

ChatResponse parse_completion(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ApiError(200, std::string("unparseable completion body: ") + e.what());
  }
  const json& choices = j.at("choices");
  if (!choices.is_array() || choices.empty())
    throw ApiError(200, "completion has no choices");
  const json& choice = choices[0];

  ChatResponse r;
  r.text = choice.at("message").at("content").is_null()
               ? ""
               : choice.at("message").at("content").get<std::string>();
  if (auto fr = choice.find("finish_reason"); fr != choice.end() && fr->is_string())
    r.finish_reason = fr->get<std::string>();
  if (auto lp = choice.find("logprobs"); lp != choice.end() && lp->is_object()) {
    if (auto content = lp->find("content"); content != lp->end() && content->is_array()) {
      for (const json& tj : *content) {
        TokenLogprobs t;
        t.token = tj.at("token").get<std::string>();
        if (auto top = tj.find("top_logprobs"); top != tj.end() && top->is_array()) {
          for (const json& e : *top)
            t.top_k.push_back({e.at("token").get<std::string>(), e.at("logprob").get<double>()});
        }
        r.tokens.push_back(std::move(t));
      }
    }
  }
  if (auto usage = j.find("usage"); usage != j.end() && usage->is_object()) {
    if (auto p = usage->find("prompt_tokens"); p != usage->end() && p->is_number())
      r.prompt_tokens = p->get<int>();
    if (auto c = usage->find("completion_tokens"); c != usage->end() && c->is_number())
      r.completion_tokens = c->get<int>();
  }
  return r;
}

}  // namespace

HttpBackend::HttpBackend(Options options) : options_(std::move(options)) {
  split_base_url(options_.base_url, &origin_, &path_prefix_);
  if (!options_.credential_env.empty()) {
    if (const char* key = std::getenv(options_.credential_env.c_str())) api_key_ = key;
  }
}

std::string HttpBackend::name() const { return "http:" + options_.base_url; }

bool HttpBackend::reachable(std::string* why) const {
  httplib::Client client(origin_);
  client.set_connection_timeout(5, 0);
  auto res = client.Get(path_prefix_.empty() ? "/" : path_prefix_);
  if (!res) {
    if (why) *why = "cannot connect to " + origin_ + ": " + httplib::to_string(res.error());
    return false;
  }
  return true;  // any HTTP answer proves the endpoint is there
}

ChatResponse HttpBackend::complete(const ChatRequest& request) {
  httplib::Client client(origin_);
  client.set_connection_timeout(10, 0);
  client.set_read_timeout(options_.timeout_seconds, 0);
  client.set_write_timeout(options_.timeout_seconds, 0);

  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  std::string body = request_body(request).dump();
  auto res = client.Post(path_prefix_ + "/chat/completions", headers, body, "application/json");
  if (!res)
    throw TransportError("POST " + origin_ + path_prefix_ +
                         "/chat/completions failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw ApiError(res->status, "backend returned HTTP " + std::to_string(res->status) + ": " +
                                    res->body.substr(0, 300));
  return parse_completion(res->body);
}

}  // namespace turncal
