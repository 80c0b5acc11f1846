#include "turncal/mock_backend.hpp"

#include <algorithm>
#include <thread>

#include "turncal/util.hpp"

namespace turncal {

namespace {
using json = nlohmann::ordered_json;
}

MockBackend::MockBackend(MockScript script) : script_(std::move(script)) {
  rule_hits_.assign(script_.rules.size(), 0);
}

void MockBackend::set_latency(std::chrono::milliseconds latency) { latency_ = latency; }

std::vector<ChatRequest> MockBackend::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

size_t MockBackend::call_count() const {
  std::lock_guard lock(mutex_);
  return calls_.size();
}

int MockBackend::max_in_flight() const {
  std::lock_guard lock(mutex_);
  return max_in_flight_;
}

ChatResponse MockBackend::complete(const ChatRequest& request) {
  struct Selected {
    ChatResponse response;
    bool fail = false;
  } selected;

  {
    std::lock_guard lock(mutex_);
    calls_.push_back(request);
    in_flight_++;
    max_in_flight_ = std::max(max_in_flight_, in_flight_);

    std::string flat;
    for (const ChatMessage& m : request.messages) {
      flat += m.content;
      flat += '\n';
    }

    const MockRule* matched = nullptr;
    size_t matched_index = 0;
    for (size_t i = 0; i < script_.rules.size(); ++i) {
      const MockRule& rule = script_.rules[i];
      bool all = std::all_of(rule.needles.begin(), rule.needles.end(), [&](const std::string& n) {
        return flat.find(n) != std::string::npos;
      });
      if (all) {
        matched = &rule;
        matched_index = i;
        break;
      }
    }

    auto finish = [&](Selected s) {
      selected = std::move(s);
    };

    if (matched) {
      int hit = rule_hits_[matched_index]++;
      if (hit < matched->fail_times) {
        finish({{}, true});
      } else if (matched->replies.empty()) {
        in_flight_--;
        throw ScriptError("mock rule has no replies; prompt head: " + flat.substr(0, 120));
      } else if (matched->ordinal) {
        int serving = hit - matched->fail_times;
        if (serving >= static_cast<int>(matched->replies.size())) {
          if (script_.strict) {
            in_flight_--;
            throw ScriptError("mock ordinal rule exhausted after " +
                              std::to_string(matched->replies.size()) +
                              " replies; prompt head: " + flat.substr(0, 120));
          }
          serving = static_cast<int>(matched->replies.size()) - 1;
        }
        finish({matched->replies[serving], false});
      } else {
        size_t index = static_cast<size_t>(request.seed_hint.value_or(0)) %
                       matched->replies.size();
        finish({matched->replies[index], false});
      }
    } else if (script_.fallback) {
      finish({*script_.fallback, false});
    } else {
      in_flight_--;
      throw ScriptError("no mock rule matches; prompt head: " + flat.substr(0, 120));
    }
  }

  if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
  {
    std::lock_guard lock(mutex_);
    in_flight_--;
  }
  if (selected.fail) throw TransportError("scripted transient failure");
  return selected.response;
}

ChatResponse mock_reply_from_json(const json& j) {
  if (j.is_string()) {
    ChatResponse r;
    r.text = j.get<std::string>();
    return r;
  }
  ChatResponse r;
  r.text = j.at("text").get<std::string>();
  if (auto it = j.find("finish_reason"); it != j.end()) r.finish_reason = it->get<std::string>();
  if (auto it = j.find("tokens"); it != j.end()) {
    for (const json& tj : *it) {
      TokenLogprobs t;
      t.token = tj.at("token").get<std::string>();
      if (auto top = tj.find("top_k"); top != tj.end()) {
        for (const json& e : *top) {
          if (e.is_array())
            t.top_k.push_back({e.at(0).get<std::string>(), e.at(1).get<double>()});
          else
            t.top_k.push_back({e.at("token").get<std::string>(), e.at("logprob").get<double>()});
        }
      }
      std::stable_sort(t.top_k.begin(), t.top_k.end(),
                       [](const TopLogprob& a, const TopLogprob& b) { return a.logprob > b.logprob; });
      r.tokens.push_back(std::move(t));
    }
  }
  return r;
}

MockScript mock_script_from_json(const json& j) {
  MockScript script;
  if (auto it = j.find("strict"); it != j.end()) script.strict = it->get<bool>();
  if (auto it = j.find("fallback"); it != j.end()) script.fallback = mock_reply_from_json(*it);
  if (auto it = j.find("rules"); it != j.end()) {
    for (const json& rj : *it) {
      MockRule rule;
      if (auto m = rj.find("match"); m != rj.end()) {
        if (m->is_string())
          rule.needles.push_back(m->get<std::string>());
        else
          for (const json& n : *m) rule.needles.push_back(n.get<std::string>());
      }
      for (const json& reply : rj.at("replies")) rule.replies.push_back(mock_reply_from_json(reply));
      if (auto o = rj.find("ordinal"); o != rj.end()) rule.ordinal = o->get<bool>();
      if (auto f = rj.find("fail_times"); f != rj.end()) rule.fail_times = f->get<int>();
      script.rules.push_back(std::move(rule));
    }
  }
  return script;
}

MockScript load_mock_script(const std::filesystem::path& path) {
  return mock_script_from_json(json::parse(read_text_file(path)));
}

}  // namespace turncal
