// LLM gateway: uniform access to chat-completion backends. Remote backends
// speak the OpenAI-compatible chat-completions contract; scripted backends
// replay (match-pattern -> reply) rules from a file so every agent role can
// be exercised offline and deterministically.

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "oculus/chat.hpp"
#include "oculus/common.hpp"

namespace oculus {

class ChatBackend {
public:
  virtual ~ChatBackend() = default;
  virtual Completion complete(const BackendProfile& profile,
                              const std::vector<ChatMessage>& messages) = 0;
};

// ---------------------------------------------------------------------------
// Scripted backend
//
// Script file: line-delimited `PATTERN<TAB>REPLY` records plus a mandatory
// final `*<TAB>DEFAULT_REPLY`. Blank lines and `#` comments are skipped.
// Both fields support \n, \t and \\ escapes. A request matches the first
// rule (file order) whose pattern is a substring of the concatenated message
// contents; the `*` pattern matches anything.
// ---------------------------------------------------------------------------

struct ScriptRule {
  std::string pattern;  // empty = default rule
  std::string reply;
};

class ScriptedBackend : public ChatBackend {
public:
  static std::vector<ScriptRule> parse_script(const std::string& text,
                                              const std::string& origin) {
    std::vector<ScriptRule> rules;
    bool has_default = false;
    std::size_t lineno = 0;
    for (const auto& raw : split_lines(text)) {
      ++lineno;
      if (raw.empty() || raw[0] == '#') continue;
      std::size_t tab = raw.find('\t');
      if (tab == std::string::npos) {
        throw ValidationError(origin + ":" + std::to_string(lineno) +
                              ": expected PATTERN<TAB>REPLY");
      }
      std::string pattern = unescape_record(raw.substr(0, tab));
      std::string reply = unescape_record(raw.substr(tab + 1));
      if (pattern == "*") {
        pattern.clear();
        has_default = true;
      }
      rules.push_back({std::move(pattern), std::move(reply)});
    }
    if (!has_default) {
      throw ValidationError(origin + ": script missing mandatory `*` default rule");
    }
    return rules;
  }

  static std::unique_ptr<ScriptedBackend> from_file(const std::string& path) {
    std::string text;
    try {
      text = read_file(path);
    } catch (const ValidationError&) {
      throw ValidationError("unreadable script: " + path);
    }
    return std::make_unique<ScriptedBackend>(parse_script(text, path));
  }

  explicit ScriptedBackend(std::vector<ScriptRule> rules) : rules_(std::move(rules)) {}

  Completion complete(const BackendProfile& profile,
                      const std::vector<ChatMessage>& messages) override {
    std::string request = joined_request_text(messages);
    for (const auto& rule : rules_) {
      if (rule.pattern.empty() || request.find(rule.pattern) != std::string::npos) {
        Completion c;
        c.text = rule.reply;
        c.backend_id = profile.id;
        c.default_rule_fired = rule.pattern.empty();
        c.usage.prompt_tokens = approx_token_count(request);
        c.usage.completion_tokens = approx_token_count(rule.reply);
        return c;
      }
    }
    throw BackendError("scripted backend has no default rule");  // unreachable
  }

private:
  std::vector<ScriptRule> rules_;
};

// ---------------------------------------------------------------------------
// Remote backend (OpenAI-compatible chat completions over a single POST)
// ---------------------------------------------------------------------------

struct HttpResponse {
  int status = 0;
  std::string body;
  std::string transport_error;  // non-empty => request never completed

  bool ok() const { return transport_error.empty() && status >= 200 && status < 300; }
};

class ChatTransport {
public:
  virtual ~ChatTransport() = default;
  virtual HttpResponse post_json(const std::string& url, const std::string& body,
                                 const std::string& api_key) = 0;
};

// Counts every wire call; handy for asserting that scripted runs stay offline.
class CountingTransport : public ChatTransport {
public:
  explicit CountingTransport(std::shared_ptr<ChatTransport> inner = nullptr)
      : inner_(std::move(inner)) {}

  HttpResponse post_json(const std::string& url, const std::string& body,
                         const std::string& api_key) override {
    ++calls_;
    if (inner_) return inner_->post_json(url, body, api_key);
    return {0, "", "counting transport has no inner transport"};
  }

  std::size_t calls() const { return calls_; }

private:
  std::shared_ptr<ChatTransport> inner_;
  std::size_t calls_ = 0;
};

inline nlohmann::json chat_request_payload(const BackendProfile& profile,
                                           const std::vector<ChatMessage>& messages) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) {
    nlohmann::json entry;
    entry["role"] = role_name(m.role);
    if (m.attachments.empty()) {
      entry["content"] = m.content;
    } else {
      nlohmann::json parts = nlohmann::json::array();
      if (!m.content.empty()) {
        parts.push_back({{"type", "text"}, {"text", m.content}});
      }
      for (const auto& img : m.attachments) {
        std::string b64 = base64_encode(read_file(img.path));
        parts.push_back({{"type", "image_url"},
                         {"image_url", {{"url", "data:image/png;base64," + b64}}}});
      }
      entry["content"] = std::move(parts);
    }
    msgs.push_back(std::move(entry));
  }
  nlohmann::json payload;
  payload["model"] = profile.model_name;
  payload["messages"] = std::move(msgs);
  payload["temperature"] = profile.sampling.temperature;
  payload["top_p"] = profile.sampling.top_p;
  payload["max_tokens"] = profile.sampling.max_tokens;
  return payload;
}

struct RetryPolicy {
  int max_retries = 3;
  int initial_backoff_ms = 500;
};

class RemoteBackend : public ChatBackend {
public:
  RemoteBackend(std::shared_ptr<ChatTransport> transport, RetryPolicy retry)
      : transport_(std::move(transport)), retry_(retry) {}

  Completion complete(const BackendProfile& profile,
                      const std::vector<ChatMessage>& messages) override {
    std::string body = chat_request_payload(profile, messages).dump();
    HttpResponse resp;
    int backoff = retry_.initial_backoff_ms;
    for (int attempt = 0; attempt <= retry_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
        backoff *= 2;
      }
      resp = transport_->post_json(profile.endpoint, body, profile.api_key);
      bool retryable = !resp.transport_error.empty() || resp.status == 429;
      if (!retryable) break;
    }
    if (!resp.transport_error.empty()) {
      throw BackendError("backend " + profile.id +
                         " transport failure: " + resp.transport_error);
    }
    if (resp.status < 200 || resp.status >= 300) {
      throw BackendError("backend " + profile.id + " HTTP " +
                         std::to_string(resp.status) + ": " + resp.body);
    }
    nlohmann::json reply = nlohmann::json::parse(resp.body, nullptr, false);
    if (reply.is_discarded() || !reply.contains("choices") ||
        reply["choices"].empty()) {
      throw BackendError("backend " + profile.id + " returned malformed payload");
    }
    Completion c;
    c.text = reply["choices"][0]["message"]["content"].get<std::string>();
    c.backend_id = profile.id;
    if (reply.contains("usage")) {
      c.usage.prompt_tokens = reply["usage"].value("prompt_tokens", 0);
      c.usage.completion_tokens = reply["usage"].value("completion_tokens", 0);
    }
    return c;
  }

private:
  std::shared_ptr<ChatTransport> transport_;
  RetryPolicy retry_;
};

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

struct BackendHandle {
  std::string id;
  bool valid() const { return !id.empty(); }
};

class Gateway {
public:
  explicit Gateway(std::shared_ptr<ChatTransport> transport = nullptr,
                   RetryPolicy retry = {})
      : transport_(std::move(transport)), retry_(retry) {}

  BackendHandle register_backend(const BackendProfile& profile) {
    validate_profile(profile);
    BackendProfile resolved = profile;
    std::unique_ptr<ChatBackend> impl;
    if (profile.kind == BackendKind::scripted) {
      impl = ScriptedBackend::from_file(profile.script_path);
    } else {
      if (!transport_) {
        throw ValidationError("gateway has no transport for remote backend " +
                              profile.id);
      }
      // credentials stay as ${PLACEHOLDER}s until a remote backend actually
      // needs them, so scripted configs never demand env vars and traces
      // never embed secrets
      resolved.api_key = interpolate_env(profile.api_key);
      impl = std::make_unique<RemoteBackend>(transport_, retry_);
    }
    return register_backend_impl(resolved, std::move(impl));
  }

  // Registers a caller-supplied backend implementation under a profile.
  // This is how tests inject programmable doubles; the file-scripted backend
  // above is just the stock implementation.
  BackendHandle register_backend_impl(const BackendProfile& profile,
                                      std::unique_ptr<ChatBackend> impl) {
    std::lock_guard<std::mutex> lk(mu_);
    if (backends_.count(profile.id)) {
      throw ValidationError("backend exists: " + profile.id);
    }
    backends_[profile.id] = Entry{profile, std::shared_ptr<ChatBackend>(std::move(impl))};
    return BackendHandle{profile.id};
  }

  const BackendProfile& profile(const BackendHandle& handle) const {
    std::lock_guard<std::mutex> lk(mu_);
    return entry(handle.id).profile;
  }

  Completion complete(const BackendHandle& handle,
                      const std::vector<ChatMessage>& messages) {
    if (messages.empty()) throw ValidationError("complete() requires messages");
    for (const auto& m : messages) {
      if (!m.valid()) throw ValidationError("message needs content or attachments");
    }
    Entry e;
    {
      std::lock_guard<std::mutex> lk(mu_);
      e = entry(handle.id);
    }
    const CachePolicy policy = e.profile.cache_policy;
    std::string key;
    if (policy != CachePolicy::off) {
      key = cache_key(e.profile, messages);
      std::lock_guard<std::mutex> lk(cache_mu_);
      auto it = cache_.find(key);
      if (it != cache_.end()) {
        Completion hit = it->second;
        hit.cached = true;
        return hit;
      }
    }
    Completion fresh = e.impl->complete(e.profile, messages);
    if (policy == CachePolicy::read_write) {
      std::lock_guard<std::mutex> lk(cache_mu_);
      cache_.emplace(key, fresh);
    }
    return fresh;
  }

  std::size_t cache_size() const {
    std::lock_guard<std::mutex> lk(cache_mu_);
    return cache_.size();
  }

  static void validate_profile(const BackendProfile& profile) {
    if (profile.id.empty()) throw ValidationError("backend profile needs an id");
    if (profile.kind == BackendKind::remote_chat) {
      if (profile.endpoint.empty()) {
        throw ValidationError("remote backend " + profile.id + " requires endpoint");
      }
      if (profile.endpoint.rfind("http://", 0) != 0 &&
          profile.endpoint.rfind("https://", 0) != 0) {
        throw ValidationError("malformed endpoint URL: " + profile.endpoint);
      }
      if (profile.model_name.empty()) {
        throw ValidationError("remote backend " + profile.id + " requires model_name");
      }
    } else {
      if (profile.script_path.empty()) {
        throw ValidationError("scripted backend " + profile.id + " requires script_path");
      }
    }
    if (profile.sampling.temperature < 0) {
      throw ValidationError("temperature must be >= 0");
    }
    if (profile.sampling.top_p <= 0 || profile.sampling.top_p > 1) {
      throw ValidationError("top_p must be in (0,1]");
    }
    if (profile.sampling.max_tokens <= 0) {
      throw ValidationError("max_tokens must be positive");
    }
  }

private:
  struct Entry {
    BackendProfile profile;
    std::shared_ptr<ChatBackend> impl;
  };

  const Entry& entry(const std::string& id) const {
    auto it = backends_.find(id);
    if (it == backends_.end()) throw ValidationError("unknown backend: " + id);
    return it->second;
  }

  mutable std::mutex mu_;
  mutable std::mutex cache_mu_;
  std::map<std::string, Entry> backends_;
  std::unordered_map<std::string, Completion> cache_;
  std::shared_ptr<ChatTransport> transport_;
  RetryPolicy retry_;
};

}  // namespace oculus
