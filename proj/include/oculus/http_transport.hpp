// httplib-backed transport for remote backends and remote tools. Kept out of
// the core headers so tests and scripted runs never pull in the HTTP stack.

#pragma once

#include <httplib.h>

#include "oculus/gateway.hpp"

namespace oculus {

class HttplibChatTransport : public ChatTransport {
public:
  explicit HttplibChatTransport(int timeout_seconds = 120)
      : timeout_seconds_(timeout_seconds) {}

  HttpResponse post_json(const std::string& url, const std::string& body,
                         const std::string& api_key) override {
    auto split = split_url(url);
    if (split.first.empty()) {
      return {0, "", "malformed URL: " + url};
    }
    httplib::Client client(split.first);
    client.set_connection_timeout(timeout_seconds_, 0);
    client.set_read_timeout(timeout_seconds_, 0);
    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
    auto res = client.Post(split.second, headers, body, "application/json");
    if (!res) {
      return {0, "", httplib::to_string(res.error())};
    }
    return {res->status, res->body, ""};
  }

  // host part (scheme://host[:port]) and path part
  static std::pair<std::string, std::string> split_url(const std::string& url) {
    std::size_t scheme = url.find("://");
    if (scheme == std::string::npos) return {"", ""};
    std::size_t path = url.find('/', scheme + 3);
    if (path == std::string::npos) return {url, "/"};
    return {url.substr(0, path), url.substr(path)};
  }

private:
  int timeout_seconds_;
};

// GET helper for source ingestion.
inline std::string http_fetch(const std::string& url, int timeout_seconds = 60) {
  auto split = HttplibChatTransport::split_url(url);
  if (split.first.empty()) throw ValidationError("malformed URL: " + url);
  httplib::Client client(split.first);
  client.set_connection_timeout(timeout_seconds, 0);
  client.set_read_timeout(timeout_seconds, 0);
  client.set_follow_location(true);
  auto res = client.Get(split.second);
  if (!res) throw BackendError("fetch failed for " + url + ": " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    throw BackendError("fetch failed for " + url + ": HTTP " + std::to_string(res->status));
  }
  return res->body;
}

}  // namespace oculus
