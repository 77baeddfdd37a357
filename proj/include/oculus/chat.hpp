// Chat-completion domain types shared by the gateway and every agent role.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oculus/common.hpp"

namespace oculus {

enum class Role { system, user, assistant, tool };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    case Role::tool: return "tool";
  }
  return "user";
}

inline std::optional<Role> role_from_name(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  if (s == "tool") return Role::tool;
  return std::nullopt;
}

// Content-addressed handle for an image on disk. The hash is what keys stub
// tool fixtures and cache entries; the path is only needed to (re)load bytes.
struct ImageRef {
  std::string path;
  std::string sha256;

  static ImageRef from_file(const std::string& path,
                            const std::string& expected_sha256 = {}) {
    std::string bytes = read_file(path);
    if (bytes.empty()) throw ValidationError("image is empty: " + path);
    ImageRef ref{path, sha256_hex(bytes)};
    if (!expected_sha256.empty() && ref.sha256 != expected_sha256) {
      throw IntegrityError("image content hash mismatch for " + path);
    }
    return ref;
  }

  bool operator==(const ImageRef&) const = default;
};

struct ChatMessage {
  Role role = Role::user;
  std::string content;
  std::vector<ImageRef> attachments;

  bool valid() const { return !content.empty() || !attachments.empty(); }
};

struct Sampling {
  double temperature = 0.0;
  double top_p = 1.0;
  int max_tokens = 1024;

  bool operator==(const Sampling&) const = default;
};

enum class BackendKind { remote_chat, scripted };
enum class CachePolicy { off, read_write, read_only };

struct BackendProfile {
  std::string id;
  BackendKind kind = BackendKind::scripted;
  std::string endpoint;     // remote only
  std::string model_name;
  Sampling sampling;        // ignored by scripted backends
  CachePolicy cache_policy = CachePolicy::off;
  std::string script_path;  // scripted only
  std::string api_key;      // remote only, usually env-interpolated
};

struct TokenUsage {
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
};

struct Completion {
  std::string text;
  TokenUsage usage;
  std::string backend_id;
  bool cached = false;
  bool default_rule_fired = false;  // scripted backends only
};

// Cache canonicalization: trailing whitespace on each line and trailing blank
// lines are insignificant.
inline std::string canonicalize_content(std::string_view content) {
  std::vector<std::string> lines = split_lines(content);
  while (!lines.empty() && rtrim(lines.back()).empty()) lines.pop_back();
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out.push_back('\n');
    out += rtrim(lines[i]);
  }
  return out;
}

inline std::string render_sampling(const Sampling& s) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "t=%.6f;p=%.6f;n=%d", s.temperature, s.top_p,
                s.max_tokens);
  return buf;
}

// Key = hash of (backend id, model, sampling, canonicalized messages with
// images replaced by their content hashes).
inline std::string cache_key(const BackendProfile& profile,
                             const std::vector<ChatMessage>& messages) {
  std::string blob = profile.id;
  blob += '\x1f';
  blob += profile.model_name;
  blob += '\x1f';
  blob += render_sampling(profile.sampling);
  for (const auto& m : messages) {
    blob += '\x1e';
    blob += role_name(m.role);
    blob += '\x1f';
    blob += canonicalize_content(m.content);
    for (const auto& img : m.attachments) {
      blob += '\x1f';
      blob += img.sha256;
    }
  }
  return sha256_hex(blob);
}

// The text scripted rules match against.
inline std::string joined_request_text(const std::vector<ChatMessage>& messages) {
  std::string out;
  for (const auto& m : messages) {
    if (!out.empty()) out.push_back('\n');
    out += m.content;
  }
  return out;
}

}  // namespace oculus
