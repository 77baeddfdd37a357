// Shared test helpers: temp dirs, fixture writers, programmable backends.

#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "oculus/gateway.hpp"
#include "oculus/tools.hpp"

namespace oculus::testing {

class TempDir {
public:
  TempDir() {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("oculus_test_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }

  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  std::string path() const { return path_.string(); }

  std::string write(const std::string& name, const std::string& content) const {
    std::string p = file(name);
    std::filesystem::create_directories(std::filesystem::path(p).parent_path());
    write_file(p, content);
    return p;
  }

private:
  std::filesystem::path path_;
};

// Script text from (pattern, reply) pairs; appends the mandatory default.
inline std::string make_script(
    const std::vector<std::pair<std::string, std::string>>& rules,
    const std::string& default_reply = "default reply") {
  std::string out;
  for (const auto& [pattern, reply] : rules) {
    out += escape_record(pattern) + "\t" + escape_record(reply) + "\n";
  }
  out += "*\t" + escape_record(default_reply) + "\n";
  return out;
}

inline BackendProfile scripted_profile(const std::string& id, const std::string& script_path,
                                       CachePolicy policy = CachePolicy::off) {
  BackendProfile p;
  p.id = id;
  p.kind = BackendKind::scripted;
  p.script_path = script_path;
  p.cache_policy = policy;
  return p;
}

// Replies popped in order; the last one repeats once the queue is exhausted.
class QueueBackend : public ChatBackend {
public:
  explicit QueueBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}

  Completion complete(const BackendProfile& profile,
                      const std::vector<ChatMessage>&) override {
    Completion c;
    c.backend_id = profile.id;
    if (replies_.empty()) {
      c.text = "";
      return c;
    }
    std::size_t i = std::min(next_, replies_.size() - 1);
    ++next_;
    c.text = replies_[i];
    return c;
  }

  std::size_t calls() const { return next_; }

private:
  std::vector<std::string> replies_;
  std::size_t next_ = 0;
};

class CallbackBackend : public ChatBackend {
public:
  using Fn = std::function<std::string(const std::vector<ChatMessage>&)>;
  explicit CallbackBackend(Fn fn) : fn_(std::move(fn)) {}

  Completion complete(const BackendProfile& profile,
                      const std::vector<ChatMessage>& messages) override {
    Completion c;
    c.backend_id = profile.id;
    c.text = fn_(messages);
    return c;
  }

private:
  Fn fn_;
};

inline BackendHandle register_queue(Gateway& gateway, const std::string& id,
                                    std::vector<std::string> replies) {
  BackendProfile p;
  p.id = id;
  p.kind = BackendKind::scripted;
  p.script_path = "<in-memory>";
  return gateway.register_backend_impl(
      p, std::make_unique<QueueBackend>(std::move(replies)));
}

inline BackendHandle register_callback(Gateway& gateway, const std::string& id,
                                       CallbackBackend::Fn fn) {
  BackendProfile p;
  p.id = id;
  p.kind = BackendKind::scripted;
  p.script_path = "<in-memory>";
  return gateway.register_backend_impl(p, std::make_unique<CallbackBackend>(std::move(fn)));
}

// Writes image bytes plus a modality sidecar; returns the ImageRef.
inline ImageRef make_image(const TempDir& dir, const std::string& name,
                           const std::string& bytes, const std::string& modality) {
  std::string path = dir.write(name, bytes);
  if (!modality.empty()) dir.write(name + ".meta", "modality=" + modality + "\n");
  return ImageRef::from_file(path);
}

inline nlohmann::json dr_severity_payload(double no_dr, double mild, double moderate,
                                          double severe, double proliferative) {
  return {{"probabilities",
           {{"no_dr", no_dr},
            {"mild", mild},
            {"moderate", moderate},
            {"severe", severe},
            {"proliferative", proliferative}}}};
}

inline nlohmann::json diagnosis_payload(double glaucoma_p = 0.9) {
  nlohmann::json probs = nlohmann::json::object();
  for (const auto& label : LabelSets::defaults().conditions) probs[label] = 0.01;
  probs["glaucoma"] = glaucoma_p;
  return {{"probabilities", probs}};
}

inline nlohmann::json fundus_payload(double cdr = 0.42) {
  return {{"cup", {{10, 20}, {30, 20}, {30, 50}, {10, 50}}},
          {"disc", {{0, 0}, {60, 0}, {60, 100}, {0, 100}}},
          {"cdr", cdr}};
}

inline nlohmann::json oct_payload() {
  return {{"choroid", {{0, 80}, {100, 80}, {100, 100}, {0, 100}}},
          {"retina", {{0, 10}, {100, 10}, {100, 60}, {0, 60}}}};
}

inline nlohmann::json lesion_payload(int n_boxes = 3) {
  nlohmann::json boxes = nlohmann::json::array();
  const char* types[] = {"hard_exudate", "soft_exudate", "hemorrhage", "microaneurysm"};
  for (int i = 0; i < n_boxes; ++i) {
    boxes.push_back({{"lesion_type", types[i % 4]},
                     {"bbox", {10.0 * i, 5.0 * i, 10.0 * i + 8, 5.0 * i + 6}},
                     {"confidence", 0.5 + 0.1 * i}});
  }
  return {{"boxes", boxes}};
}

// Fixture file mapping each image hash to a payload, with optional default.
inline std::string make_tool_fixture(
    const TempDir& dir, const std::string& name,
    const std::vector<std::pair<std::string, nlohmann::json>>& entries,
    const nlohmann::json& fallback = nlohmann::json()) {
  std::string out;
  for (const auto& [hash, payload] : entries) {
    out += hash + "\t" + payload.dump() + "\n";
  }
  if (!fallback.is_null()) out += "*\t" + fallback.dump() + "\n";
  return dir.write(name, out);
}

}  // namespace oculus::testing
