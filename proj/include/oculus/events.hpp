// Typed events: the session memory buffer and the persisted trace share this
// representation, so everything an agent saw or did is replayable.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oculus/common.hpp"

namespace oculus {

namespace event_type {
inline constexpr const char* input = "input";
inline constexpr const char* observation = "observation";
inline constexpr const char* retrieval = "retrieval";
inline constexpr const char* prompt = "prompt";
inline constexpr const char* completion = "completion";
inline constexpr const char* candidates = "candidates";
inline constexpr const char* plan = "plan";
inline constexpr const char* tool = "tool";
inline constexpr const char* verdict = "verdict";
inline constexpr const char* response = "response";
inline constexpr const char* prediction = "prediction";
inline constexpr const char* metrics = "metrics";
inline constexpr const char* note = "note";
inline constexpr const char* error = "error";
}  // namespace event_type

struct Event {
  std::uint64_t seq = 0;
  std::string type;
  std::string item_id;  // set for per-item benchmark events
  nlohmann::json data;

  nlohmann::json to_json() const {
    nlohmann::json j{{"seq", seq}, {"type", type}, {"data", data}};
    if (!item_id.empty()) j["item_id"] = item_id;
    return j;
  }

  static Event from_json(const nlohmann::json& j) {
    Event e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.type = j.at("type").get<std::string>();
    e.item_id = j.value("item_id", "");
    e.data = j.value("data", nlohmann::json::object());
    return e;
  }
};

using EventSink = std::function<void(const Event&)>;

// Append-only session memory buffer. Events are never
// rewritten; sequence numbers are assigned on append.
class Memory {
public:
  const Event& append(std::string type, nlohmann::json data, std::string item_id = {}) {
    Event e;
    e.seq = events_.size();
    e.type = std::move(type);
    e.item_id = std::move(item_id);
    e.data = std::move(data);
    events_.push_back(std::move(e));
    if (sink_) sink_(events_.back());
    return events_.back();
  }

  void set_sink(EventSink sink) { sink_ = std::move(sink); }

  std::size_t size() const { return events_.size(); }
  const std::vector<Event>& events() const { return events_; }

  std::size_t count_type(std::string_view type) const {
    std::size_t n = 0;
    for (const auto& e : events_) {
      if (e.type == type) ++n;
    }
    return n;
  }

  // Compact textual rendering for inclusion in agent prompts. Raw prompt and
  // completion bookkeeping stays out so prompts don't recursively embed
  // themselves; what agents get to "remember" is observations, retrievals,
  // plans, tool results, verdicts and notes.
  std::string render_text(std::size_t max_event_chars = 400) const {
    std::string out;
    for (const auto& e : events_) {
      if (e.type == event_type::prompt || e.type == event_type::completion ||
          e.type == event_type::response) {
        continue;
      }
      std::string line = "[" + e.type + "] " + e.data.dump();
      if (line.size() > max_event_chars) {
        line = line.substr(0, max_event_chars) + "...";
      }
      out += line;
      out.push_back('\n');
    }
    return out;
  }

private:
  std::vector<Event> events_;
  EventSink sink_;
};

}  // namespace oculus
