// Replay: re-execute a persisted run from its config snapshot and recorded
// inputs, then compare the fresh outcome with what the trace recorded.

#pragma once

#include <memory>
#include <string>

#include "oculus/benchmark.hpp"
#include "oculus/config.hpp"
#include "oculus/robustness.hpp"
#include "oculus/trace.hpp"

namespace oculus {

struct ReplayResult {
  bool ok = false;
  std::string command;
  std::string detail;
};

namespace detail {

inline const Event* find_first(const RunRecord& record, std::string_view type) {
  for (const auto& e : record.events) {
    if (e.type == type) return &e;
  }
  return nullptr;
}

inline const Event* find_last(const RunRecord& record, std::string_view type) {
  const Event* found = nullptr;
  for (const auto& e : record.events) {
    if (e.type == type) found = &e;
  }
  return found;
}

}  // namespace detail

inline ReplayResult replay_run(const RunRecord& record,
                               std::shared_ptr<ChatTransport> transport = nullptr) {
  Config cfg = config_from_snapshot(record.config_snapshot);
  const Event* input = detail::find_first(record, event_type::input);
  ReplayResult result;
  if (!input || !input->data.contains("command")) {
    throw ValidationError("run record has no replayable input event");
  }
  result.command = input->data["command"].get<std::string>();

  if (result.command == "query") {
    const Event* recorded = detail::find_last(record, event_type::response);
    if (!recorded) throw ValidationError("query record has no response event");
    PipelineRunner runner(cfg, transport);
    std::vector<ImageInput> images;
    for (const auto& img : input->data.value("images", nlohmann::json::array())) {
      images.push_back({img.value("path", ""), img.value("sha256", "")});
    }
    SessionResult fresh = run_session(runner.session_deps(), runner.session_options(),
                                      input->data.value("question", ""), images);
    std::string recorded_text = recorded->data.value("text", "");
    bool recorded_fallback = recorded->data.value("fallback", false);
    if (fresh.response.text == recorded_text &&
        fresh.response.fallback == recorded_fallback) {
      result.ok = true;
      result.detail = "final response reproduced";
    } else {
      result.detail = "final response differs from recording";
    }
    return result;
  }

  if (result.command == "bench") {
    std::string questions = input->data.value("questions", "");
    std::string question_dir = input->data.value("question_dir", "");
    const Event* recorded = detail::find_last(record, event_type::metrics);
    if (!recorded) throw ValidationError("bench record has no metrics event");
    std::vector<QuestionItem> items = load_questions(questions);
    BenchmarkOutcome fresh = run_benchmark(items, cfg, question_dir, nullptr, transport);
    // compare extracted letters per item, then the metric report
    std::map<std::string, char> recorded_letters;
    for (const auto& e : record.events) {
      if (e.type == event_type::prediction) {
        recorded_letters[e.item_id] = e.data.value("extracted", "?")[0];
      }
    }
    for (const auto& p : fresh.predictions) {
      auto it = recorded_letters.find(p.item_id);
      if (it == recorded_letters.end() || it->second != p.extracted) {
        result.detail = "prediction differs for item '" + p.item_id + "'";
        return result;
      }
    }
    if (fresh.report_json.dump() != recorded->data.dump()) {
      result.detail = "metric report differs from recording";
      return result;
    }
    result.ok = true;
    result.detail = "predictions and metric report reproduced";
    return result;
  }

  if (result.command == "robust") {
    std::string questions = input->data.value("questions", "");
    std::string question_dir = input->data.value("question_dir", "");
    std::uint64_t seed = input->data.value("seed", 0ull);
    const Event* recorded = detail::find_last(record, event_type::metrics);
    if (!recorded) throw ValidationError("robust record has no metrics event");
    std::vector<QuestionItem> items = load_questions(questions);
    RobustnessOutcome fresh =
        run_robustness(items, cfg, seed, question_dir, nullptr, transport);
    if (fresh.report.to_json().dump() != recorded->data.dump()) {
      result.detail = "consistency report differs from recording";
      return result;
    }
    result.ok = true;
    result.detail = "consistency report reproduced";
    return result;
  }

  throw ValidationError("unknown command in run record: " + result.command);
}

inline ReplayResult replay_run_file(const std::string& path,
                                    std::shared_ptr<ChatTransport> transport = nullptr) {
  return replay_run(load_run_record(path), transport);
}

}  // namespace oculus
