// Prompt builders and the structured-reply grammars for every agent role.
// The block formats below are the only contract between the engine and a
// backend: anything that emits them (model or script) can play the role.

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "oculus/chat.hpp"
#include "oculus/common.hpp"
#include "oculus/events.hpp"
#include "oculus/retrieval.hpp"
#include "oculus/tools.hpp"

namespace oculus {
namespace prompts {

inline constexpr const char* kSelectionSystem =
    "You are the tool-selection assistant of an ophthalmic diagnostic workflow. "
    "From the roster below, name every tool worth considering for this query. "
    "Reply with one tool id per line, each prefixed by '- '. Name only tools "
    "from the roster.";

inline constexpr const char* kPlannerSystem =
    "You are the decision agent of an ophthalmic diagnostic workflow. Choose "
    "which tools to invoke and in what order, and justify each choice. Reply "
    "with exactly one block of the form:\n"
    "PLAN\n"
    "- <tool_id>: <rationale>\n"
    "END\n"
    "If no tools are needed, reply with a single line 'NO_TOOLS: <reason>'.";

inline constexpr const char* kPlannerFormatReminder =
    "Your previous reply could not be used. Reply again with a PLAN block "
    "listing only tools from the candidate set, one '- <tool_id>: <rationale>' "
    "line per tool, or a single 'NO_TOOLS: <reason>' line.";

inline constexpr const char* kEvaluatorSystem =
    "You are the evaluation agent, a senior ophthalmology expert reviewing an "
    "automated diagnostic workflow. Judge whether the tool outputs answer the "
    "query correctly and completely. Reply with exactly one block of the form:\n"
    "VERDICT\n"
    "is_correct: true|false\n"
    "is_complete: true|false\n"
    "feedback: <what is wrong or missing; name any tool that should run>\n"
    "END";

inline constexpr const char* kEvaluatorFormatReminder =
    "Your previous reply could not be used. Reply again with a VERDICT block "
    "containing is_correct, is_complete and feedback lines.";

inline constexpr const char* kGeneratorSystem =
    "You are a senior clinical ophthalmology expert. Integrate the retrieved "
    "context and the tool findings into a final, clinically grounded response "
    "to the query.";

inline constexpr const char* kRagSynthSystem =
    "Summarize the retrieved passages into concise clinical context for the "
    "query. Use only information present in the passages.";

inline constexpr const char* kScoreDialogueSystemGenerator =
    "You grade multiple-choice options by semantic proximity to the ground "
    "truth along five clinical dimensions: etiology, anatomical location, "
    "vascular involvement, disease course or stage, and lesion morphology. "
    "For every option emit one line inside a block of the form:\n"
    "SCORES\n"
    "<LETTER>: etiology=0|1 location=0|1 vascular=0|1 course=0|1 morphology=0|1 reward=<0-4>\n"
    "END\n"
    "The correct option always gets reward 4; unrelated options get 0.";

inline constexpr const char* kScoreDialogueSystemEvaluator =
    "You independently verify option similarity grades produced by another "
    "model. Score every option yourself along the five clinical dimensions "
    "(etiology, anatomical location, vascular involvement, disease course or "
    "stage, lesion morphology) and reply with the same SCORES block format. "
    "Agree only where the proposal is right.";

inline constexpr const char* kScoreFormatReminder =
    "Your previous reply could not be parsed. Reply again with a SCORES block, "
    "one '<LETTER>: etiology=0|1 location=0|1 vascular=0|1 course=0|1 "
    "morphology=0|1 reward=<0-4>' line per option.";

}  // namespace prompts

// ---------------------------------------------------------------------------
// Tool-mention matching (selection replies, evaluator feedback)
// ---------------------------------------------------------------------------

struct ToolMention {
  ToolId tool;
  std::size_t position;
};

// Alias occurrences with word-ish boundaries, ordered by first position.
inline std::vector<ToolMention> match_tools_in_text(std::string_view text) {
  std::string lower = to_lower(text);
  auto boundary_ok = [&](std::size_t pos, std::size_t len) {
    bool left = pos == 0 || !std::isalnum(static_cast<unsigned char>(lower[pos - 1]));
    std::size_t end = pos + len;
    bool right = end >= lower.size() ||
                 !std::isalnum(static_cast<unsigned char>(lower[end]));
    return left && right;
  };
  std::vector<ToolMention> mentions;
  for (ToolId id : all_tool_ids()) {
    std::size_t best = std::string::npos;
    for (const auto& alias : tool_aliases(id)) {
      std::string needle = to_lower(alias);
      std::size_t pos = 0;
      while ((pos = lower.find(needle, pos)) != std::string::npos) {
        if (boundary_ok(pos, needle.size())) {
          best = std::min(best, pos);
          break;
        }
        pos += 1;
      }
    }
    if (best != std::string::npos) mentions.push_back({id, best});
  }
  std::sort(mentions.begin(), mentions.end(),
            [](const ToolMention& a, const ToolMention& b) {
              if (a.position != b.position) return a.position < b.position;
              return static_cast<int>(a.tool) < static_cast<int>(b.tool);
            });
  return mentions;
}

// ---------------------------------------------------------------------------
// PLAN block
// ---------------------------------------------------------------------------

struct ParsedPlanEntry {
  std::string name;
  std::string rationale;
};

struct ParsedPlan {
  bool declared_no_tools = false;
  std::string no_tools_reason;
  std::vector<ParsedPlanEntry> entries;
};

inline std::optional<ParsedPlan> parse_plan_reply(const std::string& text) {
  ParsedPlan plan;
  for (const auto& raw : split_lines(text)) {
    std::string line = trim(raw);
    if (line.rfind("NO_TOOLS", 0) == 0) {
      plan.declared_no_tools = true;
      std::size_t colon = line.find(':');
      if (colon != std::string::npos) plan.no_tools_reason = trim(line.substr(colon + 1));
      return plan;
    }
  }
  bool in_block = false;
  bool saw_block = false;
  for (const auto& raw : split_lines(text)) {
    std::string line = trim(raw);
    if (line == "PLAN") {
      in_block = true;
      saw_block = true;
      continue;
    }
    if (!in_block) continue;
    if (line == "END") break;
    if (line.empty()) continue;
    if (line.rfind("- ", 0) != 0) return std::nullopt;
    std::string body = line.substr(2);
    std::size_t colon = body.find(':');
    if (colon == std::string::npos) return std::nullopt;
    ParsedPlanEntry entry;
    entry.name = trim(body.substr(0, colon));
    entry.rationale = trim(body.substr(colon + 1));
    if (entry.name.empty() || entry.rationale.empty()) return std::nullopt;
    plan.entries.push_back(std::move(entry));
  }
  if (!saw_block) return std::nullopt;
  return plan;
}

// ---------------------------------------------------------------------------
// VERDICT block (is_followed is never parsed from a backend; the engine
// computes it from the planned and executed sequences)
// ---------------------------------------------------------------------------

struct ParsedVerdict {
  bool is_correct = false;
  bool is_complete = false;
  std::string feedback;
};

inline std::optional<bool> parse_bool(std::string_view s) {
  std::string v = to_lower(trim(s));
  if (v == "true" || v == "yes") return true;
  if (v == "false" || v == "no") return false;
  return std::nullopt;
}

inline std::optional<ParsedVerdict> parse_verdict_reply(const std::string& text) {
  bool in_block = false;
  bool saw_correct = false, saw_complete = false;
  bool collecting_feedback = false;
  ParsedVerdict v;
  for (const auto& raw : split_lines(text)) {
    std::string line = trim(raw);
    if (line == "VERDICT") {
      in_block = true;
      continue;
    }
    if (!in_block) continue;
    if (line == "END") break;
    if (line.rfind("is_correct:", 0) == 0) {
      auto b = parse_bool(line.substr(11));
      if (!b) return std::nullopt;
      v.is_correct = *b;
      saw_correct = true;
      collecting_feedback = false;
    } else if (line.rfind("is_complete:", 0) == 0) {
      auto b = parse_bool(line.substr(12));
      if (!b) return std::nullopt;
      v.is_complete = *b;
      saw_complete = true;
      collecting_feedback = false;
    } else if (line.rfind("feedback:", 0) == 0) {
      v.feedback = trim(line.substr(9));
      collecting_feedback = true;
    } else if (collecting_feedback && !line.empty()) {
      v.feedback += "\n" + line;
    }
  }
  if (!in_block || !saw_correct || !saw_complete) return std::nullopt;
  return v;
}

// ---------------------------------------------------------------------------
// SCORES block (robustness dialogue)
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& clinical_dimensions() {
  static const std::vector<std::string> dims = {
      "etiology", "anatomical_location", "vascular_involvement",
      "course_or_stage", "lesion_morphology"};
  return dims;
}

// Short keys used on the wire, index-aligned with clinical_dimensions().
inline const std::vector<std::string>& dimension_keys() {
  static const std::vector<std::string> keys = {"etiology", "location", "vascular",
                                                "course", "morphology"};
  return keys;
}

struct OptionScore {
  char letter = 'A';
  std::array<int, 5> dimensions{};  // each 0 or 1
  int reward = 0;

  int matched_dimensions() const {
    int n = 0;
    for (int d : dimensions) n += d;
    return n;
  }
};

// Deterministic dimension->reward mapping used when a reply omits reward=N.
inline int reward_from_dimensions(int matched) {
  double r = 4.0 * static_cast<double>(matched) / 5.0;
  return static_cast<int>(r + 0.5);
}

inline std::optional<std::vector<OptionScore>> parse_scores_reply(
    const std::string& text, const std::vector<char>& letters) {
  bool in_block = false;
  std::vector<OptionScore> scores;
  for (const auto& raw : split_lines(text)) {
    std::string line = trim(raw);
    if (line == "SCORES") {
      in_block = true;
      continue;
    }
    if (!in_block) continue;
    if (line == "END") break;
    if (line.empty()) continue;
    if (line.size() < 2 || line[1] != ':') return std::nullopt;
    OptionScore score;
    score.letter = static_cast<char>(std::toupper(static_cast<unsigned char>(line[0])));
    std::string rest = line.substr(2);
    bool saw_reward = false;
    int seen_dims = 0;
    for (const auto& token : [&] {
           std::vector<std::string> toks;
           std::string cur;
           for (char c : rest) {
             if (std::isspace(static_cast<unsigned char>(c))) {
               if (!cur.empty()) toks.push_back(cur);
               cur.clear();
             } else {
               cur.push_back(c);
             }
           }
           if (!cur.empty()) toks.push_back(cur);
           return toks;
         }()) {
      std::size_t eq = token.find('=');
      if (eq == std::string::npos) return std::nullopt;
      std::string key = token.substr(0, eq);
      std::string value = token.substr(eq + 1);
      if (key == "reward") {
        try {
          score.reward = std::stoi(value);
        } catch (...) {
          return std::nullopt;
        }
        if (score.reward < 0 || score.reward > 4) return std::nullopt;
        saw_reward = true;
        continue;
      }
      const auto& keys = dimension_keys();
      auto it = std::find(keys.begin(), keys.end(), key);
      if (it == keys.end()) return std::nullopt;
      if (value != "0" && value != "1") return std::nullopt;
      score.dimensions[static_cast<std::size_t>(it - keys.begin())] = value == "1" ? 1 : 0;
      ++seen_dims;
    }
    if (seen_dims != 5) return std::nullopt;
    if (!saw_reward) score.reward = reward_from_dimensions(score.matched_dimensions());
    scores.push_back(score);
  }
  if (!in_block) return std::nullopt;
  // every option letter must be covered exactly once, in option order
  if (scores.size() != letters.size()) return std::nullopt;
  for (std::size_t i = 0; i < letters.size(); ++i) {
    if (scores[i].letter != letters[i]) return std::nullopt;
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Prompt builders
// ---------------------------------------------------------------------------

inline std::string render_tool_roster(const ToolRegistry& registry) {
  std::string out;
  for (const auto& d : registry.list()) {
    out += "- ";
    out += tool_name(d.tool_id);
    out += " (";
    bool first = true;
    for (Modality m : d.modalities()) {
      if (!first) out += ", ";
      out += modality_name(m);
      first = false;
    }
    out += "): " + d.description + "\n";
  }
  return out;
}

inline std::vector<ChatMessage> build_selection_messages(
    const std::string& query, const ToolRegistry& registry, const Memory& memory) {
  std::string user = "Query:\n" + query + "\n\nAvailable tools:\n" +
                     render_tool_roster(registry) + "\nMemory so far:\n" +
                     memory.render_text();
  return {{Role::system, prompts::kSelectionSystem, {}}, {Role::user, user, {}}};
}

inline std::vector<ChatMessage> build_planner_messages(
    const std::string& query, const std::string& context,
    const std::vector<ToolId>& candidates, const ToolRegistry& registry,
    const Memory& memory) {
  std::string user = "Query:\n" + query + "\n\nRetrieved context:\n" +
                     (context.empty() ? "(none)" : context) + "\n\nCandidate tools:\n";
  if (candidates.empty()) {
    user += "(none usable for this query)\n";
  } else {
    for (ToolId id : candidates) {
      user += std::string("- ") + tool_name(id) + ": " +
              registry.descriptor(id).description + "\n";
    }
  }
  user += "\nMemory so far:\n" + memory.render_text();
  return {{Role::system, prompts::kPlannerSystem, {}}, {Role::user, user, {}}};
}

inline std::vector<ChatMessage> build_evaluator_messages(
    const std::string& query, const std::vector<ToolInvocation>& results,
    const std::vector<ToolId>& planned, const std::string& context) {
  std::string user = "Query:\n" + query + "\n\nPlanned tool sequence:\n";
  if (planned.empty()) {
    user += "(no tools planned)\n";
  } else {
    for (ToolId id : planned) user += std::string("- ") + tool_name(id) + "\n";
  }
  user += "\nExecuted tool outputs:\n";
  if (results.empty()) {
    user += "(no tool was executed)\n";
  } else {
    for (const auto& inv : results) {
      user += std::string("- ") + tool_name(inv.tool_id) + ": ";
      user += inv.ok() ? render_tool_output(*inv.output) : ("ERROR " + inv.error);
      user.push_back('\n');
    }
  }
  user += "\nRetrieved context:\n" + (context.empty() ? "(none)" : context) + "\n";
  return {{Role::system, prompts::kEvaluatorSystem, {}}, {Role::user, user, {}}};
}

inline std::vector<ChatMessage> build_generator_messages(
    const std::string& query, const std::string& context,
    const std::vector<ToolInvocation>& results, const std::string& answer_directive,
    const std::vector<ImageRef>& images) {
  std::string system = prompts::kGeneratorSystem;
  if (!answer_directive.empty()) system += "\n" + answer_directive;
  std::string user = "Query:\n" + query + "\n\nRetrieved context:\n" +
                     (context.empty() ? "(none)" : context) + "\n\nTool findings:\n";
  if (results.empty()) {
    user += "(none)\n";
  } else {
    for (const auto& inv : results) {
      user += std::string("- ") + tool_name(inv.tool_id) + ": ";
      user += inv.ok() ? render_tool_output(*inv.output) : ("ERROR " + inv.error);
      user.push_back('\n');
    }
  }
  return {{Role::system, system, {}}, {Role::user, user, images}};
}

inline std::vector<ChatMessage> build_rag_synth_messages(const std::string& query,
                                                         const std::string& passages) {
  std::string user = "Query:\n" + query + "\n\nRetrieved passages:\n" + passages;
  return {{Role::system, prompts::kRagSynthSystem, {}}, {Role::user, user, {}}};
}

}  // namespace oculus
