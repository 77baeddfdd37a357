// Question sets: the A1/A2 multiple-choice schema, loading/validation, and
// prompt rendering from an editable template.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oculus/chat.hpp"
#include "oculus/common.hpp"

namespace oculus {

enum class Track { A1, A2 };

inline const char* track_name(Track t) { return t == Track::A1 ? "A1" : "A2"; }

// A1 = visual-understanding error types; A2 = logical-composition levels.
inline const std::vector<std::string>& subtypes_for(Track t) {
  static const std::vector<std::string> a1 = {"numerical", "categorical", "positional",
                                              "diagnosis_type", "stage_level"};
  static const std::vector<std::string> a2 = {"instance", "pathological",
                                              "clinical_decision"};
  return t == Track::A1 ? a1 : a2;
}

struct QuestionImage {
  std::string path;    // relative to the question file
  std::string sha256;  // optional content pin
};

struct QuestionItem {
  std::string id;
  Track track = Track::A1;
  std::string subtype;
  std::string stem;
  std::map<char, std::string> options;  // contiguous letters from 'A'
  char gold = 'A';
  std::vector<QuestionImage> images;
  std::string source_dataset;
  std::string context;  // case history; A2 only in practice

  std::vector<char> letters() const {
    std::vector<char> out;
    for (const auto& [letter, _] : options) out.push_back(letter);
    return out;
  }

  std::string options_text() const {
    std::string out;
    for (const auto& [letter, text] : options) {
      out.push_back(letter);
      out += ". " + text + "\n";
    }
    return out;
  }
};

inline void validate_item(const QuestionItem& item) {
  auto fail = [&](const std::string& why) {
    throw ValidationError("question '" + item.id + "': " + why);
  };
  if (item.id.empty()) throw ValidationError("question with empty id");
  if (item.stem.empty()) fail("empty stem");
  if (item.options.size() < 2 || item.options.size() > 5) {
    fail("needs 2-5 options, has " + std::to_string(item.options.size()));
  }
  char expected = 'A';
  for (const auto& [letter, text] : item.options) {
    if (letter != expected) fail("option letters must be contiguous from 'A'");
    if (text.empty()) fail(std::string("option ") + letter + " is empty");
    ++expected;
  }
  if (!item.options.count(item.gold)) {
    fail(std::string("gold '") + item.gold + "' not among options");
  }
  const auto& subtypes = subtypes_for(item.track);
  if (std::find(subtypes.begin(), subtypes.end(), item.subtype) == subtypes.end()) {
    fail("unknown subtype '" + item.subtype + "' for track " + track_name(item.track));
  }
}

inline nlohmann::json item_to_json(const QuestionItem& item) {
  nlohmann::json j;
  j["id"] = item.id;
  j["track"] = track_name(item.track);
  j["subtype"] = item.subtype;
  j["stem"] = item.stem;
  nlohmann::json opts = nlohmann::json::object();
  for (const auto& [letter, text] : item.options) opts[std::string(1, letter)] = text;
  j["options"] = opts;
  j["gold"] = std::string(1, item.gold);
  if (!item.images.empty()) {
    nlohmann::json images = nlohmann::json::array();
    for (const auto& img : item.images) {
      nlohmann::json e{{"path", img.path}};
      if (!img.sha256.empty()) e["sha256"] = img.sha256;
      images.push_back(e);
    }
    j["images"] = images;
  }
  if (!item.source_dataset.empty()) j["source_dataset"] = item.source_dataset;
  if (!item.context.empty()) j["context"] = item.context;
  return j;
}

inline QuestionItem item_from_json(const nlohmann::json& j) {
  QuestionItem item;
  item.id = j.at("id").get<std::string>();
  std::string track = j.at("track").get<std::string>();
  if (track == "A1") {
    item.track = Track::A1;
  } else if (track == "A2") {
    item.track = Track::A2;
  } else {
    throw ValidationError("question '" + item.id + "': unknown track '" + track + "'");
  }
  item.subtype = j.at("subtype").get<std::string>();
  item.stem = j.at("stem").get<std::string>();
  for (auto it = j.at("options").begin(); it != j.at("options").end(); ++it) {
    std::string key = it.key();
    if (key.size() != 1) {
      throw ValidationError("question '" + item.id + "': bad option key '" + key + "'");
    }
    item.options[key[0]] = it.value().get<std::string>();
  }
  std::string gold = j.at("gold").get<std::string>();
  if (gold.size() != 1) {
    throw ValidationError("question '" + item.id + "': gold must be a single letter");
  }
  item.gold = gold[0];
  if (j.contains("images")) {
    for (const auto& e : j["images"]) {
      if (e.is_string()) {
        item.images.push_back({e.get<std::string>(), ""});
      } else {
        item.images.push_back({e.at("path").get<std::string>(), e.value("sha256", "")});
      }
    }
  }
  item.source_dataset = j.value("source_dataset", "");
  item.context = j.value("context", "");
  validate_item(item);
  return item;
}

inline constexpr const char* kQuestionSchema = "oculus-questions";
inline constexpr int kQuestionSchemaVersion = 1;

// Question file: JSONL with a schema-version header line, then one item per
// line. Duplicate ids are rejected with the byte offsets of both records.
inline std::vector<QuestionItem> load_questions(const std::string& path) {
  std::string text = read_file(path);
  std::vector<QuestionItem> items;
  std::map<std::string, std::size_t> offsets;
  std::size_t offset = 0;
  bool header_seen = false;
  for (const auto& line : split_lines(text)) {
    std::size_t line_offset = offset;
    offset += line.size() + 1;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    nlohmann::json j = nlohmann::json::parse(t, nullptr, false);
    if (j.is_discarded()) {
      throw ValidationError(path + ": bad JSON at byte " + std::to_string(line_offset));
    }
    if (!header_seen) {
      if (!j.contains("schema") || j["schema"] != kQuestionSchema) {
        throw ValidationError(path + ": missing schema header");
      }
      if (j.value("version", 0) != kQuestionSchemaVersion) {
        throw ValidationError(path + ": unsupported schema version");
      }
      header_seen = true;
      continue;
    }
    QuestionItem item = item_from_json(j);
    auto [it, inserted] = offsets.emplace(item.id, line_offset);
    if (!inserted) {
      throw ValidationError(path + ": duplicate id '" + item.id + "' at bytes " +
                            std::to_string(it->second) + " and " +
                            std::to_string(line_offset));
    }
    items.push_back(std::move(item));
  }
  if (!header_seen) throw ValidationError(path + ": missing schema header");
  return items;
}

inline void save_questions(const std::vector<QuestionItem>& items,
                           const std::string& path) {
  nlohmann::json header{{"schema", kQuestionSchema}, {"version", kQuestionSchemaVersion}};
  std::string out = header.dump() + "\n";
  for (const auto& item : items) out += item_to_json(item).dump() + "\n";
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// Prompt template: a [system] section (clinical persona plus the mandatory
// machine-readable `Answer: <LETTER>` directive) and a [user] section with
// {{context}}, {{stem}} and {{options}} placeholders.
// ---------------------------------------------------------------------------

inline constexpr const char* kAnswerDirectiveToken = "Answer:";

struct PromptTemplate {
  std::string system_text;
  std::string user_text;

  static PromptTemplate defaults() {
    PromptTemplate t;
    t.system_text =
        "You are a senior clinical ophthalmology expert. Answer the "
        "multiple-choice question using the provided images and context. "
        "Reason carefully, then finish with one line in exactly this format:\n"
        "Answer: <LETTER>";
    t.user_text = "{{context}}Question: {{stem}}\n\nOptions:\n{{options}}";
    return t;
  }

  static PromptTemplate parse(const std::string& text, const std::string& origin) {
    PromptTemplate t;
    std::string* section = nullptr;
    for (const auto& line : split_lines(text)) {
      std::string marker = trim(line);
      if (marker == "[system]") {
        section = &t.system_text;
        continue;
      }
      if (marker == "[user]") {
        section = &t.user_text;
        continue;
      }
      if (section) {
        *section += line;
        section->push_back('\n');
      }
    }
    t.system_text = trim(t.system_text);
    t.user_text = trim(t.user_text);
    if (t.system_text.empty() || t.user_text.empty()) {
      throw ValidationError(origin + ": template needs [system] and [user] sections");
    }
    if (t.system_text.find(kAnswerDirectiveToken) == std::string::npos) {
      throw ValidationError(origin + ": template missing the answer-format directive '" +
                            std::string(kAnswerDirectiveToken) + "'");
    }
    return t;
  }

  static PromptTemplate load(const std::string& path) {
    return parse(read_file(path), path);
  }
};

inline std::string replace_all(std::string text, const std::string& token,
                               const std::string& value) {
  std::size_t pos = 0;
  while ((pos = text.find(token, pos)) != std::string::npos) {
    text.replace(pos, token.size(), value);
    pos += value.size();
  }
  return text;
}

// System message carries the persona and answer directive; the user message
// is context (when present) preceding the stem and the lettered options,
// with the item's images attached.
inline std::vector<ChatMessage> render_prompt(const QuestionItem& item,
                                              const PromptTemplate& tmpl,
                                              const std::string& question_dir = {},
                                              const std::string& extra_context = {}) {
  std::string context_block;
  if (!item.context.empty()) context_block += "Case history: " + item.context + "\n\n";
  if (!extra_context.empty()) context_block += "Clinical context: " + extra_context + "\n\n";
  std::string user = replace_all(tmpl.user_text, "{{context}}", context_block);
  user = replace_all(user, "{{stem}}", item.stem);
  user = replace_all(user, "{{options}}", item.options_text());
  ChatMessage user_msg{Role::user, user, {}};
  for (const auto& img : item.images) {
    std::string path = img.path;
    if (!question_dir.empty() && !path.empty() && path[0] != '/') {
      path = question_dir + "/" + path;
    }
    user_msg.attachments.push_back(ImageRef::from_file(path, img.sha256));
  }
  return {{Role::system, tmpl.system_text, {}}, std::move(user_msg)};
}

}  // namespace oculus
