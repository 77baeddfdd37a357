// Answer extraction (regular-expression matching over model output) and
// classification metrics (per-class and macro F1 / Precision / Recall,
// Accuracy, confusion counts).

#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oculus/common.hpp"

namespace oculus {

// ABSTAIN: no valid option letter could be extracted; scored incorrect.
inline constexpr char kAbstain = '?';

struct Prediction {
  std::string item_id;
  std::string raw_text;
  char extracted = kAbstain;  // option letter or kAbstain
  std::int64_t latency_ms = 0;
};

// Primary pattern: first `Answer: <LETTER>` (case-insensitive) whose letter
// is valid. Fallback (when enabled): a standalone letter on the final
// non-empty line — a lone lowercase 'a' needs adjacent punctuation so the
// English article does not read as an answer.
inline char extract_answer(const std::string& raw_text,
                           const std::vector<char>& valid_letters,
                           bool fallback = true) {
  if (valid_letters.empty()) throw ValidationError("extract_answer: no valid letters");
  auto is_valid = [&](char c) {
    char upper = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (char v : valid_letters) {
      if (std::toupper(static_cast<unsigned char>(v)) == upper) return upper;
    }
    return '\0';
  };

  static const std::regex answer_re("answer:\\s*([A-Ea-e])",
                                    std::regex::icase | std::regex::optimize);
  for (auto it = std::sregex_iterator(raw_text.begin(), raw_text.end(), answer_re);
       it != std::sregex_iterator(); ++it) {
    if (char v = is_valid((*it)[1].str()[0])) return v;
  }

  if (!fallback) return kAbstain;

  std::string last_line;
  for (const auto& line : split_lines(raw_text)) {
    std::string t = trim(line);
    if (!t.empty()) last_line = t;
  }
  for (std::size_t i = 0; i < last_line.size(); ++i) {
    char c = last_line[i];
    char upper = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (upper < 'A' || upper > 'E') continue;
    // apostrophes guard contractions ("I'd", "we'd") from reading as answers
    bool left_ok = i == 0 || (!std::isalnum(static_cast<unsigned char>(last_line[i - 1])) &&
                              last_line[i - 1] != '\'');
    bool right_ok = i + 1 >= last_line.size() ||
                    !std::isalnum(static_cast<unsigned char>(last_line[i + 1]));
    if (!left_ok || !right_ok) continue;
    if (c == 'a') {
      bool punct_left = i > 0 && last_line[i - 1] == '(';
      bool punct_right = i + 1 < last_line.size() &&
                         (last_line[i + 1] == ')' || last_line[i + 1] == '.' ||
                          last_line[i + 1] == ':');
      if (!punct_left && !punct_right) continue;
    }
    if (char v = is_valid(c)) return v;
  }
  return kAbstain;
}

struct ClassScores {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

struct MetricReport {
  std::map<char, ClassScores> per_class;  // over classes present in golds
  double macro_precision = 0;
  double macro_recall = 0;
  double macro_f1 = 0;
  double accuracy = 0;
  std::map<std::pair<char, char>, std::size_t> confusion;  // (gold, predicted)
  std::size_t n_abstain = 0;
  std::size_t total = 0;

  nlohmann::json to_json() const {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [letter, s] : per_class) {
      per[std::string(1, letter)] = {{"precision", s.precision},
                                     {"recall", s.recall},
                                     {"f1", s.f1}};
    }
    nlohmann::json conf = nlohmann::json::array();
    for (const auto& [key, count] : confusion) {
      conf.push_back({{"gold", std::string(1, key.first)},
                      {"predicted", std::string(1, key.second)},
                      {"count", count}});
    }
    return {{"per_class", per},
            {"macro_precision", macro_precision},
            {"macro_recall", macro_recall},
            {"macro_f1", macro_f1},
            {"accuracy", accuracy},
            {"confusion", conf},
            {"n_abstain", n_abstain},
            {"total", total}};
  }
};

// Confusion by (gold, extracted); ABSTAIN is a distinct wrong prediction
// class; macro scores average over the gold classes only; a class nobody
// predicted gets precision 0 rather than NaN.
inline MetricReport compute_metrics(const std::vector<Prediction>& predictions,
                                    const std::map<std::string, char>& golds) {
  MetricReport report;
  report.total = predictions.size();
  std::map<char, std::size_t> gold_count, predicted_count, true_positive;
  for (const auto& p : predictions) {
    auto it = golds.find(p.item_id);
    if (it == golds.end()) {
      throw ValidationError("no gold for prediction '" + p.item_id + "'");
    }
    char gold = it->second;
    ++report.confusion[{gold, p.extracted}];
    ++gold_count[gold];
    if (p.extracted == kAbstain) {
      ++report.n_abstain;
    } else {
      ++predicted_count[p.extracted];
    }
    if (p.extracted == gold) ++true_positive[gold];
  }
  if (report.total == 0) return report;

  std::size_t correct = 0;
  for (const auto& [gold, n] : true_positive) correct += n;
  report.accuracy = static_cast<double>(correct) / static_cast<double>(report.total);

  for (const auto& [cls, n_gold] : gold_count) {
    ClassScores s;
    std::size_t tp = true_positive.count(cls) ? true_positive[cls] : 0;
    std::size_t n_pred = predicted_count.count(cls) ? predicted_count[cls] : 0;
    s.precision = n_pred ? static_cast<double>(tp) / static_cast<double>(n_pred) : 0.0;
    s.recall = static_cast<double>(tp) / static_cast<double>(n_gold);
    s.f1 = (s.precision + s.recall) > 0
               ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
               : 0.0;
    report.per_class[cls] = s;
    report.macro_precision += s.precision;
    report.macro_recall += s.recall;
    report.macro_f1 += s.f1;
  }
  double n_classes = static_cast<double>(report.per_class.size());
  report.macro_precision /= n_classes;
  report.macro_recall /= n_classes;
  report.macro_f1 /= n_classes;
  return report;
}

}  // namespace oculus
