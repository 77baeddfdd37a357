#include <gtest/gtest.h>

#include <random>

#include "oculus/metrics.hpp"
#include "oculus/questions.hpp"
#include "support/test_util.hpp"

using namespace oculus;
using oculus::testing::TempDir;

namespace {

QuestionItem sample_item(const std::string& id, char gold = 'B', int n_options = 4) {
  QuestionItem item;
  item.id = id;
  item.track = Track::A1;
  item.subtype = "categorical";
  item.stem = "Which lesion type dominates this fundus photograph?";
  const char* texts[] = {"hard exudates", "soft exudates", "hemorrhages",
                         "microaneurysms", "drusen"};
  for (int i = 0; i < n_options; ++i) {
    item.options[static_cast<char>('A' + i)] = texts[i];
  }
  item.gold = gold;
  item.source_dataset = "fixture";
  return item;
}

std::string questions_file(const TempDir& dir, const std::vector<QuestionItem>& items,
                           const std::string& name = "questions.jsonl") {
  std::string path = dir.file(name);
  save_questions(items, path);
  return path;
}

// Independent counting oracle for the metric computation.
struct OracleReport {
  double accuracy = 0, macro_p = 0, macro_r = 0, macro_f1 = 0;
};

OracleReport metrics_oracle(const std::vector<Prediction>& preds,
                            const std::map<std::string, char>& golds) {
  OracleReport r;
  if (preds.empty()) return r;
  std::set<char> classes;
  for (const auto& p : preds) classes.insert(golds.at(p.item_id));
  std::size_t correct = 0;
  double sum_p = 0, sum_r = 0, sum_f = 0;
  for (char cls : classes) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& p : preds) {
      char gold = golds.at(p.item_id);
      if (p.extracted == cls && gold == cls) ++tp;
      if (p.extracted == cls && gold != cls) ++fp;
      if (p.extracted != cls && gold == cls) ++fn;
    }
    double precision = (tp + fp) ? double(tp) / double(tp + fp) : 0.0;
    double recall = (tp + fn) ? double(tp) / double(tp + fn) : 0.0;
    double f1 = (precision + recall) > 0 ? 2 * precision * recall / (precision + recall)
                                         : 0.0;
    sum_p += precision;
    sum_r += recall;
    sum_f += f1;
  }
  for (const auto& p : preds) {
    if (p.extracted == golds.at(p.item_id)) ++correct;
  }
  r.accuracy = double(correct) / double(preds.size());
  r.macro_p = sum_p / double(classes.size());
  r.macro_r = sum_r / double(classes.size());
  r.macro_f1 = sum_f / double(classes.size());
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// load_questions
// ---------------------------------------------------------------------------

TEST(LoadQuestions, TenValidItemsPassThrough) {
  TempDir dir;
  std::vector<QuestionItem> items;
  for (int i = 0; i < 10; ++i) items.push_back(sample_item("q" + std::to_string(i)));
  auto loaded = load_questions(questions_file(dir, items));
  ASSERT_EQ(loaded.size(), 10u);
  EXPECT_EQ(loaded[3].id, "q3");
  EXPECT_EQ(loaded[3].gold, 'B');
  EXPECT_EQ(loaded[3].options.size(), 4u);
}

TEST(LoadQuestions, GoldOutsideOptionsNamesTheItem) {
  TempDir dir;
  QuestionItem bad = sample_item("q_bad");
  nlohmann::json j = item_to_json(bad);
  j["gold"] = "E";
  std::string content =
      nlohmann::json{{"schema", kQuestionSchema}, {"version", 1}}.dump() + "\n" +
      j.dump() + "\n";
  std::string path = dir.write("bad.jsonl", content);
  try {
    load_questions(path);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("q_bad"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("gold"), std::string::npos);
  }
}

TEST(LoadQuestions, DuplicateIdReportsBothByteOffsets) {
  TempDir dir;
  std::string header = nlohmann::json{{"schema", kQuestionSchema}, {"version", 1}}.dump();
  std::string line = item_to_json(sample_item("dup")).dump();
  std::string content = header + "\n" + line + "\n" + line + "\n";
  std::string path = dir.write("dup.jsonl", content);
  try {
    load_questions(path);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    std::string what = e.what();
    EXPECT_NE(what.find("duplicate id 'dup'"), std::string::npos);
    std::size_t first_offset = header.size() + 1;
    std::size_t second_offset = first_offset + line.size() + 1;
    EXPECT_NE(what.find(std::to_string(first_offset)), std::string::npos);
    EXPECT_NE(what.find(std::to_string(second_offset)), std::string::npos);
  }
}

TEST(LoadQuestions, UnknownSubtypeRejected) {
  TempDir dir;
  QuestionItem item = sample_item("q1");
  nlohmann::json j = item_to_json(item);
  j["subtype"] = "vibes";
  std::string content =
      nlohmann::json{{"schema", kQuestionSchema}, {"version", 1}}.dump() + "\n" +
      j.dump() + "\n";
  EXPECT_THROW(load_questions(dir.write("q.jsonl", content)), ValidationError);
  // A2 subtype on an A1 track is also invalid
  j["subtype"] = "pathological";
  std::string content2 =
      nlohmann::json{{"schema", kQuestionSchema}, {"version", 1}}.dump() + "\n" +
      j.dump() + "\n";
  EXPECT_THROW(load_questions(dir.write("q2.jsonl", content2)), ValidationError);
}

TEST(LoadQuestions, NonContiguousLettersRejected) {
  TempDir dir;
  nlohmann::json j = item_to_json(sample_item("q1"));
  j["options"] = {{"A", "one"}, {"C", "three"}};
  j["gold"] = "A";
  std::string content =
      nlohmann::json{{"schema", kQuestionSchema}, {"version", 1}}.dump() + "\n" +
      j.dump() + "\n";
  EXPECT_THROW(load_questions(dir.write("q.jsonl", content)), ValidationError);
}

TEST(LoadQuestions, MissingSchemaHeaderRejected) {
  TempDir dir;
  std::string content = item_to_json(sample_item("q1")).dump() + "\n";
  EXPECT_THROW(load_questions(dir.write("q.jsonl", content)), ValidationError);
  EXPECT_THROW(load_questions(dir.write("empty.jsonl", "")), ValidationError);
}

TEST(LoadQuestions, A2ContextRoundTrips) {
  TempDir dir;
  QuestionItem item = sample_item("a2_case", 'A', 3);
  item.track = Track::A2;
  item.subtype = "clinical_decision";
  item.context = "A 61-year-old presents with sudden monocular vision loss.";
  auto loaded = load_questions(questions_file(dir, {item}));
  ASSERT_EQ(loaded.size(), 1u);
  EXPECT_EQ(loaded[0].context, item.context);
  EXPECT_EQ(loaded[0].track, Track::A2);
}

// ---------------------------------------------------------------------------
// render_prompt
// ---------------------------------------------------------------------------

TEST(RenderPrompt, LetteredOptionLines) {
  QuestionItem item = sample_item("q1");
  auto messages = render_prompt(item, PromptTemplate::defaults());
  ASSERT_EQ(messages.size(), 2u);
  EXPECT_EQ(messages[0].role, Role::system);
  const std::string& user = messages[1].content;
  EXPECT_NE(user.find("A. hard exudates\n"), std::string::npos);
  EXPECT_NE(user.find("B. soft exudates\n"), std::string::npos);
  EXPECT_NE(user.find("C. hemorrhages\n"), std::string::npos);
  EXPECT_NE(user.find("D. microaneurysms\n"), std::string::npos);
}

TEST(RenderPrompt, ContextPrecedesStem) {
  QuestionItem item = sample_item("a2", 'A', 3);
  item.track = Track::A2;
  item.subtype = "pathological";
  item.context = "History of poorly controlled diabetes.";
  auto messages = render_prompt(item, PromptTemplate::defaults());
  const std::string& user = messages[1].content;
  std::size_t ctx_pos = user.find("poorly controlled diabetes");
  std::size_t stem_pos = user.find(item.stem);
  ASSERT_NE(ctx_pos, std::string::npos);
  ASSERT_NE(stem_pos, std::string::npos);
  EXPECT_LT(ctx_pos, stem_pos);
}

TEST(RenderPrompt, AttachesExactlyTheItemImages) {
  TempDir dir;
  ImageRef img = oculus::testing::make_image(dir, "q_cfp.png", "IMG-BYTES", "CFP");
  QuestionItem item = sample_item("q_img");
  item.images.push_back({"q_cfp.png", img.sha256});
  auto messages = render_prompt(item, PromptTemplate::defaults(), dir.path());
  ASSERT_EQ(messages[1].attachments.size(), 1u);
  EXPECT_EQ(messages[1].attachments[0].sha256, img.sha256);
}

TEST(RenderPrompt, ImageHashMismatchDetected) {
  TempDir dir;
  oculus::testing::make_image(dir, "q_cfp.png", "IMG-BYTES", "CFP");
  QuestionItem item = sample_item("q_img");
  item.images.push_back({"q_cfp.png", std::string(64, '0')});
  EXPECT_THROW(render_prompt(item, PromptTemplate::defaults(), dir.path()),
               IntegrityError);
}

TEST(PromptTemplate, MissingAnswerDirectiveRejected) {
  EXPECT_THROW(
      PromptTemplate::parse("[system]\nBe helpful.\n[user]\n{{stem}}\n", "inline"),
      ValidationError);
  PromptTemplate ok = PromptTemplate::parse(
      "[system]\nReply with Answer: <LETTER>\n[user]\n{{stem}}\n{{options}}\n", "inline");
  EXPECT_NE(ok.system_text.find("Answer:"), std::string::npos);
}

TEST(PromptTemplate, ShippedTemplateLoads) {
  PromptTemplate tmpl = PromptTemplate::load(std::string(OCULUS_SOURCE_DIR) +
                                             "/data/prompt_template.txt");
  EXPECT_NE(tmpl.system_text.find("Answer:"), std::string::npos);
  EXPECT_NE(tmpl.user_text.find("{{options}}"), std::string::npos);
}

// ---------------------------------------------------------------------------
// extract_answer
// ---------------------------------------------------------------------------

TEST(ExtractAnswer, CanonicalForm) {
  EXPECT_EQ(extract_answer("...reasoning... Answer: C", {'A', 'B', 'C', 'D'}), 'C');
}

TEST(ExtractAnswer, HandLabeledCorpusFullAgreement) {
  std::string corpus = read_file(std::string(OCULUS_FIXTURE_DIR) + "/answers_labeled.tsv");
  std::size_t checked = 0;
  for (const auto& raw_line : split_lines(corpus)) {
    if (raw_line.empty() || raw_line[0] == '#') continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = raw_line.find('\t', start);
      if (tab == std::string::npos) {
        cols.push_back(raw_line.substr(start));
        break;
      }
      cols.push_back(raw_line.substr(start, tab - start));
      start = tab + 1;
    }
    ASSERT_EQ(cols.size(), 3u) << raw_line;
    std::string raw = unescape_record(cols[0]);
    std::vector<char> letters(cols[1].begin(), cols[1].end());
    char expected = cols[2] == "ABSTAIN" ? kAbstain : cols[2][0];
    EXPECT_EQ(extract_answer(raw, letters), expected) << "output: " << raw;
    ++checked;
  }
  EXPECT_EQ(checked, 20u);
}

TEST(ExtractAnswer, RefusalAbstains) {
  EXPECT_EQ(extract_answer("I cannot determine this.", {'A', 'B', 'C', 'D'}), kAbstain);
}

TEST(ExtractAnswer, FallbackCanBeDisabled) {
  EXPECT_EQ(extract_answer("The answer is (b).", {'A', 'B', 'C', 'D'}, true), 'B');
  EXPECT_EQ(extract_answer("The answer is (b).", {'A', 'B', 'C', 'D'}, false), kAbstain);
}

TEST(ExtractAnswer, InvalidLetterSkippedForLaterValidMatch) {
  // the first regex hit is E (invalid here); the second hit wins
  EXPECT_EQ(extract_answer("Answer: E is tempting. Final Answer: B",
                           {'A', 'B', 'C', 'D'}),
            'B');
}

// ---------------------------------------------------------------------------
// compute_metrics
// ---------------------------------------------------------------------------

TEST(ComputeMetrics, PerfectRun) {
  std::vector<Prediction> preds;
  std::map<std::string, char> golds;
  for (int i = 0; i < 12; ++i) {
    std::string id = "q" + std::to_string(i);
    char gold = static_cast<char>('A' + i % 3);
    golds[id] = gold;
    preds.push_back({id, "Answer: " + std::string(1, gold), gold, 0});
  }
  MetricReport r = compute_metrics(preds, golds);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.macro_f1, 1.0);
  EXPECT_DOUBLE_EQ(r.macro_precision, 1.0);
  EXPECT_DOUBLE_EQ(r.macro_recall, 1.0);
  EXPECT_EQ(r.n_abstain, 0u);
}

TEST(ComputeMetrics, ThreeClassConfusionMatchesOracle) {
  // fixed confusion: gold A {A,A,B}, gold B {B,C,C}, gold C {C,ABSTAIN}
  std::vector<Prediction> preds = {
      {"1", "", 'A', 0}, {"2", "", 'A', 0}, {"3", "", 'B', 0},
      {"4", "", 'B', 0}, {"5", "", 'C', 0}, {"6", "", 'C', 0},
      {"7", "", 'C', 0}, {"8", "", kAbstain, 0}};
  std::map<std::string, char> golds = {{"1", 'A'}, {"2", 'A'}, {"3", 'A'}, {"4", 'B'},
                                       {"5", 'B'}, {"6", 'B'}, {"7", 'C'}, {"8", 'C'}};
  MetricReport r = compute_metrics(preds, golds);
  OracleReport oracle = metrics_oracle(preds, golds);
  EXPECT_NEAR(r.accuracy, oracle.accuracy, 1e-12);
  EXPECT_NEAR(r.macro_precision, oracle.macro_p, 1e-12);
  EXPECT_NEAR(r.macro_recall, oracle.macro_r, 1e-12);
  EXPECT_NEAR(r.macro_f1, oracle.macro_f1, 1e-12);
  EXPECT_EQ(r.n_abstain, 1u);
  EXPECT_EQ(r.confusion.at({'A', 'A'}), 2u);
  EXPECT_EQ(r.confusion.at({'A', 'B'}), 1u);
  EXPECT_EQ(r.confusion.at({'C', kAbstain}), 1u);
}

TEST(ComputeMetrics, AllAbstainScoresZero) {
  std::vector<Prediction> preds;
  std::map<std::string, char> golds;
  for (int i = 0; i < 6; ++i) {
    std::string id = "q" + std::to_string(i);
    golds[id] = static_cast<char>('A' + i % 2);
    preds.push_back({id, "no idea", kAbstain, 0});
  }
  MetricReport r = compute_metrics(preds, golds);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.0);
  EXPECT_EQ(r.n_abstain, 6u);
  for (const auto& [cls, scores] : r.per_class) {
    EXPECT_DOUBLE_EQ(scores.recall, 0.0);
    EXPECT_DOUBLE_EQ(scores.precision, 0.0);  // zero predicted positives, not NaN
    EXPECT_DOUBLE_EQ(scores.f1, 0.0);
  }
}

TEST(ComputeMetrics, RandomizedOracleEquivalence) {
  std::mt19937_64 rng(131);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t n_classes = 2 + rng() % 5;  // 2..6
    std::size_t n = 5 + rng() % 60;
    std::vector<Prediction> preds;
    std::map<std::string, char> golds;
    for (std::size_t i = 0; i < n; ++i) {
      std::string id = "t" + std::to_string(trial) + "_" + std::to_string(i);
      golds[id] = static_cast<char>('A' + rng() % n_classes);
      char extracted = (rng() % 5 == 0)
                           ? kAbstain
                           : static_cast<char>('A' + rng() % n_classes);
      preds.push_back({id, "", extracted, 0});
    }
    MetricReport r = compute_metrics(preds, golds);
    OracleReport oracle = metrics_oracle(preds, golds);
    EXPECT_NEAR(r.accuracy, oracle.accuracy, 1e-9);
    EXPECT_NEAR(r.macro_precision, oracle.macro_p, 1e-9);
    EXPECT_NEAR(r.macro_recall, oracle.macro_r, 1e-9);
    EXPECT_NEAR(r.macro_f1, oracle.macro_f1, 1e-9);
    // sanity: accuracy equals trace(confusion)/total
    std::size_t diag = 0;
    for (const auto& [key, count] : r.confusion) {
      if (key.first == key.second) diag += count;
    }
    EXPECT_NEAR(r.accuracy, double(diag) / double(n), 1e-12);
    EXPECT_LE(r.macro_f1, 1.0);
  }
}

TEST(ComputeMetrics, PermutationInvariance) {
  std::mt19937_64 rng(7);
  std::vector<Prediction> preds;
  std::map<std::string, char> golds;
  for (int i = 0; i < 40; ++i) {
    std::string id = "q" + std::to_string(i);
    golds[id] = static_cast<char>('A' + rng() % 4);
    preds.push_back({id, "", static_cast<char>('A' + rng() % 4), 0});
  }
  MetricReport before = compute_metrics(preds, golds);
  for (int i = 0; i < 100; ++i) {
    std::size_t a = rng() % preds.size(), b = rng() % preds.size();
    std::swap(preds[a], preds[b]);
  }
  MetricReport after = compute_metrics(preds, golds);
  EXPECT_EQ(before.to_json().dump(), after.to_json().dump());
}

TEST(ComputeMetrics, MissingGoldRejected) {
  std::vector<Prediction> preds = {{"unknown", "", 'A', 0}};
  EXPECT_THROW(compute_metrics(preds, {}), ValidationError);
}
