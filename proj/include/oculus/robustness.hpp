// Robustness protocol: shuffle option positions, apply curated synonym
// substitution to distractors, grade every option 0-4 along five clinical
// dimensions through a bounded generator-evaluator dialogue, and report
// consistency plus total reward across the original and perturbed runs.

#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "oculus/benchmark.hpp"
#include "oculus/common.hpp"
#include "oculus/gateway.hpp"
#include "oculus/metrics.hpp"
#include "oculus/prompts.hpp"
#include "oculus/questions.hpp"

namespace oculus {

// Curated ophthalmic term pairs; no automatic thesaurus. File format:
// `phrase<TAB>synonym` per line, `#` comments. First matching phrase (file
// order, case-insensitive) wins; at most one substitution per distractor.
class SynonymLexicon {
public:
  static SynonymLexicon from_file(const std::string& path) {
    SynonymLexicon lex;
    std::size_t lineno = 0;
    for (const auto& raw : split_lines(read_file(path))) {
      ++lineno;
      std::string line = trim(raw);
      if (line.empty() || line[0] == '#') continue;
      std::size_t tab = raw.find('\t');
      if (tab == std::string::npos) {
        throw ValidationError(path + ":" + std::to_string(lineno) +
                              ": expected PHRASE<TAB>SYNONYM");
      }
      lex.entries_.emplace_back(trim(raw.substr(0, tab)), trim(raw.substr(tab + 1)));
    }
    return lex;
  }

  static SynonymLexicon from_pairs(
      std::vector<std::pair<std::string, std::string>> pairs) {
    SynonymLexicon lex;
    lex.entries_ = std::move(pairs);
    return lex;
  }

  // Replaces the first matching phrase; nullopt when nothing matches.
  std::optional<std::pair<std::string, std::string>> substitute(
      std::string& text) const {
    for (const auto& [phrase, synonym] : entries_) {
      std::size_t pos = find_ci(text, phrase);
      if (pos == std::string::npos) continue;
      std::string original = text.substr(pos, phrase.size());
      text = text.substr(0, pos) + synonym + text.substr(pos + phrase.size());
      return std::make_pair(original, synonym);
    }
    return std::nullopt;
  }

  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

struct Substitution {
  char letter;  // letter in the perturbed item
  std::string original;
  std::string synonym;
};

struct PerturbedItem {
  std::string base_id;
  QuestionItem item;                 // permuted and substituted question
  std::map<char, char> permutation;  // old letter -> new letter (bijection)
  std::vector<Substitution> substitutions;
  std::uint64_t seed = 0;
};

// Deterministic under seed: Fisher-Yates over the option letters with an
// explicit generator, then at most one lexicon substitution per distractor.
// The gold option's content is never touched; its key maps through the
// permutation.
inline PerturbedItem perturb(const QuestionItem& item, std::uint64_t seed,
                             const SynonymLexicon& lexicon) {
  if (item.options.size() < 2) {
    throw ValidationError("perturb: item '" + item.id + "' needs at least 2 options");
  }
  std::vector<char> letters = item.letters();
  std::size_t n = letters.size();

  // source[i] = index of the original option that lands at position i
  std::vector<std::size_t> source(n);
  for (std::size_t i = 0; i < n; ++i) source[i] = i;
  SplitMix64 rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::size_t j = rng.next_below(i + 1);
    std::swap(source[i], source[j]);
  }

  PerturbedItem result;
  result.base_id = item.id;
  result.seed = seed;
  result.item = item;
  result.item.options.clear();
  for (std::size_t i = 0; i < n; ++i) {
    char new_letter = letters[i];
    char old_letter = letters[source[i]];
    result.permutation[old_letter] = new_letter;
    std::string text = item.options.at(old_letter);
    if (old_letter != item.gold) {
      if (auto sub = lexicon.substitute(text)) {
        result.substitutions.push_back({new_letter, sub->first, sub->second});
      }
    }
    result.item.options[new_letter] = text;
  }
  result.item.gold = result.permutation.at(item.gold);
  return result;
}

// ---------------------------------------------------------------------------
// Reward dialogue
// ---------------------------------------------------------------------------

struct RewardVector {
  std::string item_id;
  std::map<char, int> rewards;                    // per option, 0..4
  std::map<char, std::array<int, 5>> dimensions;  // per option, 5 x {0,1}
  bool converged = false;
  int turns_used = 0;
  bool needs_human = false;
  bool gold_reward_overridden = false;  // dialogue disagreed with reward(gold)=4
};

inline std::string render_item_for_scoring(const QuestionItem& item) {
  std::string out = "Question: " + item.stem + "\n\nOptions:\n" + item.options_text();
  out += "\nCorrect answer: ";
  out.push_back(item.gold);
  out += "\nScore every option.";
  return out;
}

inline std::string render_scores_block(const std::vector<OptionScore>& scores) {
  std::string out = "SCORES\n";
  const auto& keys = dimension_keys();
  for (const auto& s : scores) {
    out.push_back(s.letter);
    out += ":";
    for (std::size_t d = 0; d < keys.size(); ++d) {
      out += " " + keys[d] + "=" + std::to_string(s.dimensions[d]);
    }
    out += " reward=" + std::to_string(s.reward) + "\n";
  }
  out += "END";
  return out;
}

// Alternating generator/evaluator dialogue, capped at max_turns (5). A turn
// is one attempt to obtain an agreeing pair of reward vectors; format
// re-asks burn a turn, so the cap holds with error recovery included.
inline RewardVector score_options(const QuestionItem& item, Gateway& gateway,
                                  const BackendHandle& generator,
                                  const BackendHandle& evaluator, Memory* memory = nullptr,
                                  int max_turns = 5) {
  if (max_turns < 1 || max_turns > 5) {
    throw ValidationError("score_options: max_turns must be in [1,5]");
  }
  std::vector<char> letters = item.letters();
  std::string scenario = render_item_for_scoring(item);

  std::vector<ChatMessage> gen_conv = {
      {Role::system, prompts::kScoreDialogueSystemGenerator, {}},
      {Role::user, scenario, {}}};
  std::vector<ChatMessage> eval_conv = {
      {Role::system, prompts::kScoreDialogueSystemEvaluator, {}},
      {Role::user, scenario, {}}};

  auto log = [&](const char* who, const std::string& text, bool parsed) {
    if (memory) {
      memory->append(event_type::note, {{"kind", "score_dialogue"},
                                        {"who", who},
                                        {"parsed", parsed},
                                        {"text", text}});
    }
  };

  RewardVector result;
  result.item_id = item.id;
  std::optional<std::vector<OptionScore>> last_generator;

  for (int turn = 1; turn <= max_turns; ++turn) {
    result.turns_used = turn;

    Completion gen_reply = gateway.complete(generator, gen_conv);
    auto gen_scores = parse_scores_reply(gen_reply.text, letters);
    log("generator", gen_reply.text, gen_scores.has_value());
    gen_conv.push_back({Role::assistant, gen_reply.text, {}});
    if (!gen_scores) {
      gen_conv.push_back({Role::user, prompts::kScoreFormatReminder, {}});
      continue;
    }
    last_generator = gen_scores;

    std::vector<ChatMessage> eval_ask = eval_conv;
    eval_ask.push_back({Role::user,
                        "Proposal under review:\n" + render_scores_block(*gen_scores) +
                            "\nReply with your own SCORES block.",
                        {}});
    Completion eval_reply = gateway.complete(evaluator, eval_ask);
    auto eval_scores = parse_scores_reply(eval_reply.text, letters);
    log("evaluator", eval_reply.text, eval_scores.has_value());
    if (!eval_scores) {
      eval_conv.push_back({Role::user, prompts::kScoreFormatReminder, {}});
      continue;
    }

    bool agree = true;
    for (std::size_t i = 0; i < letters.size(); ++i) {
      if ((*gen_scores)[i].reward != (*eval_scores)[i].reward) {
        agree = false;
        break;
      }
    }
    if (agree) {
      result.converged = true;
      break;
    }
    // each side sees the other's latest vector before the next turn
    gen_conv.push_back({Role::user,
                        "The evaluator scored differently:\n" +
                            render_scores_block(*eval_scores) +
                            "\nReconsider and reply with a SCORES block.",
                        {}});
    eval_conv.push_back({Role::assistant, eval_reply.text, {}});
  }

  result.needs_human = !result.converged;
  for (char letter : letters) {
    result.rewards[letter] = 0;
    result.dimensions[letter] = {0, 0, 0, 0, 0};
  }
  if (last_generator) {  // converged vector, or last proposal held provisionally
    for (const auto& s : *last_generator) {
      result.rewards[s.letter] = s.reward;
      std::array<int, 5> dims{};
      for (std::size_t d = 0; d < 5; ++d) dims[d] = s.dimensions[d];
      result.dimensions[s.letter] = dims;
    }
  }
  if (result.rewards.at(item.gold) != 4) {
    result.gold_reward_overridden = true;
    result.rewards[item.gold] = 4;
    result.dimensions[item.gold] = {1, 1, 1, 1, 1};
  }
  return result;
}

// ---------------------------------------------------------------------------
// Consistency and total reward
// ---------------------------------------------------------------------------

struct ConsistencyReport {
  std::size_t n_items = 0;
  double acc_before = 0;
  double acc_after = 0;
  double consistency = 0;  // fraction correct in both runs
  long long total_reward_before = 0;
  long long total_reward_after = 0;
  double accuracy_delta_pp = 0;        // percentage points (after - before)
  double accuracy_delta_relative = 0;  // relative change vs before

  nlohmann::json to_json() const {
    return {{"n_items", n_items},
            {"acc_before", acc_before},
            {"acc_after", acc_after},
            {"consistency", consistency},
            {"total_reward_before", total_reward_before},
            {"total_reward_after", total_reward_after},
            {"accuracy_delta_pp", accuracy_delta_pp},
            {"accuracy_delta_relative", accuracy_delta_relative}};
  }
};

// Correctness judged through each run's own key mapping.
inline ConsistencyReport compute_consistency(
    const std::map<std::string, bool>& correct_before,
    const std::map<std::string, bool>& correct_after) {
  if (correct_before.size() != correct_after.size()) {
    throw ValidationError("compute_consistency: run item sets differ in size");
  }
  ConsistencyReport report;
  report.n_items = correct_before.size();
  if (report.n_items == 0) return report;
  std::size_t before_ok = 0, after_ok = 0, both_ok = 0;
  for (const auto& [id, ok_before] : correct_before) {
    auto it = correct_after.find(id);
    if (it == correct_after.end()) {
      throw ValidationError("compute_consistency: item '" + id + "' missing from after-run");
    }
    if (ok_before) ++before_ok;
    if (it->second) ++after_ok;
    if (ok_before && it->second) ++both_ok;
  }
  double n = static_cast<double>(report.n_items);
  report.acc_before = before_ok / n;
  report.acc_after = after_ok / n;
  report.consistency = both_ok / n;
  report.accuracy_delta_pp = (report.acc_after - report.acc_before) * 100.0;
  report.accuracy_delta_relative =
      report.acc_before > 0 ? (report.acc_after - report.acc_before) / report.acc_before
                            : 0.0;
  return report;
}

// Sum of reward(chosen option) over items; ABSTAIN contributes 0.
inline long long total_reward(const std::vector<Prediction>& predictions,
                              const std::map<std::string, RewardVector>& vectors) {
  long long total = 0;
  for (const auto& p : predictions) {
    if (p.extracted == kAbstain) continue;
    auto it = vectors.find(p.item_id);
    if (it == vectors.end()) {
      throw ValidationError("total_reward: no reward vector for answered item '" +
                            p.item_id + "'");
    }
    auto reward = it->second.rewards.find(p.extracted);
    if (reward == it->second.rewards.end()) {
      throw ValidationError("total_reward: option '" + std::string(1, p.extracted) +
                            "' has no reward for item '" + p.item_id + "'");
    }
    total += reward->second;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Full protocol driver
// ---------------------------------------------------------------------------

struct RobustnessOutcome {
  ConsistencyReport report;
  std::vector<Prediction> before_predictions;
  std::vector<Prediction> after_predictions;
  std::vector<PerturbedItem> perturbed;
  std::map<std::string, RewardVector> vectors_before;
  std::map<std::string, RewardVector> vectors_after;
  nlohmann::json adjudication_queue;  // unconverged dialogues for a clinician
};

inline std::uint64_t item_seed(std::uint64_t run_seed, const std::string& item_id) {
  return fnv1a64(item_id, fnv1a64(std::to_string(run_seed)));
}

inline RobustnessOutcome run_robustness(
    const std::vector<QuestionItem>& items, const Config& cfg, std::uint64_t seed,
    const std::string& question_dir = {}, RunRecordWriter* writer = nullptr,
    std::shared_ptr<ChatTransport> transport = nullptr) {
  if (cfg.robustness.lexicon_path.empty()) {
    throw ValidationError("robust run requires robustness.lexicon in config");
  }
  SynonymLexicon lexicon = SynonymLexicon::from_file(cfg.robustness.lexicon_path);
  PipelineRunner runner(cfg, transport);
  BackendHandle generator = runner.handle("generator");
  BackendHandle evaluator = runner.handle("evaluator");

  RobustnessOutcome outcome;
  outcome.adjudication_queue = nlohmann::json::array();

  auto grade = [&](const std::vector<QuestionItem>& phase_items, const char* phase,
                   std::vector<Prediction>& predictions,
                   std::map<std::string, RewardVector>& vectors) {
    for (const auto& item : phase_items) {
      ItemRun run = runner.run_item(item, question_dir);
      for (auto& e : run.events) {
        e.data["phase"] = phase;
        if (writer) writer->append(e);
      }
      predictions.push_back(run.prediction);

      Memory dialogue_mem;
      RewardVector vec = score_options(item, runner.gateway(), generator, evaluator,
                                       &dialogue_mem, cfg.robustness.max_turns);
      if (writer) {
        nlohmann::json rewards = nlohmann::json::object();
        for (const auto& [letter, r] : vec.rewards) rewards[std::string(1, letter)] = r;
        Event e;
        e.type = event_type::note;
        e.item_id = item.id;
        e.data = {{"kind", "reward_vector"},
                  {"phase", phase},
                  {"rewards", rewards},
                  {"converged", vec.converged},
                  {"turns_used", vec.turns_used},
                  {"needs_human", vec.needs_human}};
        writer->append(e);
      }
      if (vec.needs_human) {
        nlohmann::json rewards = nlohmann::json::object();
        for (const auto& [letter, r] : vec.rewards) rewards[std::string(1, letter)] = r;
        outcome.adjudication_queue.push_back({{"item_id", item.id},
                                              {"phase", phase},
                                              {"turns_used", vec.turns_used},
                                              {"provisional_rewards", rewards}});
      }
      vectors[item.id] = std::move(vec);
    }
  };

  grade(items, "before", outcome.before_predictions, outcome.vectors_before);

  std::vector<QuestionItem> perturbed_items;
  for (const auto& item : items) {
    PerturbedItem p = perturb(item, item_seed(seed, item.id), lexicon);
    if (writer) {
      nlohmann::json perm = nlohmann::json::object();
      for (const auto& [from, to] : p.permutation) {
        perm[std::string(1, from)] = std::string(1, to);
      }
      nlohmann::json subs = nlohmann::json::array();
      for (const auto& s : p.substitutions) {
        subs.push_back({{"letter", std::string(1, s.letter)},
                        {"original", s.original},
                        {"synonym", s.synonym}});
      }
      Event e;
      e.type = event_type::note;
      e.item_id = item.id;
      e.data = {{"kind", "perturbation"},
                {"seed", p.seed},
                {"permutation", perm},
                {"substitutions", subs},
                {"gold", std::string(1, p.item.gold)}};
      writer->append(e);
    }
    perturbed_items.push_back(p.item);
    outcome.perturbed.push_back(std::move(p));
  }

  grade(perturbed_items, "after", outcome.after_predictions, outcome.vectors_after);

  std::map<std::string, bool> correct_before, correct_after;
  std::map<std::string, char> gold_before, gold_after;
  for (const auto& item : items) gold_before[item.id] = item.gold;
  for (const auto& item : perturbed_items) gold_after[item.id] = item.gold;
  for (const auto& p : outcome.before_predictions) {
    correct_before[p.item_id] = p.extracted == gold_before.at(p.item_id);
  }
  for (const auto& p : outcome.after_predictions) {
    correct_after[p.item_id] = p.extracted == gold_after.at(p.item_id);
  }
  outcome.report = compute_consistency(correct_before, correct_after);
  outcome.report.total_reward_before =
      total_reward(outcome.before_predictions, outcome.vectors_before);
  outcome.report.total_reward_after =
      total_reward(outcome.after_predictions, outcome.vectors_after);

  if (writer) {
    Event e;
    e.type = event_type::metrics;
    e.data = outcome.report.to_json();
    writer->append(e);
  }
  return outcome;
}

}  // namespace oculus
