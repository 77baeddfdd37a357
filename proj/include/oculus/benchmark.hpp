// Benchmark runner: answers question sets through whichever pipeline stages
// the config enables (bare backend, +RAG, +tools, +decision, +evaluation),
// extracts answers, and aggregates metrics per subtype in the two-block
// layout of the A1/A2 result tables.

#pragma once

#include <atomic>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "oculus/config.hpp"
#include "oculus/metrics.hpp"
#include "oculus/orchestrator.hpp"
#include "oculus/questions.hpp"
#include "oculus/trace.hpp"

namespace oculus {

struct ItemRun {
  Prediction prediction;
  std::vector<Event> events;
};

// Builds the gateway, registry, index and template once; items can then be
// answered concurrently (gateway cache access is atomic per key, everything
// else is immutable).
class PipelineRunner {
public:
  explicit PipelineRunner(const Config& cfg,
                          std::shared_ptr<ChatTransport> transport = nullptr)
      : cfg_(cfg),
        gateway_(transport),
        embedder_(cfg.rag.embedder_dim),
        labels_(load_label_sets(cfg)),
        registry_(build_registry(cfg)),
        template_(PromptTemplate::defaults()),
        transport_(std::move(transport)) {
    for (const auto& [role, profile] : cfg_.backends) {
      handles_[role] = gateway_.register_backend(profile);
    }
    if (!cfg_.harness.prompt_template_path.empty()) {
      template_ = PromptTemplate::load(cfg_.harness.prompt_template_path);
    }
    if (cfg_.enabled(Stage::rag)) {
      if (cfg_.rag.index_path.empty() || !file_exists(cfg_.rag.index_path)) {
        throw ValidationError("rag enabled but index not found: " + cfg_.rag.index_path);
      }
      index_ = load_index(cfg_.rag.index_path);
      if (index_->dimension != embedder_.dimension() ||
          index_->embedder_id != embedder_.id()) {
        throw ValidationError("index was built with embedder '" + index_->embedder_id +
                              "', config expects '" + embedder_.id() + "'");
      }
    }
  }

  Gateway& gateway() { return gateway_; }
  const Config& config() const { return cfg_; }
  const PromptTemplate& prompt_template() const { return template_; }
  const ToolRegistry& registry() const { return registry_; }

  BackendHandle handle(const std::string& role) const {
    auto it = handles_.find(role);
    if (it == handles_.end()) {
      throw ValidationError("config missing backend role '" + role + "'");
    }
    return it->second;
  }

  bool has_role(const std::string& role) const { return handles_.count(role) != 0; }

  // Wiring for a full orchestrator session against this runner's state.
  // Valid while the runner is alive.
  SessionDeps session_deps() {
    SessionDeps deps;
    deps.gateway = &gateway_;
    deps.registry = &registry_;
    deps.labels = &labels_;
    deps.tool_transport = transport_;
    if (index_) {
      deps.index = &*index_;
      deps.embedder = &embedder_;
    }
    if (has_role("planner")) deps.planner = handle("planner");
    if (has_role("evaluator")) deps.evaluator = handle("evaluator");
    if (has_role("generator")) deps.generator = handle("generator");
    if (has_role("rag_synth")) deps.rag_synth = handle("rag_synth");
    return deps;
  }

  SessionOptions session_options() const {
    SessionOptions opts;
    opts.retry_limit = cfg_.retry_limit;
    opts.rag_enabled = cfg_.enabled(Stage::rag) && index_.has_value();
    opts.rag_k = cfg_.rag.k;
    return opts;
  }

  ItemRun run_item(const QuestionItem& item, const std::string& question_dir) {
    std::int64_t started = now_ms();
    ItemRun run;
    run.prediction.item_id = item.id;
    try {
      run = answer(item, question_dir);
    } catch (const std::exception& e) {
      Memory mem;
      mem.append(event_type::error, {{"message", e.what()}});
      run.events = mem.events();
      run.prediction.item_id = item.id;
      run.prediction.raw_text = std::string("[pipeline error] ") + e.what();
      run.prediction.extracted = kAbstain;
    }
    run.prediction.latency_ms = std::max<std::int64_t>(0, now_ms() - started);
    // every item leaves a prediction event, errored or not, so re-scoring a
    // trace always sees the full item set
    Event prediction;
    prediction.type = event_type::prediction;
    prediction.data = {{"extracted", std::string(1, run.prediction.extracted)},
                       {"gold", std::string(1, item.gold)},
                       {"subtype", item.subtype},
                       {"track", track_name(item.track)},
                       {"raw", run.prediction.raw_text}};
    run.events.push_back(std::move(prediction));
    for (auto& e : run.events) e.item_id = item.id;
    return run;
  }

private:
  ItemRun answer(const QuestionItem& item, const std::string& question_dir) {
    ItemRun run;
    run.prediction.item_id = item.id;

    std::vector<ChatMessage> rendered = render_prompt(item, template_, question_dir);
    const std::string& question_text = rendered.back().content;

    std::vector<ImageInput> images;
    for (const auto& img : item.images) {
      std::string path = img.path;
      if (!question_dir.empty() && !path.empty() && path[0] != '/') {
        path = question_dir + "/" + path;
      }
      images.push_back({path, img.sha256});
    }

    SessionDeps deps = session_deps();
    SessionOptions opts = session_options();
    opts.answer_directive = template_.system_text;

    std::string raw;
    if (cfg_.enabled(Stage::evaluation)) {
      // full loop: plan, execute, validate, self-correct
      Session session(deps, opts);
      FinalResponse response = session.run(question_text, images);
      raw = response.text;
      run.events = session.memory().events();
    } else {
      Session session(deps, opts);
      bool tools_on = cfg_.enabled(Stage::tools);
      session.observe(question_text, tools_on ? images : std::vector<ImageInput>{});
      session.retrieve_context();
      if (tools_on) {
        if (cfg_.enabled(Stage::decision)) {
          std::vector<ToolId> candidates = session.select_candidates();
          PlannedWorkflow plan = session.decide_workflow(candidates);
          (void)plan;
        } else {
          session.set_static_plan(cfg_.tools.static_plan);
        }
        session.execute_workflow();
      }
      std::vector<ChatMessage> prompt =
          render_prompt(item, template_, question_dir, session.context_text());
      if (!session.results().empty()) {
        std::string findings = "\n\nTool findings:\n";
        for (const auto& inv : session.results()) {
          findings += std::string("- ") + tool_name(inv.tool_id) + ": ";
          findings += inv.ok() ? render_tool_output(*inv.output) : ("ERROR " + inv.error);
          findings.push_back('\n');
        }
        prompt.back().content += findings;
      }
      Completion completion =
          session.complete_and_log(handle("answerer"), prompt);
      raw = completion.text;
      run.events = session.memory().events();
    }

    run.prediction.raw_text = raw;
    run.prediction.extracted =
        extract_answer(raw, item.letters(), cfg_.harness.regex_fallback);
    return run;
  }

  Config cfg_;
  Gateway gateway_;
  HashingEmbedder embedder_;
  LabelSets labels_;
  ToolRegistry registry_;
  PromptTemplate template_;
  std::optional<VectorIndex> index_;
  std::shared_ptr<ChatTransport> transport_;
  std::map<std::string, BackendHandle> handles_;
};

struct BenchmarkOutcome {
  std::vector<Prediction> predictions;  // item order
  MetricReport overall;
  std::map<std::string, MetricReport> by_subtype;
  std::string report_text;
  nlohmann::json report_json;
};

// The subtype rows of the two result blocks, in table order.
inline const std::vector<std::pair<std::string, std::string>>& a1_row_layout() {
  static const std::vector<std::pair<std::string, std::string>> rows = {
      {"categorical", "Instance level / Cat-E"},
      {"positional", "Instance level / Pos-E"},
      {"numerical", "Instance level / Num-E"},
      {"diagnosis_type", "Pathological level / Diag-E"},
      {"stage_level", "Pathological level / Sta-E"}};
  return rows;
}

inline const std::vector<std::pair<std::string, std::string>>& a2_row_layout() {
  static const std::vector<std::pair<std::string, std::string>> rows = {
      {"instance", "Instance level"},
      {"pathological", "Pathological level"},
      {"clinical_decision", "Clinical Decision level"}};
  return rows;
}

inline std::string render_report_table(
    const MetricReport& overall,
    const std::map<std::string, MetricReport>& by_subtype) {
  auto row = [](const std::string& label, const MetricReport& m) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "  %-28s %5zu  %6.3f  %6.3f  %6.3f  %6.3f  %5zu\n",
                  label.c_str(), m.total, m.macro_f1, m.macro_precision, m.macro_recall,
                  m.accuracy, m.n_abstain);
    return std::string(buf);
  };
  std::string out;
  const char* header =
      "  subtype                          n      F1     Pre     Rec     Acc  abst\n";
  bool any_a1 = false, any_a2 = false;
  for (const auto& [subtype, label] : a1_row_layout()) {
    if (by_subtype.count(subtype)) any_a1 = true;
  }
  for (const auto& [subtype, label] : a2_row_layout()) {
    if (by_subtype.count(subtype)) any_a2 = true;
  }
  if (any_a1) {
    out += "== A1: Visual Understanding ==\n";
    out += header;
    for (const auto& [subtype, label] : a1_row_layout()) {
      auto it = by_subtype.find(subtype);
      if (it != by_subtype.end()) out += row(label, it->second);
    }
  }
  if (any_a2) {
    out += "== A2: Logical Composition ==\n";
    out += header;
    for (const auto& [subtype, label] : a2_row_layout()) {
      auto it = by_subtype.find(subtype);
      if (it != by_subtype.end()) out += row(label, it->second);
    }
  }
  out += "== Overall ==\n";
  out += header;
  out += row("all", overall);
  return out;
}

inline BenchmarkOutcome score_predictions(const std::vector<Prediction>& predictions,
                                          const std::vector<QuestionItem>& items) {
  std::map<std::string, char> golds;
  std::map<std::string, std::string> subtype_of;
  for (const auto& item : items) {
    golds[item.id] = item.gold;
    subtype_of[item.id] = item.subtype;
  }
  BenchmarkOutcome outcome;
  outcome.predictions = predictions;
  outcome.overall = compute_metrics(predictions, golds);
  std::map<std::string, std::vector<Prediction>> grouped;
  for (const auto& p : predictions) grouped[subtype_of.at(p.item_id)].push_back(p);
  for (const auto& [subtype, preds] : grouped) {
    outcome.by_subtype[subtype] = compute_metrics(preds, golds);
  }
  outcome.report_text = render_report_table(outcome.overall, outcome.by_subtype);
  nlohmann::json by = nlohmann::json::object();
  for (const auto& [subtype, m] : outcome.by_subtype) by[subtype] = m.to_json();
  outcome.report_json = {{"overall", outcome.overall.to_json()},
                         {"by_subtype", by},
                         {"n_items", predictions.size()}};
  return outcome;
}

inline BenchmarkOutcome run_benchmark(const std::vector<QuestionItem>& items,
                                      const Config& cfg,
                                      const std::string& question_dir = {},
                                      RunRecordWriter* writer = nullptr,
                                      std::shared_ptr<ChatTransport> transport = nullptr) {
  if (!cfg.backends.count("answerer") && !cfg.enabled(Stage::evaluation)) {
    throw ValidationError("benchmark requires an 'answerer' backend role "
                          "(or the evaluation stage with a generator)");
  }
  PipelineRunner runner(cfg, std::move(transport));

  std::vector<ItemRun> runs(items.size());
  std::atomic<std::size_t> next{0};
  int workers = std::max(1, std::min<int>(cfg.harness.parallelism,
                                          static_cast<int>(items.size())));
  auto work = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= items.size()) break;
      runs[i] = runner.run_item(items[i], question_dir);
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  std::vector<Prediction> predictions;
  predictions.reserve(items.size());
  for (auto& run : runs) predictions.push_back(run.prediction);
  BenchmarkOutcome outcome = score_predictions(predictions, items);

  if (writer) {
    for (const auto& run : runs) {
      for (const auto& e : run.events) writer->append(e);
    }
    Event metrics_event;
    metrics_event.type = event_type::metrics;
    metrics_event.data = outcome.report_json;
    writer->append(metrics_event);
  }
  return outcome;
}

// Re-scores a persisted benchmark trace from its prediction events alone.
inline BenchmarkOutcome rescore_run_record(const RunRecord& record) {
  std::vector<Prediction> predictions;
  std::vector<QuestionItem> shadow_items;
  for (const auto& e : record.events) {
    if (e.type != event_type::prediction) continue;
    Prediction p;
    p.item_id = e.item_id;
    p.raw_text = e.data.value("raw", "");
    std::string extracted = e.data.value("extracted", "?");
    p.extracted = extracted.empty() ? kAbstain : extracted[0];
    predictions.push_back(p);
    QuestionItem shadow;
    shadow.id = e.item_id;
    shadow.gold = e.data.value("gold", "?")[0];
    shadow.subtype = e.data.value("subtype", "unknown");
    shadow_items.push_back(shadow);
  }
  if (predictions.empty()) {
    throw ValidationError("run record has no prediction events to score");
  }
  return score_predictions(predictions, shadow_items);
}

}  // namespace oculus
