// The observe / plan / execute / evaluate / self-correct loop.
//
// One session is a single logical task. Per iteration the engine (re)plans
// when adherence failed, executes only the not-yet-run suffix of the plan,
// computes workflow adherence mechanically, and either finishes, appends
// missing tools named by the evaluator, or falls back.

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "oculus/chat.hpp"
#include "oculus/common.hpp"
#include "oculus/events.hpp"
#include "oculus/gateway.hpp"
#include "oculus/prompts.hpp"
#include "oculus/retrieval.hpp"
#include "oculus/tools.hpp"

namespace oculus {

// Responses on the no-usable-tools branch carry this exact prefix.
inline constexpr const char kFallbackPrefix[] =
    "No tools available to use, directly output the current response:\n";

struct PlanEntry {
  ToolId tool = ToolId::diagnose;
  std::string rationale;
  std::optional<ImageRef> image;
};

struct PlannedWorkflow {
  std::vector<ToolId> candidates;  // S
  std::vector<PlanEntry> sequence;  // D
  std::string planner_transcript;
  bool no_tools_declared = false;
  std::string no_tools_reason;

  std::vector<ToolId> tool_sequence() const {
    std::vector<ToolId> ids;
    ids.reserve(sequence.size());
    for (const auto& e : sequence) ids.push_back(e.tool);
    return ids;
  }
};

struct Verdict {
  bool is_correct = false;
  bool is_complete = false;
  bool is_followed = false;
  std::string feedback;
};

struct FinalResponse {
  std::string text;
  bool fallback = false;
  std::string trace_ref;
};

// Adherence is a pure function of the planned and executed sequences:
// identical (order and multiplicity) or not. Backend text never enters.
inline bool sequences_adhere(const std::vector<ToolId>& planned,
                             const std::vector<ToolId>& executed) {
  return planned == executed;
}

struct ObservedImage {
  ImageRef ref;
  ModalityLabel modality;
};

struct ImageInput {
  std::string path;
  std::string expected_sha256;
};

struct SessionOptions {
  int retry_limit = 3;
  bool rag_enabled = true;
  std::size_t rag_k = 5;
  std::string answer_directive;  // extra generator instruction (e.g. MCQ footer)
};

struct SessionDeps {
  Gateway* gateway = nullptr;
  const ToolRegistry* registry = nullptr;
  const VectorIndex* index = nullptr;      // optional
  const Embedder* embedder = nullptr;      // required when index set
  const ModalityClassifier* classifier = nullptr;
  const LabelSets* labels = nullptr;
  std::shared_ptr<ChatTransport> tool_transport;
  BackendHandle planner;
  BackendHandle evaluator;
  BackendHandle generator;
  BackendHandle rag_synth;  // optional
};

class Session {
public:
  Session(SessionDeps deps, SessionOptions opts)
      : deps_(std::move(deps)), opts_(std::move(opts)) {
    if (!deps_.gateway || !deps_.registry) {
      throw ValidationError("session requires a gateway and a tool registry");
    }
    if (opts_.retry_limit < 1) throw ValidationError("retry_limit must be >= 1");
  }

  Memory& memory() { return memory_; }
  const Memory& memory() const { return memory_; }
  int turn() const { return turn_; }
  const std::vector<ObservedImage>& observed() const { return images_; }
  const PlannedWorkflow& plan() const { return plan_; }
  const std::string& context_text() const { return rag_context_; }

  // Initialize state; classify and record each image's modality in input
  // order. Undecodable images are recorded, not fatal.
  void observe(const std::string& query, const std::vector<ImageInput>& images) {
    if (query.empty()) throw ValidationError("observe: query must be non-empty");
    query_ = query;
    nlohmann::json in{{"query", query_}};
    memory_.append(event_type::input, std::move(in));
    static const StubModalityClassifier default_classifier;
    const ModalityClassifier& classifier =
        deps_.classifier ? *deps_.classifier : default_classifier;
    for (const auto& input : images) {
      try {
        ImageRef ref = ImageRef::from_file(input.path, input.expected_sha256);
        ModalityLabel label = classifier.classify(ref);
        memory_.append(event_type::observation,
                       {{"image", ref.path},
                        {"sha256", ref.sha256},
                        {"modality", modality_name(label.label)},
                        {"confidence", label.confidence}});
        images_.push_back({std::move(ref), label});
      } catch (const std::exception& e) {
        memory_.append(event_type::error,
                       {{"image", input.path}, {"message", e.what()}});
      }
    }
  }

  // Knowledge-level retrieval. No-op (and no event) when disabled or no
  // index is configured, which is what the ablation switches key on.
  void retrieve_context() {
    if (!opts_.rag_enabled || !deps_.index || deps_.index->empty()) return;
    if (!deps_.embedder) throw ValidationError("retrieval requires an embedder");
    ContextBundle bundle = retrieve(*deps_.index, query_, opts_.rag_k, *deps_.embedder);
    std::string passages = render_hits(*deps_.index, bundle);
    bool synthesized = false;
    if (deps_.rag_synth.valid()) {
      Completion c = complete_logged(deps_.rag_synth,
                                     build_rag_synth_messages(query_, passages));
      bundle.synthesized_context = c.text;
      synthesized = true;
    } else {
      bundle.synthesized_context = passages;
    }
    rag_context_ = bundle.synthesized_context;
    nlohmann::json hits = nlohmann::json::array();
    for (const auto& h : bundle.hits) {
      const Chunk& c = deps_.index->chunks[h.chunk_index];
      hits.push_back({{"doc", c.doc_ref}, {"ordinal", c.ordinal}, {"score", h.score}});
    }
    memory_.append(event_type::retrieval, {{"k", opts_.rag_k},
                                           {"hits", hits},
                                           {"truncated", bundle.truncated},
                                           {"synthesized", synthesized}});
  }

  // Candidate set S: tools the backend names, filtered by modality
  // compatibility with the observed images.
  std::vector<ToolId> select_candidates() {
    std::set<Modality> seen;
    for (const auto& img : images_) {
      if (img.modality.label != Modality::Unknown) seen.insert(img.modality.label);
    }
    auto compatible = [&](ToolId id) {
      for (Modality m : accepted_modalities(id)) {
        if (seen.count(m)) return true;
      }
      return false;
    };
    Completion reply = complete_logged(
        deps_.planner, build_selection_messages(query_, *deps_.registry, memory_));
    std::vector<ToolId> candidates;
    for (const auto& mention : match_tools_in_text(reply.text)) {
      if (!deps_.registry->contains(mention.tool)) continue;
      if (!compatible(mention.tool)) continue;
      if (std::find(candidates.begin(), candidates.end(), mention.tool) ==
          candidates.end()) {
        candidates.push_back(mention.tool);
      }
    }
    nlohmann::json names = nlohmann::json::array();
    for (ToolId id : candidates) names.push_back(tool_name(id));
    memory_.append(event_type::candidates, {{"tools", names}});
    return candidates;
  }

  // Ordered sequence D parsed from the planner's structured reply. One
  // format-reminder re-ask; a second unusable reply is a hard error.
  // Installing the decided plan starts a fresh execution epoch.
  PlannedWorkflow decide_workflow(const std::vector<ToolId>& candidates) {
    std::vector<ChatMessage> messages =
        build_planner_messages(query_, rag_context_, candidates, *deps_.registry, memory_);
    PlannedWorkflow workflow;
    workflow.candidates = candidates;
    auto install = [&]() -> PlannedWorkflow {
      log_plan(workflow, /*amended=*/false);
      plan_ = workflow;
      results_.clear();
      return workflow;
    };
    for (int attempt = 0; attempt < 2; ++attempt) {
      Completion reply = complete_logged(deps_.planner, messages);
      workflow.planner_transcript += reply.text;
      std::string problem;
      auto parsed = parse_plan_reply(reply.text);
      if (!parsed) {
        problem = "reply had no usable PLAN block";
      } else if (parsed->declared_no_tools) {
        workflow.no_tools_declared = true;
        workflow.no_tools_reason = parsed->no_tools_reason;
        workflow.sequence.clear();
        return install();
      } else if (parsed->entries.empty()) {
        problem = "empty plan without a NO_TOOLS declaration";
      } else {
        workflow.sequence.clear();
        for (const auto& entry : parsed->entries) {
          auto tool = resolve_tool_name(entry.name);
          if (!tool || !deps_.registry->contains(*tool)) {
            problem = "unknown tool '" + entry.name + "'";
            break;
          }
          if (std::find(candidates.begin(), candidates.end(), *tool) ==
              candidates.end()) {
            problem = "tool '" + entry.name + "' is not in the candidate set";
            break;
          }
          workflow.sequence.push_back(
              {*tool, entry.rationale, image_for_tool(*tool)});
        }
        if (problem.empty()) {
          return install();
        }
        workflow.sequence.clear();
      }
      if (attempt == 0) {
        memory_.append(event_type::note,
                       {{"kind", "planner_reask"}, {"problem", problem}});
        messages.push_back({Role::assistant, reply.text, {}});
        messages.push_back({Role::user,
                            std::string(prompts::kPlannerFormatReminder) +
                                " Problem: " + problem,
                            {}});
      } else {
        throw BackendError("planner reply unusable after re-ask: " + problem);
      }
    }
    return workflow;  // unreachable
  }

  // Invoke the not-yet-executed suffix of D strictly in order; halt on the
  // first hard error, retaining partial results.
  std::vector<ToolInvocation> execute_workflow() {
    for (std::size_t i = results_.size(); i < plan_.sequence.size(); ++i) {
      const PlanEntry& entry = plan_.sequence[i];
      ToolInvocation inv = run_entry(entry);
      bool failed = !inv.ok();
      memory_.append(event_type::tool,
                     {{"tool", tool_name(inv.tool_id)},
                      {"image", inv.image.sha256},
                      {"ok", inv.ok()},
                      {"error", inv.error},
                      {"output", inv.ok() ? tool_output_to_json(*inv.output)
                                          : nlohmann::json()}});
      results_.push_back(std::move(inv));
      if (failed) break;
    }
    return results_;
  }

  std::vector<ToolId> executed_sequence() const {
    std::vector<ToolId> ids;
    for (const auto& inv : results_) {
      if (inv.ok()) ids.push_back(inv.tool_id);
    }
    return ids;
  }

  // Adherence is computed here, never taken from the backend; correctness
  // and completeness are parsed from the evaluator's VERDICT block.
  Verdict evaluate() {
    std::vector<ToolId> planned = plan_.tool_sequence();
    std::vector<ToolId> executed = executed_sequence();
    bool followed = sequences_adhere(planned, executed);

    std::vector<ChatMessage> messages =
        build_evaluator_messages(query_, results_, planned, rag_context_);
    std::optional<ParsedVerdict> parsed;
    for (int attempt = 0; attempt < 2 && !parsed; ++attempt) {
      Completion reply = complete_logged(deps_.evaluator, messages);
      parsed = parse_verdict_reply(reply.text);
      if (!parsed && attempt == 0) {
        memory_.append(event_type::note, {{"kind", "evaluator_reask"}});
        messages.push_back({Role::assistant, reply.text, {}});
        messages.push_back({Role::user, prompts::kEvaluatorFormatReminder, {}});
      }
    }

    Verdict verdict;
    verdict.is_followed = followed;
    if (parsed) {
      verdict.is_correct = parsed->is_correct;
      verdict.is_complete = parsed->is_complete;
      verdict.feedback = parsed->feedback;
    } else {
      verdict.is_correct = false;
      verdict.is_complete = false;
      verdict.feedback = "evaluator parse failure";
    }
    if (!followed) {
      if (!verdict.feedback.empty()) verdict.feedback += "; ";
      verdict.feedback += describe_deviation(planned, executed);
    }
    if ((!verdict.is_correct || !verdict.is_complete || !verdict.is_followed) &&
        verdict.feedback.empty()) {
      verdict.feedback = "no feedback provided";
    }
    memory_.append(event_type::verdict, {{"is_correct", verdict.is_correct},
                                         {"is_complete", verdict.is_complete},
                                         {"is_followed", verdict.is_followed},
                                         {"feedback", verdict.feedback}});
    return verdict;
  }

  // Tools named in the feedback (ids or aliases, registry-known) that are
  // not yet part of D, in feedback-mention order.
  std::vector<ToolId> infer_missing_tools(const std::string& feedback) const {
    std::vector<ToolId> planned = plan_.tool_sequence();
    std::vector<ToolId> missing;
    for (const auto& mention : match_tools_in_text(feedback)) {
      if (!deps_.registry->contains(mention.tool)) continue;
      if (std::find(planned.begin(), planned.end(), mention.tool) != planned.end()) continue;
      if (std::find(missing.begin(), missing.end(), mention.tool) != missing.end()) continue;
      missing.push_back(mention.tool);
    }
    return missing;
  }

  FinalResponse generate_response(bool fallback) {
    std::vector<ImageRef> refs;
    for (const auto& img : images_) refs.push_back(img.ref);
    Completion reply = complete_logged(
        deps_.generator, build_generator_messages(query_, rag_context_, results_,
                                                  opts_.answer_directive, refs));
    FinalResponse response;
    response.fallback = fallback;
    response.text = fallback ? std::string(kFallbackPrefix) + reply.text : reply.text;
    memory_.append(event_type::response,
                   {{"fallback", fallback}, {"text", response.text}});
    return response;
  }

  // Installs a fixed plan without consulting a planner (tools enabled with
  // the decision stage ablated). Logged as a note, not a plan event.
  void set_static_plan(const std::vector<ToolId>& tools) {
    plan_ = PlannedWorkflow{};
    for (ToolId id : tools) {
      plan_.candidates.push_back(id);
      plan_.sequence.push_back({id, "static plan", image_for_tool(id)});
    }
    results_.clear();
    nlohmann::json names = nlohmann::json::array();
    for (ToolId id : tools) names.push_back(tool_name(id));
    memory_.append(event_type::note, {{"kind", "static_plan"}, {"tools", names}});
  }

  const std::vector<ToolInvocation>& results() const { return results_; }

  Completion complete_and_log(const BackendHandle& handle,
                              const std::vector<ChatMessage>& messages) {
    return complete_logged(handle, messages);
  }

  // The full loop.
  FinalResponse run(const std::string& query, const std::vector<ImageInput>& images) {
    observe(query, images);
    retrieve_context();
    bool replan = true;
    for (turn_ = 1; turn_ <= opts_.retry_limit; ++turn_) {
      if (replan) {
        std::vector<ToolId> candidates = select_candidates();
        decide_workflow(candidates);
        replan = false;
      }
      execute_workflow();
      Verdict verdict = evaluate();
      if (!verdict.is_followed) {
        if (turn_ == opts_.retry_limit) break;
        replan = true;  // return to decision stage
        continue;
      }
      if (verdict.is_correct && verdict.is_complete) {
        return generate_response(false);
      }
      std::vector<ToolId> missing = infer_missing_tools(verdict.feedback);
      if (missing.empty()) {
        return generate_response(true);
      }
      if (turn_ == opts_.retry_limit) break;
      for (ToolId id : missing) {
        plan_.sequence.push_back(
            {id, "added from evaluator feedback", image_for_tool(id)});
      }
      log_plan(plan_, /*amended=*/true);
    }
    memory_.append(event_type::note, {{"kind", "retry_limit"},
                                      {"retry_limit", opts_.retry_limit}});
    return generate_response(true);
  }

private:
  Completion complete_logged(const BackendHandle& handle,
                             const std::vector<ChatMessage>& messages) {
    const std::string& role_id = handle.id;
    std::string joined = joined_request_text(messages);
    memory_.append(event_type::prompt, {{"backend", role_id},
                                        {"messages", messages.size()},
                                        {"chars", joined.size()},
                                        {"sha256", sha256_hex(joined)}});
    Completion reply = deps_.gateway->complete(handle, messages);
    memory_.append(event_type::completion, {{"backend", role_id},
                                            {"text", reply.text},
                                            {"cached", reply.cached},
                                            {"default_rule", reply.default_rule_fired}});
    return reply;
  }

  ToolInvocation run_entry(const PlanEntry& entry) {
    const ToolDescriptor& descriptor = deps_.registry->descriptor(entry.tool);
    ToolContext ctx;
    ctx.labels = deps_.labels;
    ctx.transport = deps_.tool_transport;
    if (!entry.image) {
      ToolInvocation inv;
      inv.tool_id = entry.tool;
      inv.started_at = inv.finished_at = now_ms();
      inv.adapter_used = descriptor.adapter;
      inv.error = std::string("no compatible image for ") + tool_name(entry.tool);
      return inv;
    }
    for (const auto& img : images_) {
      if (img.ref == *entry.image) {
        ctx.modality = img.modality;
        break;
      }
    }
    return invoke_tool(*deps_.registry, descriptor, *entry.image, ctx);
  }

  std::optional<ImageRef> image_for_tool(ToolId id) const {
    for (const auto& img : images_) {
      if (accepted_modalities(id).count(img.modality.label)) return img.ref;
    }
    return std::nullopt;
  }

  static std::optional<ToolId> resolve_tool_name(const std::string& name) {
    if (auto id = tool_from_name(trim(name))) return id;
    auto mentions = match_tools_in_text(name);
    if (mentions.size() == 1) return mentions.front().tool;
    return std::nullopt;
  }

  static std::string describe_deviation(const std::vector<ToolId>& planned,
                                        const std::vector<ToolId>& executed) {
    auto render = [](const std::vector<ToolId>& seq) {
      std::string out = "[";
      for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i) out += ", ";
        out += tool_name(seq[i]);
      }
      return out + "]";
    };
    std::string text = "workflow deviation: planned " + render(planned) +
                       " but executed " + render(executed);
    std::vector<ToolId> unexecuted;
    std::vector<ToolId> left = executed;
    for (ToolId id : planned) {
      auto it = std::find(left.begin(), left.end(), id);
      if (it != left.end()) {
        left.erase(it);
      } else {
        unexecuted.push_back(id);
      }
    }
    if (!unexecuted.empty()) {
      text += "; scheduled but not executed: ";
      for (std::size_t i = 0; i < unexecuted.size(); ++i) {
        if (i) text += ", ";
        text += tool_name(unexecuted[i]);
      }
    }
    return text;
  }

  void log_plan(const PlannedWorkflow& workflow, bool amended) {
    nlohmann::json tools = nlohmann::json::array();
    for (const auto& e : workflow.sequence) {
      tools.push_back({{"tool", tool_name(e.tool)},
                       {"rationale", e.rationale},
                       {"image", e.image ? e.image->sha256 : ""}});
    }
    memory_.append(event_type::plan, {{"tools", tools},
                                      {"no_tools", workflow.no_tools_declared},
                                      {"amended", amended}});
  }

  SessionDeps deps_;
  SessionOptions opts_;
  std::string query_;
  std::vector<ObservedImage> images_;
  std::string rag_context_;
  Memory memory_;
  PlannedWorkflow plan_;
  std::vector<ToolInvocation> results_;  // current plan epoch, in order
  int turn_ = 0;
};

struct SessionResult {
  FinalResponse response;
  int iterations = 0;
};

inline SessionResult run_session(SessionDeps deps, SessionOptions opts,
                                 const std::string& query,
                                 const std::vector<ImageInput>& images,
                                 Memory* out_memory = nullptr,
                                 const EventSink& sink = nullptr) {
  Session session(std::move(deps), std::move(opts));
  if (sink) session.memory().set_sink(sink);
  SessionResult result;
  result.response = session.run(query, images);
  result.iterations = session.turn();
  if (out_memory) *out_memory = std::move(session.memory());
  return result;
}

}  // namespace oculus
