// One config file drives everything: backend roles, ablation switches, rag
// parameters, the tool registry, harness and robustness settings. Loading
// applies defaults, interpolates ${ENV_VAR} placeholders, resolves relative
// paths against the config file's directory, and validates role coverage.

#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oculus/chat.hpp"
#include "oculus/common.hpp"
#include "oculus/tools.hpp"

namespace oculus {

enum class Stage { rag, tools, decision, evaluation };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::rag: return "rag";
    case Stage::tools: return "tools";
    case Stage::decision: return "decision";
    case Stage::evaluation: return "evaluation";
  }
  return "?";
}

inline std::optional<Stage> stage_from_name(std::string_view s) {
  if (s == "rag") return Stage::rag;
  if (s == "tools") return Stage::tools;
  if (s == "decision") return Stage::decision;
  if (s == "evaluation") return Stage::evaluation;
  return std::nullopt;
}

// Backend roles. answerer handles bare MCQ prompting; the other four are the
// agent roles of the workflow.
inline const std::vector<std::string>& backend_roles() {
  static const std::vector<std::string> roles = {"rag_synth", "planner", "evaluator",
                                                 "generator", "answerer"};
  return roles;
}

struct RagConfig {
  std::string index_path;
  std::string sources_path;
  std::size_t chunk_size = 1000;
  std::size_t overlap = 200;
  std::size_t k = 5;
  std::size_t embedder_dim = 256;
};

struct ToolEntryConfig {
  ToolId tool = ToolId::diagnose;
  AdapterKind adapter = AdapterKind::stub;
  std::string endpoint;
  std::string fixture_path;
  std::string description;
};

struct ToolsConfig {
  std::vector<ToolEntryConfig> registry;
  std::string conditions_file;
  std::string stages_file;
  std::vector<ToolId> static_plan;  // tools without decision
};

struct HarnessConfig {
  int parallelism = 4;
  bool regex_fallback = true;
  std::string prompt_template_path;
};

struct RobustnessConfig {
  std::string lexicon_path;
  int max_turns = 5;
};

struct Config {
  int schema_version = 1;
  int retry_limit = 3;
  std::set<Stage> ablation;
  std::map<std::string, BackendProfile> backends;  // role -> profile
  RagConfig rag;
  ToolsConfig tools;
  HarnessConfig harness;
  RobustnessConfig robustness;
  nlohmann::json snapshot;  // fully resolved form, embedded in RunRecords

  bool enabled(Stage s) const { return ablation.count(s) != 0; }

  const BackendProfile* find_backend(const std::string& role) const {
    auto it = backends.find(role);
    return it == backends.end() ? nullptr : &it->second;
  }

  const BackendProfile& require_backend(const std::string& role) const {
    const BackendProfile* p = find_backend(role);
    if (!p) throw ValidationError("config missing backend role '" + role + "'");
    return *p;
  }
};

namespace detail {

// api_key values keep their ${PLACEHOLDER} form; the gateway resolves them
// only when a remote backend is registered.
inline void interpolate_json(nlohmann::json& j) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() == "api_key") continue;
      interpolate_json(it.value());
    }
  } else if (j.is_array()) {
    for (auto& child : j) interpolate_json(child);
  } else if (j.is_string()) {
    j = interpolate_env(j.get<std::string>());
  }
}

inline void reject_unknown_keys(const nlohmann::json& obj,
                                const std::set<std::string>& allowed,
                                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ValidationError("unknown key '" + it.key() + "' in " + where);
    }
  }
}

inline std::string config_dir(const std::string& config_path) {
  std::size_t slash = config_path.find_last_of('/');
  return slash == std::string::npos ? std::string(".") : config_path.substr(0, slash);
}

inline std::string resolve_path(const std::string& base_dir, const std::string& path) {
  if (base_dir.empty() || path.empty() || path[0] == '/') return path;
  return base_dir + "/" + path;
}

inline BackendProfile parse_backend(const std::string& role, const nlohmann::json& j,
                                    const std::string& base_dir) {
  reject_unknown_keys(j,
                      {"id", "kind", "endpoint", "model_name", "sampling",
                       "cache_policy", "script_path", "api_key"},
                      "backends." + role);
  BackendProfile p;
  p.id = j.value("id", role);
  std::string kind = j.value("kind", "scripted");
  if (kind == "remote_chat") {
    p.kind = BackendKind::remote_chat;
  } else if (kind == "scripted") {
    p.kind = BackendKind::scripted;
  } else {
    throw ValidationError("backend '" + role + "': unknown kind '" + kind + "'");
  }
  p.endpoint = j.value("endpoint", "");
  p.model_name = j.value("model_name", "");
  p.api_key = j.value("api_key", "");
  if (j.contains("sampling")) {
    const auto& s = j["sampling"];
    reject_unknown_keys(s, {"temperature", "top_p", "max_tokens"},
                        "backends." + role + ".sampling");
    p.sampling.temperature = s.value("temperature", 0.0);
    p.sampling.top_p = s.value("top_p", 1.0);
    p.sampling.max_tokens = s.value("max_tokens", 1024);
  }
  std::string policy = j.value("cache_policy", "off");
  if (policy == "off") {
    p.cache_policy = CachePolicy::off;
  } else if (policy == "read_write") {
    p.cache_policy = CachePolicy::read_write;
  } else if (policy == "read_only") {
    p.cache_policy = CachePolicy::read_only;
  } else {
    throw ValidationError("backend '" + role + "': unknown cache_policy '" + policy + "'");
  }
  p.script_path = resolve_path(base_dir, j.value("script_path", ""));
  return p;
}

}  // namespace detail

inline nlohmann::json config_to_json(const Config& cfg);

inline Config parse_config(nlohmann::json j, const std::string& base_dir,
                           const std::string& origin) {
  detail::interpolate_json(j);
  detail::reject_unknown_keys(
      j, {"schema_version", "retry_limit", "ablation", "backends", "rag", "tools",
          "harness", "robustness"},
      origin);

  Config cfg;
  cfg.schema_version = j.value("schema_version", 1);
  cfg.retry_limit = j.value("retry_limit", 3);
  if (cfg.retry_limit < 1) throw ValidationError("retry_limit must be >= 1");

  if (j.contains("ablation")) {
    for (const auto& s : j["ablation"]) {
      auto stage = stage_from_name(s.get<std::string>());
      if (!stage) {
        throw ValidationError("unknown ablation stage '" + s.get<std::string>() + "'");
      }
      cfg.ablation.insert(*stage);
    }
  }

  if (j.contains("backends")) {
    for (auto it = j["backends"].begin(); it != j["backends"].end(); ++it) {
      const std::string& role = it.key();
      const auto& roles = backend_roles();
      if (std::find(roles.begin(), roles.end(), role) == roles.end()) {
        throw ValidationError("unknown backend role '" + role + "'");
      }
      BackendProfile profile = detail::parse_backend(role, it.value(), base_dir);
      Gateway::validate_profile(profile);
      cfg.backends[role] = std::move(profile);
    }
  }

  if (j.contains("rag")) {
    const auto& r = j["rag"];
    detail::reject_unknown_keys(
        r, {"index_path", "sources_path", "chunk_size", "overlap", "k", "embedder_dim"},
        "rag");
    cfg.rag.index_path = detail::resolve_path(base_dir, r.value("index_path", ""));
    cfg.rag.sources_path = detail::resolve_path(base_dir, r.value("sources_path", ""));
    cfg.rag.chunk_size = r.value("chunk_size", 1000u);
    cfg.rag.overlap = r.value("overlap", 200u);
    cfg.rag.k = r.value("k", 5u);
    cfg.rag.embedder_dim = r.value("embedder_dim", 256u);
    if (cfg.rag.overlap >= cfg.rag.chunk_size) {
      throw ValidationError("rag: overlap must be smaller than chunk_size");
    }
  }

  if (j.contains("tools")) {
    const auto& t = j["tools"];
    detail::reject_unknown_keys(
        t, {"registry", "conditions_file", "stages_file", "static_plan"}, "tools");
    cfg.tools.conditions_file = detail::resolve_path(base_dir, t.value("conditions_file", ""));
    cfg.tools.stages_file = detail::resolve_path(base_dir, t.value("stages_file", ""));
    if (t.contains("registry")) {
      for (const auto& e : t["registry"]) {
        detail::reject_unknown_keys(
            e, {"tool", "adapter", "endpoint", "fixtures", "description"},
            "tools.registry entry");
        ToolEntryConfig entry;
        std::string name = e.at("tool").get<std::string>();
        auto id = tool_from_name(name);
        if (!id) throw ValidationError("unknown tool '" + name + "' in registry");
        entry.tool = *id;
        std::string adapter = e.value("adapter", "stub");
        if (adapter == "remote") {
          entry.adapter = AdapterKind::remote;
        } else if (adapter == "stub") {
          entry.adapter = AdapterKind::stub;
        } else {
          throw ValidationError("unknown adapter '" + adapter + "' for tool " + name);
        }
        entry.endpoint = e.value("endpoint", "");
        entry.fixture_path = detail::resolve_path(base_dir, e.value("fixtures", ""));
        entry.description = e.value("description", "");
        cfg.tools.registry.push_back(std::move(entry));
      }
    }
    if (t.contains("static_plan")) {
      for (const auto& s : t["static_plan"]) {
        auto id = tool_from_name(s.get<std::string>());
        if (!id) {
          throw ValidationError("unknown tool '" + s.get<std::string>() +
                                "' in static_plan");
        }
        cfg.tools.static_plan.push_back(*id);
      }
    }
  }

  if (j.contains("harness")) {
    const auto& h = j["harness"];
    detail::reject_unknown_keys(h, {"parallelism", "regex_fallback", "prompt_template"},
                                "harness");
    cfg.harness.parallelism = h.value("parallelism", 4);
    if (cfg.harness.parallelism < 1) {
      throw ValidationError("harness.parallelism must be >= 1");
    }
    cfg.harness.regex_fallback = h.value("regex_fallback", true);
    cfg.harness.prompt_template_path =
        detail::resolve_path(base_dir, h.value("prompt_template", ""));
  }

  if (j.contains("robustness")) {
    const auto& r = j["robustness"];
    detail::reject_unknown_keys(r, {"lexicon", "max_turns"}, "robustness");
    cfg.robustness.lexicon_path = detail::resolve_path(base_dir, r.value("lexicon", ""));
    cfg.robustness.max_turns = r.value("max_turns", 5);
    if (cfg.robustness.max_turns < 1 || cfg.robustness.max_turns > 5) {
      throw ValidationError("robustness.max_turns must be in [1,5]");
    }
  }

  // role coverage per enabled stage
  auto require_role = [&](const std::string& role, const std::string& stage) {
    if (!cfg.backends.count(role)) {
      throw ValidationError("ablation stage '" + stage + "' enabled but backend role '" +
                            role + "' is not configured");
    }
  };
  if (cfg.enabled(Stage::rag)) require_role("rag_synth", "rag");
  if (cfg.enabled(Stage::decision)) require_role("planner", "decision");
  if (cfg.enabled(Stage::evaluation)) {
    require_role("evaluator", "evaluation");
    require_role("generator", "evaluation");
    if (!cfg.enabled(Stage::decision)) {
      throw ValidationError("evaluation requires the decision stage");
    }
  }
  if (cfg.enabled(Stage::tools) && !cfg.enabled(Stage::decision) &&
      cfg.tools.static_plan.empty()) {
    throw ValidationError(
        "tools enabled without decision: configure a planner role (decision stage) "
        "or supply tools.static_plan");
  }
  if (cfg.enabled(Stage::decision) && !cfg.enabled(Stage::tools)) {
    throw ValidationError("decision stage requires the tools stage");
  }

  cfg.snapshot = config_to_json(cfg);
  return cfg;
}

// Resolved form: paths absolute/relative exactly as the runtime will use
// them, credentials still as placeholders. This is what RunRecords embed,
// and parsing it back yields an equivalent Config.
inline nlohmann::json config_to_json(const Config& cfg) {
  nlohmann::json j;
  j["schema_version"] = cfg.schema_version;
  j["retry_limit"] = cfg.retry_limit;
  nlohmann::json ablation = nlohmann::json::array();
  for (Stage s : {Stage::rag, Stage::tools, Stage::decision, Stage::evaluation}) {
    if (cfg.enabled(s)) ablation.push_back(stage_name(s));
  }
  j["ablation"] = ablation;
  nlohmann::json backends = nlohmann::json::object();
  for (const auto& [role, p] : cfg.backends) {
    nlohmann::json b;
    b["id"] = p.id;
    b["kind"] = p.kind == BackendKind::remote_chat ? "remote_chat" : "scripted";
    if (!p.endpoint.empty()) b["endpoint"] = p.endpoint;
    if (!p.model_name.empty()) b["model_name"] = p.model_name;
    if (!p.api_key.empty()) b["api_key"] = p.api_key;
    if (!p.script_path.empty()) b["script_path"] = p.script_path;
    b["sampling"] = {{"temperature", p.sampling.temperature},
                     {"top_p", p.sampling.top_p},
                     {"max_tokens", p.sampling.max_tokens}};
    b["cache_policy"] = p.cache_policy == CachePolicy::off         ? "off"
                        : p.cache_policy == CachePolicy::read_write ? "read_write"
                                                                    : "read_only";
    backends[role] = std::move(b);
  }
  j["backends"] = backends;
  j["rag"] = {{"index_path", cfg.rag.index_path},
              {"sources_path", cfg.rag.sources_path},
              {"chunk_size", cfg.rag.chunk_size},
              {"overlap", cfg.rag.overlap},
              {"k", cfg.rag.k},
              {"embedder_dim", cfg.rag.embedder_dim}};
  nlohmann::json registry = nlohmann::json::array();
  for (const auto& e : cfg.tools.registry) {
    nlohmann::json t;
    t["tool"] = tool_name(e.tool);
    t["adapter"] = e.adapter == AdapterKind::remote ? "remote" : "stub";
    if (!e.endpoint.empty()) t["endpoint"] = e.endpoint;
    if (!e.fixture_path.empty()) t["fixtures"] = e.fixture_path;
    if (!e.description.empty()) t["description"] = e.description;
    registry.push_back(std::move(t));
  }
  nlohmann::json static_plan = nlohmann::json::array();
  for (ToolId id : cfg.tools.static_plan) static_plan.push_back(tool_name(id));
  j["tools"] = {{"registry", registry},
                {"conditions_file", cfg.tools.conditions_file},
                {"stages_file", cfg.tools.stages_file},
                {"static_plan", static_plan}};
  j["harness"] = {{"parallelism", cfg.harness.parallelism},
                  {"regex_fallback", cfg.harness.regex_fallback},
                  {"prompt_template", cfg.harness.prompt_template_path}};
  j["robustness"] = {{"lexicon", cfg.robustness.lexicon_path},
                     {"max_turns", cfg.robustness.max_turns}};
  return j;
}

inline Config load_config(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ValidationError("config does not parse: " + path);
  return parse_config(std::move(j), detail::config_dir(path), path);
}

// Rebuilds a Config from a RunRecord's snapshot (paths already resolved).
inline Config config_from_snapshot(const nlohmann::json& snapshot) {
  return parse_config(snapshot, "", "config snapshot");
}

inline LabelSets load_label_sets(const Config& cfg) {
  LabelSets labels = LabelSets::defaults();
  if (!cfg.tools.conditions_file.empty()) {
    labels.conditions = LabelSets::load_labels(cfg.tools.conditions_file);
  }
  if (!cfg.tools.stages_file.empty()) {
    labels.dr_stages = LabelSets::load_labels(cfg.tools.stages_file);
  }
  return labels;
}

inline ToolRegistry build_registry(const Config& cfg) {
  ToolRegistry registry;
  if (cfg.tools.registry.empty()) {
    return ToolRegistry::with_default_stubs();
  }
  for (const auto& entry : cfg.tools.registry) {
    ToolDescriptor d;
    d.tool_id = entry.tool;
    d.adapter = entry.adapter;
    d.endpoint = entry.endpoint;
    d.fixture_path = entry.fixture_path;
    d.description = entry.description;
    registry.register_tool(d);
  }
  return registry;
}

}  // namespace oculus
