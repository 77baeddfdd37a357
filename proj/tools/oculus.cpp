// oculus CLI: query sessions, benchmark and robustness runs, retrieval index
// management, tool invocation, trace replay and reporting.

#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oculus/http_transport.hpp"
#include "oculus/oculus.hpp"

namespace fs = std::filesystem;
using namespace oculus;

namespace {

std::string dirname_of(const std::string& path) {
  std::size_t slash = path.find_last_of('/');
  return slash == std::string::npos ? std::string(".") : path.substr(0, slash);
}

std::string open_trace_path(const std::string& out_dir) {
  fs::create_directories(out_dir);
  return out_dir + "/" + make_run_id() + ".jsonl";
}

std::shared_ptr<ChatTransport> make_transport() {
  return std::make_shared<HttplibChatTransport>();
}

int cmd_query(const std::string& config_path, const std::string& question,
              const std::vector<std::string>& image_paths, const std::string& out_dir) {
  Config cfg = load_config(config_path);
  PipelineRunner runner(cfg, make_transport());

  std::string trace_path = open_trace_path(out_dir);
  RunRecordWriter writer(trace_path, make_run_id("query"), cfg.snapshot);
  nlohmann::json images = nlohmann::json::array();
  for (const auto& p : image_paths) images.push_back({{"path", p}});
  Event input;
  input.type = event_type::input;
  input.data = {{"command", "query"}, {"question", question}, {"images", images}};
  writer.append(input);

  std::vector<ImageInput> inputs;
  for (const auto& p : image_paths) inputs.push_back({p, ""});

  Memory memory;
  SessionResult result = run_session(runner.session_deps(), runner.session_options(),
                                     question, inputs, &memory, writer.sink());
  writer.finalize();

  std::cout << result.response.text << "\n";
  std::cerr << "[trace] " << trace_path << " (" << result.iterations
            << " iteration(s), fallback=" << (result.response.fallback ? "yes" : "no")
            << ")\n";
  return 0;
}

int cmd_bench_run(const std::string& config_path, const std::string& questions_path,
                  const std::string& out_dir) {
  Config cfg = load_config(config_path);
  std::vector<QuestionItem> items = load_questions(questions_path);
  std::string question_dir = dirname_of(questions_path);

  std::string trace_path = open_trace_path(out_dir);
  RunRecordWriter writer(trace_path, make_run_id("bench"), cfg.snapshot);
  Event input;
  input.type = event_type::input;
  input.data = {{"command", "bench"},
                {"questions", questions_path},
                {"question_dir", question_dir},
                {"n_items", items.size()}};
  writer.append(input);

  BenchmarkOutcome outcome =
      run_benchmark(items, cfg, question_dir, &writer, make_transport());
  writer.finalize();

  write_file(out_dir + "/report.json", outcome.report_json.dump(2) + "\n");
  write_file(out_dir + "/report.txt", outcome.report_text);
  std::cout << outcome.report_text;
  std::cerr << "[trace] " << trace_path << "\n[report] " << out_dir << "/report.{txt,json}\n";
  return 0;
}

int cmd_robust_run(const std::string& config_path, const std::string& questions_path,
                   std::uint64_t seed, const std::string& out_dir) {
  Config cfg = load_config(config_path);
  std::vector<QuestionItem> items = load_questions(questions_path);
  std::string question_dir = dirname_of(questions_path);

  std::string trace_path = open_trace_path(out_dir);
  RunRecordWriter writer(trace_path, make_run_id("robust"), cfg.snapshot);
  Event input;
  input.type = event_type::input;
  input.data = {{"command", "robust"},
                {"questions", questions_path},
                {"question_dir", question_dir},
                {"seed", seed}};
  writer.append(input);

  RobustnessOutcome outcome =
      run_robustness(items, cfg, seed, question_dir, &writer, make_transport());
  writer.finalize();

  write_file(out_dir + "/robust_report.json", outcome.report.to_json().dump(2) + "\n");
  std::string queue;
  for (const auto& entry : outcome.adjudication_queue) queue += entry.dump() + "\n";
  write_file(out_dir + "/adjudication_queue.jsonl", queue);

  const auto& r = outcome.report;
  std::printf("items               %zu\n", r.n_items);
  std::printf("accuracy before     %.4f\n", r.acc_before);
  std::printf("accuracy after      %.4f\n", r.acc_after);
  std::printf("consistency         %.4f\n", r.consistency);
  std::printf("accuracy delta      %+.2f pp (%+.2f%% relative)\n", r.accuracy_delta_pp,
              r.accuracy_delta_relative * 100.0);
  std::printf("total reward        %lld -> %lld\n", r.total_reward_before,
              r.total_reward_after);
  std::printf("needs adjudication  %zu\n", outcome.adjudication_queue.size());
  std::cerr << "[trace] " << trace_path << "\n";
  return 0;
}

int cmd_rag_ingest(const std::string& sources_path, const std::string& index_path,
                   std::size_t chunk_size, std::size_t overlap, std::size_t dim,
                   const std::string& out_dir) {
  std::vector<std::string> uris = load_source_list(sources_path);
  std::string trace_path = open_trace_path(out_dir);
  RunRecordWriter writer(trace_path, make_run_id("ingest"), nlohmann::json::object());
  Event input;
  input.type = event_type::input;
  input.data = {{"command", "rag_ingest"}, {"sources", sources_path}, {"out", index_path}};
  writer.append(input);

  IngestResult ingest = ingest_sources(uris, [](const std::string& uri) {
    return http_fetch(uri);
  });
  for (const auto& w : ingest.warnings) {
    Event e;
    e.type = event_type::note;
    e.data = {{"kind", "ingest_warning"}, {"uri", w.uri}, {"message", w.message}};
    writer.append(e);
    std::cerr << "[warn] " << w.uri << ": " << w.message << "\n";
  }
  HashingEmbedder embedder(dim);
  VectorIndex index = chunk_and_embed(ingest.corpus, {chunk_size, overlap}, embedder);
  save_index(index, index_path);
  Event done;
  done.type = event_type::metrics;
  done.data = {{"documents", ingest.corpus.size()},
               {"chunks", index.size()},
               {"dimension", index.dimension},
               {"embedder", index.embedder_id}};
  writer.append(done);
  writer.finalize();
  std::cout << "indexed " << ingest.corpus.size() << " document(s) into " << index.size()
            << " chunk(s) -> " << index_path << "\n";
  std::cerr << "[trace] " << trace_path << "\n";
  return 0;
}

int cmd_rag_query(const std::string& index_path, const std::string& query, std::size_t k,
                  const std::string& out_dir) {
  VectorIndex index = load_index(index_path);
  HashingEmbedder embedder(index.dimension);
  if (embedder.id() != index.embedder_id) {
    throw ValidationError("index built with unsupported embedder: " + index.embedder_id);
  }
  ContextBundle bundle = retrieve(index, query, k, embedder);

  std::string trace_path = open_trace_path(out_dir);
  RunRecordWriter writer(trace_path, make_run_id("ragq"), nlohmann::json::object());
  Event input;
  input.type = event_type::input;
  input.data = {{"command", "rag_query"}, {"index", index_path}, {"k", k}, {"query", query}};
  writer.append(input);
  nlohmann::json hits = nlohmann::json::array();
  for (const auto& h : bundle.hits) {
    const Chunk& c = index.chunks[h.chunk_index];
    hits.push_back({{"doc", c.doc_ref}, {"ordinal", c.ordinal}, {"score", h.score}});
  }
  Event retr;
  retr.type = event_type::retrieval;
  retr.data = {{"k", k}, {"hits", hits}, {"truncated", bundle.truncated}};
  writer.append(retr);
  writer.finalize();

  if (bundle.truncated) {
    std::cerr << "[note] k exceeds index size; returning all " << bundle.hits.size()
              << " chunks\n";
  }
  for (const auto& h : bundle.hits) {
    const Chunk& c = index.chunks[h.chunk_index];
    std::printf("%.6f  %s #%zu\n", h.score, c.doc_ref.c_str(), c.ordinal);
    std::string preview = c.text.substr(0, 160);
    for (auto& ch : preview) {
      if (ch == '\n') ch = ' ';
    }
    std::printf("          %s%s\n", preview.c_str(), c.text.size() > 160 ? "..." : "");
  }
  std::cerr << "[trace] " << trace_path << "\n";
  return 0;
}

int cmd_tools_list(const std::string& config_path) {
  ToolRegistry registry = config_path.empty()
                              ? ToolRegistry::with_default_stubs()
                              : build_registry(load_config(config_path));
  std::printf("%-16s %-10s %-8s %s\n", "tool", "modality", "adapter", "description");
  for (const auto& d : registry.list()) {
    std::string mods;
    for (Modality m : d.modalities()) {
      if (!mods.empty()) mods += ",";
      mods += modality_name(m);
    }
    std::printf("%-16s %-10s %-8s %s\n", tool_name(d.tool_id), mods.c_str(),
                d.adapter == AdapterKind::remote ? "remote" : "stub",
                d.description.c_str());
  }
  return 0;
}

int cmd_tools_invoke(const std::string& config_path, const std::string& tool,
                     const std::string& image_path, const std::string& out_dir) {
  Config cfg = load_config(config_path);
  ToolRegistry registry = build_registry(cfg);
  LabelSets labels = load_label_sets(cfg);
  auto id = tool_from_name(tool);
  if (!id) throw ValidationError("unknown tool: " + tool);

  ImageRef image = ImageRef::from_file(image_path);
  StubModalityClassifier classifier;
  ModalityLabel modality = classifier.classify(image);

  std::string trace_path = open_trace_path(out_dir);
  RunRecordWriter writer(trace_path, make_run_id("tool"), cfg.snapshot);
  Event input;
  input.type = event_type::input;
  input.data = {{"command", "tools_invoke"}, {"tool", tool}, {"image", image_path}};
  writer.append(input);
  Event obs;
  obs.type = event_type::observation;
  obs.data = {{"image", image.path},
              {"sha256", image.sha256},
              {"modality", modality_name(modality.label)},
              {"confidence", modality.confidence}};
  writer.append(obs);

  ToolContext ctx;
  ctx.labels = &labels;
  ctx.transport = make_transport();
  ctx.modality = modality;
  ToolInvocation inv = invoke_tool(registry, registry.descriptor(*id), image, ctx);

  Event tool_event;
  tool_event.type = event_type::tool;
  tool_event.data = {{"tool", tool_name(inv.tool_id)},
                     {"image", inv.image.sha256},
                     {"ok", inv.ok()},
                     {"error", inv.error},
                     {"output", inv.ok() ? tool_output_to_json(*inv.output)
                                         : nlohmann::json()}};
  writer.append(tool_event);
  writer.finalize();
  std::cerr << "[trace] " << trace_path << "\n";

  if (!inv.ok()) {
    std::cerr << "tool failed: " << inv.error << "\n";
    return 2;
  }
  std::cout << tool_output_to_json(*inv.output).dump(2) << "\n";
  return 0;
}

int cmd_replay(const std::string& run_path) {
  ReplayResult result = replay_run_file(run_path, make_transport());
  std::cout << (result.ok ? "REPLAY OK" : "REPLAY MISMATCH") << " [" << result.command
            << "] " << result.detail << "\n";
  return result.ok ? 0 : 3;
}

int cmd_report(const std::string& run_path, const std::string& format) {
  RunRecord record = load_run_record(run_path);
  BenchmarkOutcome outcome = rescore_run_record(record);
  if (format == "file") {
    std::cout << outcome.report_json.dump(2) << "\n";
  } else {
    std::cout << outcome.report_text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oculus: agent-orchestrated ophthalmic QA engine and benchmark harness"};
  app.require_subcommand(1);

  std::string config_path, questions_path, out_dir = "runs", question, run_path;
  std::string sources_path, index_path, image_path, tool, format = "table";
  std::vector<std::string> images;
  std::uint64_t seed = 0;
  std::size_t k = 5, chunk_size = 1000, overlap = 200, dim = 256;

  auto* query = app.add_subcommand("query", "Run one diagnostic session");
  query->add_option("--question", question, "Question text")->required();
  query->add_option("--image", images, "Image path (repeatable)");
  query->add_option("--config", config_path, "Config file")->required();
  query->add_option("--out", out_dir, "Trace directory");

  auto* bench = app.add_subcommand("bench", "Benchmark commands");
  bench->require_subcommand(1);
  auto* bench_run = bench->add_subcommand("run", "Run a question set");
  bench_run->add_option("--questions", questions_path, "Question file")->required();
  bench_run->add_option("--config", config_path, "Config file")->required();
  bench_run->add_option("--out", out_dir, "Output directory")->required();

  auto* robust = app.add_subcommand("robust", "Robustness commands");
  robust->require_subcommand(1);
  auto* robust_run = robust->add_subcommand("run", "Perturb-and-rescore a question set");
  robust_run->add_option("--questions", questions_path, "Question file")->required();
  robust_run->add_option("--seed", seed, "Perturbation seed")->required();
  robust_run->add_option("--config", config_path, "Config file")->required();
  robust_run->add_option("--out", out_dir, "Output directory")->required();

  auto* rag = app.add_subcommand("rag", "Retrieval commands");
  rag->require_subcommand(1);
  auto* rag_ingest = rag->add_subcommand("ingest", "Build an index from sources");
  rag_ingest->add_option("--sources", sources_path, "Source list file")->required();
  rag_ingest->add_option("--out", index_path, "Index output path")->required();
  rag_ingest->add_option("--chunk-size", chunk_size, "Chunk size (chars)");
  rag_ingest->add_option("--overlap", overlap, "Chunk overlap (chars)");
  rag_ingest->add_option("--dim", dim, "Embedding dimension");
  rag_ingest->add_option("--trace-dir", out_dir, "Trace directory");
  auto* rag_query = rag->add_subcommand("query", "Query an index");
  rag_query->add_option("--index", index_path, "Index path")->required();
  rag_query->add_option("-k", k, "Hits to return");
  rag_query->add_option("query", question, "Query text")->required();
  rag_query->add_option("--trace-dir", out_dir, "Trace directory");

  auto* tools_cmd = app.add_subcommand("tools", "Tool-plane commands");
  tools_cmd->require_subcommand(1);
  auto* tools_list = tools_cmd->add_subcommand("list", "List registered tools");
  tools_list->add_option("--config", config_path, "Config file");
  auto* tools_invoke = tools_cmd->add_subcommand("invoke", "Invoke one tool");
  tools_invoke->add_option("--tool", tool, "Tool id")->required();
  tools_invoke->add_option("--image", image_path, "Image path")->required();
  tools_invoke->add_option("--config", config_path, "Config file")->required();
  tools_invoke->add_option("--out", out_dir, "Trace directory");

  auto* replay = app.add_subcommand("replay", "Re-execute a recorded run and compare");
  replay->add_option("--run", run_path, "Run record file")->required();

  auto* report = app.add_subcommand("report", "Re-score a recorded run");
  report->add_option("--run", run_path, "Run record file")->required();
  report->add_option("--format", format, "table|file")
      ->check(CLI::IsMember({"table", "file"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(query)) {
      return cmd_query(config_path, question, images, out_dir);
    }
    if (bench->got_subcommand(bench_run)) {
      return cmd_bench_run(config_path, questions_path, out_dir);
    }
    if (robust->got_subcommand(robust_run)) {
      return cmd_robust_run(config_path, questions_path, seed, out_dir);
    }
    if (rag->got_subcommand(rag_ingest)) {
      return cmd_rag_ingest(sources_path, index_path, chunk_size, overlap, dim, out_dir);
    }
    if (rag->got_subcommand(rag_query)) {
      return cmd_rag_query(index_path, question, k, out_dir);
    }
    if (tools_cmd->got_subcommand(tools_list)) {
      return cmd_tools_list(config_path);
    }
    if (tools_cmd->got_subcommand(tools_invoke)) {
      return cmd_tools_invoke(config_path, tool, image_path, out_dir);
    }
    if (app.got_subcommand(replay)) {
      return cmd_replay(run_path);
    }
    if (app.got_subcommand(report)) {
      return cmd_report(run_path, format);
    }
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 3;
  } catch (const BackendError& e) {
    std::cerr << "backend/tool error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::cerr << app.help();
  return 1;
}
