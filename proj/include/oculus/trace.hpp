// RunRecord persistence: line-delimited, schema-versioned, append-only event
// traces with an integrity digest written at finalize.
//
// Layout: header line (run id, config snapshot, created_at), one event per
// line, and a final digest line covering the bytes of everything above it.

#pragma once

#include <atomic>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oculus/common.hpp"
#include "oculus/events.hpp"

namespace oculus {

inline constexpr int kTraceSchemaVersion = 1;

struct RunRecord {
  std::string run_id;
  nlohmann::json config_snapshot;
  std::string created_at;
  int schema_version = kTraceSchemaVersion;
  std::vector<Event> events;

  std::size_t count_type(std::string_view type) const {
    std::size_t n = 0;
    for (const auto& e : events) {
      if (e.type == type) ++n;
    }
    return n;
  }
};

inline std::string make_run_id(std::string_view hint = {}) {
  static std::atomic<std::uint64_t> counter{0};
  std::string basis = std::string(hint) + iso_timestamp() + std::to_string(now_ms()) +
                      ":" + std::to_string(counter.fetch_add(1));
  return "run-" + sha256_hex(basis).substr(0, 12);
}

class RunRecordWriter {
public:
  RunRecordWriter(std::string path, std::string run_id, nlohmann::json config_snapshot)
      : path_(std::move(path)), run_id_(std::move(run_id)) {
    nlohmann::json header{{"schema_version", kTraceSchemaVersion},
                          {"run_id", run_id_},
                          {"created_at", iso_timestamp()},
                          {"config", std::move(config_snapshot)}};
    buffer_ = header.dump() + "\n";
    out_.open(path_, std::ios::binary | std::ios::trunc);
    if (!out_) throw ValidationError("cannot open trace for writing: " + path_);
    out_ << buffer_.substr(0, buffer_.size());
    out_.flush();
  }

  const std::string& run_id() const { return run_id_; }
  const std::string& path() const { return path_; }

  void append(const Event& event) {
    if (finalized_) throw IntegrityError("append after finalize on " + path_);
    Event copy = event;
    copy.seq = next_seq_++;
    std::string line = copy.to_json().dump() + "\n";
    buffer_ += line;
    out_ << line;
    out_.flush();
    ++count_;
  }

  // Returns an EventSink that renumbers and appends; use as a Memory mirror.
  EventSink sink() {
    return [this](const Event& e) { append(e); };
  }

  std::string finalize() {
    if (finalized_) throw IntegrityError("finalize called twice on " + path_);
    finalized_ = true;
    std::string digest = sha256_hex(buffer_);
    nlohmann::json footer{{"digest", digest}, {"events", count_}};
    out_ << footer.dump() << "\n";
    out_.flush();
    out_.close();
    return digest;
  }

  ~RunRecordWriter() {
    if (!finalized_) {
      try {
        finalize();
      } catch (...) {
      }
    }
  }

private:
  std::string path_;
  std::string run_id_;
  std::ofstream out_;
  std::string buffer_;
  std::uint64_t next_seq_ = 0;
  std::size_t count_ = 0;
  bool finalized_ = false;
};

// Loads and verifies a trace file; throws IntegrityError when the digest
// does not match the event stream bytes.
inline RunRecord load_run_record(const std::string& path) {
  std::string text = read_file(path);
  std::vector<std::string> lines = split_lines(text);
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.size() < 2) throw IntegrityError("trace too short: " + path);

  nlohmann::json footer = nlohmann::json::parse(lines.back(), nullptr, false);
  if (footer.is_discarded() || !footer.contains("digest")) {
    throw IntegrityError("trace has no digest footer: " + path);
  }
  std::string covered;
  for (std::size_t i = 0; i + 1 < lines.size(); ++i) covered += lines[i] + "\n";
  if (sha256_hex(covered) != footer["digest"].get<std::string>()) {
    throw IntegrityError("digest mismatch on load: " + path);
  }

  nlohmann::json header = nlohmann::json::parse(lines.front(), nullptr, false);
  if (header.is_discarded() || !header.contains("run_id")) {
    throw IntegrityError("trace has no header: " + path);
  }
  RunRecord record;
  record.run_id = header["run_id"].get<std::string>();
  record.created_at = header.value("created_at", "");
  record.schema_version = header.value("schema_version", 0);
  record.config_snapshot = header.value("config", nlohmann::json::object());
  for (std::size_t i = 1; i + 1 < lines.size(); ++i) {
    nlohmann::json j = nlohmann::json::parse(lines[i], nullptr, false);
    if (j.is_discarded()) throw IntegrityError("bad event line in " + path);
    record.events.push_back(Event::from_json(j));
  }
  if (footer.contains("events") &&
      footer["events"].get<std::size_t>() != record.events.size()) {
    throw IntegrityError("event count mismatch in " + path);
  }
  return record;
}

}  // namespace oculus
