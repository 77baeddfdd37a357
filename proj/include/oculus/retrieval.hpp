// Knowledge-level retrieval: ingest authoritative sources, segment and index
// them, and answer queries with ranked context bundles.

#pragma once

#include <algorithm>
#include <cstring>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "oculus/common.hpp"
#include "oculus/embedding.hpp"

namespace oculus {

struct SourceDocument {
  std::string source_uri;   // recorded verbatim for traceability
  std::string raw_text;
  std::int64_t fetched_at = 0;
};

struct Chunk {
  std::string doc_ref;
  std::size_t ordinal = 0;
  std::string text;
  std::vector<double> embedding;
};

struct RetrievalHit {
  std::size_t chunk_index = 0;
  double score = 0.0;
};

struct ContextBundle {
  std::string query;
  std::vector<RetrievalHit> hits;  // sorted by score descending
  std::string synthesized_context;
  bool truncated = false;  // k exceeded index size
};

// Very small HTML-to-text pass: drops script/style bodies, strips tags,
// decodes the handful of entities that matter for prose.
inline std::string strip_html(std::string_view html) {
  std::string out;
  out.reserve(html.size());
  std::size_t i = 0;
  auto skip_until = [&](std::string_view close) {
    std::size_t pos = find_ci(html.substr(i), close);
    i = (pos == std::string::npos) ? html.size() : i + pos + close.size();
  };
  while (i < html.size()) {
    if (html[i] == '<') {
      std::string_view rest = html.substr(i);
      if (find_ci(rest.substr(0, 8), "<script") == 0) { skip_until("</script>"); continue; }
      if (find_ci(rest.substr(0, 7), "<style") == 0) { skip_until("</style>"); continue; }
      std::size_t close = html.find('>', i);
      if (close == std::string_view::npos) break;
      // block-level tags become line breaks so words don't fuse
      out.push_back('\n');
      i = close + 1;
      continue;
    }
    if (html[i] == '&') {
      struct Entity { const char* name; char ch; };
      static const Entity entities[] = {{"&amp;", '&'}, {"&lt;", '<'}, {"&gt;", '>'},
                                        {"&quot;", '"'}, {"&#39;", '\''}, {"&nbsp;", ' '}};
      bool matched = false;
      for (const auto& e : entities) {
        std::size_t n = std::strlen(e.name);
        if (html.substr(i, n) == e.name) {
          out.push_back(e.ch);
          i += n;
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    out.push_back(html[i]);
    ++i;
  }
  // collapse runs of blank lines introduced by tag removal
  std::string collapsed;
  collapsed.reserve(out.size());
  int newlines = 0;
  for (char c : out) {
    if (c == '\n') {
      if (++newlines <= 2) collapsed.push_back(c);
    } else {
      newlines = 0;
      collapsed.push_back(c);
    }
  }
  return trim(collapsed);
}

inline bool looks_like_html(std::string_view text) {
  std::size_t p = find_ci(text, "<html");
  if (p != std::string::npos) return true;
  p = find_ci(text, "<!doctype html");
  if (p != std::string::npos) return true;
  p = find_ci(text, "<body");
  return p != std::string::npos;
}

using UriFetcher = std::function<std::string(const std::string& uri)>;

struct IngestWarning {
  std::string uri;
  std::string message;
};

struct IngestResult {
  std::vector<SourceDocument> corpus;
  std::vector<IngestWarning> warnings;
};

// One SourceDocument per successfully extracted URI; per-URI failures are
// reported without aborting the batch. Local paths are read directly; any
// http(s) URI goes through the supplied fetcher.
inline IngestResult ingest_sources(const std::vector<std::string>& uris,
                                   const UriFetcher& fetch_remote = nullptr) {
  if (uris.empty()) throw ValidationError("ingest_sources: empty URI list");
  IngestResult result;
  for (const auto& uri : uris) {
    std::string raw;
    try {
      bool remote = uri.rfind("http://", 0) == 0 || uri.rfind("https://", 0) == 0;
      if (remote) {
        if (!fetch_remote) throw ValidationError("no fetcher configured for " + uri);
        raw = fetch_remote(uri);
      } else {
        raw = read_file(uri);
      }
    } catch (const std::exception& e) {
      result.warnings.push_back({uri, e.what()});
      continue;
    }
    if (looks_like_html(raw)) raw = strip_html(raw);
    raw = trim(raw);
    if (raw.empty()) {
      result.warnings.push_back({uri, "extraction yielded empty text"});
      continue;
    }
    result.corpus.push_back({uri, std::move(raw), now_ms()});
  }
  if (result.corpus.empty()) {
    throw ValidationError("ingest_sources: all URIs failed");
  }
  return result;
}

// Source list file: one URI per line, `#` comments. Relative file entries
// resolve against the list file's own directory.
inline std::vector<std::string> load_source_list(const std::string& path) {
  std::string dir;
  if (std::size_t slash = path.find_last_of('/'); slash != std::string::npos) {
    dir = path.substr(0, slash);
  }
  std::vector<std::string> uris;
  for (const auto& line : split_lines(read_file(path))) {
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    bool remote = t.rfind("http://", 0) == 0 || t.rfind("https://", 0) == 0;
    if (!remote && !dir.empty() && t[0] != '/') t = dir + "/" + t;
    uris.push_back(t);
  }
  return uris;
}

struct ChunkParams {
  std::size_t chunk_size = 1000;
  std::size_t overlap = 200;
};

struct VectorIndex {
  std::size_t dimension = 0;
  std::string embedder_id;
  std::vector<Chunk> chunks;

  bool empty() const { return chunks.empty(); }
  std::size_t size() const { return chunks.size(); }
};

// Chunk spans start at 0 and advance by (chunk_size - overlap) while the
// start is inside the document, so spans cover the whole text and adjacent
// chunks overlap by exactly `overlap` (the final chunk may be shorter).
inline std::vector<std::pair<std::size_t, std::size_t>> chunk_spans(
    std::size_t length, const ChunkParams& params) {
  if (params.chunk_size == 0 || params.overlap >= params.chunk_size) {
    throw ValidationError("chunk params require chunk_size > overlap >= 0");
  }
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t stride = params.chunk_size - params.overlap;
  for (std::size_t start = 0; start < length || spans.empty(); start += stride) {
    spans.emplace_back(start, std::min(length, start + params.chunk_size));
    if (start + stride >= length) break;
  }
  return spans;
}

inline VectorIndex chunk_and_embed(const std::vector<SourceDocument>& corpus,
                                   const ChunkParams& params,
                                   const Embedder& embedder) {
  if (corpus.empty()) throw ValidationError("chunk_and_embed: empty corpus");
  VectorIndex index;
  index.dimension = embedder.dimension();
  index.embedder_id = embedder.id();
  for (const auto& doc : corpus) {
    if (doc.raw_text.empty()) {
      throw ValidationError("document has no text: " + doc.source_uri);
    }
    auto spans = chunk_spans(doc.raw_text.size(), params);
    for (std::size_t i = 0; i < spans.size(); ++i) {
      Chunk chunk;
      chunk.doc_ref = doc.source_uri;
      chunk.ordinal = i;
      chunk.text = doc.raw_text.substr(spans[i].first, spans[i].second - spans[i].first);
      chunk.embedding = embedder.embed(chunk.text);
      if (chunk.embedding.size() != index.dimension) {
        throw ValidationError("embedder dimension mismatch for " + doc.source_uri);
      }
      index.chunks.push_back(std::move(chunk));
    }
  }
  return index;
}

// Top-k by cosine similarity; ties broken by (doc_ref, ordinal) ascending.
inline ContextBundle retrieve(const VectorIndex& index, const std::string& query,
                              std::size_t k, const Embedder& embedder) {
  if (index.empty()) throw ValidationError("retrieve: empty index");
  if (k == 0) throw ValidationError("retrieve: k must be positive");
  std::vector<double> qv = embedder.embed(query);
  if (qv.size() != index.dimension) {
    throw ValidationError("query embedding dimension mismatch");
  }
  std::vector<RetrievalHit> hits;
  hits.reserve(index.size());
  for (std::size_t i = 0; i < index.chunks.size(); ++i) {
    hits.push_back({i, cosine_similarity(qv, index.chunks[i].embedding)});
  }
  std::sort(hits.begin(), hits.end(), [&](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.score != b.score) return a.score > b.score;
    const Chunk& ca = index.chunks[a.chunk_index];
    const Chunk& cb = index.chunks[b.chunk_index];
    if (ca.doc_ref != cb.doc_ref) return ca.doc_ref < cb.doc_ref;
    return ca.ordinal < cb.ordinal;
  });
  ContextBundle bundle;
  bundle.query = query;
  bundle.truncated = k > hits.size();
  hits.resize(std::min(k, hits.size()));
  bundle.hits = std::move(hits);
  return bundle;
}

inline std::string render_hits(const VectorIndex& index, const ContextBundle& bundle) {
  std::string out;
  for (const auto& hit : bundle.hits) {
    const Chunk& c = index.chunks[hit.chunk_index];
    out += "[" + c.doc_ref + " #" + std::to_string(c.ordinal) + "]\n";
    out += c.text;
    out += "\n\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Index persistence: binary flat file, header (magic, d, count, embedder id)
// followed by (doc_ref, ordinal, text, d doubles) records. No ANN structure;
// exhaustive scan is exact and adequate at this scale.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw IntegrityError("index file truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += 8;
  return v;
}

inline void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

inline std::string get_str(const std::string& in, std::size_t& pos) {
  std::uint64_t n = get_u64(in, pos);
  if (pos + n > in.size()) throw IntegrityError("index file truncated");
  std::string s = in.substr(pos, n);
  pos += n;
  return s;
}

}  // namespace detail

inline constexpr char kIndexMagic[] = "OCIDX1\n";

inline void save_index(const VectorIndex& index, const std::string& path) {
  std::string out(kIndexMagic);
  detail::put_u64(out, index.dimension);
  detail::put_u64(out, index.chunks.size());
  detail::put_str(out, index.embedder_id);
  for (const auto& c : index.chunks) {
    detail::put_str(out, c.doc_ref);
    detail::put_u64(out, c.ordinal);
    detail::put_str(out, c.text);
    for (double x : c.embedding) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, 8);
      detail::put_u64(out, bits);
    }
  }
  write_file(path, out);
}

inline VectorIndex load_index(const std::string& path) {
  std::string in = read_file(path);
  if (in.rfind(kIndexMagic, 0) != 0) {
    throw IntegrityError("not an index file: " + path);
  }
  std::size_t pos = std::strlen(kIndexMagic);
  VectorIndex index;
  index.dimension = detail::get_u64(in, pos);
  std::uint64_t count = detail::get_u64(in, pos);
  index.embedder_id = detail::get_str(in, pos);
  index.chunks.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Chunk c;
    c.doc_ref = detail::get_str(in, pos);
    c.ordinal = detail::get_u64(in, pos);
    c.text = detail::get_str(in, pos);
    c.embedding.resize(index.dimension);
    for (std::size_t j = 0; j < index.dimension; ++j) {
      std::uint64_t bits = detail::get_u64(in, pos);
      std::memcpy(&c.embedding[j], &bits, 8);
    }
    index.chunks.push_back(std::move(c));
  }
  return index;
}

}  // namespace oculus
