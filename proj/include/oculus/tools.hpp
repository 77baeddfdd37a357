// Task-level tool plane: the five ophthalmic tool adapters (remote endpoint
// or deterministic stub), modality classification, CDR computation, and
// schema validation of tool payloads.

#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "oculus/chat.hpp"
#include "oculus/common.hpp"
#include "oculus/gateway.hpp"

namespace oculus {

enum class ToolId { diagnose, lesion_detect, fundus_localize, oct_localize, dr_severity };

inline const std::vector<ToolId>& all_tool_ids() {
  static const std::vector<ToolId> ids = {
      ToolId::diagnose, ToolId::lesion_detect, ToolId::fundus_localize,
      ToolId::oct_localize, ToolId::dr_severity};
  return ids;
}

inline const char* tool_name(ToolId id) {
  switch (id) {
    case ToolId::diagnose: return "diagnose";
    case ToolId::lesion_detect: return "lesion_detect";
    case ToolId::fundus_localize: return "fundus_localize";
    case ToolId::oct_localize: return "oct_localize";
    case ToolId::dr_severity: return "dr_severity";
  }
  return "?";
}

inline std::optional<ToolId> tool_from_name(std::string_view s) {
  for (ToolId id : all_tool_ids()) {
    if (s == tool_name(id)) return id;
  }
  return std::nullopt;
}

// Free-text aliases for matching tool mentions in evaluator feedback and
// planner replies. Ordered: the id itself first.
inline const std::vector<std::string>& tool_aliases(ToolId id) {
  static const std::map<ToolId, std::vector<std::string>> table = {
      {ToolId::diagnose, {"diagnose", "diagnosis tool", "diagnose tool"}},
      {ToolId::lesion_detect,
       {"lesion_detect", "lesion detection", "lesion detector", "detect lesions"}},
      {ToolId::fundus_localize,
       {"fundus_localize", "fundus localization", "cup-to-disc", "cup to disc",
        "optic disc segmentation"}},
      {ToolId::oct_localize,
       {"oct_localize", "oct localization", "oct segmentation"}},
      {ToolId::dr_severity,
       {"dr_severity", "dr severity", "dr grading", "dr staging", "dr stage",
        "diabetic retinopathy grading"}},
  };
  return table.at(id);
}

enum class Modality { CFP, OCT, Unknown };

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::CFP: return "CFP";
    case Modality::OCT: return "OCT";
    case Modality::Unknown: return "unknown";
  }
  return "unknown";
}

// Accepted modalities are fixed per tool.
inline const std::set<Modality>& accepted_modalities(ToolId id) {
  static const std::set<Modality> cfp_oct = {Modality::CFP, Modality::OCT};
  static const std::set<Modality> cfp = {Modality::CFP};
  static const std::set<Modality> oct = {Modality::OCT};
  switch (id) {
    case ToolId::diagnose: return cfp_oct;
    case ToolId::lesion_detect: return cfp;
    case ToolId::fundus_localize: return cfp;
    case ToolId::oct_localize: return oct;
    case ToolId::dr_severity: return cfp;
  }
  return cfp;
}

struct ModalityLabel {
  Modality label = Modality::Unknown;
  double confidence = 0.0;  // for `unknown`, the max rejected-class score
};

enum class AdapterKind { remote, stub };

struct ToolDescriptor {
  ToolId tool_id = ToolId::diagnose;
  std::string description;
  AdapterKind adapter = AdapterKind::stub;
  std::string endpoint;      // remote only
  std::string fixture_path;  // stub only

  const std::set<Modality>& modalities() const { return accepted_modalities(tool_id); }
};

// ---------------------------------------------------------------------------
// Tool outputs (tagged union). The JSON encodings double as the remote wire
// schema and the stub fixture payload schema.
// ---------------------------------------------------------------------------

struct DiagnosisScores {
  std::map<std::string, double> probabilities;  // exactly the 18-label roster
};

struct LesionBox {
  std::string lesion_type;  // hard_exudate | soft_exudate | hemorrhage | microaneurysm
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double confidence = 0;
};

struct LesionBoxes {
  std::vector<LesionBox> boxes;
};

struct Point {
  double x = 0, y = 0;
};

using Polygon = std::vector<Point>;

struct FundusRegions {
  Polygon cup;
  Polygon disc;
  double cdr = 0;  // in (0,1]
};

struct OctRegions {
  Polygon choroid;
  Polygon retina;
  std::optional<Polygon> macular_hole;
};

struct DrStageScores {
  std::map<std::string, double> probabilities;  // exactly the 5-stage roster
};

using ToolOutput =
    std::variant<DiagnosisScores, LesionBoxes, FundusRegions, OctRegions, DrStageScores>;

inline ToolId output_tool_id(const ToolOutput& out) {
  switch (out.index()) {
    case 0: return ToolId::diagnose;
    case 1: return ToolId::lesion_detect;
    case 2: return ToolId::fundus_localize;
    case 3: return ToolId::oct_localize;
    default: return ToolId::dr_severity;
  }
}

struct ToolInvocation {
  ToolId tool_id = ToolId::diagnose;
  ImageRef image;
  std::int64_t started_at = 0;
  std::int64_t finished_at = 0;
  std::optional<ToolOutput> output;  // empty on error
  std::string error;
  AdapterKind adapter_used = AdapterKind::stub;

  bool ok() const { return output.has_value(); }
};

// ---------------------------------------------------------------------------
// Label rosters: 18 conditions for the classifier, 5 DR stages for the
// grader. The counts are fixed; the rosters ship as editable config files
// with these defaults.
// ---------------------------------------------------------------------------

struct LabelSets {
  std::vector<std::string> conditions;
  std::vector<std::string> dr_stages;

  static LabelSets defaults() {
    LabelSets sets;
    sets.conditions = {
        "normal", "diabetic_retinopathy", "glaucoma", "cataract",
        "age_related_macular_degeneration", "hypertensive_retinopathy",
        "pathological_myopia", "choroidal_neovascularization",
        "diabetic_macular_edema", "drusen", "central_serous_retinopathy",
        "epiretinal_membrane", "macular_hole", "retinal_vein_occlusion",
        "retinal_artery_occlusion", "retinal_detachment",
        "retinitis_pigmentosa", "optic_atrophy"};
    sets.dr_stages = {"no_dr", "mild", "moderate", "severe", "proliferative"};
    return sets;
  }

  static std::vector<std::string> load_labels(const std::string& path) {
    std::vector<std::string> labels;
    for (const auto& line : split_lines(read_file(path))) {
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      labels.push_back(t);
    }
    return labels;
  }
};

inline const std::vector<std::string>& lesion_types() {
  static const std::vector<std::string> types = {"hard_exudate", "soft_exudate",
                                                 "hemorrhage", "microaneurysm"};
  return types;
}

// ---------------------------------------------------------------------------
// JSON codecs
// ---------------------------------------------------------------------------

inline nlohmann::json polygon_to_json(const Polygon& poly) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : poly) arr.push_back({p.x, p.y});
  return arr;
}

inline Polygon polygon_from_json(const nlohmann::json& arr) {
  Polygon poly;
  for (const auto& p : arr) {
    if (!p.is_array() || p.size() != 2) throw ValidationError("polygon vertex must be [x,y]");
    poly.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return poly;
}

inline nlohmann::json tool_output_to_json(const ToolOutput& out) {
  nlohmann::json j;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, DiagnosisScores>) {
          j["kind"] = "diagnosis_scores";
          j["probabilities"] = v.probabilities;
        } else if constexpr (std::is_same_v<T, LesionBoxes>) {
          j["kind"] = "lesion_boxes";
          nlohmann::json boxes = nlohmann::json::array();
          for (const auto& b : v.boxes) {
            boxes.push_back({{"lesion_type", b.lesion_type},
                             {"bbox", {b.x1, b.y1, b.x2, b.y2}},
                             {"confidence", b.confidence}});
          }
          j["boxes"] = std::move(boxes);
        } else if constexpr (std::is_same_v<T, FundusRegions>) {
          j["kind"] = "fundus_regions";
          j["cup"] = polygon_to_json(v.cup);
          j["disc"] = polygon_to_json(v.disc);
          j["cdr"] = v.cdr;
        } else if constexpr (std::is_same_v<T, OctRegions>) {
          j["kind"] = "oct_regions";
          j["choroid"] = polygon_to_json(v.choroid);
          j["retina"] = polygon_to_json(v.retina);
          if (v.macular_hole) j["macular_hole"] = polygon_to_json(*v.macular_hole);
        } else {
          j["kind"] = "dr_stage_scores";
          j["probabilities"] = v.probabilities;
        }
      },
      out);
  return j;
}

inline ToolOutput tool_output_from_json(ToolId tool_id, const nlohmann::json& j) {
  switch (tool_id) {
    case ToolId::diagnose: {
      DiagnosisScores scores;
      for (auto it = j.at("probabilities").begin(); it != j.at("probabilities").end(); ++it) {
        scores.probabilities[it.key()] = it.value().get<double>();
      }
      return scores;
    }
    case ToolId::lesion_detect: {
      LesionBoxes out;
      for (const auto& b : j.at("boxes")) {
        const auto& bbox = b.at("bbox");
        out.boxes.push_back({b.at("lesion_type").get<std::string>(),
                             bbox[0].get<double>(), bbox[1].get<double>(),
                             bbox[2].get<double>(), bbox[3].get<double>(),
                             b.at("confidence").get<double>()});
      }
      return out;
    }
    case ToolId::fundus_localize: {
      FundusRegions out;
      out.cup = polygon_from_json(j.at("cup"));
      out.disc = polygon_from_json(j.at("disc"));
      out.cdr = j.at("cdr").get<double>();
      return out;
    }
    case ToolId::oct_localize: {
      OctRegions out;
      out.choroid = polygon_from_json(j.at("choroid"));
      out.retina = polygon_from_json(j.at("retina"));
      if (j.contains("macular_hole")) {
        out.macular_hole = polygon_from_json(j.at("macular_hole"));
      }
      return out;
    }
    case ToolId::dr_severity: {
      DrStageScores scores;
      for (auto it = j.at("probabilities").begin(); it != j.at("probabilities").end(); ++it) {
        scores.probabilities[it.key()] = it.value().get<double>();
      }
      return scores;
    }
  }
  throw ValidationError("unknown tool id");
}

// ---------------------------------------------------------------------------
// Schema validation. Accepts a payload iff it satisfies the variant
// invariants for the tool; rejections name the violated invariant.
// ---------------------------------------------------------------------------

struct SchemaCheck {
  bool ok = true;
  std::string error;

  static SchemaCheck pass() { return {}; }
  static SchemaCheck fail(std::string message) { return {false, std::move(message)}; }
};

inline SchemaCheck check_probability_map(const nlohmann::json& probs,
                                         const std::vector<std::string>& roster,
                                         const std::string& what) {
  if (!probs.is_object()) return SchemaCheck::fail(what + ": probabilities must be a map");
  if (probs.size() != roster.size()) {
    return SchemaCheck::fail("expected " + std::to_string(roster.size()) + " " + what);
  }
  for (const auto& label : roster) {
    if (!probs.contains(label)) {
      return SchemaCheck::fail(what + ": missing label '" + label + "'");
    }
    if (!probs[label].is_number()) {
      return SchemaCheck::fail(what + ": probability for '" + label + "' not numeric");
    }
    double p = probs[label].get<double>();
    if (!std::isfinite(p)) return SchemaCheck::fail(what + ": probability not finite");
    if (p < 0.0 || p > 1.0) return SchemaCheck::fail("probability out of [0,1]");
  }
  return SchemaCheck::pass();
}

inline SchemaCheck check_polygon(const nlohmann::json& poly, const std::string& what) {
  if (!poly.is_array() || poly.size() < 3) {
    return SchemaCheck::fail(what + ": polygon needs at least 3 vertices");
  }
  for (const auto& v : poly) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      return SchemaCheck::fail(what + ": polygon vertex must be [x,y]");
    }
    if (!std::isfinite(v[0].get<double>()) || !std::isfinite(v[1].get<double>())) {
      return SchemaCheck::fail(what + ": polygon coordinate not finite");
    }
  }
  return SchemaCheck::pass();
}

inline SchemaCheck validate_output(ToolId tool_id, const nlohmann::json& payload,
                                   const LabelSets& labels = LabelSets::defaults()) {
  switch (tool_id) {
    case ToolId::diagnose:
      if (!payload.contains("probabilities")) {
        return SchemaCheck::fail("expected " + std::to_string(labels.conditions.size()) +
                                 " condition labels");
      }
      return check_probability_map(payload["probabilities"], labels.conditions,
                                   "condition labels");
    case ToolId::dr_severity:
      if (!payload.contains("probabilities")) {
        return SchemaCheck::fail("expected " + std::to_string(labels.dr_stages.size()) +
                                 " stage labels");
      }
      return check_probability_map(payload["probabilities"], labels.dr_stages,
                                   "stage labels");
    case ToolId::lesion_detect: {
      if (!payload.contains("boxes") || !payload["boxes"].is_array()) {
        return SchemaCheck::fail("lesion payload: missing boxes array");
      }
      for (const auto& b : payload["boxes"]) {
        if (!b.contains("lesion_type") || !b.contains("bbox") || !b.contains("confidence")) {
          return SchemaCheck::fail("lesion box: requires lesion_type, bbox, confidence");
        }
        std::string type = b["lesion_type"].get<std::string>();
        const auto& types = lesion_types();
        if (std::find(types.begin(), types.end(), type) == types.end()) {
          return SchemaCheck::fail("lesion box: unknown lesion_type '" + type + "'");
        }
        const auto& bbox = b["bbox"];
        if (!bbox.is_array() || bbox.size() != 4) {
          return SchemaCheck::fail("lesion box: bbox must be [x1,y1,x2,y2]");
        }
        double x1 = bbox[0].get<double>(), y1 = bbox[1].get<double>();
        double x2 = bbox[2].get<double>(), y2 = bbox[3].get<double>();
        if (!(x1 < x2) || !(y1 < y2)) {
          return SchemaCheck::fail("lesion box: requires x1<x2 and y1<y2");
        }
        double conf = b["confidence"].get<double>();
        if (!std::isfinite(conf) || conf < 0.0 || conf > 1.0) {
          return SchemaCheck::fail("probability out of [0,1]");
        }
      }
      return SchemaCheck::pass();
    }
    case ToolId::fundus_localize: {
      if (!payload.contains("cup") || !payload.contains("disc") || !payload.contains("cdr")) {
        return SchemaCheck::fail("fundus payload: requires cup, disc, cdr");
      }
      if (auto c = check_polygon(payload["cup"], "cup"); !c.ok) return c;
      if (auto c = check_polygon(payload["disc"], "disc"); !c.ok) return c;
      double cdr = payload["cdr"].get<double>();
      if (!std::isfinite(cdr) || cdr <= 0.0 || cdr > 1.0) {
        return SchemaCheck::fail("cdr out of (0,1]");
      }
      return SchemaCheck::pass();
    }
    case ToolId::oct_localize: {
      if (!payload.contains("choroid") || !payload.contains("retina")) {
        return SchemaCheck::fail("oct payload: requires choroid and retina");
      }
      if (auto c = check_polygon(payload["choroid"], "choroid"); !c.ok) return c;
      if (auto c = check_polygon(payload["retina"], "retina"); !c.ok) return c;
      if (payload.contains("macular_hole")) {
        if (auto c = check_polygon(payload["macular_hole"], "macular_hole"); !c.ok) return c;
      }
      return SchemaCheck::pass();
    }
  }
  return SchemaCheck::fail("unknown tool id");
}

// ---------------------------------------------------------------------------
// CDR: vertical-diameter convention; extent(cup) / extent(disc).
// ---------------------------------------------------------------------------

struct CdrResult {
  double value = 0;
  bool exceeds_disc = false;  // cup extent beyond disc: reported, not clamped
};

inline double vertical_extent(const Polygon& poly) {
  double lo = poly.front().y, hi = poly.front().y;
  for (const auto& p : poly) {
    lo = std::min(lo, p.y);
    hi = std::max(hi, p.y);
  }
  return hi - lo;
}

inline CdrResult compute_cdr(const Polygon& cup, const Polygon& disc) {
  if (cup.size() < 3 || disc.size() < 3) {
    throw ValidationError("compute_cdr: polygons need at least 3 vertices");
  }
  double disc_extent = vertical_extent(disc);
  if (disc_extent <= 0.0) {
    throw ValidationError("compute_cdr: disc vertical extent is zero");
  }
  double cup_extent = vertical_extent(cup);
  CdrResult r;
  r.value = cup_extent / disc_extent;
  r.exceeds_disc = r.value > 1.0;
  return r;
}

// ---------------------------------------------------------------------------
// Modality classification. The stub reads a `<image>.meta` sidecar
// (`modality=CFP|OCT` lines) and falls back to a filename token; untagged
// images classify as unknown.
// ---------------------------------------------------------------------------

class ModalityClassifier {
public:
  virtual ~ModalityClassifier() = default;
  virtual ModalityLabel classify(const ImageRef& image) const = 0;
};

class StubModalityClassifier : public ModalityClassifier {
public:
  ModalityLabel classify(const ImageRef& image) const override {
    std::string meta_path = image.path + ".meta";
    if (file_exists(meta_path)) {
      for (const auto& line : split_lines(read_file(meta_path))) {
        std::string t = trim(line);
        if (t.rfind("modality=", 0) == 0) {
          std::string value = to_lower(trim(t.substr(9)));
          if (value == "cfp") return {Modality::CFP, 1.0};
          if (value == "oct") return {Modality::OCT, 1.0};
        }
      }
    }
    std::string name = to_lower(image.path);
    if (has_token(name, "cfp")) return {Modality::CFP, 1.0};
    if (has_token(name, "oct")) return {Modality::OCT, 1.0};
    return {Modality::Unknown, 0.0};
  }

private:
  static bool has_token(const std::string& name, const std::string& token) {
    std::size_t pos = 0;
    while ((pos = name.find(token, pos)) != std::string::npos) {
      bool left_ok = pos == 0 || !std::isalnum(static_cast<unsigned char>(name[pos - 1]));
      std::size_t end = pos + token.size();
      bool right_ok = end == name.size() || !std::isalnum(static_cast<unsigned char>(name[end]));
      if (left_ok && right_ok) return true;
      pos = end;
    }
    return false;
  }
};

class RemoteModalityClassifier : public ModalityClassifier {
public:
  RemoteModalityClassifier(std::shared_ptr<ChatTransport> transport, std::string endpoint)
      : transport_(std::move(transport)), endpoint_(std::move(endpoint)) {}

  ModalityLabel classify(const ImageRef& image) const override {
    nlohmann::json req{{"image_sha256", image.sha256}};
    HttpResponse resp = transport_->post_json(endpoint_, req.dump(), "");
    if (!resp.ok()) {
      throw BackendError("modality endpoint failed: " +
                         (resp.transport_error.empty() ? std::to_string(resp.status)
                                                       : resp.transport_error));
    }
    nlohmann::json j = nlohmann::json::parse(resp.body);
    std::string label = to_lower(j.value("label", "unknown"));
    double conf = j.value("confidence", 0.0);
    if (label == "cfp") return {Modality::CFP, conf};
    if (label == "oct") return {Modality::OCT, conf};
    return {Modality::Unknown, conf};
  }

private:
  std::shared_ptr<ChatTransport> transport_;
  std::string endpoint_;
};

// ---------------------------------------------------------------------------
// Tool adapters and registry
// ---------------------------------------------------------------------------

// Stub fixture file: line-delimited `IMAGE_HASH<TAB>JSON_PAYLOAD` records;
// an optional `*` hash provides the fallback payload.
class StubToolFixture {
public:
  static StubToolFixture from_file(const std::string& path) {
    StubToolFixture fixture;
    std::size_t lineno = 0;
    for (const auto& raw : split_lines(read_file(path))) {
      ++lineno;
      if (raw.empty() || raw[0] == '#') continue;
      std::size_t tab = raw.find('\t');
      if (tab == std::string::npos) {
        throw ValidationError(path + ":" + std::to_string(lineno) +
                              ": expected IMAGE_HASH<TAB>PAYLOAD");
      }
      std::string hash = trim(raw.substr(0, tab));
      nlohmann::json payload = nlohmann::json::parse(raw.substr(tab + 1), nullptr, false);
      if (payload.is_discarded()) {
        throw ValidationError(path + ":" + std::to_string(lineno) + ": bad JSON payload");
      }
      if (hash == "*") {
        fixture.fallback_ = payload;
      } else {
        fixture.entries_[hash] = payload;
      }
    }
    return fixture;
  }

  std::optional<nlohmann::json> lookup(const std::string& sha256) const {
    auto it = entries_.find(sha256);
    if (it != entries_.end()) return std::optional<nlohmann::json>(it->second);
    return fallback_;
  }

private:
  std::map<std::string, nlohmann::json> entries_;
  std::optional<nlohmann::json> fallback_;
};

class ToolRegistry {
public:
  ToolRegistry() = default;

  void register_tool(const ToolDescriptor& descriptor) {
    if (by_id_.count(descriptor.tool_id)) {
      throw ValidationError(std::string("tool already registered: ") +
                            tool_name(descriptor.tool_id));
    }
    if (descriptor.adapter == AdapterKind::remote && descriptor.endpoint.empty()) {
      throw ValidationError(std::string("remote tool requires endpoint: ") +
                            tool_name(descriptor.tool_id));
    }
    ToolDescriptor d = descriptor;
    if (d.description.empty()) d.description = default_description(d.tool_id);
    if (d.adapter == AdapterKind::stub && !d.fixture_path.empty()) {
      fixtures_[d.tool_id] = StubToolFixture::from_file(d.fixture_path);
    }
    order_.push_back(d.tool_id);
    by_id_.emplace(d.tool_id, std::move(d));
  }

  // Registers all five tools as stubs with no fixtures. Mostly for tests
  // that only need descriptors (selection, adherence).
  static ToolRegistry with_default_stubs() {
    ToolRegistry reg;
    for (ToolId id : all_tool_ids()) {
      ToolDescriptor d;
      d.tool_id = id;
      reg.register_tool(d);
    }
    return reg;
  }

  bool contains(ToolId id) const { return by_id_.count(id) != 0; }
  std::size_t size() const { return by_id_.size(); }

  const ToolDescriptor& descriptor(ToolId id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) {
      throw ValidationError(std::string("tool not registered: ") + tool_name(id));
    }
    return it->second;
  }

  std::vector<ToolDescriptor> list() const {
    std::vector<ToolDescriptor> out;
    for (ToolId id : order_) out.push_back(by_id_.at(id));
    return out;
  }

  const StubToolFixture* fixture(ToolId id) const {
    auto it = fixtures_.find(id);
    return it == fixtures_.end() ? nullptr : &it->second;
  }

  static std::string default_description(ToolId id) {
    switch (id) {
      case ToolId::diagnose:
        return "classifies 18 ophthalmic conditions with per-condition probabilities";
      case ToolId::lesion_detect:
        return "detects fundus lesions and returns bounding boxes with confidences";
      case ToolId::fundus_localize:
        return "segments optic cup and disc and computes the cup-to-disc ratio";
      case ToolId::oct_localize:
        return "locates choroid, retina and macular hole in OCT scans";
      case ToolId::dr_severity:
        return "grades diabetic retinopathy into five stages with probabilities";
    }
    return {};
  }

private:
  std::map<ToolId, ToolDescriptor> by_id_;
  std::map<ToolId, StubToolFixture> fixtures_;
  std::vector<ToolId> order_;
};

struct ToolContext {
  const LabelSets* labels = nullptr;
  std::shared_ptr<ChatTransport> transport;  // remote adapters only
  ModalityLabel modality;                    // as observed for the image
};

inline ToolInvocation invoke_tool(const ToolRegistry& registry,
                                  const ToolDescriptor& descriptor,
                                  const ImageRef& image, const ToolContext& ctx) {
  ToolInvocation inv;
  inv.tool_id = descriptor.tool_id;
  inv.image = image;
  inv.adapter_used = descriptor.adapter;
  inv.started_at = now_ms();
  LabelSets default_labels = LabelSets::defaults();
  const LabelSets& labels = ctx.labels ? *ctx.labels : default_labels;

  auto finish_error = [&](std::string message) {
    inv.error = std::move(message);
    inv.finished_at = std::max(inv.started_at, now_ms());
    return inv;
  };

  if (!descriptor.modalities().count(ctx.modality.label)) {
    return finish_error(std::string("modality mismatch: ") + tool_name(descriptor.tool_id) +
                        " does not accept " + modality_name(ctx.modality.label) + " images");
  }

  nlohmann::json payload;
  if (descriptor.adapter == AdapterKind::stub) {
    const StubToolFixture* fixture = registry.fixture(descriptor.tool_id);
    if (!fixture) {
      return finish_error(std::string("stub tool has no fixture: ") +
                          tool_name(descriptor.tool_id));
    }
    auto found = fixture->lookup(image.sha256);
    if (!found) {
      return finish_error("no fixture entry for image " + image.sha256.substr(0, 12));
    }
    payload = *found;
  } else {
    if (!ctx.transport) return finish_error("remote tool has no transport");
    nlohmann::json req{{"tool_id", tool_name(descriptor.tool_id)},
                       {"image_sha256", image.sha256},
                       {"image_base64", base64_encode(read_file(image.path))},
                       {"params", nlohmann::json::object()}};
    HttpResponse resp = ctx.transport->post_json(descriptor.endpoint, req.dump(), "");
    if (!resp.ok()) {
      return finish_error("remote tool failed: " +
                          (resp.transport_error.empty() ? "HTTP " + std::to_string(resp.status)
                                                        : resp.transport_error));
    }
    payload = nlohmann::json::parse(resp.body, nullptr, false);
    if (payload.is_discarded()) {
      return finish_error("remote tool returned invalid JSON: " + resp.body);
    }
  }

  SchemaCheck check = validate_output(descriptor.tool_id, payload, labels);
  if (!check.ok) {
    return finish_error("schema-invalid payload (" + check.error +
                        "): " + payload.dump());
  }
  inv.output = tool_output_from_json(descriptor.tool_id, payload);
  inv.finished_at = std::max(inv.started_at, now_ms());
  return inv;
}

// Compact single-line rendering used in prompts and memory.
inline std::string render_tool_output(const ToolOutput& out) {
  nlohmann::json j = tool_output_to_json(out);
  std::string s = j.dump();
  if (s.size() > 600) s = s.substr(0, 600) + "...";
  return s;
}

}  // namespace oculus
