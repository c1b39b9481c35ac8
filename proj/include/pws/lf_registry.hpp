#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pws/error.hpp"
#include "pws/util.hpp"

namespace pws {

/// Code assigned when no valid answer was obtained after all retries.
inline constexpr int kFallbackCode = 6;

enum class AnswerKind { Binary, Ordinal, Categorical3, Target3 };

inline std::string_view to_string(AnswerKind kind) {
  switch (kind) {
    case AnswerKind::Binary: return "binary";
    case AnswerKind::Ordinal: return "ordinal";
    case AnswerKind::Categorical3: return "categorical3";
    case AnswerKind::Target3: return "target3";
  }
  return "binary";
}

inline std::optional<AnswerKind> parse_answer_kind(std::string_view s) {
  if (s == "binary") return AnswerKind::Binary;
  if (s == "ordinal") return AnswerKind::Ordinal;
  if (s == "categorical3") return AnswerKind::Categorical3;
  if (s == "target3") return AnswerKind::Target3;
  return std::nullopt;
}

/// Largest code a kind may emit; the fallback code is never in range.
inline int max_code(AnswerKind kind) {
  switch (kind) {
    case AnswerKind::Binary: return 1;
    case AnswerKind::Ordinal: return 5;
    case AnswerKind::Categorical3:
    case AnswerKind::Target3: return 2;
  }
  return 1;
}

struct AnswerVariant {
  std::string surface;
  int code;

  bool operator==(const AnswerVariant&) const = default;
};

struct AnswerSchema {
  AnswerKind kind = AnswerKind::Binary;
  std::vector<AnswerVariant> variant_map;
  int fallback_code = kFallbackCode;

  bool operator==(const AnswerSchema&) const = default;

  /// Surface strings in table order, e.g. for a mock backend to sample from.
  std::vector<std::string> surfaces() const {
    std::vector<std::string> out;
    out.reserve(variant_map.size());
    for (const auto& v : variant_map) out.push_back(v.surface);
    return out;
  }
};

/// Built-in answer vocabulary per kind (the answer-variant to integer table).
inline const AnswerSchema& builtin_schema(AnswerKind kind) {
  static const AnswerSchema binary{
      AnswerKind::Binary,
      {{"no", 0}, {"No", 0}, {"NO", 0}, {"nah", 0}, {"n", 0}, {"false", 0}, {"False", 0},
       {"yes", 1}, {"Yes", 1}, {"YES", 1}, {"yeah", 1}, {"y", 1}, {"true", 1}, {"True", 1}},
      kFallbackCode};
  static const AnswerSchema ordinal{
      AnswerKind::Ordinal,
      {{"0", 0}, {"zero", 0}, {"1", 1}, {"one", 1}, {"2", 2}, {"two", 2},
       {"3", 3}, {"three", 3}, {"4", 4}, {"four", 4}, {"5", 5}, {"five", 5}},
      kFallbackCode};
  static const AnswerSchema categorical3{
      AnswerKind::Categorical3,
      {{"A", 0}, {"a", 0}, {"homophobic", 0}, {"Homophobic", 0}, {"gay people", 0},
       {"B", 1}, {"b", 1}, {"transphobic", 1}, {"Transphobic", 1}, {"transgender people", 1},
       {"C", 2}, {"c", 2}, {"neither", 2}, {"Neither", 2}, {"neutral", 2}, {"none", 2},
       {"no group", 2}},
      kFallbackCode};
  static const AnswerSchema target3{
      AnswerKind::Target3,
      {{"sexual orientation", 0}, {"orientation", 0},
       {"gender identity", 1}, {"gender", 1},
       {"neither", 2}, {"neutral", 2}, {"none", 2}, {"no target", 2}},
      kFallbackCode};
  switch (kind) {
    case AnswerKind::Binary: return binary;
    case AnswerKind::Ordinal: return ordinal;
    case AnswerKind::Categorical3: return categorical3;
    case AnswerKind::Target3: return target3;
  }
  return binary;
}

/// Strips surrounding whitespace and trailing sentence punctuation.
inline std::string_view clean_answer(std::string_view raw) {
  std::string_view s = trim(raw);
  while (!s.empty() && (s.back() == '.' || s.back() == ',' || s.back() == '!' || is_space(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

/// Maps raw model text to its integer code. Matching is exact and
/// case-sensitive after `clean_answer`; anything else is std::nullopt.
inline std::optional<int> normalize_answer(std::string_view raw, const AnswerSchema& schema) {
  const std::string_view s = clean_answer(raw);
  for (const auto& v : schema.variant_map) {
    if (v.surface == s) return v.code;
  }
  return std::nullopt;
}

/// Throws ParseError if the schema breaks the code-range or uniqueness rules.
inline void validate_schema(const AnswerSchema& schema) {
  if (schema.fallback_code != kFallbackCode) {
    throw Error(ErrorCode::ParseError, "fallback code must be 6");
  }
  if (schema.variant_map.empty()) throw Error(ErrorCode::ParseError, "answer schema has no variants");
  std::set<std::string, std::less<>> seen;
  for (const auto& v : schema.variant_map) {
    if (v.code < 0 || v.code > max_code(schema.kind)) {
      throw Error(ErrorCode::ParseError, "code " + std::to_string(v.code) + " out of range for kind " +
                                             std::string(to_string(schema.kind)));
    }
    const std::string key(trim(v.surface));
    if (key.empty()) throw Error(ErrorCode::ParseError, "empty answer variant");
    if (!seen.insert(key).second) throw Error(ErrorCode::ParseError, "duplicate answer variant '" + key + "'");
  }
}

enum class Batch { Base, Added };

inline std::string_view to_string(Batch b) { return b == Batch::Base ? "base" : "added"; }

inline std::optional<Batch> parse_batch(std::string_view s) {
  if (s == "base") return Batch::Base;
  if (s == "added") return Batch::Added;
  return std::nullopt;
}

struct LabelingFunction {
  std::string lf_id;
  std::string question;
  AnswerSchema schema;
  Batch batch = Batch::Base;

  bool operator==(const LabelingFunction&) const = default;

  /// Digest over (lf_id, question, schema); batch membership is not content.
  std::string content_digest() const {
    std::string variants;
    for (const auto& v : schema.variant_map) {
      variants += v.surface;
      variants.push_back('\x1e');
      variants += std::to_string(v.code);
      variants.push_back('\x1e');
    }
    return digest_of(lf_id, question, to_string(schema.kind), variants);
  }
};

class LFRegistry {
 public:
  LFRegistry() = default;

  explicit LFRegistry(std::vector<LabelingFunction> lfs) : lfs_(std::move(lfs)) {
    std::set<std::string, std::less<>> ids;
    for (const auto& lf : lfs_) {
      if (lf.question.empty()) throw Error(ErrorCode::ParseError, "empty question for " + lf.lf_id);
      validate_schema(lf.schema);
      if (!ids.insert(lf.lf_id).second) throw Error(ErrorCode::DuplicateId, "duplicate lf_id '" + lf.lf_id + "'");
    }
    std::string all;
    for (const auto& lf : lfs_) all += lf.content_digest();
    hash_ = sha256_hex(all);
  }

  const std::vector<LabelingFunction>& lfs() const { return lfs_; }
  std::size_t size() const { return lfs_.size(); }
  bool empty() const { return lfs_.empty(); }
  const LabelingFunction& operator[](std::size_t i) const { return lfs_[i]; }
  const std::string& registry_hash() const { return hash_; }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& lf : lfs_) out.push_back(lf.lf_id);
    return out;
  }

  const LabelingFunction* find(std::string_view id) const {
    for (const auto& lf : lfs_) {
      if (lf.lf_id == id) return &lf;
    }
    return nullptr;
  }

  /// New registry with `more` appended after the current LFs.
  LFRegistry extended(const LFRegistry& more) const {
    std::vector<LabelingFunction> all = lfs_;
    all.insert(all.end(), more.lfs_.begin(), more.lfs_.end());
    return LFRegistry(std::move(all));
  }

  bool operator==(const LFRegistry& other) const { return lfs_ == other.lfs_; }

 private:
  std::vector<LabelingFunction> lfs_;
  std::string hash_ = sha256_hex("");
};

namespace detail {

inline AnswerSchema schema_from_surfaces(const std::vector<std::string>& surfaces, AnswerKind kind,
                                         std::size_t line_no) {
  const AnswerSchema& table = builtin_schema(kind);
  AnswerSchema schema{kind, {}, kFallbackCode};
  for (const auto& v : table.variant_map) {
    if (std::find(surfaces.begin(), surfaces.end(), v.surface) != surfaces.end()) schema.variant_map.push_back(v);
  }
  for (const auto& s : surfaces) {
    if (!normalize_answer(s, table) || clean_answer(s) != s) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": answer '" + s +
                                             "' is not in the " + std::string(to_string(kind)) + " vocabulary");
    }
  }
  return schema;
}

inline std::optional<AnswerKind> infer_kind(const std::vector<std::string>& surfaces) {
  for (AnswerKind k : {AnswerKind::Binary, AnswerKind::Ordinal, AnswerKind::Categorical3, AnswerKind::Target3}) {
    const auto& table = builtin_schema(k);
    const bool all = std::all_of(surfaces.begin(), surfaces.end(),
                                 [&](const std::string& s) { return normalize_answer(s, table).has_value(); });
    if (all) return k;
  }
  return std::nullopt;
}

}  // namespace detail

/// Parses one LF record. `index` is the 1-based position used for id synthesis.
inline LabelingFunction parse_lf_record(std::string_view line, std::size_t index, std::size_t line_no,
                                        Batch default_batch) {
  const auto fail = [&](const std::string& msg) {
    return Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + msg);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  }
  if (!j.is_object()) throw fail("record is not an object");

  LabelingFunction lf;
  lf.batch = default_batch;
  if (j.contains("lf_id")) {
    if (!j["lf_id"].is_string() || j["lf_id"].get<std::string>().empty()) throw fail("lf_id must be a non-empty string");
    lf.lf_id = j["lf_id"].get<std::string>();
  } else {
    std::string n = std::to_string(index);
    lf.lf_id = "lf" + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n;
  }
  if (!j.contains("question") || !j["question"].is_string()) throw fail("missing question");
  lf.question = j["question"].get<std::string>();
  if (trim(lf.question).empty()) throw fail("empty question");

  if (j.contains("batch")) {
    auto b = j["batch"].is_string() ? parse_batch(j["batch"].get<std::string>()) : std::nullopt;
    if (!b) throw fail("batch must be base or added");
    lf.batch = *b;
  }

  std::optional<AnswerKind> kind;
  if (j.contains("kind")) {
    kind = j["kind"].is_string() ? parse_answer_kind(j["kind"].get<std::string>()) : std::nullopt;
    if (!kind) throw fail("kind must be one of binary|ordinal|categorical3|target3");
  }

  const nlohmann::json answers = j.value("acceptable_answers", nlohmann::json());
  if (answers.is_null()) {
    if (!kind) throw fail("missing kind");
    lf.schema = builtin_schema(*kind);
  } else if (answers.is_array()) {
    std::vector<std::string> surfaces;
    for (const auto& a : answers) {
      if (!a.is_string()) throw fail("acceptable_answers entries must be strings");
      surfaces.push_back(a.get<std::string>());
    }
    if (!kind) kind = detail::infer_kind(surfaces);
    if (!kind) throw fail("cannot infer answer kind from acceptable_answers");
    lf.schema = detail::schema_from_surfaces(surfaces, *kind, line_no);
  } else if (answers.is_object()) {
    if (!kind) throw fail("missing kind");
    lf.schema = AnswerSchema{*kind, {}, kFallbackCode};
    for (const auto& [code_str, variants] : answers.items()) {
      int code = -1;
      try {
        std::size_t pos = 0;
        code = std::stoi(code_str, &pos);
        if (pos != code_str.size()) code = -1;
      } catch (const std::exception&) {
        code = -1;
      }
      if (code < 0) throw fail("answer code '" + code_str + "' is not an integer");
      if (!variants.is_array()) throw fail("variants for code " + code_str + " must be a list");
      for (const auto& v : variants) {
        if (!v.is_string()) throw fail("answer variants must be strings");
        lf.schema.variant_map.push_back({v.get<std::string>(), code});
      }
    }
  } else {
    throw fail("acceptable_answers must be a list or an object");
  }
  try {
    validate_schema(lf.schema);
  } catch (const Error& e) {
    throw fail(e.what());
  }
  return lf;
}

/// Loads a line-delimited LF file. Blank lines are skipped; ids not given in
/// the file are synthesized from the record's 1-based position.
inline LFRegistry load_registry(const std::filesystem::path& path, Batch default_batch = Batch::Base) {
  const auto lines = read_lines(path);
  std::vector<LabelingFunction> lfs;
  std::set<std::string, std::less<>> ids;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    auto lf = parse_lf_record(lines[i], lfs.size() + 1, i + 1, default_batch);
    if (!ids.insert(lf.lf_id).second) {
      throw Error(ErrorCode::DuplicateId, "line " + std::to_string(i + 1) + ": duplicate lf_id '" + lf.lf_id + "'");
    }
    lfs.push_back(std::move(lf));
  }
  if (lfs.empty()) throw Error(ErrorCode::EmptyRegistry, path.string() + " contains no labeling functions");
  return LFRegistry(std::move(lfs));
}

inline nlohmann::json to_json(const LabelingFunction& lf) {
  nlohmann::json answers = nlohmann::json::object();
  for (const auto& v : lf.schema.variant_map) answers[std::to_string(v.code)].push_back(v.surface);
  return {{"lf_id", lf.lf_id},
          {"question", lf.question},
          {"kind", to_string(lf.schema.kind)},
          {"batch", to_string(lf.batch)},
          {"acceptable_answers", answers}};
}

/// Inverse of load_registry: one JSON record per line with explicit variants.
inline std::string serialize_registry(const LFRegistry& registry) {
  std::string out;
  for (const auto& lf : registry.lfs()) {
    out += to_json(lf).dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace pws
