#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "pws/error.hpp"
#include "pws/util.hpp"

namespace pws {

enum class Label : int { Homophobic = 0, Transphobic = 1, NonAntiLGBT = 2 };

inline constexpr int kNumLabels = 3;

/// Prediction value that matches no gold class (e.g. an unparseable baseline answer).
inline constexpr int kNoLabel = -1;

inline std::string_view to_string(Label l) {
  switch (l) {
    case Label::Homophobic: return "Homophobic";
    case Label::Transphobic: return "Transphobic";
    case Label::NonAntiLGBT: return "Non-Anti-LGBT";
  }
  return "Non-Anti-LGBT";
}

/// Name for an integer class id as used by metrics and forests.
inline std::string label_name(int id) {
  if (id >= 0 && id < kNumLabels) return std::string(to_string(static_cast<Label>(id)));
  return "Unparseable";
}

/// Accepts the dataset's spelling and the baseline prompts' spelling, case-
/// and separator-insensitively ("Non-Anti-LGBT", "Non_Anti_LGBT", "non anti lgbt").
inline std::optional<Label> parse_label(std::string_view s) {
  std::string key;
  for (char c : to_lower_ascii(trim(s))) {
    if (c != ' ' && c != '_' && c != '-') key.push_back(c);
  }
  if (key == "homophobic" || key == "homophobia") return Label::Homophobic;
  if (key == "transphobic" || key == "transphobia") return Label::Transphobic;
  if (key == "nonantilgbt" || key == "nonantilgbtq" || key == "nonantilgbtq+") return Label::NonAntiLGBT;
  return std::nullopt;
}

enum class Language { En, Hi, Zh };
enum class LanguageScope { En, Hi, Zh, All };

inline std::string_view to_string(Language l) {
  switch (l) {
    case Language::En: return "en";
    case Language::Hi: return "hi";
    case Language::Zh: return "zh";
  }
  return "en";
}

inline std::optional<Language> parse_language(std::string_view s) {
  if (s == "en") return Language::En;
  if (s == "hi") return Language::Hi;
  if (s == "zh") return Language::Zh;
  return std::nullopt;
}

inline std::string_view to_string(LanguageScope l) {
  switch (l) {
    case LanguageScope::En: return "en";
    case LanguageScope::Hi: return "hi";
    case LanguageScope::Zh: return "zh";
    case LanguageScope::All: return "all";
  }
  return "all";
}

inline std::optional<LanguageScope> parse_language_scope(std::string_view s) {
  if (s == "all") return LanguageScope::All;
  if (auto l = parse_language(s)) return static_cast<LanguageScope>(static_cast<int>(*l));
  return std::nullopt;
}

inline bool in_scope(Language l, LanguageScope scope) {
  return scope == LanguageScope::All || static_cast<int>(l) == static_cast<int>(scope);
}

enum class SplitKind { Train, Test };

struct MemeRecord {
  std::string meme_id;
  std::filesystem::path image_ref;
  Language language = Language::En;
  std::optional<Label> gold_label;
};

struct ManifestCounts {
  std::array<std::size_t, kNumLabels> per_label{};
  std::size_t unlabeled = 0;
  std::map<std::string, std::size_t> per_language;
};

struct DatasetManifest {
  std::vector<MemeRecord> records;
  SplitKind split = SplitKind::Train;
  LanguageScope language_scope = LanguageScope::All;

  std::size_t size() const { return records.size(); }

  ManifestCounts counts() const {
    ManifestCounts c;
    for (const auto& r : records) {
      if (r.gold_label) {
        ++c.per_label[static_cast<int>(*r.gold_label)];
      } else {
        ++c.unlabeled;
      }
      ++c.per_language[std::string(to_string(r.language))];
    }
    return c;
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& r : records) out.push_back(r.meme_id);
    return out;
  }

  bool fully_labeled() const {
    return std::all_of(records.begin(), records.end(), [](const MemeRecord& r) { return r.gold_label.has_value(); });
  }

  /// Gold labels as class ids, kNoLabel where absent.
  std::vector<int> label_ids() const {
    std::vector<int> out;
    for (const auto& r : records) out.push_back(r.gold_label ? static_cast<int>(*r.gold_label) : kNoLabel);
    return out;
  }
};

/// Loads a line-delimited manifest. Records outside `scope` are skipped;
/// relative image paths resolve against the manifest's directory.
inline DatasetManifest load_manifest(const std::filesystem::path& path, SplitKind split, LanguageScope scope) {
  const auto lines = read_lines(path);
  DatasetManifest m;
  m.split = split;
  m.language_scope = scope;
  std::set<std::string, std::less<>> ids;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("meme_id") || !j["meme_id"].is_string() || !j.contains("image_path") ||
        !j["image_path"].is_string() || !j.contains("language") || !j["language"].is_string()) {
      throw Error(ErrorCode::ParseError, where + ": record needs string fields meme_id, image_path, language");
    }
    MemeRecord r;
    r.meme_id = j["meme_id"].get<std::string>();
    if (r.meme_id.empty()) throw Error(ErrorCode::ParseError, where + ": empty meme_id");
    const std::string lang = j["language"].get<std::string>();
    auto language = parse_language(lang);
    if (!language) throw Error(ErrorCode::UnknownLanguage, where + ": unknown language '" + lang + "'");
    r.language = *language;
    std::filesystem::path img = j["image_path"].get<std::string>();
    r.image_ref = img.is_absolute() ? img : path.parent_path() / img;
    if (j.contains("label") && !j["label"].is_null()) {
      if (!j["label"].is_string()) throw Error(ErrorCode::ParseError, where + ": label must be a string");
      auto label = parse_label(j["label"].get<std::string>());
      if (!label) throw Error(ErrorCode::ParseError, where + ": unknown label '" + j["label"].get<std::string>() + "'");
      r.gold_label = *label;
    }
    if (split == SplitKind::Train && !r.gold_label) {
      throw Error(ErrorCode::MissingLabel, where + ": train record '" + r.meme_id + "' has no label");
    }
    if (!ids.insert(r.meme_id).second) {
      throw Error(ErrorCode::ParseError, where + ": duplicate meme_id '" + r.meme_id + "'");
    }
    if (!in_scope(r.language, scope)) continue;
    m.records.push_back(std::move(r));
  }
  return m;
}

struct SplitAssignment {
  std::vector<std::string> train_ids;  // manifest order
  std::vector<std::string> val_ids;    // manifest order
  std::uint64_t seed = 42;
  double val_fraction = 0.2;

  bool operator==(const SplitAssignment&) const = default;

  /// Two-column id,role listing in manifest order of the union.
  std::string to_csv(const DatasetManifest& manifest) const {
    const std::set<std::string, std::less<>> val(val_ids.begin(), val_ids.end());
    std::string out = "meme_id,role\n";
    for (const auto& r : manifest.records) out += csv_row({r.meme_id, val.count(r.meme_id) ? "val" : "train"});
    return out;
  }
};

/// Validation slots per class: floor of the exact share, then leftover slots
/// by largest fractional remainder (ties to the lower class id). Each class
/// keeps at least one training member.
inline std::array<std::size_t, kNumLabels> allocate_validation_slots(const std::array<std::size_t, kNumLabels>& sizes,
                                                                     double fraction) {
  std::array<std::size_t, kNumLabels> slots{};
  std::size_t n = 0;
  std::vector<std::pair<double, int>> remainders;
  std::size_t assigned = 0;
  for (int c = 0; c < kNumLabels; ++c) {
    n += sizes[c];
    const double exact = fraction * static_cast<double>(sizes[c]);
    // Guard against 0.2 * 50 = 9.999999... style underflow.
    const double fl = std::floor(exact + 1e-9);
    slots[c] = static_cast<std::size_t>(fl);
    assigned += slots[c];
    remainders.push_back({exact - fl, c});
  }
  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first + 1e-12; });
  for (const auto& [rem, c] : remainders) {
    if (assigned >= target) break;
    if (sizes[c] == 0 || rem <= 1e-12) continue;
    ++slots[c];
    ++assigned;
  }
  for (int c = 0; c < kNumLabels; ++c) {
    if (sizes[c] > 0 && slots[c] >= sizes[c]) slots[c] = sizes[c] - 1;
  }
  return slots;
}

/// Deterministic stratified train/validation split of a labeled manifest.
inline SplitAssignment stratified_split(const DatasetManifest& manifest, double val_fraction, std::uint64_t seed) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw Error(ErrorCode::ConfigError, "val_fraction must be in [0, 1)");
  }
  std::array<std::vector<std::size_t>, kNumLabels> members;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (!r.gold_label) throw Error(ErrorCode::MissingLabel, "record '" + r.meme_id + "' has no label");
    members[static_cast<int>(*r.gold_label)].push_back(i);
  }
  std::array<std::size_t, kNumLabels> sizes{};
  for (int c = 0; c < kNumLabels; ++c) {
    sizes[c] = members[c].size();
    if (val_fraction > 0.0 && sizes[c] == 1) {
      throw Error(ErrorCode::ClassTooSmall, "class " + label_name(c) + " has a single member");
    }
  }
  const auto slots = allocate_validation_slots(sizes, val_fraction);

  std::vector<bool> is_val(manifest.records.size(), false);
  for (int c = 0; c < kNumLabels; ++c) {
    auto idx = members[c];
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    rng.shuffle(idx);
    for (std::size_t k = 0; k < slots[c]; ++k) is_val[idx[k]] = true;
  }
  SplitAssignment s;
  s.seed = seed;
  s.val_fraction = val_fraction;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    (is_val[i] ? s.val_ids : s.train_ids).push_back(manifest.records[i].meme_id);
  }
  return s;
}

}  // namespace pws
