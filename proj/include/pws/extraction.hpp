#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "pws/dataset.hpp"
#include "pws/error.hpp"
#include "pws/lf_registry.hpp"
#include "pws/prompts.hpp"
#include "pws/util.hpp"
#include "pws/vlm_gateway.hpp"

namespace pws {

/// Attempts per (meme, LF) cell before the fallback code is assigned.
inline constexpr int kMaxAnswerAttempts = 10;

/// Dense meme x LF matrix of answer codes. Rows follow manifest order,
/// columns follow registry order.
struct FeatureMatrix {
  std::vector<std::string> meme_ids;
  std::vector<std::string> lf_ids;
  std::vector<int> values;  // row-major
  std::string registry_hash;
  std::string model_id;

  std::size_t rows() const { return meme_ids.size(); }
  std::size_t cols() const { return lf_ids.size(); }
  int at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  int& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  std::span<const int> row(std::size_t r) const { return {values.data() + r * cols(), cols()}; }

  bool operator==(const FeatureMatrix&) const = default;

  std::optional<std::size_t> row_of(std::string_view id) const {
    for (std::size_t i = 0; i < meme_ids.size(); ++i) {
      if (meme_ids[i] == id) return i;
    }
    return std::nullopt;
  }

  /// Rows for `ids`, in the order given. Unknown ids throw ShapeMismatch.
  FeatureMatrix select_rows(const std::vector<std::string>& ids) const {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < meme_ids.size(); ++i) index.emplace(meme_ids[i], i);
    FeatureMatrix out{{}, lf_ids, {}, registry_hash, model_id};
    out.values.reserve(ids.size() * cols());
    for (const auto& id : ids) {
      auto it = index.find(id);
      if (it == index.end()) throw Error(ErrorCode::ShapeMismatch, "meme '" + id + "' not in feature matrix");
      out.meme_ids.push_back(id);
      auto r = row(it->second);
      out.values.insert(out.values.end(), r.begin(), r.end());
    }
    return out;
  }

  /// Copy without the listed columns; column order is otherwise preserved.
  FeatureMatrix drop_columns(const std::set<std::string, std::less<>>& drop) const {
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < cols(); ++c) {
      if (!drop.count(lf_ids[c])) keep.push_back(c);
    }
    FeatureMatrix out{meme_ids, {}, {}, registry_hash, model_id};
    for (auto c : keep) out.lf_ids.push_back(lf_ids[c]);
    out.values.reserve(rows() * keep.size());
    for (std::size_t r = 0; r < rows(); ++r) {
      for (auto c : keep) out.values.push_back(at(r, c));
    }
    return out;
  }
};

inline std::string to_csv(const FeatureMatrix& m) {
  std::vector<std::string> header{"meme_id"};
  header.insert(header.end(), m.lf_ids.begin(), m.lf_ids.end());
  std::string out = csv_row(header);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::vector<std::string> cells{m.meme_ids[r]};
    for (int v : m.row(r)) cells.push_back(std::to_string(v));
    out += csv_row(cells);
  }
  return out;
}

inline FeatureMatrix feature_matrix_from_csv(const std::vector<std::string>& lines, const std::string& source) {
  std::size_t first = 0;
  while (first < lines.size() && trim(lines[first]).empty()) ++first;
  if (first == lines.size()) throw Error(ErrorCode::ParseError, source + ": empty feature CSV");
  auto header = csv_split(lines[first]);
  if (header.empty() || header[0] != "meme_id") throw Error(ErrorCode::ParseError, source + ": first column must be meme_id");
  FeatureMatrix m;
  m.lf_ids.assign(header.begin() + 1, header.end());
  for (std::size_t i = first + 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    auto cells = csv_split(lines[i]);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::ParseError, source + ":" + std::to_string(i + 1) + ": expected " +
                                             std::to_string(header.size()) + " cells");
    }
    m.meme_ids.push_back(cells[0]);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      try {
        std::size_t pos = 0;
        const int v = std::stoi(cells[c], &pos);
        if (pos != cells[c].size()) throw std::invalid_argument("trailing");
        m.values.push_back(v);
      } catch (const std::exception&) {
        throw Error(ErrorCode::ParseError, source + ":" + std::to_string(i + 1) + ": non-integer cell '" + cells[c] + "'");
      }
    }
  }
  return m;
}

/// Reads a feature CSV and, when present, its `.meta.json` sidecar.
inline FeatureMatrix read_feature_csv(const std::filesystem::path& path) {
  auto m = feature_matrix_from_csv(read_lines(path), path.string());
  const std::filesystem::path meta = path.string() + ".meta.json";
  if (std::filesystem::exists(meta)) {
    try {
      const auto j = nlohmann::json::parse(read_file(meta));
      m.registry_hash = j.value("registry_hash", "");
      m.model_id = j.value("model_id", "");
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, meta.string() + ": " + e.what());
    }
  }
  return m;
}

struct CacheEntry {
  std::string key;
  std::string meme_id;
  std::string lf_id;
  int code = kFallbackCode;
  std::string raw_final_answer;
  int attempts_used = 0;

  bool operator==(const CacheEntry&) const = default;
};

inline std::string cache_key(std::string_view meme_id, const LabelingFunction& lf, std::string_view model_id,
                             std::string_view prompt_digest) {
  return digest_of(meme_id, lf.content_digest(), model_id, prompt_digest);
}

/// Append-only line-delimited cache with an in-memory index. An empty path
/// keeps the cache in memory only. Later lines win on duplicate keys.
class FeatureCache {
 public:
  FeatureCache() = default;

  explicit FeatureCache(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.empty()) return;
    if (std::filesystem::exists(path_)) {
      const auto lines = read_lines(path_);
      for (std::size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        try {
          const auto j = nlohmann::json::parse(lines[i]);
          CacheEntry e{j.at("key"), j.value("meme_id", ""), j.value("lf_id", ""), j.at("code"),
                       j.value("raw", ""), j.at("attempts")};
          index_[e.key] = std::move(e);
        } catch (const nlohmann::json::exception&) {
          // Torn line from an interrupted run; the cell is recomputed.
          ++skipped_lines_;
        }
      }
      const std::string tail = read_file(path_);
      needs_newline_ = !tail.empty() && tail.back() != '\n';
    } else if (path_.has_parent_path()) {
      std::filesystem::create_directories(path_.parent_path());
    }
    out_.open(path_, std::ios::app | std::ios::binary);
    if (!out_) throw Error(ErrorCode::IoError, "cannot open cache " + path_.string());
    if (needs_newline_) out_ << '\n';
  }

  std::optional<CacheEntry> lookup(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const std::string& key) const {
    std::lock_guard lock(mutex_);
    return index_.count(key) > 0;
  }

  void append(const CacheEntry& e) {
    std::lock_guard lock(mutex_);
    index_[e.key] = e;
    if (out_.is_open()) {
      const nlohmann::json j = {{"key", e.key},   {"meme_id", e.meme_id}, {"lf_id", e.lf_id},
                                {"code", e.code}, {"raw", e.raw_final_answer}, {"attempts", e.attempts_used}};
      out_ << j.dump() << '\n';
      out_.flush();
    }
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return index_.size();
  }

  std::size_t skipped_lines() const { return skipped_lines_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, CacheEntry> index_;
  std::ofstream out_;
  std::size_t skipped_lines_ = 0;
  bool needs_newline_ = false;
};

struct CellResult {
  int code = kFallbackCode;
  std::string raw_final_answer;
  int attempts_used = 0;
};

/// Asks one LF question about one meme until the answer normalizes, up to
/// kMaxAnswerAttempts times; afterwards the fallback code is returned.
/// The prompt is identical on every attempt; only the temperature changes.
inline CellResult extract_cell(const std::shared_ptr<const ImagePayload>& image, const LabelingFunction& lf,
                               Gateway& gateway) {
  const auto hints = lf.schema.surfaces();
  CellResult result;
  for (int attempt = 1; attempt <= kMaxAnswerAttempts; ++attempt) {
    VlmRequest req;
    req.system_prompt = feature_system_prompt();
    req.user_text = lf.question;
    req.image = image;
    req.temperature = temperature_for_attempt(attempt);
    req.max_output_tokens = kAnswerMaxTokens;
    req.model_id = gateway.model_id();
    req.attempt = attempt;
    req.answer_hints = hints;
    auto resp = gateway.ask(std::move(req));
    result.raw_final_answer = std::move(resp.text);
    result.attempts_used = attempt;
    if (auto code = normalize_answer(result.raw_final_answer, lf.schema)) {
      result.code = *code;
      return result;
    }
  }
  result.code = kFallbackCode;
  return result;
}

inline CellResult extract_cell(const MemeRecord& meme, const LabelingFunction& lf, Gateway& gateway,
                               FeatureCache* cache = nullptr) {
  auto result = extract_cell(load_image(meme.image_ref), lf, gateway);
  if (cache) {
    cache->append({cache_key(meme.meme_id, lf, gateway.model_id(), sha256_hex(feature_system_prompt())),
                   meme.meme_id, lf.lf_id, result.code, result.raw_final_answer, result.attempts_used});
  }
  return result;
}

struct ExtractionOptions {
  std::optional<Batch> only_batch;
  int workers = 8;
  double abort_error_fraction = 0.01;
};

struct CellError {
  std::string meme_id;
  std::string lf_id;
  std::string message;
};

struct ExtractionStats {
  std::size_t cells = 0;
  std::size_t cache_hits = 0;
  std::size_t call_chains = 0;  // cells resolved by asking the gateway
  std::uint64_t gateway_calls = 0;
  std::size_t fallback_cells = 0;
  std::vector<CellError> errors;

  double cache_hit_rate() const { return cells ? static_cast<double>(cache_hits) / static_cast<double>(cells) : 0.0; }
  double fallback_rate() const { return cells ? static_cast<double>(fallback_cells) / static_cast<double>(cells) : 0.0; }
};

struct ExtractionResult {
  FeatureMatrix matrix;
  ExtractionStats stats;
};

/// Fills every (meme, LF) cell from the cache or by asking the gateway.
///
/// With only_batch=Added the base-batch cells must already be cached and are
/// merged in; with only_batch=Base the matrix holds the base columns only.
/// Cells that fail (transport, image) are not cached and hold the fallback
/// code; the run aborts if their share exceeds abort_error_fraction.
inline ExtractionResult extract_matrix(const DatasetManifest& manifest, const LFRegistry& registry, Gateway& gateway,
                                       FeatureCache& cache, const ExtractionOptions& options = {}) {
  std::vector<LabelingFunction> lfs;
  for (const auto& lf : registry.lfs()) {
    if (options.only_batch == Batch::Base && lf.batch != Batch::Base) continue;
    lfs.push_back(lf);
  }
  const LFRegistry columns = lfs.size() == registry.size() ? registry : LFRegistry(lfs);
  const std::string prompt_digest = sha256_hex(feature_system_prompt());
  const std::string& model_id = gateway.model_id();
  const std::size_t n_rows = manifest.size();
  const std::size_t n_cols = columns.size();

  ExtractionResult out;
  FeatureMatrix& m = out.matrix;
  m.meme_ids = manifest.ids();
  m.lf_ids = columns.ids();
  m.values.assign(n_rows * n_cols, kFallbackCode);
  m.registry_hash = columns.registry_hash();
  m.model_id = model_id;

  std::vector<std::string> keys(n_rows * n_cols);
  std::vector<char> resolved(n_rows * n_cols, 0);
  std::vector<std::vector<std::size_t>> pending(n_rows);
  for (std::size_t r = 0; r < n_rows; ++r) {
    for (std::size_t c = 0; c < n_cols; ++c) {
      const auto& lf = columns[c];
      const std::size_t cell = r * n_cols + c;
      keys[cell] = cache_key(manifest.records[r].meme_id, lf, model_id, prompt_digest);
      if (auto hit = cache.lookup(keys[cell])) {
        m.values[cell] = hit->code;
        resolved[cell] = 1;
        ++out.stats.cache_hits;
      } else if (options.only_batch == Batch::Added && lf.batch == Batch::Base) {
        throw Error(ErrorCode::MissingBaseFeatures, "no cached base feature for meme '" + manifest.records[r].meme_id +
                                                        "', lf '" + lf.lf_id + "'; run a full extraction first");
      } else {
        pending[r].push_back(c);
      }
    }
  }
  out.stats.cells = n_rows * n_cols;

  const std::uint64_t calls_before = gateway.calls();
  const auto max_errors =
      static_cast<std::size_t>(options.abort_error_fraction * static_cast<double>(out.stats.cells));
  std::mutex mutex;
  std::atomic<std::size_t> next_row{0};
  std::atomic<bool> stop{false};
  std::exception_ptr fatal;
  std::vector<CellResult> results(n_rows * n_cols);

  auto record_error = [&](std::size_t r, std::size_t c, const std::string& msg) {
    std::lock_guard lock(mutex);
    out.stats.errors.push_back({manifest.records[r].meme_id, columns[c].lf_id, msg});
    if (out.stats.errors.size() > max_errors) stop = true;
  };

  auto worker = [&] {
    while (!stop) {
      const std::size_t r = next_row.fetch_add(1);
      if (r >= n_rows) return;
      if (pending[r].empty()) continue;
      std::shared_ptr<const ImagePayload> image;
      try {
        image = load_image(manifest.records[r].image_ref);
      } catch (const Error& e) {
        for (auto c : pending[r]) record_error(r, c, e.what());
        continue;
      }
      for (auto c : pending[r]) {
        if (stop) return;
        const std::size_t cell = r * n_cols + c;
        try {
          results[cell] = extract_cell(image, columns[c], gateway);
        } catch (const Error& e) {
          if (e.code() == ErrorCode::AuthError || e.code() == ErrorCode::ConfigError) {
            std::lock_guard lock(mutex);
            if (!fatal) fatal = std::current_exception();
            stop = true;
            return;
          }
          record_error(r, c, e.what());
          continue;
        }
        cache.append({keys[cell], manifest.records[r].meme_id, columns[c].lf_id, results[cell].code,
                      results[cell].raw_final_answer, results[cell].attempts_used});
        resolved[cell] = 1;  // distinct cells per worker; read only after join
      }
    }
  };

  const int n_workers = std::max(1, std::min<int>(options.workers, static_cast<int>(std::max<std::size_t>(n_rows, 1))));
  {
    std::vector<std::jthread> pool;
    for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  }
  if (fatal) std::rethrow_exception(fatal);
  std::sort(out.stats.errors.begin(), out.stats.errors.end(), [](const CellError& a, const CellError& b) {
    return std::tie(a.meme_id, a.lf_id) < std::tie(b.meme_id, b.lf_id);
  });
  if (out.stats.errors.size() > max_errors) {
    throw Error(ErrorCode::TooManyCellErrors,
                std::to_string(out.stats.errors.size()) + " of " + std::to_string(out.stats.cells) +
                    " cells failed; first: " + out.stats.errors.front().message);
  }

  for (std::size_t r = 0; r < n_rows; ++r) {
    for (auto c : pending[r]) {
      const std::size_t cell = r * n_cols + c;
      if (resolved[cell]) {
        m.values[cell] = results[cell].code;
        ++out.stats.call_chains;
      }
    }
  }
  for (int v : m.values) {
    if (v == kFallbackCode) ++out.stats.fallback_cells;
  }
  out.stats.gateway_calls = gateway.calls() - calls_before;
  return out;
}

}  // namespace pws
