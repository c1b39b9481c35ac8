#pragma once

// Shared test fixtures: temporary directories, a small on-disk meme corpus,
// LF registries of configurable size, a scripted backend and synthetic matrices.

#include <atomic>
#include <deque>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "pws/pws.hpp"

namespace pws::testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    for (int i = 0; i < 100; ++i) {
      auto p = fs::temp_directory_path() / ("pws-test-" + std::to_string(rd()));
      if (fs::create_directory(p)) {
        path_ = p;
        return;
      }
    }
    throw std::runtime_error("cannot create temp dir");
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline const char* kLabelNames[] = {"Homophobic", "Transphobic", "Non-Anti-LGBT"};

/// Writes `n` memes (fake PNG bytes) and a manifest; labels cycle over the three classes.
inline fs::path write_corpus(const fs::path& dir, std::size_t n, const std::string& language = "en",
                             const std::string& manifest_name = "manifest.jsonl", bool labeled = true,
                             const std::string& id_prefix = "m") {
  fs::create_directories(dir / "images");
  std::string manifest;
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%s%03zu", id_prefix.c_str(), i);
    write_file(dir / "images" / (std::string(id) + ".png"), std::string("\x89PNG\r\n\x1a\n", 8) + "pixels:" + id);
    nlohmann::json j = {{"meme_id", id}, {"image_path", "images/" + std::string(id) + ".png"}, {"language", language}};
    if (labeled) j["label"] = kLabelNames[i % 3];
    manifest += j.dump() + "\n";
  }
  write_file(dir / manifest_name, manifest);
  return dir / manifest_name;
}

/// One LF per line; answer kinds cycle binary, ordinal, categorical, target.
inline fs::path write_registry(const fs::path& path, std::size_t n, std::size_t first_index, const std::string& batch) {
  static const char* kinds[] = {"binary", "ordinal", "categorical3", "target3"};
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = first_index + i;
    char id[32];
    std::snprintf(id, sizeof id, "q%03zu", idx);
    nlohmann::json j = {{"lf_id", id},
                        {"question", "Synthetic question number " + std::to_string(idx) + "?"},
                        {"kind", kinds[idx % 4]},
                        {"batch", batch}};
    out += j.dump() + "\n";
  }
  write_file(path, out);
  return path;
}

/// Replies from a fixed script, in call order; repeats the last reply once exhausted.
class ScriptedBackend : public VlmBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}

  VlmResponse ask(const VlmRequest& request) override {
    std::lock_guard lock(mutex_);
    requests_.push_back(request);
    VlmResponse r;
    r.attempt = request.attempt;
    r.text = replies_.empty() ? "" : replies_[std::min(next_, replies_.size() - 1)];
    ++next_;
    return r;
  }

  std::vector<VlmRequest> requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
  }

 private:
  std::vector<std::string> replies_;
  std::size_t next_ = 0;
  mutable std::mutex mutex_;
  std::vector<VlmRequest> requests_;
};

inline std::shared_ptr<const ImagePayload> fake_image(const std::string& tag = "img") {
  auto p = std::make_shared<ImagePayload>();
  p->bytes = "\x89PNG" + tag;
  p->media_type = "image/png";
  p->digest = sha256_hex(p->bytes);
  return p;
}

/// In-memory labeled manifest with ids r000, r001, ...
inline DatasetManifest labeled_manifest(const std::vector<int>& labels) {
  DatasetManifest m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "r%04zu", i);
    MemeRecord r;
    r.meme_id = id;
    r.image_ref = std::string(id) + ".png";
    r.gold_label = static_cast<Label>(labels[i]);
    m.records.push_back(r);
  }
  return m;
}

inline FeatureMatrix make_matrix(const DatasetManifest& manifest, std::vector<std::string> lf_ids) {
  FeatureMatrix m;
  m.meme_ids = manifest.ids();
  m.lf_ids = std::move(lf_ids);
  m.values.assign(m.rows() * m.cols(), 0);
  return m;
}

/// Balanced labels 0,1,2,0,1,2,...
inline std::vector<int> cyclic_labels(std::size_t n) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 3);
  return y;
}

/// Independent macro-F1: per class present in gold, count tp/fp/fn directly.
inline double oracle_macro_f1(const std::vector<int>& gold, const std::vector<int>& pred) {
  std::vector<int> classes;
  for (int g : gold) {
    if (std::find(classes.begin(), classes.end(), g) == classes.end()) classes.push_back(g);
  }
  double sum = 0.0;
  for (int c : classes) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (gold[i] == c && pred[i] == c) tp += 1;
      if (gold[i] != c && pred[i] == c) fp += 1;
      if (gold[i] == c && pred[i] != c) fn += 1;
    }
    sum += tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
  }
  return sum / static_cast<double>(classes.size());
}

/// Independent Jaccard from sorted-range set algebra.
inline double oracle_jaccard(const IdSet& a, const IdSet& b) {
  std::vector<std::string> inter, uni;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
  return uni.empty() ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

/// A labeled matrix with its split, as the refinement stages consume it.
struct LabeledFixture {
  DatasetManifest manifest;
  FeatureMatrix matrix;
  std::vector<int> labels;
  SplitAssignment split;
};

/// Code equal to the label with probability `p`, otherwise uniform over 0..2.
inline int noisy_code(int label, double p, Rng& rng) {
  return rng.uniform() < p ? label : static_cast<int>(rng.below(3));
}

/// N balanced rows; column "signal" equals the label, four more columns are uniform noise in 0..5.
inline LabeledFixture signal_fixture(std::size_t n = 300, std::uint64_t seed = 1) {
  LabeledFixture f;
  f.labels = cyclic_labels(n);
  f.manifest = labeled_manifest(f.labels);
  f.matrix = make_matrix(f.manifest, {"noise_a", "signal", "noise_b", "noise_c", "noise_d"});
  Rng rng(seed);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < f.matrix.cols(); ++c) f.matrix.at(r, c) = static_cast<int>(rng.below(6));
    f.matrix.at(r, 1) = f.labels[r];
  }
  f.split = stratified_split(f.manifest, 0.2, 42);
  return f;
}

/// Column 0 copies the label on training rows and shifts it by one on
/// validation rows; two columns are noisy copies of the label and two are noise.
inline LabeledFixture adversarial_fixture(std::size_t n = 300) {
  LabeledFixture f;
  f.labels = cyclic_labels(n);
  f.manifest = labeled_manifest(f.labels);
  f.split = stratified_split(f.manifest, 0.2, 42);
  f.matrix = make_matrix(f.manifest, {"adversary", "weak_a", "rand_a", "weak_b", "rand_b"});
  const std::set<std::string> val(f.split.val_ids.begin(), f.split.val_ids.end());
  Rng rng(11);
  for (std::size_t r = 0; r < n; ++r) {
    const int y = f.labels[r];
    f.matrix.at(r, 0) = val.count(f.matrix.meme_ids[r]) ? (y + 1) % 3 : y;
    f.matrix.at(r, 1) = noisy_code(y, 0.8, rng);
    f.matrix.at(r, 2) = static_cast<int>(rng.below(3));
    f.matrix.at(r, 3) = noisy_code(y, 0.8, rng);
    f.matrix.at(r, 4) = static_cast<int>(rng.below(3));
  }
  return f;
}

/// Three noisy copies of the label followed by seven constant columns.
inline LabeledFixture informative_constant_fixture(std::size_t n = 300) {
  LabeledFixture f;
  f.labels = cyclic_labels(n);
  f.manifest = labeled_manifest(f.labels);
  f.split = stratified_split(f.manifest, 0.2, 42);
  std::vector<std::string> ids{"info_0", "info_1", "info_2"};
  for (int i = 0; i < 7; ++i) ids.push_back("const_" + std::to_string(i));
  f.matrix = make_matrix(f.manifest, ids);
  Rng rng(5);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < 3; ++c) f.matrix.at(r, c) = noisy_code(f.labels[r], 0.7, rng);
    for (std::size_t c = 3; c < 10; ++c) f.matrix.at(r, c) = 1;
  }
  return f;
}

/// A self-contained CLI workspace: corpus, base (59) and added (30) registries,
/// a small test manifest and a mock-backend config with relative paths.
inline fs::path write_cli_workspace(const fs::path& dir, std::size_t memes = 30) {
  write_corpus(dir, memes, "en", "train.jsonl");
  write_corpus(dir, 9, "en", "test.jsonl", true, "t");
  write_registry(dir / "lfs_base.jsonl", 59, 0, "base");
  write_registry(dir / "lfs_added.jsonl", 30, 59, "added");
  const nlohmann::json config = {
      {"manifest", "train.jsonl"},
      {"test_manifest", "test.jsonl"},
      {"language", "en"},
      {"registry", {{"base", "lfs_base.jsonl"}, {"added", "lfs_added.jsonl"}}},
      {"backend", {{"kind", "mock"}, {"model_id", "mock-vlm"}, {"invalid_probability", 0.05}, {"max_in_flight", 4}}},
      {"cache", "cache/features.jsonl"},
      {"output_dir", "out"},
      {"seed", 42},
      {"val_fraction", 0.2},
      {"forest", {{"n_trees", 100}}}};
  write_file(dir / "config.json", config.dump(2));
  return dir / "config.json";
}

/// SHA-256 of every regular file under `root`, keyed by relative path.
inline std::map<std::string, std::string> tree_digests(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = sha256_hex(read_file(e.path()));
  }
  return out;
}

/// Runs the CLI with `args`; stdout and stderr go to `log`. Returns the exit status.
inline int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(PWS_CLI_PATH) + " " + args + " > '" + log.string() + "' 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace pws::testing
