#pragma once

// Workflow stages behind the command-line tool. Each stage reads a RunConfig,
// writes its artifacts under output_dir and returns a machine-readable summary.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <unordered_map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pws/baseline.hpp"
#include "pws/dataset.hpp"
#include "pws/error.hpp"
#include "pws/extraction.hpp"
#include "pws/forest.hpp"
#include "pws/lf_registry.hpp"
#include "pws/metrics.hpp"
#include "pws/refine.hpp"
#include "pws/util.hpp"
#include "pws/vlm_gateway.hpp"

namespace pws {

namespace fs = std::filesystem;

/// Number of highest-importance features flagged in the importance export.
inline constexpr std::size_t kTopImportanceCount = 20;

struct RunConfig {
  fs::path base_dir;  // relative paths resolve against this
  nlohmann::json raw;  // as read, before overrides

  std::string manifest;
  std::optional<std::string> test_manifest;
  LanguageScope language = LanguageScope::All;
  std::string registry_base;
  std::optional<std::string> registry_added;
  std::optional<BackendConfig> backend;
  std::string cache = "cache.jsonl";
  std::string output_dir = "out";
  std::uint64_t seed = 42;
  double val_fraction = 0.2;
  ForestConfig forest;
  std::vector<int> k_grid;  // empty = all k in [0, m)
  double abort_error_fraction = 0.01;
  int workers = 8;
  std::optional<Batch> only_batch;
  std::vector<std::pair<std::string, std::string>> jaccard_inputs;  // name -> prune result json

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }
  fs::path out(const std::string& name) const { return resolve(output_dir) / name; }

  /// Effective settings; location-independent so that digests are stable.
  nlohmann::json snapshot() const {
    nlohmann::json j = {{"manifest", manifest},
                        {"test_manifest", test_manifest ? nlohmann::json(*test_manifest) : nlohmann::json(nullptr)},
                        {"language", to_string(language)},
                        {"registry", {{"base", registry_base},
                                      {"added", registry_added ? nlohmann::json(*registry_added) : nlohmann::json(nullptr)}}},
                        {"cache", cache},
                        {"output_dir", output_dir},
                        {"seed", seed},
                        {"val_fraction", val_fraction},
                        {"forest", to_json(forest)},
                        {"k_grid", k_grid},
                        {"abort_error_fraction", abort_error_fraction},
                        {"only_batch", only_batch ? nlohmann::json(to_string(*only_batch)) : nlohmann::json(nullptr)}};
    if (backend) {
      j["backend"] = {{"kind", backend->kind == BackendKind::Mock ? "mock" : "http"},
                      {"endpoint_url", backend->endpoint_url ? nlohmann::json(*backend->endpoint_url) : nlohmann::json(nullptr)},
                      {"api_key_env", backend->api_key_env},
                      {"model_id", backend->model_id},
                      {"timeout_ms", backend->timeout.count()},
                      {"max_retries_transport", backend->max_retries_transport},
                      {"max_in_flight", backend->max_in_flight},
                      {"invalid_probability", backend->invalid_probability}};
    }
    return j;
  }

  std::string digest() const { return sha256_hex(snapshot().dump()); }
};

struct ConfigOverrides {
  std::optional<LanguageScope> language;
  std::optional<std::uint64_t> seed;
  std::optional<Batch> only_batch;
  std::optional<std::string> output_dir;
};

inline BackendConfig backend_config_from_json(const nlohmann::json& j) {
  BackendConfig b;
  const auto kind = j.value("kind", "mock");
  if (kind != "mock" && kind != "http") throw Error(ErrorCode::ConfigError, "backend.kind must be mock or http");
  b.kind = kind == "mock" ? BackendKind::Mock : BackendKind::Http;
  if (j.contains("endpoint_url") && !j["endpoint_url"].is_null()) b.endpoint_url = j["endpoint_url"].get<std::string>();
  b.api_key_env = j.value("api_key_env", b.api_key_env);
  b.model_id = j.value("model_id", b.kind == BackendKind::Mock ? std::string("mock-vlm") : std::string());
  if (b.model_id.empty()) throw Error(ErrorCode::ConfigError, "backend.model_id is required");
  if (j.contains("timeout_s")) b.timeout = std::chrono::milliseconds(static_cast<long>(j["timeout_s"].get<double>() * 1000));
  b.max_retries_transport = j.value("max_retries_transport", b.max_retries_transport);
  if (j.contains("retry_backoff_ms")) b.retry_backoff = std::chrono::milliseconds(j["retry_backoff_ms"].get<long>());
  b.max_in_flight = j.value("max_in_flight", b.max_in_flight);
  b.invalid_probability = j.value("invalid_probability", 0.0);
  if (b.kind == BackendKind::Http && !b.endpoint_url) throw Error(ErrorCode::ConfigError, "http backend requires endpoint_url");
  if (b.max_in_flight < 1) throw Error(ErrorCode::ConfigError, "backend.max_in_flight must be >= 1");
  if (b.max_retries_transport < 0) throw Error(ErrorCode::ConfigError, "backend.max_retries_transport must be >= 0");
  return b;
}

inline RunConfig load_run_config(const fs::path& path, const ConfigOverrides& ov = {}) {
  RunConfig c;
  c.base_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  try {
    c.raw = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  const auto& j = c.raw;
  try {
    if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
    if (!j.contains("manifest")) throw Error(ErrorCode::ConfigError, "config needs 'manifest'");
    c.manifest = j.at("manifest").get<std::string>();
    if (j.contains("test_manifest") && !j["test_manifest"].is_null()) c.test_manifest = j["test_manifest"].get<std::string>();
    if (j.contains("language")) {
      auto l = parse_language_scope(j["language"].get<std::string>());
      if (!l) throw Error(ErrorCode::ConfigError, "language must be en, hi, zh or all");
      c.language = *l;
    }
    if (!j.contains("registry")) throw Error(ErrorCode::ConfigError, "config needs 'registry'");
    if (j["registry"].is_string()) {
      c.registry_base = j["registry"].get<std::string>();
    } else {
      c.registry_base = j["registry"].at("base").get<std::string>();
      if (j["registry"].contains("added") && !j["registry"]["added"].is_null()) {
        c.registry_added = j["registry"]["added"].get<std::string>();
      }
    }
    if (j.contains("backend") && !j["backend"].is_null()) c.backend = backend_config_from_json(j["backend"]);
    c.cache = j.value("cache", c.cache);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.seed = j.value("seed", c.seed);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.forest.seed = c.seed;
    if (j.contains("forest")) c.forest = forest_config_from_json(j["forest"], c.forest);
    if (j.contains("k_grid")) c.k_grid = j["k_grid"].get<std::vector<int>>();
    c.abort_error_fraction = j.value("abort_error_fraction", c.abort_error_fraction);
    c.workers = j.value("workers", c.backend ? c.backend->max_in_flight : c.workers);
    if (j.contains("only_batch") && !j["only_batch"].is_null()) {
      auto b = parse_batch(j["only_batch"].get<std::string>());
      if (!b) throw Error(ErrorCode::ConfigError, "only_batch must be base or added");
      c.only_batch = *b;
    }
    if (j.contains("jaccard_inputs")) {
      for (const auto& [name, p] : j["jaccard_inputs"].items()) c.jaccard_inputs.push_back({name, p.get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
  if (ov.language) c.language = *ov.language;
  if (ov.seed) {
    c.seed = *ov.seed;
    c.forest.seed = *ov.seed;
  }
  if (ov.only_batch) c.only_batch = *ov.only_batch;
  if (ov.output_dir) c.output_dir = *ov.output_dir;
  if (c.val_fraction < 0.0 || c.val_fraction >= 1.0) throw Error(ErrorCode::ConfigError, "val_fraction must be in [0, 1)");
  return c;
}

namespace detail {

inline void log(const std::string& msg) { std::cerr << "[pws] " << msg << '\n'; }

inline std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline void write_json(const fs::path& p, const nlohmann::json& j) { write_file(p, j.dump(2) + "\n"); }

inline LFRegistry load_full_registry(const RunConfig& c) {
  auto reg = load_registry(c.resolve(c.registry_base), Batch::Base);
  if (c.registry_added) reg = reg.extended(load_registry(c.resolve(*c.registry_added), Batch::Added));
  return reg;
}

inline DatasetManifest load_train_manifest(const RunConfig& c) {
  return load_manifest(c.resolve(c.manifest), SplitKind::Train, c.language);
}

inline std::optional<DatasetManifest> load_test_manifest(const RunConfig& c) {
  if (!c.test_manifest) return std::nullopt;
  return load_manifest(c.resolve(*c.test_manifest), SplitKind::Test, c.language);
}

/// Labels for the matrix rows, looked up by meme id in the manifest.
inline std::vector<int> labels_for(const FeatureMatrix& m, const DatasetManifest& manifest) {
  std::unordered_map<std::string, std::optional<Label>> by_id;
  for (const auto& r : manifest.records) by_id[r.meme_id] = r.gold_label;
  std::vector<int> out;
  for (const auto& id : m.meme_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(ErrorCode::ShapeMismatch, "meme '" + id + "' is not in the manifest");
    if (!it->second) throw Error(ErrorCode::MissingLabel, "meme '" + id + "' has no gold label");
    out.push_back(static_cast<int>(*it->second));
  }
  return out;
}

/// Manifest restricted to the rows of `m`, in matrix order.
inline DatasetManifest manifest_for(const FeatureMatrix& m, const DatasetManifest& manifest) {
  std::unordered_map<std::string, const MemeRecord*> by_id;
  for (const auto& r : manifest.records) by_id[r.meme_id] = &r;
  DatasetManifest out;
  out.split = manifest.split;
  out.language_scope = manifest.language_scope;
  for (const auto& id : m.meme_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(ErrorCode::ShapeMismatch, "meme '" + id + "' is not in the manifest");
    out.records.push_back(*it->second);
  }
  return out;
}

inline FeatureMatrix read_features(const RunConfig& c, const std::string& name) {
  const auto p = c.out(name);
  if (!fs::exists(p)) throw Error(ErrorCode::IoError, p.string() + " not found; run 'extract' first");
  return read_feature_csv(p);
}

/// Train rows of the matrix, their labels and the split, as every stage after extraction sees them.
struct LabeledFeatures {
  FeatureMatrix matrix;
  std::vector<int> labels;
  SplitAssignment split;
};

inline LabeledFeatures labeled_features(const RunConfig& c, const std::string& name = "features.csv") {
  auto manifest = load_train_manifest(c);
  LabeledFeatures lf;
  lf.matrix = read_features(c, name);
  // Keep only rows in the configured language scope.
  lf.matrix = lf.matrix.select_rows([&] {
    std::vector<std::string> ids;
    std::unordered_map<std::string, bool> in_manifest;
    for (const auto& r : manifest.records) in_manifest[r.meme_id] = true;
    for (const auto& id : lf.matrix.meme_ids) {
      if (in_manifest.count(id)) ids.push_back(id);
    }
    return ids;
  }());
  lf.labels = labels_for(lf.matrix, manifest);
  lf.split = stratified_split(manifest_for(lf.matrix, manifest), c.val_fraction, c.seed);
  return lf;
}

/// Test-set rows with labels, when a labeled test manifest and its features exist.
inline std::optional<std::pair<FeatureMatrix, std::vector<int>>> labeled_test_features(const RunConfig& c) {
  auto test = load_test_manifest(c);
  if (!test || !test->fully_labeled() || test->records.empty() || !fs::exists(c.out("features_test.csv"))) {
    return std::nullopt;
  }
  auto m = read_feature_csv(c.out("features_test.csv"));
  auto ids = test->ids();
  m = m.select_rows(ids);
  return std::make_pair(std::move(m), labels_for(m, *test));
}

inline void write_report(const RunConfig& c, const std::string& stem, const EvaluationReport& rep,
                         const std::string& config_digest) {
  auto j = to_json(rep);
  j["config_digest"] = config_digest;
  write_json(c.out(stem + ".json"), j);
  write_file(c.out(stem + ".txt"), to_text(rep));
}

}  // namespace detail

/// extract: feature matrices for the train manifest (and test manifest when configured).
inline nlohmann::json run_extract(const RunConfig& c) {
  if (!c.backend) throw Error(ErrorCode::ConfigError, "config has no 'backend' section");
  const std::string digest = c.digest();
  const auto registry = detail::load_full_registry(c);
  if (c.only_batch == Batch::Added && !c.registry_added) {
    throw Error(ErrorCode::ConfigError, "only_batch=added needs registry.added");
  }
  fs::create_directories(c.resolve(c.output_dir));
  detail::write_json(c.out("config_snapshot.json"), c.snapshot());

  Gateway gateway(*c.backend);
  FeatureCache cache(c.resolve(c.cache));
  ExtractionOptions opts;
  opts.only_batch = c.only_batch;
  opts.workers = c.workers;
  opts.abort_error_fraction = c.abort_error_fraction;

  nlohmann::json summary = {{"command", "extract"}, {"config_digest", digest}};
  std::vector<std::pair<std::string, DatasetManifest>> jobs;
  jobs.push_back({"features.csv", detail::load_train_manifest(c)});
  if (auto test = detail::load_test_manifest(c)) jobs.push_back({"features_test.csv", std::move(*test)});

  for (const auto& [name, manifest] : jobs) {
    const auto counts = manifest.counts();
    detail::log(name + ": " + std::to_string(manifest.size()) + " memes, " + std::to_string(registry.size()) + " LFs");
    auto result = extract_matrix(manifest, registry, gateway, cache, opts);
    write_file(c.out(name), to_csv(result.matrix));
    const nlohmann::json meta = {{"registry_hash", result.matrix.registry_hash},
                                 {"model_id", result.matrix.model_id},
                                 {"feature_prompt_sha256", sha256_hex(feature_system_prompt())},
                                 {"lf_ids", result.matrix.lf_ids},
                                 {"rows", result.matrix.rows()},
                                 {"config_digest", digest},
                                 {"config", c.snapshot()}};
    detail::write_json(c.out(name + ".meta.json"), meta);
    const auto& s = result.stats;
    nlohmann::json per_label = nlohmann::json::object();
    for (int k = 0; k < kNumLabels; ++k) per_label[label_name(k)] = counts.per_label[k];
    summary[name] = {{"rows", result.matrix.rows()},
                     {"cols", result.matrix.cols()},
                     {"cells", s.cells},
                     {"cache_hits", s.cache_hits},
                     {"cache_hit_rate", s.cache_hit_rate()},
                     {"call_chains", s.call_chains},
                     {"gateway_calls", s.gateway_calls},
                     {"fallback_cells", s.fallback_cells},
                     {"fallback_rate", s.fallback_rate()},
                     {"cell_errors", s.errors.size()},
                     {"labels", per_label},
                     {"unlabeled", counts.unlabeled},
                     {"languages", counts.per_language}};
    detail::log(name + ": " + std::to_string(s.cells) + " cells, cache hit rate " + detail::fmt4(s.cache_hit_rate()) +
                ", " + std::to_string(s.gateway_calls) + " gateway calls, fallback (code 6) rate " +
                detail::fmt4(s.fallback_rate()));
  }
  return summary;
}

/// train-eval: fit on the training part of the split, evaluate on validation (and test).
inline nlohmann::json run_train_eval(const RunConfig& c) {
  const std::string digest = c.digest();
  auto data = detail::labeled_features(c);
  write_file(c.out("split.csv"), data.split.to_csv(detail::manifest_for(data.matrix, detail::load_train_manifest(c))));
  const auto sets = partition(data.matrix, data.labels, data.split);
  const auto model = fit(sets.train, sets.train_labels, c.forest);
  const std::string model_text = serialize_model(model);
  write_file(c.out("model.json"), model_text);

  nlohmann::json summary = {{"command", "train-eval"},
                            {"config_digest", digest},
                            {"model_digest", sha256_hex(model_text)},
                            {"train_rows", sets.train.rows()},
                            {"val_rows", sets.val.rows()},
                            {"features", sets.train.cols()}};
  if (sets.val.rows() > 0) {
    const auto rep = macro_f1(sets.val_labels, predict(model, sets.val), SplitTag::Validation);
    detail::write_report(c, "eval_validation", rep, digest);
    summary["validation_macro_f1"] = rep.macro_f1;
    detail::log("validation macro-F1 " + detail::fmt4(rep.macro_f1));
  }
  if (auto test = detail::labeled_test_features(c)) {
    const auto rep = macro_f1(test->second, predict(model, test->first), SplitTag::Test);
    detail::write_report(c, "eval_test", rep, digest);
    summary["test_macro_f1"] = rep.macro_f1;
    detail::log("test macro-F1 " + detail::fmt4(rep.macro_f1));
  }
  return summary;
}

/// prune: run one or both pruning methods and evaluate the retained feature sets.
inline nlohmann::json run_prune(const RunConfig& c, std::optional<PruneMethod> method) {
  const std::string digest = c.digest();
  auto data = detail::labeled_features(c);
  std::vector<PruneMethod> methods;
  if (method) {
    methods.push_back(*method);
  } else {
    methods = {PruneMethod::F1Prune, PruneMethod::ImpPrune};
  }
  const auto test = detail::labeled_test_features(c);

  nlohmann::json summary = {{"command", "prune"}, {"config_digest", digest}};
  for (auto m : methods) {
    const std::string tag(to_string(m));
    detail::log("running " + tag + " over " + std::to_string(data.matrix.cols()) + " features");
    const auto result = m == PruneMethod::F1Prune ? f1_prune(data.matrix, data.labels, data.split, c.forest)
                                                  : imp_prune(data.matrix, data.labels, data.split, c.forest, c.k_grid);
    auto j = to_json(result);
    j["config_digest"] = digest;
    detail::write_json(c.out("prune_" + tag + ".json"), j);
    write_file(c.out("prune_" + tag + "_trace.csv"), trace_csv(result));
    const auto removed = result.removed_set();
    write_file(c.out("features_" + tag + ".csv"), to_csv(data.matrix.drop_columns(removed)));

    const auto sets = partition(data.matrix.drop_columns(removed), data.labels, data.split);
    const auto model = fit(sets.train, sets.train_labels, c.forest);
    write_file(c.out("model_" + tag + ".json"), serialize_model(model));
    nlohmann::json entry = {{"removed", result.removed_lf_ids.size()},
                            {"retained", result.retained_count},
                            {"base_validation_macro_f1", result.base_score},
                            {"validation_macro_f1", result.final_score}};
    if (sets.val.rows() > 0) {
      detail::write_report(c, "eval_" + tag + "_validation",
                           macro_f1(sets.val_labels, predict(model, sets.val), SplitTag::Validation), digest);
    }
    if (test) {
      const auto rep = macro_f1(test->second, predict(model, test->first.drop_columns(removed)), SplitTag::Test);
      detail::write_report(c, "eval_" + tag + "_test", rep, digest);
      entry["test_macro_f1"] = rep.macro_f1;
    }
    summary[tag] = entry;
    detail::log(tag + ": retained " + std::to_string(result.retained_count) + " of " +
                std::to_string(data.matrix.cols()) + ", validation macro-F1 " + detail::fmt4(result.base_score) +
                " -> " + detail::fmt4(result.final_score));
  }

  if (fs::exists(c.out("prune_f1prune.json")) && fs::exists(c.out("prune_impprune.json"))) {
    const auto a = prune_result_from_json(nlohmann::json::parse(read_file(c.out("prune_f1prune.json"))));
    const auto b = prune_result_from_json(nlohmann::json::parse(read_file(c.out("prune_impprune.json"))));
    const double jac = jaccard(a.removed_set(), b.removed_set());
    summary["jaccard_f1prune_impprune"] = jac;
    summary["shared_removed"] = shared_count(a.removed_set(), b.removed_set());
    std::cout << "Jaccard(f1prune, impprune) = " << detail::fmt4(jac) << " ("
              << shared_count(a.removed_set(), b.removed_set()) << " shared)\n";
  }
  return summary;
}

/// baseline: direct VLM classification of the test manifest (or the train manifest when none).
inline nlohmann::json run_baseline(const RunConfig& c, BaselineMode mode) {
  if (!c.backend) throw Error(ErrorCode::ConfigError, "config has no 'backend' section");
  const std::string digest = c.digest();
  auto manifest = detail::load_test_manifest(c);
  if (!manifest) manifest = detail::load_train_manifest(c);
  Gateway gateway(*c.backend);
  std::vector<BaselinePrediction> preds;
  for (const auto& r : manifest->records) preds.push_back(classify(r, load_image(r.image_ref), gateway, mode));
  const std::string tag(to_string(mode));
  write_file(c.out("baseline_" + tag + ".csv"), predictions_csv(preds));

  std::size_t unparseable = 0;
  std::vector<int> gold, pred;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!preds[i].label) ++unparseable;
    const auto& g = manifest->records[i].gold_label;
    if (!g) continue;
    gold.push_back(static_cast<int>(*g));
    pred.push_back(preds[i].label_id());
  }
  const double rate = preds.empty() ? 0.0 : static_cast<double>(unparseable) / static_cast<double>(preds.size());
  nlohmann::json summary = {{"command", "baseline"},
                            {"mode", tag},
                            {"config_digest", digest},
                            {"memes", preds.size()},
                            {"unparseable", unparseable},
                            {"unparseable_rate", rate},
                            {"gateway_calls", gateway.calls()}};
  if (!gold.empty()) {
    const auto rep = macro_f1(gold, pred, c.test_manifest ? SplitTag::Test : SplitTag::Validation);
    detail::write_report(c, "eval_baseline_" + tag, rep, digest);
    summary["macro_f1"] = rep.macro_f1;
    std::cout << "baseline " << tag << " macro-F1 = " << detail::fmt4(rep.macro_f1) << "\n";
  }
  std::cout << "baseline " << tag << " unparseable rate = " << detail::fmt4(rate) << "\n";
  return summary;
}

/// report: error listing, importance vector and Jaccard tables for the visualization scripts.
inline nlohmann::json run_report(const RunConfig& c) {
  const std::string digest = c.digest();
  auto data = detail::labeled_features(c);
  if (!fs::exists(c.out("model.json"))) throw Error(ErrorCode::IoError, "model.json not found; run 'train-eval' first");
  const auto model = forest_from_json(nlohmann::json::parse(read_file(c.out("model.json"))));
  const auto registry = detail::load_full_registry(c);
  const fs::path dir = c.out("report");
  fs::create_directories(dir);

  const auto errors = error_report(model, data.matrix, data.labels, data.split, &registry);
  write_file(dir / "error_report.txt", to_text(errors));
  write_file(dir / "error_report.csv", to_csv(errors));

  // Importances with descending rank; the top ranks are flagged for highlighting.
  std::vector<std::size_t> order(model.feature_ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return model.importances[a] > model.importances[b]; });
  std::vector<std::size_t> rank(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
  std::string imp = "lf_id,question,importance,rank,top20\n";
  char buf[32];
  for (std::size_t i = 0; i < model.feature_ids.size(); ++i) {
    const auto* lf = registry.find(model.feature_ids[i]);
    std::snprintf(buf, sizeof buf, "%.9f", model.importances[i]);
    imp += csv_row({model.feature_ids[i], lf ? lf->question : "", buf, std::to_string(rank[i]),
                    rank[i] <= kTopImportanceCount ? "1" : "0"});
  }
  write_file(dir / "importances.csv", imp);
  write_file(dir / "features.csv", to_csv(data.matrix));

  std::vector<NamedIdSet> sets;
  for (const char* m : {"f1prune", "impprune"}) {
    const auto p = c.out(std::string("prune_") + m + ".json");
    if (fs::exists(p)) sets.push_back({m, prune_result_from_json(nlohmann::json::parse(read_file(p))).removed_set()});
  }
  for (const auto& [name, p] : c.jaccard_inputs) {
    sets.push_back({name, prune_result_from_json(nlohmann::json::parse(read_file(c.resolve(p)))).removed_set()});
  }
  const auto tables = jaccard_tables(sets);
  write_file(dir / "jaccard.csv", tables.similarity_csv);
  write_file(dir / "jaccard_shared.csv", tables.shared_csv);

  nlohmann::json files = nlohmann::json::object();
  for (const char* f : {"error_report.txt", "error_report.csv", "importances.csv", "features.csv", "jaccard.csv",
                        "jaccard_shared.csv"}) {
    files[f] = sha256_hex(read_file(dir / f));
  }
  detail::write_json(dir / "bundle.json", {{"config_digest", digest}, {"files", files}});
  detail::log("report: " + std::to_string(errors.rows.size()) + " misclassified validation memes, " +
              std::to_string(model.feature_ids.size()) + " importances, " + std::to_string(sets.size()) +
              " removed-feature sets");
  return {{"command", "report"},
          {"config_digest", digest},
          {"misclassified", errors.rows.size()},
          {"features", model.feature_ids.size()},
          {"jaccard_sets", sets.size()},
          {"bundle", files}};
}

}  // namespace pws
