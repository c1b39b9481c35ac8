#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "pws/dataset.hpp"
#include "pws/error.hpp"
#include "pws/extraction.hpp"
#include "pws/forest.hpp"
#include "pws/lf_registry.hpp"
#include "pws/metrics.hpp"

namespace pws {

using IdSet = std::set<std::string, std::less<>>;

enum class PruneMethod { F1Prune, ImpPrune };

inline std::string_view to_string(PruneMethod m) { return m == PruneMethod::F1Prune ? "f1prune" : "impprune"; }

inline std::optional<PruneMethod> parse_prune_method(std::string_view s) {
  if (s == "f1prune") return PruneMethod::F1Prune;
  if (s == "impprune") return PruneMethod::ImpPrune;
  return std::nullopt;
}

struct PruneStep {
  std::size_t step = 0;
  std::string candidate;  // lf_id (F1Prune) or empty (ImpPrune)
  int k = 0;              // removal count (ImpPrune) or removed-set size if accepted (F1Prune)
  double score = 0.0;     // validation macro-F1
  bool accepted = false;

  bool operator==(const PruneStep&) const = default;
};

struct PruneResult {
  PruneMethod method = PruneMethod::F1Prune;
  std::vector<std::string> removed_lf_ids;  // in removal order
  std::vector<PruneStep> trace;
  std::size_t retained_count = 0;
  double base_score = 0.0;
  double final_score = 0.0;
  std::vector<std::string> ranking;  // ImpPrune: lf ids by ascending importance

  IdSet removed_set() const { return IdSet(removed_lf_ids.begin(), removed_lf_ids.end()); }
  bool operator==(const PruneResult&) const = default;
};

/// Train and validation parts of a labeled matrix under a split assignment.
struct TrainValSets {
  FeatureMatrix train;
  std::vector<int> train_labels;
  FeatureMatrix val;
  std::vector<int> val_labels;
};

inline TrainValSets partition(const FeatureMatrix& matrix, std::span<const int> labels, const SplitAssignment& split) {
  if (labels.size() != matrix.rows()) throw Error(ErrorCode::ShapeMismatch, "labels do not align with matrix rows");
  std::unordered_map<std::string, int> label_of;
  for (std::size_t i = 0; i < matrix.rows(); ++i) label_of[matrix.meme_ids[i]] = labels[i];
  TrainValSets s;
  s.train = matrix.select_rows(split.train_ids);
  s.val = matrix.select_rows(split.val_ids);
  for (const auto& id : split.train_ids) s.train_labels.push_back(label_of.at(id));
  for (const auto& id : split.val_ids) s.val_labels.push_back(label_of.at(id));
  return s;
}

/// Fits on the training part without `dropped` columns and returns
/// validation macro-F1.
inline double validation_score(const TrainValSets& sets, const IdSet& dropped, const ForestConfig& config) {
  if (sets.val.rows() == 0) throw Error(ErrorCode::Empty, "validation split is empty");
  const auto model = fit(sets.train.drop_columns(dropped), sets.train_labels, config);
  const auto pred = predict(model, sets.val.drop_columns(dropped));
  return macro_f1(sets.val_labels, pred).macro_f1;
}

/// Greedy single pass in column order: a candidate joins the removal set iff
/// validation macro-F1 without it (and without everything already removed)
/// is strictly greater than the best score so far. Every refit uses the
/// same forest seed.
inline PruneResult f1_prune(const FeatureMatrix& matrix, std::span<const int> labels, const SplitAssignment& split,
                            const ForestConfig& config) {
  const auto sets = partition(matrix, labels, split);
  PruneResult result;
  result.method = PruneMethod::F1Prune;
  IdSet removed;
  double best = validation_score(sets, removed, config);
  result.base_score = best;
  std::size_t step = 0;
  for (const auto& candidate : matrix.lf_ids) {
    if (removed.size() + 1 >= matrix.cols()) break;  // keep at least one feature
    IdSet trial = removed;
    trial.insert(candidate);
    const double score = validation_score(sets, trial, config);
    const bool accept = score > best;
    if (accept) {
      best = score;
      removed = std::move(trial);
      result.removed_lf_ids.push_back(candidate);
    }
    result.trace.push_back({++step, candidate, static_cast<int>(removed.size()), score, accept});
  }
  result.final_score = best;
  result.retained_count = matrix.cols() - result.removed_lf_ids.size();
  return result;
}

/// Feature ids ordered by ascending importance; ties keep column order.
inline std::vector<std::string> ascending_importance_ranking(const ForestModel& model) {
  std::vector<std::size_t> order(model.feature_ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return model.importances[a] < model.importances[b]; });
  std::vector<std::string> out;
  for (auto i : order) out.push_back(model.feature_ids[i]);
  return out;
}

inline std::vector<int> default_k_grid(std::size_t m) {
  std::vector<int> grid(m);
  std::iota(grid.begin(), grid.end(), 0);
  return grid;
}

/// Removes the k least important features of a model fitted on the full
/// training part, for the k in `k_grid` with the best validation macro-F1
/// (ties go to the smaller k). An empty grid means every k in [0, m).
inline PruneResult imp_prune(const FeatureMatrix& matrix, std::span<const int> labels, const SplitAssignment& split,
                             const ForestConfig& config, std::vector<int> k_grid = {}) {
  const int m = static_cast<int>(matrix.cols());
  if (k_grid.empty()) k_grid = default_k_grid(matrix.cols());
  for (int k : k_grid) {
    if (k < 0 || k >= m) {
      throw Error(ErrorCode::KOutOfRange, "k=" + std::to_string(k) + " outside [0, " + std::to_string(m) + ")");
    }
  }
  const auto sets = partition(matrix, labels, split);
  if (sets.val.rows() == 0) throw Error(ErrorCode::Empty, "validation split is empty");
  const auto base = fit(sets.train, sets.train_labels, config);
  PruneResult result;
  result.method = PruneMethod::ImpPrune;
  result.ranking = ascending_importance_ranking(base);
  result.base_score = macro_f1(sets.val_labels, predict(base, sets.val)).macro_f1;

  std::optional<std::size_t> best;
  std::size_t step = 0;
  for (int k : k_grid) {
    const IdSet dropped(result.ranking.begin(), result.ranking.begin() + k);
    const double score = k == 0 ? result.base_score : validation_score(sets, dropped, config);
    result.trace.push_back({++step, "", k, score, false});
    const auto& cur = result.trace.back();
    if (!best || cur.score > result.trace[*best].score ||
        (cur.score == result.trace[*best].score && cur.k < result.trace[*best].k)) {
      best = result.trace.size() - 1;
    }
  }
  auto& chosen = result.trace[*best];
  chosen.accepted = true;
  result.removed_lf_ids.assign(result.ranking.begin(), result.ranking.begin() + chosen.k);
  result.final_score = chosen.score;
  result.retained_count = matrix.cols() - result.removed_lf_ids.size();
  return result;
}

/// |a ∩ b| / |a ∪ b|, and 1 when both are empty.
inline double jaccard(const IdSet& a, const IdSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline std::size_t shared_count(const IdSet& a, const IdSet& b) {
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  return inter;
}

struct NamedIdSet {
  std::string name;
  IdSet ids;
};

/// Square CSVs of pairwise similarity and shared-member counts.
struct JaccardTables {
  std::string similarity_csv;
  std::string shared_csv;
};

inline JaccardTables jaccard_tables(const std::vector<NamedIdSet>& sets) {
  std::vector<std::string> header{"set"};
  for (const auto& s : sets) header.push_back(s.name);
  JaccardTables t{csv_row(header), csv_row(header)};
  char buf[32];
  for (const auto& a : sets) {
    std::vector<std::string> sim{a.name}, shared{a.name};
    for (const auto& b : sets) {
      std::snprintf(buf, sizeof buf, "%.6f", jaccard(a.ids, b.ids));
      sim.push_back(buf);
      shared.push_back(std::to_string(shared_count(a.ids, b.ids)));
    }
    t.similarity_csv += csv_row(sim);
    t.shared_csv += csv_row(shared);
  }
  return t;
}

inline std::string trace_csv(const PruneResult& r) {
  std::string out = "step,method,candidate,k,val_macro_f1,accepted\n";
  char buf[32];
  for (const auto& s : r.trace) {
    std::snprintf(buf, sizeof buf, "%.6f", s.score);
    out += csv_row({std::to_string(s.step), std::string(to_string(r.method)), s.candidate, std::to_string(s.k), buf,
                    s.accepted ? "1" : "0"});
  }
  return out;
}

inline nlohmann::json to_json(const PruneResult& r) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& s : r.trace) {
    trace.push_back({{"step", s.step}, {"candidate", s.candidate}, {"k", s.k}, {"score", s.score}, {"accepted", s.accepted}});
  }
  return {{"method", to_string(r.method)},
          {"removed_lf_ids", r.removed_lf_ids},
          {"retained_count", r.retained_count},
          {"base_score", r.base_score},
          {"final_score", r.final_score},
          {"ranking", r.ranking},
          {"trace", trace}};
}

inline PruneResult prune_result_from_json(const nlohmann::json& j) {
  try {
    PruneResult r;
    const auto method = parse_prune_method(j.at("method").get<std::string>());
    if (!method) throw Error(ErrorCode::ParseError, "unknown prune method");
    r.method = *method;
    r.removed_lf_ids = j.at("removed_lf_ids").get<std::vector<std::string>>();
    r.retained_count = j.at("retained_count").get<std::size_t>();
    r.base_score = j.at("base_score").get<double>();
    r.final_score = j.at("final_score").get<double>();
    r.ranking = j.value("ranking", std::vector<std::string>{});
    for (const auto& s : j.at("trace")) {
      r.trace.push_back({s.at("step").get<std::size_t>(), s.at("candidate").get<std::string>(), s.at("k").get<int>(),
                         s.at("score").get<double>(), s.at("accepted").get<bool>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("prune result: ") + e.what());
  }
}

struct Misclassification {
  std::string meme_id;
  int gold = 0;
  int predicted = 0;
  std::vector<int> codes;  // aligned with ErrorReport::lf_ids
};

struct ErrorReport {
  std::vector<std::string> lf_ids;
  std::vector<std::string> questions;  // empty where the registry lacks the id
  std::vector<Misclassification> rows;
};

/// Misclassified validation memes with their full answer rows.
inline ErrorReport error_report(const ForestModel& model, const FeatureMatrix& matrix, std::span<const int> labels,
                                const SplitAssignment& split, const LFRegistry* registry = nullptr) {
  const auto sets = partition(matrix, labels, split);
  ErrorReport rep;
  rep.lf_ids = sets.val.lf_ids;
  for (const auto& id : rep.lf_ids) {
    const auto* lf = registry ? registry->find(id) : nullptr;
    rep.questions.push_back(lf ? lf->question : "");
  }
  if (sets.val.rows() == 0) return rep;
  const auto pred = predict(model, sets.val);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == sets.val_labels[i]) continue;
    auto row = sets.val.row(i);
    rep.rows.push_back({sets.val.meme_ids[i], sets.val_labels[i], pred[i], std::vector<int>(row.begin(), row.end())});
  }
  return rep;
}

/// One line per (misclassified meme, LF): meme_id, gold, predicted, lf_id, question, code.
inline std::string to_csv(const ErrorReport& rep) {
  std::string out = "meme_id,gold,predicted,lf_id,question,code\n";
  for (const auto& row : rep.rows) {
    for (std::size_t j = 0; j < rep.lf_ids.size(); ++j) {
      out += csv_row({row.meme_id, label_name(row.gold), label_name(row.predicted), rep.lf_ids[j], rep.questions[j],
                      std::to_string(row.codes[j])});
    }
  }
  return out;
}

/// Human-readable listing, one block per misclassified meme.
inline std::string to_text(const ErrorReport& rep) {
  std::string out = std::to_string(rep.rows.size()) + " misclassified validation memes\n";
  for (const auto& row : rep.rows) {
    out += "\n== " + row.meme_id + "  gold=" + label_name(row.gold) + "  predicted=" + label_name(row.predicted) + "\n";
    for (std::size_t j = 0; j < rep.lf_ids.size(); ++j) {
      out += "  " + rep.lf_ids[j] + " = " + std::to_string(row.codes[j]);
      if (!rep.questions[j].empty()) out += "  " + rep.questions[j];
      out += "\n";
    }
  }
  return out;
}

}  // namespace pws
