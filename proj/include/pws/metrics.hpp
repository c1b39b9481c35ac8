#pragma once

#include <algorithm>
#include <cstdio>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pws/dataset.hpp"
#include "pws/error.hpp"

namespace pws {

enum class SplitTag { Validation, Test };

inline std::string_view to_string(SplitTag t) { return t == SplitTag::Validation ? "validation" : "test"; }

struct ClassScores {
  int class_id = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct EvaluationReport {
  double macro_f1 = 0.0;
  std::vector<ClassScores> per_class;  // classes present in gold, ascending
  std::vector<int> classes;            // confusion axis: gold and predicted ids, kNoLabel last
  std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
  SplitTag split_tag = SplitTag::Validation;
};

/// Per-class precision/recall/F1 and their unweighted mean over the classes
/// present in `gold`. Predictions of any other id (e.g. kNoLabel) only add
/// to precision denominators.
inline EvaluationReport macro_f1(std::span<const int> gold, std::span<const int> pred,
                                 SplitTag tag = SplitTag::Validation) {
  if (gold.size() != pred.size()) {
    throw Error(ErrorCode::LengthMismatch,
                std::to_string(gold.size()) + " gold labels vs " + std::to_string(pred.size()) + " predictions");
  }
  if (gold.empty()) throw Error(ErrorCode::Empty, "no labels to evaluate");

  const std::set<int> gold_classes(gold.begin(), gold.end());
  std::set<int> all = gold_classes;
  all.insert(pred.begin(), pred.end());

  EvaluationReport rep;
  rep.split_tag = tag;
  for (int c : all) {
    if (c != kNoLabel) rep.classes.push_back(c);
  }
  if (all.count(kNoLabel)) rep.classes.push_back(kNoLabel);
  const auto index_of = [&](int c) {
    return static_cast<std::size_t>(std::find(rep.classes.begin(), rep.classes.end(), c) - rep.classes.begin());
  };
  rep.confusion.assign(rep.classes.size(), std::vector<std::size_t>(rep.classes.size(), 0));
  for (std::size_t i = 0; i < gold.size(); ++i) ++rep.confusion[index_of(gold[i])][index_of(pred[i])];

  double sum = 0.0;
  for (int c : gold_classes) {
    const std::size_t k = index_of(c);
    const std::size_t tp = rep.confusion[k][k];
    std::size_t support = 0, predicted = 0;
    for (std::size_t j = 0; j < rep.classes.size(); ++j) {
      support += rep.confusion[k][j];
      predicted += rep.confusion[j][k];
    }
    ClassScores s;
    s.class_id = c;
    s.support = support;
    s.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    s.recall = support ? static_cast<double>(tp) / static_cast<double>(support) : 0.0;
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    sum += s.f1;
    rep.per_class.push_back(s);
  }
  rep.macro_f1 = sum / static_cast<double>(rep.per_class.size());
  return rep;
}

inline nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& s : r.per_class) {
    per_class.push_back({{"class", label_name(s.class_id)},
                         {"precision", s.precision},
                         {"recall", s.recall},
                         {"f1", s.f1},
                         {"support", s.support}});
  }
  std::vector<std::string> names;
  for (int c : r.classes) names.push_back(label_name(c));
  return {{"split", to_string(r.split_tag)},
          {"macro_f1", r.macro_f1},
          {"per_class", per_class},
          {"confusion_classes", names},
          {"confusion", r.confusion}};
}

/// Plain-text per-class table followed by the confusion matrix.
inline std::string to_text(const EvaluationReport& r) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "split: %s\nmacro-F1: %.4f\n\n", std::string(to_string(r.split_tag)).c_str(),
                r.macro_f1);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-16s %9s %9s %9s %8s\n", "class", "precision", "recall", "f1", "support");
  out += buf;
  for (const auto& s : r.per_class) {
    std::snprintf(buf, sizeof buf, "%-16s %9.4f %9.4f %9.4f %8zu\n", label_name(s.class_id).c_str(), s.precision,
                  s.recall, s.f1, s.support);
    out += buf;
  }
  out += "\nconfusion (rows = gold, columns = predicted)\n";
  std::snprintf(buf, sizeof buf, "%-16s", "");
  out += buf;
  for (int c : r.classes) {
    std::snprintf(buf, sizeof buf, " %14s", label_name(c).c_str());
    out += buf;
  }
  out += "\n";
  for (std::size_t i = 0; i < r.classes.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%-16s", label_name(r.classes[i]).c_str());
    out += buf;
    for (auto v : r.confusion[i]) {
      std::snprintf(buf, sizeof buf, " %14zu", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace pws
