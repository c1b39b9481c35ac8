#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "pws/error.hpp"
#include "pws/extraction.hpp"
#include "pws/util.hpp"

namespace pws {

/// Features considered per split.
struct MaxFeatures {
  enum class Rule { Sqrt, Log2, All, Count };
  Rule rule = Rule::Sqrt;
  int count = 0;  // Rule::Count only

  int resolve(std::size_t m) const {
    int k = 1;
    switch (rule) {
      case Rule::Sqrt: k = static_cast<int>(std::floor(std::sqrt(static_cast<double>(m)))); break;
      case Rule::Log2: k = static_cast<int>(std::floor(std::log2(static_cast<double>(std::max<std::size_t>(m, 1))))); break;
      case Rule::All: k = static_cast<int>(m); break;
      case Rule::Count: k = count; break;
    }
    return std::clamp(k, 1, static_cast<int>(std::max<std::size_t>(m, 1)));
  }

  std::string to_string() const {
    switch (rule) {
      case Rule::Sqrt: return "sqrt";
      case Rule::Log2: return "log2";
      case Rule::All: return "all";
      case Rule::Count: return std::to_string(count);
    }
    return "sqrt";
  }

  static MaxFeatures parse(const std::string& s) {
    if (s == "sqrt") return {Rule::Sqrt, 0};
    if (s == "log2") return {Rule::Log2, 0};
    if (s == "all") return {Rule::All, 0};
    try {
      std::size_t pos = 0;
      const int n = std::stoi(s, &pos);
      if (pos == s.size() && n >= 1) return {Rule::Count, n};
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::ConfigError, "max_features must be sqrt, log2, all or a positive integer");
  }

  bool operator==(const MaxFeatures&) const = default;
};

enum class ClassWeighting { Balanced, None };

struct ForestConfig {
  int n_trees = 500;
  MaxFeatures max_features{};
  std::optional<int> max_depth;
  int min_samples_leaf = 1;
  bool bootstrap = true;
  ClassWeighting class_weighting = ClassWeighting::Balanced;
  std::uint64_t seed = 42;
  int n_jobs = 0;  // 0 = hardware concurrency; never affects the result

  bool operator==(const ForestConfig& o) const {
    return n_trees == o.n_trees && max_features == o.max_features && max_depth == o.max_depth &&
           min_samples_leaf == o.min_samples_leaf && bootstrap == o.bootstrap &&
           class_weighting == o.class_weighting && seed == o.seed;
  }

  void validate() const {
    if (n_trees < 1) throw Error(ErrorCode::ConfigError, "n_trees must be >= 1");
    if (min_samples_leaf < 1) throw Error(ErrorCode::ConfigError, "min_samples_leaf must be >= 1");
    if (max_depth && *max_depth < 0) throw Error(ErrorCode::ConfigError, "max_depth must be >= 0");
  }
};

inline nlohmann::json to_json(const ForestConfig& c) {
  return {{"n_trees", c.n_trees},
          {"max_features", c.max_features.to_string()},
          {"max_depth", c.max_depth ? nlohmann::json(*c.max_depth) : nlohmann::json(nullptr)},
          {"min_samples_leaf", c.min_samples_leaf},
          {"bootstrap", c.bootstrap},
          {"class_weighting", c.class_weighting == ClassWeighting::Balanced ? "balanced" : "none"},
          {"seed", c.seed}};
}

inline ForestConfig forest_config_from_json(const nlohmann::json& j, ForestConfig c = {}) {
  try {
    if (j.contains("n_trees")) c.n_trees = j.at("n_trees").get<int>();
    if (j.contains("max_features")) {
      const auto& mf = j.at("max_features");
      c.max_features = MaxFeatures::parse(mf.is_number() ? std::to_string(mf.get<int>()) : mf.get<std::string>());
    }
    if (j.contains("max_depth")) {
      c.max_depth = j.at("max_depth").is_null() ? std::nullopt : std::optional<int>(j.at("max_depth").get<int>());
    }
    if (j.contains("min_samples_leaf")) c.min_samples_leaf = j.at("min_samples_leaf").get<int>();
    if (j.contains("bootstrap")) c.bootstrap = j.at("bootstrap").get<bool>();
    if (j.contains("class_weighting")) {
      const auto w = j.at("class_weighting").get<std::string>();
      if (w != "balanced" && w != "none") throw Error(ErrorCode::ConfigError, "class_weighting must be balanced or none");
      c.class_weighting = w == "balanced" ? ClassWeighting::Balanced : ClassWeighting::None;
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("n_jobs")) c.n_jobs = j.at("n_jobs").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("forest config: ") + e.what());
  }
  c.validate();
  return c;
}

/// One node of a binary tree stored in a flat array. Internal nodes send
/// rows with `code <= threshold` left. Leaves carry the class-weighted
/// vote distribution over the model's classes.
struct TreeNode {
  int feature = -1;
  int threshold = 0;
  int left = -1;
  int right = -1;
  std::vector<double> value;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;

  const std::vector<double>& leaf_for(std::span<const int> x) const {
    int i = 0;
    while (!nodes[i].is_leaf()) i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i].value;
  }

  std::size_t depth() const {
    std::size_t best = 0;
    std::vector<std::pair<int, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
      auto [i, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      if (!nodes[i].is_leaf()) {
        stack.push_back({nodes[i].left, d + 1});
        stack.push_back({nodes[i].right, d + 1});
      }
    }
    return best;
  }

  bool operator==(const DecisionTree&) const = default;
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  std::vector<int> classes;  // class ids, ascending
  std::vector<double> importances;
  ForestConfig config;
  std::vector<std::string> feature_ids;
};

/// Per-class sample weights N / (K * N_c); all ones when weighting is off.
inline std::vector<double> class_weights(std::span<const int> y_index, std::size_t n_classes, ClassWeighting w) {
  std::vector<double> weights(n_classes, 1.0);
  if (w == ClassWeighting::None) return weights;
  std::vector<std::size_t> counts(n_classes, 0);
  for (int c : y_index) ++counts[c];
  const double n = static_cast<double>(y_index.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    weights[c] = counts[c] ? n / (static_cast<double>(n_classes) * static_cast<double>(counts[c])) : 0.0;
  }
  return weights;
}

namespace detail {

inline double gini(std::span<const double> class_weight, double total) {
  if (total <= 0.0) return 0.0;
  double s = 0.0;
  for (double w : class_weight) s += (w / total) * (w / total);
  return 1.0 - s;
}

/// Dense view of the training data shared by all tree builders.
struct TrainingData {
  std::size_t n_rows = 0;
  std::size_t n_features = 0;
  std::size_t n_classes = 0;
  int max_code = 0;
  const int* x = nullptr;  // row-major
  std::vector<int> y;      // class index in [0, n_classes)
  std::vector<double> class_weight;

  int at(std::size_t r, std::size_t f) const { return x[r * n_features + f]; }
};

struct TreeBuilder {
  const TrainingData& data;
  const ForestConfig& config;
  int max_features;
  Rng rng;

  DecisionTree tree;
  std::vector<double> importance;

  struct Split {
    int feature = -1;
    int threshold = 0;
    double proxy = -1.0;
  };

  TreeBuilder(const TrainingData& d, const ForestConfig& c, std::uint64_t seed)
      : data(d), config(c), max_features(c.max_features.resolve(d.n_features)), rng(seed),
        importance(d.n_features, 0.0) {}

  DecisionTree build() {
    // Bootstrap counts become integer multiplicities of the sample weights.
    std::vector<double> weight(data.n_rows, 0.0);
    if (config.bootstrap) {
      for (std::size_t i = 0; i < data.n_rows; ++i) weight[rng.below(data.n_rows)] += 1.0;
    } else {
      std::fill(weight.begin(), weight.end(), 1.0);
    }
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.n_rows; ++i) {
      if (weight[i] > 0.0) {
        weight[i] *= data.class_weight[data.y[i]];
        rows.push_back(i);
      }
    }
    sample_weight_ = std::move(weight);
    tree.nodes.emplace_back();
    grow(0, rows, 0);
    return std::move(tree);
  }

 private:
  std::vector<double> sample_weight_;

  struct NodeStats {
    std::vector<double> per_class;
    double total = 0.0;
    double impurity = 0.0;
  };

  NodeStats stats_of(const std::vector<std::size_t>& rows) const {
    NodeStats s{std::vector<double>(data.n_classes, 0.0), 0.0, 0.0};
    for (auto r : rows) s.per_class[data.y[r]] += sample_weight_[r];
    for (double w : s.per_class) s.total += w;
    s.impurity = gini(s.per_class, s.total);
    return s;
  }

  void make_leaf(int node, const NodeStats& s) {
    auto& v = tree.nodes[node].value;
    v.assign(data.n_classes, 0.0);
    if (s.total > 0.0) {
      for (std::size_t k = 0; k < data.n_classes; ++k) v[k] = s.per_class[k] / s.total;
    }
  }

  // Best threshold on one feature by the Gini proxy
  // sum_k wl_k^2 / wl + sum_k wr_k^2 / wr (larger is better).
  void best_threshold(std::size_t f, const std::vector<std::size_t>& rows, int lo, int hi, Split& best) {
    const std::size_t K = data.n_classes;
    const std::size_t span = static_cast<std::size_t>(hi - lo + 1);
    hist_.assign(span * K, 0.0);
    counts_.assign(span, 0);
    for (auto r : rows) {
      const auto v = static_cast<std::size_t>(data.at(r, f) - lo);
      hist_[v * K + data.y[r]] += sample_weight_[r];
      ++counts_[v];
    }
    std::vector<double> left(K, 0.0);
    std::vector<double> total(K, 0.0);
    for (std::size_t v = 0; v < span; ++v) {
      for (std::size_t k = 0; k < K; ++k) total[k] += hist_[v * K + k];
    }
    std::size_t n_left = 0;
    const std::size_t n = rows.size();
    const auto min_leaf = static_cast<std::size_t>(config.min_samples_leaf);
    for (std::size_t v = 0; v + 1 < span; ++v) {
      if (counts_[v] == 0) continue;
      n_left += counts_[v];
      for (std::size_t k = 0; k < K; ++k) left[k] += hist_[v * K + k];
      if (n_left < min_leaf || n - n_left < min_leaf) continue;
      if (n_left == n) break;
      double wl = 0.0, wr = 0.0, sl = 0.0, sr = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double r = total[k] - left[k];
        wl += left[k];
        wr += r;
        sl += left[k] * left[k];
        sr += r * r;
      }
      if (wl <= 0.0 || wr <= 0.0) continue;
      const double proxy = sl / wl + sr / wr;
      if (proxy > best.proxy) {
        best.feature = static_cast<int>(f);
        best.threshold = static_cast<int>(v) + lo;
        best.proxy = proxy;
      }
    }
  }

  void grow(int node, const std::vector<std::size_t>& rows, int depth) {
    const NodeStats s = stats_of(rows);
    const bool depth_reached = config.max_depth && depth >= *config.max_depth;
    const auto min_leaf = static_cast<std::size_t>(config.min_samples_leaf);
    if (depth_reached || rows.size() < 2 || rows.size() < 2 * min_leaf || s.impurity <= 1e-12) {
      make_leaf(node, s);
      return;
    }

    // Features are drawn without replacement; features that are constant
    // within the node are skipped and do not count towards max_features.
    std::vector<std::size_t> order(data.n_features);
    std::iota(order.begin(), order.end(), 0);
    Split best;
    int visited = 0;
    for (std::size_t i = 0; i < order.size() && visited < max_features; ++i) {
      std::swap(order[i], order[i + rng.below(order.size() - i)]);
      const std::size_t f = order[i];
      int lo = data.at(rows[0], f), hi = lo;
      for (auto r : rows) {
        lo = std::min(lo, data.at(r, f));
        hi = std::max(hi, data.at(r, f));
      }
      if (lo == hi) continue;
      ++visited;
      best_threshold(f, rows, lo, hi, best);
    }
    if (best.feature < 0) {
      make_leaf(node, s);
      return;
    }

    std::vector<std::size_t> left_rows, right_rows;
    for (auto r : rows) {
      (data.at(r, best.feature) <= best.threshold ? left_rows : right_rows).push_back(r);
    }
    const NodeStats ls = stats_of(left_rows);
    const NodeStats rs = stats_of(right_rows);
    importance[best.feature] += s.total * s.impurity - ls.total * ls.impurity - rs.total * rs.impurity;

    const int l = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    const int r = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[node].feature = best.feature;
    tree.nodes[node].threshold = best.threshold;
    tree.nodes[node].left = l;
    tree.nodes[node].right = r;
    grow(l, left_rows, depth + 1);
    grow(r, right_rows, depth + 1);
  }

  std::vector<double> hist_;
  std::vector<std::size_t> counts_;
};

inline int worker_count(int n_jobs, int n_tasks) {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  const int jobs = n_jobs > 0 ? n_jobs : hw;
  return std::max(1, std::min(jobs, n_tasks));
}

}  // namespace detail

/// Largest code accepted in a feature cell.
inline constexpr int kMaxFeatureCode = 255;

/// Trains a random forest on integer-coded features. `labels` are class ids
/// aligned with matrix rows. The result depends only on (matrix, labels,
/// config); n_jobs changes speed, not the model.
inline ForestModel fit(const FeatureMatrix& matrix, std::span<const int> labels, const ForestConfig& config) {
  config.validate();
  if (labels.size() != matrix.rows()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(labels.size()) + " labels for " +
                                              std::to_string(matrix.rows()) + " rows");
  }
  if (matrix.values.size() != matrix.rows() * matrix.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "matrix values do not match its dimensions");
  }
  if (matrix.cols() == 0) throw Error(ErrorCode::ShapeMismatch, "matrix has no feature columns");
  std::vector<int> classes(labels.begin(), labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw Error(ErrorCode::SingleClass, "training labels contain fewer than two classes");
  for (int v : matrix.values) {
    if (v < 0 || v > kMaxFeatureCode) {
      throw Error(ErrorCode::ShapeMismatch, "feature code " + std::to_string(v) + " outside [0, 255]");
    }
  }

  detail::TrainingData data;
  data.n_rows = matrix.rows();
  data.n_features = matrix.cols();
  data.n_classes = classes.size();
  data.x = matrix.values.data();
  for (int l : labels) {
    data.y.push_back(static_cast<int>(std::lower_bound(classes.begin(), classes.end(), l) - classes.begin()));
  }
  data.class_weight = class_weights(data.y, data.n_classes, config.class_weighting);

  ForestModel model;
  model.classes = classes;
  model.config = config;
  model.feature_ids = matrix.lf_ids;
  model.trees.resize(static_cast<std::size_t>(config.n_trees));
  std::vector<std::vector<double>> tree_importance(model.trees.size());

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t t = next.fetch_add(1); t < model.trees.size(); t = next.fetch_add(1)) {
      detail::TreeBuilder builder(data, config, derive_seed(config.seed, t));
      model.trees[t] = builder.build();
      tree_importance[t] = std::move(builder.importance);
    }
  };
  {
    const int n_workers = detail::worker_count(config.n_jobs, config.n_trees);
    std::vector<std::jthread> pool;
    for (int i = 1; i < n_workers; ++i) pool.emplace_back(work);
    work();
  }

  // Mean decrease in impurity: per-tree normalized, averaged over trees that
  // split at least once, then renormalized.
  model.importances.assign(data.n_features, 0.0);
  std::size_t contributing = 0;
  for (const auto& imp : tree_importance) {
    const double sum = std::accumulate(imp.begin(), imp.end(), 0.0);
    if (sum <= 0.0) continue;
    ++contributing;
    for (std::size_t f = 0; f < imp.size(); ++f) model.importances[f] += imp[f] / sum;
  }
  if (contributing > 0) {
    const double total = std::accumulate(model.importances.begin(), model.importances.end(), 0.0);
    for (double& v : model.importances) v /= total;
  }
  return model;
}

/// Summed leaf vote vectors per row, in model.classes order.
inline std::vector<std::vector<double>> predict_votes(const ForestModel& model, const FeatureMatrix& matrix) {
  if (matrix.lf_ids != model.feature_ids) {
    throw Error(ErrorCode::FeatureMismatch, "feature columns differ from the model's feature ids");
  }
  std::vector<std::vector<double>> votes(matrix.rows(), std::vector<double>(model.classes.size(), 0.0));
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    const auto x = matrix.row(r);
    for (const auto& tree : model.trees) {
      const auto& leaf = tree.leaf_for(x);
      for (std::size_t k = 0; k < leaf.size(); ++k) votes[r][k] += leaf[k];
    }
  }
  return votes;
}

/// Class id per row: argmax of the summed votes, ties to the lowest class index.
inline std::vector<int> predict(const ForestModel& model, const FeatureMatrix& matrix) {
  const auto votes = predict_votes(model, matrix);
  std::vector<int> out;
  out.reserve(votes.size());
  for (const auto& v : votes) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k) {
      if (v[k] > v[best]) best = k;
    }
    out.push_back(model.classes[best]);
  }
  return out;
}

inline const std::vector<double>& importances(const ForestModel& model) { return model.importances; }

inline nlohmann::json to_json(const ForestModel& model) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : model.trees) {
    nlohmann::json feature = nlohmann::json::array(), threshold = nlohmann::json::array(),
                   left = nlohmann::json::array(), right = nlohmann::json::array(), value = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      value.push_back(n.is_leaf() ? nlohmann::json(n.value) : nlohmann::json::array());
    }
    trees.push_back({{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"value", value}});
  }
  std::vector<std::string> class_names;
  for (int c : model.classes) class_names.push_back(label_name(c));
  return {{"format", "pws-forest/1"},
          {"config", to_json(model.config)},
          {"classes", model.classes},
          {"class_names", class_names},
          {"feature_ids", model.feature_ids},
          {"importances", model.importances},
          {"trees", trees}};
}

inline ForestModel forest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "pws-forest/1") throw Error(ErrorCode::ParseError, "unknown model format");
    ForestModel m;
    m.config = forest_config_from_json(j.at("config"));
    m.classes = j.at("classes").get<std::vector<int>>();
    m.feature_ids = j.at("feature_ids").get<std::vector<std::string>>();
    m.importances = j.at("importances").get<std::vector<double>>();
    for (const auto& t : j.at("trees")) {
      DecisionTree tree;
      const auto feature = t.at("feature").get<std::vector<int>>();
      const auto threshold = t.at("threshold").get<std::vector<int>>();
      const auto left = t.at("left").get<std::vector<int>>();
      const auto right = t.at("right").get<std::vector<int>>();
      const auto value = t.at("value").get<std::vector<std::vector<double>>>();
      for (std::size_t i = 0; i < feature.size(); ++i) {
        tree.nodes.push_back({feature[i], threshold[i], left[i], right[i], value[i]});
        const auto& n = tree.nodes.back();
        if (!n.is_leaf() && (n.feature >= static_cast<int>(m.feature_ids.size()) || n.left <= 0 || n.right <= 0)) {
          throw Error(ErrorCode::ParseError, "corrupt tree node");
        }
      }
      m.trees.push_back(std::move(tree));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("model: ") + e.what());
  }
}

inline std::string serialize_model(const ForestModel& model) { return to_json(model).dump() + "\n"; }

inline std::string model_digest(const ForestModel& model) { return sha256_hex(serialize_model(model)); }

}  // namespace pws
