#pragma once

// Per-user ensemble of random space trees with windowed node masses.
//
// Trees are stored as complete binary trees in heap order (children of i
// at 2i+1 / 2i+2). The terminal frontier is a property of node types, so
// expand/collapse never reallocates.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rltir/errors.hpp"
#include "rltir/welford.hpp"

namespace rltir {

enum class NodeType : std::uint8_t { Internal = 0, Terminal = 1, Dormant = 2 };
enum class Verdict : std::uint8_t { Genuine = 0, Impostor = 1 };
enum class LogisticScale : std::uint8_t { Paper, Standard };

inline const char* to_string(Verdict v) { return v == Verdict::Genuine ? "genuine" : "impostor"; }
inline const char* to_string(NodeType t) {
  switch (t) {
    case NodeType::Internal: return "internal";
    case NodeType::Terminal: return "terminal";
    default: return "dormant";
  }
}

struct ForestConfig {
  int trees = 30;
  int max_depth = 9;
  int min_depth = 1;
  int terminal_depth = 5;
  int phi = 250;
  double rho = 0.3;
  LogisticScale logistic_scale = LogisticScale::Paper;

  bool operator==(const ForestConfig&) const = default;

  void validate() const {
    if (trees < 1) throw ConfigError("tree count must be >= 1");
    if (min_depth < 1) throw ConfigError("min depth must be >= 1");
    if (!(min_depth <= terminal_depth && terminal_depth <= max_depth))
      throw ConfigError("depths must satisfy 1 <= min_depth <= terminal_depth <= max_depth");
    if (max_depth > 20) throw ConfigError("max depth above 20 is not supported");
    if (phi < 1) throw ConfigError("refresh window phi must be >= 1");
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("refresh blend rho must lie in [0,1]");
  }
};

/// Randomly anchored bounding box around the unit cube.
struct WorkspaceBounds {
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t dim() const { return lower.size(); }

  /// Bounds for an explicit anchor vector: z +- 2*max(z, 1-z).
  static WorkspaceBounds from_anchors(std::span<const double> anchors) {
    WorkspaceBounds b;
    b.lower.reserve(anchors.size());
    b.upper.reserve(anchors.size());
    for (double z : anchors) {
      const double half = 2.0 * std::max(z, 1.0 - z);
      b.lower.push_back(z - half);
      b.upper.push_back(z + half);
    }
    return b;
  }
};

template <class Rng>
WorkspaceBounds build_workspace(const std::vector<std::vector<double>>& training, std::size_t dim,
                                Rng& rng) {
  if (training.empty()) throw ConfigError("workspace needs a non-empty training matrix");
  if (dim == 0) throw ConfigError("workspace needs at least one dimension");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> anchors(dim);
  for (auto& z : anchors) z = unit(rng);
  return WorkspaceBounds::from_anchors(anchors);
}

inline double node_density(double v, int h) { return std::ldexp(v, h); }

constexpr double kSigmaFloor = 1e-6;

/// Logistic CDF evaluated at m. `Paper` uses the exponent sqrt(3)(mu-m)/(pi sigma);
/// `Standard` uses pi(mu-m)/(sqrt(3) sigma), for which sigma is the standard deviation.
inline double logistic_cdf(double m, double mu, double sigma,
                           LogisticScale scale = LogisticScale::Paper) {
  if (sigma < kSigmaFloor) {
    if (m > mu) return 1.0;
    if (m < mu) return 0.0;
    return 0.5;
  }
  const double k = scale == LogisticScale::Paper
                       ? std::numbers::sqrt3 / (std::numbers::pi * sigma)
                       : std::numbers::pi / (std::numbers::sqrt3 * sigma);
  return 1.0 / (1.0 + std::exp(k * (mu - m)));
}

struct TreeNode {
  int h = 0;
  int k = 0;
  double tau = 0.0;
  double v = 0.0;
  double v_latest = 0.0;
  std::int64_t p = 0;
  std::int64_t n = 0;
  NodeType type = NodeType::Dormant;
  bool flag = false;

  bool operator==(const TreeNode&) const = default;
};

class SpaceTree {
 public:
  SpaceTree() = default;

  template <class Rng>
  static SpaceTree grow(const WorkspaceBounds& bounds, const ForestConfig& cfg, Rng& rng) {
    cfg.validate();
    if (bounds.dim() == 0) throw ConfigError("workspace has no dimensions");
    SpaceTree t;
    t.max_depth_ = cfg.max_depth;
    t.min_depth_ = cfg.min_depth;
    t.terminal_depth_init_ = cfg.terminal_depth;
    t.dim_ = bounds.dim();
    t.nodes_.resize((std::size_t{1} << (cfg.max_depth + 1)) - 1);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(t.dim_) - 1);
    std::vector<double> lo = bounds.lower, hi = bounds.upper;
    t.grow_node(0, 0, lo, hi, pick, rng);
    return t;
  }

  static constexpr std::size_t root() { return 0; }
  static constexpr std::size_t left(std::size_t i) { return 2 * i + 1; }
  static constexpr std::size_t right(std::size_t i) { return 2 * i + 2; }
  static constexpr std::size_t parent(std::size_t i) { return (i - 1) / 2; }
  static constexpr std::size_t sibling(std::size_t i) { return i % 2 == 1 ? i + 1 : i - 1; }

  std::size_t size() const { return nodes_.size(); }
  const TreeNode& node(std::size_t i) const { return nodes_[i]; }
  TreeNode& node(std::size_t i) { return nodes_[i]; }
  std::span<const TreeNode> nodes() const { return nodes_; }
  std::span<TreeNode> nodes() { return nodes_; }
  bool has_children(std::size_t i) const { return nodes_[i].h < max_depth_; }

  int max_depth() const { return max_depth_; }
  int min_depth() const { return min_depth_; }
  int terminal_depth_init() const { return terminal_depth_init_; }
  std::size_t dim() const { return dim_; }

  /// Child taken by x at node i. Ties go right.
  std::size_t step(std::size_t i, std::span<const double> x) const {
    const auto& nd = nodes_[i];
    return x[static_cast<std::size_t>(nd.k)] < nd.tau ? left(i) : right(i);
  }

  /// Root-to-terminal node indices for x, without touching any state.
  std::vector<std::size_t> route(std::span<const double> x) const {
    check_dim(x);
    std::vector<std::size_t> path;
    path.reserve(static_cast<std::size_t>(max_depth_) + 1);
    std::size_t i = root();
    for (;;) {
      path.push_back(i);
      if (nodes_[i].type == NodeType::Terminal) return path;
      if (!has_children(i)) throw StateError("route fell off the tree without a terminal node");
      i = step(i, x);
    }
  }

  /// Test-time traversal. Moves the flags to x's path, counts x into the
  /// window mass of every node on it and returns the terminal node.
  std::size_t traverse(std::span<const double> x) {
    auto path = route(x);
    mark_path(path);
    for (auto i : path) nodes_[i].v_latest += 1.0;
    ++instance_counter_;
    return path.back();
  }

  /// Moves the flags to x's (possibly changed) path without counting mass.
  std::vector<std::size_t> retrace(std::span<const double> x) {
    auto path = route(x);
    mark_path(path);
    return path;
  }

  /// Training-time ingest: adds x to the reference and window masses on its
  /// path and feeds the terminal density to the running statistics.
  std::size_t ingest_training(std::span<const double> x) {
    auto path = route(x);
    mark_path(path);
    for (auto i : path) {
      nodes_[i].v += 1.0;
      nodes_[i].v_latest += 1.0;
    }
    training_mass_ += 1.0;
    welford_.add(density(path.back()));
    return path.back();
  }

  double density(std::size_t i) const { return node_density(nodes_[i].v, nodes_[i].h); }

  /// y_i = 1 - s(m_i) under the current running statistics. Pure.
  double negative_probability(std::size_t terminal, LogisticScale scale) const {
    if (nodes_[terminal].type != NodeType::Terminal)
      throw StateError("negative probability requested for a non-terminal node");
    return 1.0 - logistic_cdf(density(terminal), welford_.mean, welford_.stddev(), scale);
  }

  /// Score-then-update: y_i with statistics that exclude this instance.
  double score(std::size_t terminal, LogisticScale scale) {
    const double y = negative_probability(terminal, scale);
    welford_.add(density(terminal));
    return y;
  }

  /// v <- (1-rho) v + rho * scale * v_latest on every node, then clears the window.
  void blend_window(double rho, double scale) {
    for (auto& nd : nodes_) {
      nd.v = (1.0 - rho) * nd.v + rho * nd.v_latest * scale;
      nd.v_latest = 0.0;
    }
    instance_counter_ = 0;
  }

  /// Applies the window blend once phi instances have been seen. Returns
  /// whether a refresh happened.
  bool refresh_window(int phi, double rho) {
    if (instance_counter_ < phi) return false;
    const double scale = training_mass_ > 0.0 ? training_mass_ / static_cast<double>(phi) : 1.0;
    blend_window(rho, scale);
    return true;
  }

  void clear_window() {
    for (auto& nd : nodes_) nd.v_latest = 0.0;
    instance_counter_ = 0;
  }

  std::vector<std::size_t> terminal_nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].type == NodeType::Terminal) out.push_back(i);
    return out;
  }

  WelfordAccumulator& welford() { return welford_; }
  const WelfordAccumulator& welford() const { return welford_; }
  std::int64_t instance_counter() const { return instance_counter_; }
  double training_mass() const { return training_mass_; }
  const std::vector<std::size_t>& last_path() const { return last_path_; }

  bool operator==(const SpaceTree&) const = default;

  // Serialization access.
  struct Raw {
    int max_depth, min_depth, terminal_depth_init;
    std::size_t dim;
    WelfordAccumulator welford;
    std::int64_t instance_counter;
    double training_mass;
    std::vector<TreeNode> nodes;
  };
  Raw raw() const {
    return {max_depth_, min_depth_, terminal_depth_init_, dim_, welford_, instance_counter_,
            training_mass_, nodes_};
  }
  static SpaceTree from_raw(Raw r) {
    if (r.max_depth < 1 || r.max_depth > 20) throw ConfigError("stored tree has invalid depth");
    if (r.nodes.size() != (std::size_t{1} << (r.max_depth + 1)) - 1)
      throw ConfigError("stored tree node count does not match its depth");
    SpaceTree t;
    t.max_depth_ = r.max_depth;
    t.min_depth_ = r.min_depth;
    t.terminal_depth_init_ = r.terminal_depth_init;
    t.dim_ = r.dim;
    t.welford_ = r.welford;
    t.instance_counter_ = r.instance_counter;
    t.training_mass_ = r.training_mass;
    t.nodes_ = std::move(r.nodes);
    for (std::size_t i = 0; i < t.nodes_.size(); ++i)
      if (t.nodes_[i].flag) t.last_path_.push_back(i);
    return t;
  }

 private:
  template <class Dist, class Rng>
  void grow_node(std::size_t i, int h, std::vector<double>& lo, std::vector<double>& hi, Dist& pick,
                 Rng& rng) {
    auto& nd = nodes_[i];
    nd = TreeNode{};
    nd.h = h;
    nd.k = pick(rng);
    const auto k = static_cast<std::size_t>(nd.k);
    nd.tau = 0.5 * (lo[k] + hi[k]);
    nd.type = h < terminal_depth_init_ ? NodeType::Internal
              : h == terminal_depth_init_ ? NodeType::Terminal
                                          : NodeType::Dormant;
    if (h == max_depth_) return;
    const double saved_hi = hi[k];
    hi[k] = nd.tau;
    grow_node(left(i), h + 1, lo, hi, pick, rng);
    hi[k] = saved_hi;
    const double saved_lo = lo[k];
    lo[k] = nodes_[i].tau;
    grow_node(right(i), h + 1, lo, hi, pick, rng);
    lo[k] = saved_lo;
  }

  void check_dim(std::span<const double> x) const {
    if (x.size() != dim_)
      throw InputError("instance has dimension " + std::to_string(x.size()) + ", tree expects " +
                       std::to_string(dim_));
  }

  void mark_path(const std::vector<std::size_t>& path) {
    for (auto i : last_path_) nodes_[i].flag = false;
    for (auto i : path) nodes_[i].flag = true;
    last_path_ = path;
  }

  int max_depth_ = 0;
  int min_depth_ = 1;
  int terminal_depth_init_ = 1;
  std::size_t dim_ = 0;
  WelfordAccumulator welford_;
  std::int64_t instance_counter_ = 0;
  double training_mass_ = 0.0;
  std::vector<TreeNode> nodes_;
  std::vector<std::size_t> last_path_;
};

struct TreeScore {
  std::size_t node;
  double y;
};

struct ScoreResult {
  double y = 0.0;
  std::vector<TreeScore> per_tree;
};

/// Per-feature min-max scaling fitted on a user's training pool.
struct MinMaxNormalizer {
  std::vector<double> min;
  std::vector<double> max;
  double clamp_lo = -0.5;
  double clamp_hi = 1.5;

  bool operator==(const MinMaxNormalizer&) const = default;

  static MinMaxNormalizer fit(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ConfigError("cannot fit normalization on zero rows");
    MinMaxNormalizer n;
    n.min = rows.front();
    n.max = rows.front();
    for (const auto& r : rows) {
      if (r.size() != n.min.size()) throw InputError("ragged rows in normalization fit");
      for (std::size_t q = 0; q < r.size(); ++q) {
        n.min[q] = std::min(n.min[q], r[q]);
        n.max[q] = std::max(n.max[q], r[q]);
      }
    }
    return n;
  }

  std::size_t dim() const { return min.size(); }

  /// Plain min-max map; constant features map to 0.
  std::vector<double> transform(std::span<const double> x) const {
    if (x.size() != min.size())
      throw InputError("instance has dimension " + std::to_string(x.size()) + ", expected " +
                       std::to_string(min.size()));
    std::vector<double> out(x.size());
    for (std::size_t q = 0; q < x.size(); ++q) {
      const double span = max[q] - min[q];
      out[q] = span > 0.0 ? (x[q] - min[q]) / span : 0.0;
    }
    return out;
  }

  /// Transform plus clamping for streaming values that drift outside the fit range.
  std::vector<double> transform_clamped(std::span<const double> x) const {
    auto out = transform(x);
    for (auto& v : out) v = std::clamp(v, clamp_lo, clamp_hi);
    return out;
  }
};

class Classifier {
 public:
  Classifier() = default;

  /// Grows M trees, each over its own random workspace.
  template <class Rng>
  static Classifier build(std::string user_id, MinMaxNormalizer normalizer,
                          const std::vector<std::vector<double>>& normalized_training,
                          const ForestConfig& cfg, Rng& rng) {
    cfg.validate();
    if (normalized_training.empty()) throw ConfigError("classifier needs training rows");
    Classifier c;
    c.user_id_ = std::move(user_id);
    c.config_ = cfg;
    c.normalizer_ = std::move(normalizer);
    const std::size_t dim = normalized_training.front().size();
    c.trees_.reserve(static_cast<std::size_t>(cfg.trees));
    for (int t = 0; t < cfg.trees; ++t) {
      auto bounds = build_workspace(normalized_training, dim, rng);
      c.trees_.push_back(SpaceTree::grow(bounds, cfg, rng));
    }
    return c;
  }

  const std::string& user_id() const { return user_id_; }
  const ForestConfig& config() const { return config_; }
  const MinMaxNormalizer& normalizer() const { return normalizer_; }
  std::size_t size() const { return trees_.size(); }
  std::size_t dim() const { return trees_.empty() ? 0 : trees_.front().dim(); }
  SpaceTree& tree(std::size_t i) { return trees_[i]; }
  const SpaceTree& tree(std::size_t i) const { return trees_[i]; }
  std::span<SpaceTree> trees() { return trees_; }
  std::span<const SpaceTree> trees() const { return trees_; }

  double threshold() const { return threshold_; }
  void set_threshold(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("threshold must lie in [0,1]");
    threshold_ = t;
  }

  std::vector<double> prepare(std::span<const double> raw) const {
    return normalizer_.transform_clamped(raw);
  }

  void ingest_training(std::span<const double> x) {
    check_dim(x);
    for (auto& t : trees_) t.ingest_training(x);
  }

  /// Replaces the running density statistics with those of the given rows
  /// under the final training masses, and opens a fresh window.
  void finalize_training(const std::vector<std::vector<double>>& normalized_rows) {
    for (auto& t : trees_) {
      t.welford().reset();
      for (const auto& x : normalized_rows) t.welford().add(t.density(t.route(x).back()));
      t.clear_window();
    }
  }

  /// Streaming score: traverses (counting window mass), then score-then-update in each tree.
  ScoreResult score(std::span<const double> x) {
    check_dim(x);
    ScoreResult r;
    r.per_tree.reserve(trees_.size());
    double sum = 0.0;
    for (auto& t : trees_) {
      const std::size_t term = t.traverse(x);
      const double y = t.score(term, config_.logistic_scale);
      r.per_tree.push_back({term, y});
      sum += y;
    }
    r.y = sum / static_cast<double>(trees_.size());
    return r;
  }

  /// Score under the current state without mutating anything.
  ScoreResult peek(std::span<const double> x) const {
    check_dim(x);
    ScoreResult r;
    r.per_tree.reserve(trees_.size());
    double sum = 0.0;
    for (const auto& t : trees_) {
      const std::size_t term = t.route(x).back();
      const double y = t.negative_probability(term, config_.logistic_scale);
      r.per_tree.push_back({term, y});
      sum += y;
    }
    r.y = sum / static_cast<double>(trees_.size());
    return r;
  }

  Verdict decide(double y) const { return y < threshold_ ? Verdict::Genuine : Verdict::Impostor; }

  /// Window refresh on every tree; true when at least one tree refreshed.
  bool refresh_windows() {
    bool any = false;
    for (auto& t : trees_) any = t.refresh_window(config_.phi, config_.rho) || any;
    return any;
  }

  bool operator==(const Classifier&) const = default;

  // Serialization access.
  static Classifier from_parts(std::string user_id, ForestConfig cfg, MinMaxNormalizer norm,
                               double threshold, std::vector<SpaceTree> trees) {
    Classifier c;
    c.user_id_ = std::move(user_id);
    c.config_ = cfg;
    c.normalizer_ = std::move(norm);
    c.set_threshold(threshold);
    c.trees_ = std::move(trees);
    return c;
  }

 private:
  void check_dim(std::span<const double> x) const {
    if (x.size() != dim())
      throw InputError("instance has dimension " + std::to_string(x.size()) + ", classifier expects " +
                       std::to_string(dim()));
  }

  std::string user_id_;
  ForestConfig config_;
  MinMaxNormalizer normalizer_;
  double threshold_ = 0.5;
  std::vector<SpaceTree> trees_;
};

}  // namespace rltir
