#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "rltir/errors.hpp"
#include "rltir/stream_forest.hpp"

namespace rltir {

/// Ordinals index Q-values; do not reorder.
enum class UpdateAction : int {
  Maintain = 0,
  IncreaseDensity = 1,
  DecreaseDensity = 2,
  ExpandNode = 3,
  CollapseNode = 4,
};

inline constexpr int kActionCount = 5;

inline constexpr std::array<std::string_view, kActionCount> kActionNames{
    "maintain", "increase_density", "decrease_density", "expand_node", "collapse_node"};

inline std::string_view to_string(UpdateAction a) { return kActionNames[static_cast<std::size_t>(a)]; }

namespace detail {

inline void decrease(TreeNode& nd, double beta) { nd.v = std::max(0.0, nd.v - beta * std::ldexp(1.0, nd.h)); }
inline void increase(TreeNode& nd, double beta) { nd.v += beta * std::ldexp(1.0, nd.h); }

inline void make_subtree_dormant(SpaceTree& tree, std::size_t i) {
  tree.node(i).type = NodeType::Dormant;
  if (!tree.has_children(i)) return;
  make_subtree_dormant(tree, SpaceTree::left(i));
  make_subtree_dormant(tree, SpaceTree::right(i));
}

}  // namespace detail

/// Applies one update strategy to a terminal node of `tree`. Returns the node
/// that is terminal for the acted-upon region afterwards (a child after an
/// expansion, the parent after a collapse, otherwise `node`).
inline std::size_t apply_action(SpaceTree& tree, std::size_t node, UpdateAction a, double beta) {
  if (tree.node(node).type != NodeType::Terminal) throw StateError("update action applied to a non-terminal node");
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  auto& nd = tree.node(node);
  switch (a) {
    case UpdateAction::Maintain:
      return node;
    case UpdateAction::IncreaseDensity:
      detail::increase(nd, beta);
      return node;
    case UpdateAction::DecreaseDensity:
      detail::decrease(nd, beta);
      return node;
    case UpdateAction::ExpandNode: {
      if (nd.h >= tree.max_depth()) {
        detail::decrease(nd, beta);
        return node;
      }
      auto& l = tree.node(SpaceTree::left(node));
      auto& r = tree.node(SpaceTree::right(node));
      const double total = l.v_latest + r.v_latest;
      const double share = total > 0.0 ? l.v_latest / total : 0.5;
      l.v = nd.v * share;
      r.v = nd.v * (1.0 - share);
      l.p = l.n = r.p = r.n = 0;
      l.type = r.type = NodeType::Terminal;
      nd.type = NodeType::Internal;
      return SpaceTree::left(node);
    }
    case UpdateAction::CollapseNode: {
      if (nd.h <= 1) {
        detail::increase(nd, beta);
        return node;
      }
      const std::size_t up = SpaceTree::parent(node);
      detail::make_subtree_dormant(tree, SpaceTree::left(up));
      detail::make_subtree_dormant(tree, SpaceTree::right(up));
      auto& par = tree.node(up);
      par.v = tree.node(SpaceTree::left(up)).v + tree.node(SpaceTree::right(up)).v;
      par.type = NodeType::Terminal;
      return up;
    }
  }
  throw StateError("unknown update action");
}

inline constexpr std::size_t kStateColumns = 8;

/// Fixed-shape state matrix: the root-to-terminal path, then the terminal's
/// two children, zero padded to MaxDepth + 3 rows; columns are normalised
/// [h, v, p, n, k, tau, type, flag].
struct TreeStateEncoding {
  std::size_t rows = 0;
  std::vector<double> values;  // row-major, rows x kStateColumns

  std::span<const double> row(std::size_t r) const { return {values.data() + r * kStateColumns, kStateColumns}; }
  bool operator==(const TreeStateEncoding&) const = default;
};

inline double type_code(NodeType t) {
  switch (t) {
    case NodeType::Internal: return 0.0;
    case NodeType::Terminal: return 0.5;
    default: return 1.0;
  }
}

inline std::size_t state_rows(int max_depth) { return static_cast<std::size_t>(max_depth) + 3; }

inline TreeStateEncoding encode_state(const SpaceTree& tree, std::span<const std::size_t> path) {
  TreeStateEncoding enc;
  enc.rows = state_rows(tree.max_depth());
  enc.values.assign(enc.rows * kStateColumns, 0.0);
  const double depth_scale = 1.0 / static_cast<double>(tree.max_depth());
  const double mass_scale = 1.0 / (1.0 + tree.training_mass());
  const double dim_scale = 1.0 / static_cast<double>(std::max<std::size_t>(tree.dim(), 1));
  std::size_t r = 0;
  auto put = [&](std::size_t i) {
    const auto& nd = tree.node(i);
    double* out = enc.values.data() + r * kStateColumns;
    const double fb = 1.0 / (1.0 + static_cast<double>(nd.p + nd.n));
    out[0] = nd.h * depth_scale;
    out[1] = nd.v * mass_scale;
    out[2] = static_cast<double>(nd.p) * fb;
    out[3] = static_cast<double>(nd.n) * fb;
    out[4] = nd.k * dim_scale;
    out[5] = nd.tau;
    out[6] = type_code(nd.type);
    out[7] = nd.flag ? 1.0 : 0.0;
    ++r;
  };
  if (path.size() > static_cast<std::size_t>(tree.max_depth()) + 1)
    throw InputError("state path longer than the tree depth");
  for (auto i : path) put(i);
  if (!path.empty() && tree.has_children(path.back())) {
    put(SpaceTree::left(path.back()));
    put(SpaceTree::right(path.back()));
  }
  return enc;
}

}  // namespace rltir
