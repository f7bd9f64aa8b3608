#pragma once

// Brute-force reference implementations used by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "rltir/rltir.hpp"

namespace oracle {

using rltir::Verdict;

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

inline Moments two_pass(std::span<const double> xs) {
  Moments m;
  if (xs.empty()) return m;
  double s = 0.0;
  for (double x : xs) s += x;
  m.mean = s / static_cast<double>(xs.size());
  if (xs.size() < 2) return m;
  double ss = 0.0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.variance = ss / static_cast<double>(xs.size() - 1);
  return m;
}

inline bool rel_close(double a, double b, double rel, double abs_floor = 0.0) {
  return std::abs(a - b) <= std::max(rel * std::max(std::abs(a), std::abs(b)), abs_floor);
}

/// Pairs (impostor, genuine) where the impostor scores higher; ties count half.
inline std::optional<double> auc_pairs(std::span<const double> s, std::span<const Verdict> l) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (l[i] != Verdict::Impostor) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j] != Verdict::Genuine) continue;
      ++pairs;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  if (pairs == 0) return std::nullopt;
  return wins / static_cast<double>(pairs);
}

inline double f1_at(std::span<const double> s, std::span<const Verdict> l, double t) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool pred_genuine = s[i] < t;
    if (l[i] == Verdict::Genuine) (pred_genuine ? tp : fn) += 1;
    else if (pred_genuine) fp += 1;
  }
  const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

/// Every midpoint between distinct sorted scores plus {0, 1}, F1 recomputed
/// from scratch for each; smallest maximiser.
inline double best_threshold_scan(std::span<const double> s, std::span<const Verdict> l) {
  std::vector<double> sorted(s.begin(), s.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> cand{0.0, 1.0};
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i)
    if (sorted[i] != sorted[i + 1]) cand.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  std::sort(cand.begin(), cand.end());
  double best_t = cand.front(), best = -1.0;
  for (double t : cand) {
    const double f = f1_at(s, l, t);
    if (f > best) best = f, best_t = t;
  }
  return best_t;
}

/// Central difference of f at every coordinate of p.
inline std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                            std::vector<double> p, double h = 1e-5) {
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = f(p);
    p[i] = keep - h;
    const double down = f(p);
    p[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Number of terminal nodes on each root-to-leaf path of a tree.
inline std::vector<int> terminals_per_path(const rltir::SpaceTree& t) {
  std::vector<int> out;
  std::function<void(std::size_t, int)> walk = [&](std::size_t i, int seen) {
    seen += t.node(i).type == rltir::NodeType::Terminal;
    if (!t.has_children(i)) {
      out.push_back(seen);
      return;
    }
    walk(rltir::SpaceTree::left(i), seen);
    walk(rltir::SpaceTree::right(i), seen);
  };
  walk(0, 0);
  return out;
}

/// Nodes above the frontier are internal, nodes below it dormant.
inline bool frontier_types_consistent(const rltir::SpaceTree& t) {
  bool ok = true;
  std::function<void(std::size_t, bool)> walk = [&](std::size_t i, bool below) {
    const auto type = t.node(i).type;
    if (below && type != rltir::NodeType::Dormant) ok = false;
    if (!below && type == rltir::NodeType::Dormant) ok = false;
    if (!t.has_children(i)) return;
    const bool next = below || type == rltir::NodeType::Terminal;
    walk(rltir::SpaceTree::left(i), next);
    walk(rltir::SpaceTree::right(i), next);
  };
  walk(0, false);
  return ok;
}

inline std::vector<std::vector<double>> uniform_rows(std::size_t n, std::size_t d, std::mt19937_64& rng,
                                                     double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (auto& r : rows)
    for (auto& v : r) v = u(rng);
  return rows;
}

inline rltir::SpaceTree random_tree(const rltir::ForestConfig& cfg, std::size_t dim, std::mt19937_64& rng,
                                    std::size_t training = 100) {
  // The workspace needs anchor rows even when nothing is ingested.
  const auto rows = uniform_rows(std::max<std::size_t>(training, 1), dim, rng);
  auto bounds = rltir::build_workspace(rows, dim, rng);
  auto t = rltir::SpaceTree::grow(bounds, cfg, rng);
  for (std::size_t i = 0; i < training; ++i) t.ingest_training(rows[i]);
  return t;
}

inline rltir::TreeStateEncoding random_state(std::size_t rows, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  rltir::TreeStateEncoding e;
  e.rows = rows;
  e.values.resize(rows * rltir::kStateColumns);
  for (auto& v : e.values) v = u(rng);
  return e;
}

/// Adds U(-w, w) noise to every online parameter. Zero biases put a ReLU
/// input exactly on its kink whenever the layer below is dead, where central
/// differences report half the one-sided slope.
template <class Rng>
void jitter(rltir::QNetwork& net, Rng& rng, double w = 0.1) {
  std::uniform_real_distribution<double> u(-w, w);
  std::vector<double> p(net.online().begin(), net.online().end());
  for (auto& v : p) v += u(rng);
  net.set_parameters(p, p);
}

/// Chi-square statistic of observed counts against a uniform expectation.
inline double chi_square_uniform(std::span<const std::size_t> counts) {
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  const double expect = total / static_cast<double>(counts.size());
  double chi = 0.0;
  for (auto c : counts) chi += (static_cast<double>(c) - expect) * (static_cast<double>(c) - expect) / expect;
  return chi;
}

}  // namespace oracle
