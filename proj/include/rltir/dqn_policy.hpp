#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

#include "rltir/errors.hpp"
#include "rltir/qnetwork.hpp"
#include "rltir/update_actions.hpp"

namespace rltir {

struct Transition {
  TreeStateEncoding s;
  int a = 0;
  double r = 0.0;
  TreeStateEncoding s_next;
  bool terminal = false;

  // max_a Q(s_next, a; theta-) for the target parameters of `cached_version`.
  mutable std::uint64_t cached_version = 0;
  mutable double cached_max = 0.0;

  bool operator==(const Transition& o) const {
    return s == o.s && a == o.a && r == o.r && s_next == o.s_next && terminal == o.terminal;
  }
};

/// Fixed-capacity FIFO of transitions. Index 0 is the oldest entry.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity = 2000) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay capacity must be positive");
  }

  void push(Transition t) {
    if (t.s.rows != t.s_next.rows) throw InputError("transition states differ in shape");
    if (!(t.r >= -1.0 && t.r <= 1.0)) throw InputError("transition reward outside [-1, 1]");
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(t));
  }

  /// Flags the newest `n` transitions as episode ends.
  void mark_tail_terminal(std::size_t n) {
    for (std::size_t i = 0; i < n && i < items_.size(); ++i) items_[items_.size() - 1 - i].terminal = true;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  bool operator==(const ReplayMemory&) const = default;

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

/// Uniform minibatch: with replacement when the memory is smaller than the
/// batch, without replacement otherwise. Empty memory yields an empty batch.
template <class Rng>
std::vector<const Transition*> sample_minibatch(const ReplayMemory& mem, std::size_t batch_size, Rng& rng) {
  std::vector<const Transition*> out;
  if (mem.empty() || batch_size == 0) return out;
  out.reserve(batch_size);
  if (mem.size() < batch_size) {
    std::uniform_int_distribution<std::size_t> pick(0, mem.size() - 1);
    for (std::size_t i = 0; i < batch_size; ++i) out.push_back(&mem[pick(rng)]);
    return out;
  }
  std::vector<std::size_t> idx(mem.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out.push_back(&mem[idx[i]]);
  }
  return out;
}

inline int argmax_action(const QValues& q) {
  int best = 0;
  for (int j = 1; j < kActionCount; ++j)
    if (q[static_cast<std::size_t>(j)] > q[static_cast<std::size_t>(best)]) best = j;
  return best;
}

template <class Rng>
UpdateAction select_action(const QValues& q, double epsilon, Rng& rng) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < epsilon) {
    std::uniform_int_distribution<int> pick(0, kActionCount - 1);
    return static_cast<UpdateAction>(pick(rng));
  }
  return static_cast<UpdateAction>(argmax_action(q));
}

template <class Rng>
UpdateAction select_action(const QNetwork& net, const TreeStateEncoding& s, double epsilon, Rng& rng) {
  return select_action(net.forward(s), epsilon, rng);
}

/// r for terminal transitions, else r + gamma * max_a Q(s', a; theta-).
inline double bellman_target(const Transition& t, const QNetwork& net, double gamma) {
  if (t.terminal) return t.r;
  if (t.cached_version != net.target_version()) {
    const QValues q = net.forward(t.s_next, /*use_target=*/true);
    t.cached_max = *std::max_element(q.begin(), q.end());
    t.cached_version = net.target_version();
  }
  return t.r + gamma * t.cached_max;
}

/// One SGD step on the squared Bellman error; targets are held fixed.
/// Returns the loss before the update.
inline double sgd_step(QNetwork& net, std::span<const Transition* const> batch, double gamma, double alpha) {
  if (batch.empty()) throw InputError("sgd step needs a non-empty batch");
  std::vector<const TreeStateEncoding*> states;
  std::vector<int> actions;
  std::vector<double> targets;
  states.reserve(batch.size());
  for (const auto* t : batch) {
    states.push_back(&t->s);
    actions.push_back(t->a);
    targets.push_back(bellman_target(*t, net, gamma));
  }
  std::vector<double> grad;
  const double loss = net.loss_and_gradient(net.online(), states, actions, targets, grad);
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "non-finite Q loss; batch=" << batch.size() << " targets=[";
    for (double v : targets) msg << v << ' ';
    msg << "] actions=[";
    for (int a : actions) msg << a << ' ';
    msg << ']';
    throw TrainingError(msg.str());
  }
  auto p = net.online();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= alpha * grad[i];
  return loss;
}

struct TrainerConfig {
  double gamma = 0.9;
  double alpha = 0.01;
  int replace_step = 200;
  double epsilon_start = 0.9;
  double epsilon_end = 0.05;
  double epsilon_decay = 0.995;
  std::size_t batch_size = 32;
  std::size_t capacity = 2000;
  std::size_t h1 = 32, h2 = 32, h3 = 16;
  QHead head = QHead::Softmax;
  bool zero_init = false;

  bool operator==(const TrainerConfig&) const = default;

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0,1)");
    if (!(alpha > 0.0)) throw ConfigError("learning rate must be positive");
    if (replace_step < 1) throw ConfigError("target replace step must be >= 1");
    if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= epsilon_start))
      throw ConfigError("epsilon schedule must satisfy 0 <= end <= start <= 1");
    if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0)) throw ConfigError("epsilon decay must lie in (0,1]");
    if (batch_size == 0 || capacity == 0) throw ConfigError("batch size and capacity must be positive");
    if (h1 == 0 || h2 == 0 || h3 == 0) throw ConfigError("hidden widths must be positive");
  }
};

/// One Q-network with its replay memory and exploration schedule.
class DqnAgent {
 public:
  DqnAgent() = default;

  template <class Rng>
  DqnAgent(const TrainerConfig& cfg, std::size_t state_rows, Rng& rng)
      : cfg_(cfg), net_(NetworkShape{state_rows, kStateColumns, cfg.h1, cfg.h2, cfg.h3, cfg.head}),
        memory_(cfg.capacity), epsilon_(cfg.epsilon_start) {
    cfg.validate();
    if (!cfg.zero_init) net_.randomize(rng);
  }

  const TrainerConfig& config() const { return cfg_; }
  QNetwork& net() { return net_; }
  const QNetwork& net() const { return net_; }
  ReplayMemory& memory() { return memory_; }
  const ReplayMemory& memory() const { return memory_; }
  std::int64_t steps() const { return steps_; }
  double epsilon() const { return epsilon_; }

  template <class Rng>
  UpdateAction act(const TreeStateEncoding& s, Rng& rng) const {
    return select_action(net_, s, epsilon_, rng);
  }

  void remember(Transition t) { memory_.push(std::move(t)); }

  /// Samples a minibatch and takes one SGD step; syncs the target network
  /// every `replace_step` steps and decays epsilon. Returns the pre-update
  /// loss, or nullopt when the memory is empty.
  template <class Rng>
  std::optional<double> train(Rng& rng) {
    auto batch = sample_minibatch(memory_, cfg_.batch_size, rng);
    if (batch.empty()) return std::nullopt;
    const double loss = sgd_step(net_, batch, cfg_.gamma, cfg_.alpha);
    ++steps_;
    if (steps_ % cfg_.replace_step == 0) net_.sync_target();
    epsilon_ = std::max(cfg_.epsilon_end, epsilon_ * cfg_.epsilon_decay);
    return loss;
  }

  // Serialization access.
  void restore(std::int64_t steps, double epsilon) {
    steps_ = steps;
    epsilon_ = epsilon;
  }

 private:
  TrainerConfig cfg_;
  QNetwork net_;
  ReplayMemory memory_;
  std::int64_t steps_ = 0;
  double epsilon_ = 0.9;
};

}  // namespace rltir
