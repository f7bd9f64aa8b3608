#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rltir/dqn_policy.hpp"
#include "rltir/errors.hpp"
#include "rltir/feedback_gate.hpp"
#include "rltir/metrics.hpp"
#include "rltir/stream_forest.hpp"
#include "rltir/update_actions.hpp"

namespace rltir {

struct PipelineConfig {
  ForestConfig forest;
  TrainerConfig trainer;
  double beta = 0.1;
  double gate = 0.3;
  double sigma = 0.5;
  std::chrono::milliseconds feedback_timeout{60'000};

  void validate() const {
    forest.validate();
    trainer.validate();
    if (!(beta > 0.0)) throw ConfigError("beta must be positive");
    if (!(gate >= 0.0 && gate <= 1.0)) throw ConfigError("feedback gate must lie in [0,1]");
    if (!(sigma >= 0.0 && sigma <= 1.0)) throw ConfigError("reward weight sigma must lie in [0,1]");
  }
};

struct RewardBreakdown {
  double global = 0.0;
  std::vector<double> regional;
  std::vector<double> blended;
};

/// Rewards judged against the post-update verdicts: +1 when a verdict
/// agrees with the feedback label, -1 otherwise.
inline RewardBreakdown compute_reward(double sigma, int f, Verdict global_after,
                                      std::span<const Verdict> per_tree_after) {
  const Verdict truth = f == 0 ? Verdict::Genuine : Verdict::Impostor;
  RewardBreakdown r;
  r.global = global_after == truth ? 1.0 : -1.0;
  r.regional.reserve(per_tree_after.size());
  r.blended.reserve(per_tree_after.size());
  for (auto v : per_tree_after) {
    const double regional = v == truth ? 1.0 : -1.0;
    r.regional.push_back(regional);
    r.blended.push_back(sigma * r.global + (1.0 - sigma) * regional);
  }
  return r;
}

struct ActionTaken {
  std::size_t tree = 0;
  UpdateAction action = UpdateAction::Maintain;
};

struct IdentificationOutcome {
  std::string instance_id;
  std::string claimed_user;
  double y_before = 0.0;
  Verdict verdict_before = Verdict::Genuine;
  double uncertainty = 0.0;
  std::optional<FeedbackEvent> feedback;
  std::vector<ActionTaken> actions_taken;
  std::optional<RewardBreakdown> rewards;
  std::optional<double> y_after;
  Verdict verdict_final = Verdict::Genuine;
  std::optional<double> loss;  // mean SGD loss over this step's updates

  double y_final() const { return y_after.value_or(y_before); }
  bool feedback_applied() const { return feedback && feedback->labelled(); }
};

/// Called with a pending event; returns it resolved (f and source set) or
/// marked timeout-skip.
using FeedbackFn = std::function<FeedbackEvent(FeedbackEvent)>;

inline FeedbackFn oracle_feedback(Verdict truth) {
  return [truth](FeedbackEvent e) {
    e.f = feedback_from_truth(truth);
    e.source = FeedbackSource::Oracle;
    e.resolved_at = e.requested_at;
    return e;
  };
}

inline FeedbackFn no_feedback() {
  return [](FeedbackEvent e) {
    e.source = FeedbackSource::TimeoutSkip;
    e.resolved_at = e.requested_at;
    return e;
  };
}

inline FeedbackFn queue_feedback(FeedbackQueue& queue, std::chrono::milliseconds timeout) {
  return [&queue, timeout](FeedbackEvent e) {
    const auto expires = e.requested_at + timeout;
    const auto id = queue.push(std::move(e), expires);
    return queue.await(id);
  };
}

struct EnrolledUser {
  std::string user_id;
  Classifier classifier;
  DqnAgent agent;
  std::mt19937_64 rng;
  PipelineConfig config;
  std::int64_t instances_seen = 0;
  std::int64_t feedback_events = 0;
  bool calibration_fallback = false;

  std::int64_t step_counter() const { return agent.steps(); }
};

/// Builds and calibrates a user's classifier: normalization is fitted on the
/// genuine + impostor training rows, trees ingest the genuine rows only, and
/// the threshold is tuned on the mixed pool.
inline EnrolledUser enroll_user(const std::string& user_id, const std::vector<std::vector<double>>& genuine_rows,
                                const std::vector<std::vector<double>>& impostor_rows, const PipelineConfig& cfg,
                                std::uint64_t seed) {
  cfg.validate();
  if (genuine_rows.empty()) throw ConfigError("enrollment of " + user_id + " needs genuine training rows");
  std::vector<std::vector<double>> pool = genuine_rows;
  pool.insert(pool.end(), impostor_rows.begin(), impostor_rows.end());
  auto norm = MinMaxNormalizer::fit(pool);

  std::vector<std::vector<double>> genuine;
  genuine.reserve(genuine_rows.size());
  for (const auto& r : genuine_rows) genuine.push_back(norm.transform(r));

  EnrolledUser u;
  u.user_id = user_id;
  u.config = cfg;
  u.rng.seed(seed);
  u.classifier = Classifier::build(user_id, norm, genuine, cfg.forest, u.rng);
  for (const auto& x : genuine) u.classifier.ingest_training(x);
  u.classifier.finalize_training(genuine);

  std::vector<double> scores;
  std::vector<Verdict> labels;
  for (const auto& x : genuine) {
    scores.push_back(u.classifier.peek(x).y);
    labels.push_back(Verdict::Genuine);
  }
  for (const auto& r : impostor_rows) {
    scores.push_back(u.classifier.peek(norm.transform(r)).y);
    labels.push_back(Verdict::Impostor);
  }
  const auto cal = calibrate_threshold(scores, labels);
  if (cal.fallback)
    std::clog << "warning: " << user_id << ": single-class or degenerate training scores, threshold falls back to "
              << cal.threshold << '\n';
  u.calibration_fallback = cal.fallback;
  u.classifier.set_threshold(cal.threshold);

  u.agent = DqnAgent(cfg.trainer, state_rows(cfg.forest.max_depth), u.rng);
  return u;
}

/// One pass of the identification loop for an instance with a claimed
/// identity: score, gate, (feedback, per-tree action, reward, replay, SGD,
/// re-score), window refresh.
inline IdentificationOutcome identify(EnrolledUser& user, const std::string& instance_id, std::span<const double> raw,
                                      const FeedbackFn& feedback) {
  auto& clf = user.classifier;
  const auto& cfg = user.config;
  const auto x = clf.prepare(raw);

  IdentificationOutcome out;
  out.instance_id = instance_id;
  out.claimed_user = user.user_id;
  const ScoreResult before = clf.score(x);
  out.y_before = before.y;
  out.verdict_before = clf.decide(before.y);
  out.verdict_final = out.verdict_before;
  out.uncertainty = instance_uncertainty(clf, before.per_tree);
  ++user.instances_seen;

  if (should_request_feedback(out.uncertainty, cfg.gate)) {
    FeedbackEvent ev;
    ev.instance_id = instance_id;
    ev.claimed_user = user.user_id;
    ev.x = x;
    ev.y = before.y;
    ev.U = out.uncertainty;
    ev.verdict_before = out.verdict_before;
    ev.requested_at = Clock::now();
    ev = feedback(std::move(ev));
    out.feedback = ev;

    if (ev.labelled()) {
      ++user.feedback_events;
      record_feedback(clf, ev, before.per_tree);

      const std::size_t m = clf.size();
      std::vector<TreeStateEncoding> states(m), next_states(m);
      for (std::size_t i = 0; i < m; ++i) {
        auto& tree = clf.tree(i);
        states[i] = encode_state(tree, tree.last_path());
        const UpdateAction a = user.agent.act(states[i], user.rng);
        apply_action(tree, before.per_tree[i].node, a, cfg.beta);
        out.actions_taken.push_back({i, a});
        const auto path = tree.retrace(x);
        next_states[i] = encode_state(tree, path);
      }

      const ScoreResult after = clf.peek(x);
      std::vector<Verdict> tree_verdicts;
      tree_verdicts.reserve(m);
      for (const auto& ts : after.per_tree) tree_verdicts.push_back(clf.decide(ts.y));
      auto rewards = compute_reward(cfg.sigma, *ev.f, clf.decide(after.y), tree_verdicts);

      double loss_sum = 0.0;
      int loss_n = 0;
      for (std::size_t i = 0; i < m; ++i) {
        user.agent.remember(Transition{std::move(states[i]), static_cast<int>(out.actions_taken[i].action),
                                       rewards.blended[i], std::move(next_states[i]), false});
        if (auto l = user.agent.train(user.rng)) {
          loss_sum += *l;
          ++loss_n;
        }
      }
      if (loss_n > 0) out.loss = loss_sum / loss_n;
      out.rewards = std::move(rewards);
      out.y_after = after.y;
      out.verdict_final = clf.decide(after.y);
    }
  }

  clf.refresh_windows();
  return out;
}

/// Ends the classifier's stream: the last feedback step's transitions become terminal.
inline void end_stream(EnrolledUser& user) {
  user.agent.memory().mark_tail_terminal(user.classifier.size());
}

inline nlohmann::json outcome_to_json(const IdentificationOutcome& o) {
  nlohmann::json actions = nlohmann::json::array();
  for (const auto& a : o.actions_taken) actions.push_back({{"tree", a.tree}, {"action", std::string(to_string(a.action))}});
  nlohmann::json j{{"instance_id", o.instance_id},
                   {"claimed_user", o.claimed_user},
                   {"y_before", o.y_before},
                   {"verdict_before", to_string(o.verdict_before)},
                   {"U", o.uncertainty},
                   {"feedback", o.feedback ? nlohmann::json(*o.feedback) : nlohmann::json(nullptr)},
                   {"actions_taken", actions},
                   {"y_after", o.y_after ? nlohmann::json(*o.y_after) : nlohmann::json(nullptr)},
                   {"verdict_final", to_string(o.verdict_final)}};
  if (o.rewards)
    j["r_components"] = {{"r_global", o.rewards->global},
                         {"r_regional", o.rewards->regional},
                         {"r_t", o.rewards->blended}};
  else
    j["r_components"] = nullptr;
  return j;
}

}  // namespace rltir
