#pragma once

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <ctime>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rltir/errors.hpp"
#include "rltir/stream_forest.hpp"

namespace rltir {

using Clock = std::chrono::system_clock;

/// |y_i - n/(p+n)|, or 1 for a node that has never received feedback.
inline double node_uncertainty(double y_i, std::int64_t p, std::int64_t n) {
  if (p + n == 0) return 1.0;
  return std::abs(y_i - static_cast<double>(n) / static_cast<double>(p + n));
}

inline double instance_uncertainty(const Classifier& c, std::span<const TreeScore> per_tree) {
  if (per_tree.size() != c.size()) throw InputError("per-tree score count does not match ensemble size");
  double sum = 0.0;
  for (std::size_t i = 0; i < per_tree.size(); ++i) {
    const auto& nd = c.tree(i).node(per_tree[i].node);
    sum += node_uncertainty(per_tree[i].y, nd.p, nd.n);
  }
  return sum / static_cast<double>(per_tree.size());
}

inline bool should_request_feedback(double uncertainty, double gate) { return uncertainty > gate; }

enum class FeedbackSource : std::uint8_t { Human, Oracle, TimeoutSkip };

inline const char* to_string(FeedbackSource s) {
  switch (s) {
    case FeedbackSource::Human: return "human";
    case FeedbackSource::Oracle: return "oracle";
    default: return "timeout-skip";
  }
}

/// f = 0 marks the person genuine, f = 1 an impostor.
struct FeedbackEvent {
  std::string instance_id;
  std::string claimed_user;
  std::vector<double> x;
  double y = 0.0;
  double U = 0.0;
  Verdict verdict_before = Verdict::Genuine;
  std::optional<int> f;
  std::optional<FeedbackSource> source;
  Clock::time_point requested_at{};
  std::optional<Clock::time_point> resolved_at;

  bool resolved() const { return f.has_value(); }
  /// Resolved by someone who supplied a label (not skipped, not pending).
  bool labelled() const { return f.has_value() && source && *source != FeedbackSource::TimeoutSkip; }
};

/// Expert Yes/No on the prior verdict mapped to f.
inline int feedback_from_confirmation(Verdict verdict_before, bool correct) {
  const bool genuine = (verdict_before == Verdict::Genuine) == correct;
  return genuine ? 0 : 1;
}

inline int feedback_from_truth(Verdict truth) { return truth == Verdict::Genuine ? 0 : 1; }

/// Bumps p (f = 0) or n (f = 1) at each tree's terminal node for the instance.
inline void record_feedback(Classifier& c, const FeedbackEvent& event, std::span<const TreeScore> per_tree) {
  if (!event.resolved()) throw StateError("cannot record unresolved feedback event " + event.instance_id);
  if (per_tree.size() != c.size()) throw InputError("per-tree score count does not match ensemble size");
  for (std::size_t i = 0; i < per_tree.size(); ++i) {
    auto& nd = c.tree(i).node(per_tree[i].node);
    (*event.f == 0 ? nd.p : nd.n) += 1;
  }
}

inline std::string format_rfc3339(Clock::time_point tp) {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(tp.time_since_epoch()).count();
  std::time_t secs = static_cast<std::time_t>(ms / 1000);
  long millis = static_cast<long>(ms % 1000);
  if (millis < 0) {
    millis += 1000;
    --secs;
  }
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03ldZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, millis);
  return buf;
}

inline Clock::time_point parse_rfc3339(const std::string& s) {
  std::tm tm{};
  int year, mon, day, hour, min;
  double sec;
  if (std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%lf", &year, &mon, &day, &hour, &min, &sec) != 6)
    throw InputError("not an RFC 3339 timestamp: " + s);
  tm.tm_year = year - 1900;
  tm.tm_mon = mon - 1;
  tm.tm_mday = day;
  tm.tm_hour = hour;
  tm.tm_min = min;
  tm.tm_sec = 0;
  const auto base = Clock::from_time_t(timegm(&tm));
  return base + std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(sec * 1000.0)));
}

inline void to_json(nlohmann::json& j, const FeedbackEvent& e) {
  j = nlohmann::json{{"instance_id", e.instance_id},
                     {"claimed_user", e.claimed_user},
                     {"x", e.x},
                     {"y", e.y},
                     {"U", e.U},
                     {"verdict_before", to_string(e.verdict_before)},
                     {"f", e.f ? nlohmann::json(*e.f) : nlohmann::json("pending")},
                     {"source", e.source ? nlohmann::json(to_string(*e.source)) : nlohmann::json(nullptr)},
                     {"requested_at", format_rfc3339(e.requested_at)},
                     {"resolved_at", e.resolved_at ? nlohmann::json(format_rfc3339(*e.resolved_at))
                                                   : nlohmann::json(nullptr)}};
}

inline void from_json(const nlohmann::json& j, FeedbackEvent& e) {
  e.instance_id = j.at("instance_id").get<std::string>();
  e.claimed_user = j.at("claimed_user").get<std::string>();
  e.x = j.at("x").get<std::vector<double>>();
  e.y = j.at("y").get<double>();
  e.U = j.at("U").get<double>();
  e.verdict_before = j.at("verdict_before").get<std::string>() == "genuine" ? Verdict::Genuine : Verdict::Impostor;
  const auto& f = j.at("f");
  e.f = f.is_number_integer() ? std::optional<int>(f.get<int>()) : std::nullopt;
  const auto& src = j.at("source");
  if (src.is_null()) {
    e.source.reset();
  } else {
    const auto s = src.get<std::string>();
    e.source = s == "human" ? FeedbackSource::Human : s == "oracle" ? FeedbackSource::Oracle : FeedbackSource::TimeoutSkip;
  }
  e.requested_at = parse_rfc3339(j.at("requested_at").get<std::string>());
  const auto& r = j.at("resolved_at");
  e.resolved_at = r.is_null() ? std::nullopt : std::optional(parse_rfc3339(r.get<std::string>()));
}

/// Pending feedback requests shared between a pipeline and an expert front-end.
/// Resolutions may arrive from any thread; waiting is per event.
class FeedbackQueue {
 public:
  enum class ResolveStatus { Accepted, UnknownEvent, AlreadyResolved, Expired };

  struct Entry {
    FeedbackEvent event;
    Clock::time_point expires_at;
  };

  /// Registers a pending event; returns its id (the instance id).
  std::string push(FeedbackEvent event, Clock::time_point expires_at) {
    std::lock_guard lock(mu_);
    const std::string id = event.instance_id;
    order_.push_back(id);
    entries_[id] = Entry{std::move(event), expires_at};
    cv_.notify_all();
    return id;
  }

  /// FIFO snapshot of events that are still pending and unexpired.
  std::vector<Entry> pending(Clock::time_point now = Clock::now()) const {
    std::lock_guard lock(mu_);
    return pending_locked(now);
  }

  /// Blocks until at least one event is pending or the timeout passes.
  std::vector<Entry> wait_pending(std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return !pending_locked(Clock::now()).empty(); });
    return pending_locked(Clock::now());
  }

  ResolveStatus resolve(const std::string& id, bool correct, Clock::time_point now = Clock::now()) {
    std::lock_guard lock(mu_);
    auto it = entries_.find(id);
    if (it == entries_.end()) return ResolveStatus::UnknownEvent;
    auto& e = it->second;
    if (e.event.source) {
      return *e.event.source == FeedbackSource::TimeoutSkip ? ResolveStatus::Expired
                                                            : ResolveStatus::AlreadyResolved;
    }
    if (now >= e.expires_at) {
      expire_locked(e, now);
      return ResolveStatus::Expired;
    }
    e.event.f = feedback_from_confirmation(e.event.verdict_before, correct);
    e.event.source = FeedbackSource::Human;
    e.event.resolved_at = now;
    cv_.notify_all();
    return ResolveStatus::Accepted;
  }

  /// Waits for a human resolution of `id` until its expiry, then returns the
  /// final event (timeout-skip when nobody answered).
  FeedbackEvent await(const std::string& id) {
    std::unique_lock lock(mu_);
    auto it = entries_.find(id);
    if (it == entries_.end()) throw StateError("unknown feedback event " + id);
    auto& e = it->second;
    cv_.wait_until(lock, e.expires_at, [&] { return e.event.source.has_value(); });
    if (!e.event.source) expire_locked(e, Clock::now());
    return e.event;
  }

  /// Marks every pending event timeout-skip and wakes all waiters.
  void expire_all(Clock::time_point now = Clock::now()) {
    std::lock_guard lock(mu_);
    for (auto& [id, e] : entries_)
      if (!e.event.source) expire_locked(e, now);
  }

  std::optional<FeedbackEvent> find(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(id);
    if (it == entries_.end()) return std::nullopt;
    return it->second.event;
  }

 private:
  std::vector<Entry> pending_locked(Clock::time_point now) const {
    std::vector<Entry> out;
    for (const auto& id : order_) {
      const auto& e = entries_.at(id);
      if (!e.event.source && now < e.expires_at) out.push_back(e);
    }
    return out;
  }

  void expire_locked(Entry& e, Clock::time_point now) {
    e.event.source = FeedbackSource::TimeoutSkip;
    e.event.resolved_at = now;
    cv_.notify_all();
  }

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::deque<std::string> order_;
  std::map<std::string, Entry> entries_;
};

}  // namespace rltir
