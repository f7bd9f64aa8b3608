#pragma once

// HTTP/JSON front for interactive runs. Each enrolled user is driven by its
// own worker thread so a classifier only ever has one writer; HTTP handlers
// hand work to that thread and wait for the score.

#ifndef CPPHTTPLIB_THREAD_POOL_COUNT
#define CPPHTTPLIB_THREAD_POOL_COUNT 32
#endif

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "rltir/errors.hpp"
#include "rltir/experiment.hpp"
#include "rltir/feedback_gate.hpp"
#include "rltir/pipeline.hpp"

namespace rltir {

struct ServiceOptions {
  FeedbackMode mode = FeedbackMode::Interactive;
  std::chrono::milliseconds feedback_timeout{60'000};
  std::chrono::milliseconds max_long_poll{25'000};
  std::size_t series_window = 200;
  std::size_t series_stride = 50;
  std::string audit_path;  // JSON lines; empty disables
};

namespace detail {

/// Runs posted tasks one at a time on a dedicated thread.
class Strand {
 public:
  Strand() : worker_([this] { run(); }) {}
  Strand(const Strand&) = delete;
  Strand& operator=(const Strand&) = delete;
  ~Strand() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }

  void post(std::function<void()> task) {
    {
      std::lock_guard lock(mu_);
      tasks_.push_back(std::move(task));
    }
    cv_.notify_all();
  }

 private:
  void run() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || !tasks_.empty(); });
        if (tasks_.empty()) return;
        task = std::move(tasks_.front());
        tasks_.pop_front();
      }
      task();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> tasks_;
  bool stop_ = false;
  std::thread worker_;
};

inline nlohmann::json error_body(const std::string& code, const std::string& message) {
  return {{"code", code}, {"message", message}};
}

}  // namespace detail

class Service {
 public:
  struct IdentifyReply {
    std::string instance_id;
    double y = 0.0;
    Verdict verdict = Verdict::Genuine;
    bool feedback_requested = false;
  };

  Service(std::vector<EnrolledUser> users, ServiceOptions opts) : opts_(std::move(opts)) {
    if (!opts_.audit_path.empty()) {
      audit_.open(opts_.audit_path, std::ios::app);
      if (!audit_) throw ConfigError("cannot open audit log " + opts_.audit_path);
    }
    for (auto& u : users) {
      if (opts_.mode == FeedbackMode::None) u.config.gate = 1.0;
      auto slot = std::make_unique<Slot>();
      slot->index = slots_.size();
      slot->info = summary_of(u);
      slot->user = std::move(u);
      index_[slot->user.user_id] = slots_.size();
      slots_.push_back(std::move(slot));
    }
    for (auto& s : slots_) s->strand = std::make_unique<detail::Strand>();
    routes();
  }

  ~Service() { stop(); }

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 8080) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
    port_ = bound;
    listener_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  /// Binds and serves on the calling thread until stop().
  void listen(const std::string& host, int port) {
    if (!server_.bind_to_port(host, port)) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
    port_ = port;
    server_.listen_after_bind();
  }

  void stop() {
    if (stopped_.exchange(true)) return;
    server_.stop();
    if (listener_.joinable()) listener_.join();
    queue_.expire_all();
    for (auto& s : slots_) s->strand.reset();
  }

  int port() const { return port_; }
  FeedbackQueue& queue() { return queue_; }

  /// Scores on the user's worker; returns once the score is known (before
  /// any feedback wait). Throws InputError on a dimension mismatch and
  /// std::out_of_range for an unknown user.
  IdentifyReply identify(const std::string& user_id, std::vector<double> features,
                         std::optional<Verdict> label = std::nullopt) {
    auto& slot = *slots_.at(index_.at(user_id));
    if (features.size() != slot.info.dim)
      throw InputError("features have dimension " + std::to_string(features.size()) + ", " + user_id +
                       " expects " + std::to_string(slot.info.dim));
    const std::string id = user_id + "-" + std::to_string(++counter_);
    auto reply = std::make_shared<std::promise<IdentifyReply>>();
    auto fut = reply->get_future();
    slot.strand->post([this, &slot, id, features = std::move(features), label, reply] {
      bool replied = false;
      FeedbackFn fb = [&](FeedbackEvent e) {
        reply->set_value({id, e.y, e.verdict_before, true});
        replied = true;
        return resolve(std::move(e), label);
      };
      try {
        const auto o = rltir::identify(slot.user, id, features, fb);
        record(slot, o, label);
        if (!replied) reply->set_value({id, o.y_before, o.verdict_final, false});
      } catch (...) {
        if (!replied) reply->set_exception(std::current_exception());
      }
    });
    return fut.get();
  }

  nlohmann::json metrics_snapshot() const {
    std::lock_guard lock(mu_);
    std::vector<MetricSummary> per_user;
    nlohmann::json users = nlohmann::json::array();
    std::vector<const StreamRecord*> all;
    for (const auto& s : slots_) {
      std::vector<const StreamRecord*> rows;
      for (const auto& r : known_truth_) {
        if (r.user == s->index) rows.push_back(&r);
      }
      auto m = summarize(rows);
      users.push_back({{"user_id", s->info.user_id},
                       {"identified", s->info.identified},
                       {"feedback_requests", s->info.requests},
                       {"feedback_events", s->info.feedback_events},
                       {"metrics", m.to_json()}});
      if (!rows.empty()) per_user.push_back(m);
    }
    for (const auto& r : known_truth_) all.push_back(&r);
    const auto pooled = summarize(all);
    return {{"schema", kReportSchema},
            {"mode", to_string(opts_.mode)},
            {"identified", identified_},
            {"known_truth_instances", known_truth_.size()},
            {"feedback_requests", requests_},
            {"feedback_events", feedback_events_},
            {"feedback_timeouts", timeouts_},
            {"feedback_proportion",
             identified_ == 0 ? 0.0 : static_cast<double>(feedback_events_) / static_cast<double>(identified_)},
            {"pending", queue_.pending().size()},
            {"aggregate", macro_mean(per_user).to_json()},
            {"pooled", pooled.to_json()},
            {"per_classifier", users},
            {"series", series_to_json(window_series(known_truth_, opts_.series_window, opts_.series_stride))}};
  }

  nlohmann::json users_snapshot() const {
    std::lock_guard lock(mu_);
    nlohmann::json a = nlohmann::json::array();
    for (const auto& s : slots_)
      a.push_back({{"user_id", s->info.user_id},
                   {"threshold", s->info.threshold},
                   {"dimension", s->info.dim},
                   {"trees", s->info.trees},
                   {"max_depth", s->info.max_depth},
                   {"gate", s->info.gate},
                   {"identified", s->info.identified},
                   {"feedback_events", s->info.feedback_events},
                   {"calibration_fallback", s->info.calibration_fallback}});
    return a;
  }

  nlohmann::json outcomes_since(std::size_t since) const {
    std::lock_guard lock(mu_);
    nlohmann::json a = nlohmann::json::array();
    for (std::size_t i = since; i < outcomes_.size(); ++i) a.push_back(outcomes_[i]);
    return {{"next", outcomes_.size()}, {"outcomes", a}};
  }

  static nlohmann::json pending_to_json(const FeedbackQueue::Entry& entry) {
    const auto& e = entry.event;
    std::vector<double> head(e.x.begin(), e.x.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(8, e.x.size())));
    return {{"event_id", e.instance_id},
            {"claimed_user", e.claimed_user},
            {"y", e.y},
            {"U", e.U},
            {"verdict_before", to_string(e.verdict_before)},
            {"features", head},
            {"dimension", e.x.size()},
            {"requested_at", format_rfc3339(e.requested_at)},
            {"expires_at", format_rfc3339(entry.expires_at)}};
  }

 private:
  struct UserInfo {
    std::string user_id;
    double threshold = 0.0;
    std::size_t dim = 0;
    std::size_t trees = 0;
    int max_depth = 0;
    double gate = 0.0;
    bool calibration_fallback = false;
    std::size_t identified = 0;
    std::size_t requests = 0;
    std::size_t feedback_events = 0;
  };

  struct Slot {
    std::size_t index = 0;
    EnrolledUser user;
    UserInfo info;  // guarded by Service::mu_
    std::unique_ptr<detail::Strand> strand;
  };

  static UserInfo summary_of(const EnrolledUser& u) {
    UserInfo i;
    i.user_id = u.user_id;
    i.threshold = u.classifier.threshold();
    i.dim = u.classifier.dim();
    i.trees = u.classifier.size();
    i.max_depth = u.config.forest.max_depth;
    i.gate = u.config.gate;
    i.calibration_fallback = u.calibration_fallback;
    return i;
  }

  FeedbackEvent resolve(FeedbackEvent e, std::optional<Verdict> label) {
    switch (opts_.mode) {
      case FeedbackMode::Oracle:
        if (label) return oracle_feedback(*label)(std::move(e));
        return no_feedback()(std::move(e));
      case FeedbackMode::None:
        return no_feedback()(std::move(e));
      case FeedbackMode::Interactive:
        break;
    }
    return queue_feedback(queue_, opts_.feedback_timeout)(std::move(e));
  }

  void record(Slot& slot, const IdentificationOutcome& o, std::optional<Verdict> label) {
    auto j = outcome_to_json(o);
    std::lock_guard lock(mu_);
    j["index"] = outcomes_.size();
    outcomes_.push_back(j);
    if (audit_) audit_ << j.dump() << '\n' << std::flush;
    ++identified_;
    ++slot.info.identified;
    if (o.feedback) {
      ++requests_;
      ++slot.info.requests;
      if (o.feedback_applied()) {
        ++feedback_events_;
        ++slot.info.feedback_events;
      } else {
        ++timeouts_;
      }
    }
    // Ground truth is known from the request label or from the expert's answer.
    std::optional<Verdict> truth = label;
    if (!truth && o.feedback_applied()) truth = *o.feedback->f == 0 ? Verdict::Genuine : Verdict::Impostor;
    if (truth) {
      StreamRecord r;
      r.user = slot.index;
      r.y = o.y_final();
      r.verdict = o.verdict_final;
      r.truth = *truth;
      r.y_before = o.y_before;
      r.verdict_before = o.verdict_before;
      r.requested = o.feedback.has_value();
      r.labelled = o.feedback_applied();
      known_truth_.push_back(r);
    }
  }

  static void send(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void routes() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                 {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                 {"Access-Control-Allow-Headers", "Content-Type"}});
    server_.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server_.Post("/v1/identify", [this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json body;
      std::string user;
      std::vector<double> features;
      std::optional<Verdict> label;
      try {
        body = nlohmann::json::parse(req.body);
        user = body.at("claimed_user").get<std::string>();
        features = body.at("features").get<std::vector<double>>();
        if (body.contains("label") && !body["label"].is_null()) {
          const auto l = body["label"].get<std::string>();
          if (l != "genuine" && l != "impostor") throw ConfigError("label must be genuine or impostor");
          label = l == "genuine" ? Verdict::Genuine : Verdict::Impostor;
        }
      } catch (const std::exception& e) {
        return send(res, 400, detail::error_body("bad_request", e.what()));
      }
      if (!index_.count(user))
        return send(res, 404, detail::error_body("unknown_user", "no enrolled user '" + user + "'"));
      try {
        const auto r = identify(user, std::move(features), label);
        send(res, 200,
             {{"instance_id", r.instance_id},
              {"y", r.y},
              {"verdict", to_string(r.verdict)},
              {"feedback_requested", r.feedback_requested}});
      } catch (const InputError& e) {
        send(res, 422, detail::error_body("bad_dimension", e.what()));
      } catch (const std::exception& e) {
        send(res, 500, detail::error_body("internal", e.what()));
      }
    });

    server_.Get("/v1/feedback/pending", [this](const httplib::Request& req, httplib::Response& res) {
      std::chrono::milliseconds wait{0};
      if (req.has_param("wait")) {
        try {
          wait = std::chrono::milliseconds(static_cast<std::int64_t>(std::stod(req.get_param_value("wait")) * 1000.0));
        } catch (const std::exception&) {
          return send(res, 400, detail::error_body("bad_request", "wait must be a number of seconds"));
        }
        wait = std::clamp(wait, std::chrono::milliseconds{0}, opts_.max_long_poll);
      }
      const auto entries = wait.count() > 0 ? queue_.wait_pending(wait) : queue_.pending();
      nlohmann::json a = nlohmann::json::array();
      for (const auto& e : entries) a.push_back(pending_to_json(e));
      send(res, 200, a);
    });

    server_.Post(R"(/v1/feedback/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      bool correct = false;
      try {
        correct = nlohmann::json::parse(req.body).at("correct").get<bool>();
      } catch (const std::exception& e) {
        return send(res, 400, detail::error_body("bad_request", e.what()));
      }
      switch (queue_.resolve(id, correct)) {
        case FeedbackQueue::ResolveStatus::Accepted:
          return send(res, 200, {{"accepted", true}});
        case FeedbackQueue::ResolveStatus::UnknownEvent:
          return send(res, 404, detail::error_body("unknown_event", "no feedback event '" + id + "'"));
        case FeedbackQueue::ResolveStatus::AlreadyResolved:
          return send(res, 409, detail::error_body("already_resolved", "event '" + id + "' was already resolved"));
        case FeedbackQueue::ResolveStatus::Expired:
          return send(res, 410, detail::error_body("expired", "event '" + id + "' expired"));
      }
    });

    server_.Get("/v1/metrics", [this](const httplib::Request&, httplib::Response& res) {
      send(res, 200, metrics_snapshot());
    });
    server_.Get("/v1/users", [this](const httplib::Request&, httplib::Response& res) {
      send(res, 200, users_snapshot());
    });
    server_.Get("/v1/outcomes", [this](const httplib::Request& req, httplib::Response& res) {
      std::size_t since = 0;
      if (req.has_param("since")) {
        try {
          since = std::stoul(req.get_param_value("since"));
        } catch (const std::exception&) {
          return send(res, 400, detail::error_body("bad_request", "since must be a non-negative integer"));
        }
      }
      send(res, 200, outcomes_since(since));
    });
  }

  ServiceOptions opts_;
  std::vector<std::unique_ptr<Slot>> slots_;
  std::map<std::string, std::size_t> index_;
  FeedbackQueue queue_;
  httplib::Server server_;
  std::thread listener_;
  std::atomic<bool> stopped_{false};
  std::atomic<std::uint64_t> counter_{0};
  int port_ = -1;

  mutable std::mutex mu_;
  std::ofstream audit_;
  std::vector<nlohmann::json> outcomes_;
  std::vector<StreamRecord> known_truth_;
  std::size_t identified_ = 0;
  std::size_t requests_ = 0;
  std::size_t feedback_events_ = 0;
  std::size_t timeouts_ = 0;
};

}  // namespace rltir
