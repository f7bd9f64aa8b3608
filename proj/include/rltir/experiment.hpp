#pragma once

#include <poll.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rltir/data_ingest.hpp"
#include "rltir/errors.hpp"
#include "rltir/metrics.hpp"
#include "rltir/pipeline.hpp"
#include "rltir/serialization.hpp"

namespace rltir {

inline constexpr const char* kReportSchema = "rltir-report/1";

enum class FeedbackMode { Oracle, Interactive, None };

inline const char* to_string(FeedbackMode m) {
  switch (m) {
    case FeedbackMode::Oracle: return "rltir-oracle";
    case FeedbackMode::Interactive: return "rltir-interactive";
    case FeedbackMode::None: return "nofeed";
  }
  return "?";
}

inline FeedbackMode parse_mode(const std::string& s) {
  if (s == "rltir-oracle") return FeedbackMode::Oracle;
  if (s == "rltir-interactive") return FeedbackMode::Interactive;
  if (s == "nofeed") return FeedbackMode::None;
  throw ConfigError("unknown mode '" + s + "' (expected rltir-oracle, rltir-interactive or nofeed)");
}

struct ExperimentConfig {
  FeedbackMode mode = FeedbackMode::Oracle;
  PipelineConfig pipeline;
  std::uint64_t seed = 1;
  int reps = 5;
  double enrolled_fraction = 1.0;
  std::size_t window = 200;
  std::size_t stride = 50;

  void validate() const {
    pipeline.validate();
    if (reps < 1) throw ConfigError("reps must be >= 1");
    if (window == 0 || stride == 0) throw ConfigError("series window and stride must be positive");
    if (!(enrolled_fraction > 0.0 && enrolled_fraction <= 1.0))
      throw ConfigError("enrolled fraction must lie in (0, 1]");
  }
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Interactive feedback on a terminal: prints the pending event and waits
/// up to `timeout` for a y/n answer. No answer means timeout-skip.
inline FeedbackFn terminal_feedback(std::istream& in, std::ostream& out, int in_fd, std::chrono::milliseconds timeout) {
  return [&in, &out, in_fd, timeout](FeedbackEvent e) {
    out << "feedback " << e.instance_id << " user=" << e.claimed_user << " y=" << std::setprecision(4) << e.y
        << " U=" << e.U << " verdict=" << to_string(e.verdict_before) << " correct? [y/n] " << std::flush;
    const auto deadline = e.requested_at + timeout;
    for (;;) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
      if (left.count() <= 0) break;
      pollfd p{in_fd, POLLIN, 0};
      if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) break;
      std::string line;
      if (!std::getline(in, line)) break;
      const auto t = detail::trim(line);
      if (t == "y" || t == "Y" || t == "yes") {
        e.f = feedback_from_confirmation(e.verdict_before, true);
      } else if (t == "n" || t == "N" || t == "no") {
        e.f = feedback_from_confirmation(e.verdict_before, false);
      } else {
        out << "answer y or n: " << std::flush;
        continue;
      }
      e.source = FeedbackSource::Human;
      e.resolved_at = Clock::now();
      return e;
    }
    out << "(skipped)\n";
    e.source = FeedbackSource::TimeoutSkip;
    e.resolved_at = Clock::now();
    return e;
  };
}

/// One streamed instance as seen by the harness.
struct StreamRecord {
  std::size_t user = 0;
  double y = 0.0;
  Verdict verdict = Verdict::Genuine;
  Verdict truth = Verdict::Genuine;
  double y_before = 0.0;
  Verdict verdict_before = Verdict::Genuine;
  bool requested = false;
  bool labelled = false;
};

struct MetricSummary {
  ConfusionCounts counts;
  std::optional<double> auc;

  nlohmann::json to_json() const {
    return {{"tp", counts.tp},
            {"fp", counts.fp},
            {"tn", counts.tn},
            {"fn", counts.fn},
            {"precision", counts.precision()},
            {"recall", counts.recall()},
            {"f1", counts.f1()},
            {"fnr", counts.fnr()},
            {"fpr", counts.fpr()},
            {"auc", auc ? nlohmann::json(*auc) : nlohmann::json(nullptr)}};
  }
};

inline MetricSummary summarize(const std::vector<const StreamRecord*>& rows, bool before = false) {
  MetricSummary m;
  std::vector<double> scores;
  std::vector<Verdict> labels;
  scores.reserve(rows.size());
  labels.reserve(rows.size());
  for (const auto* r : rows) {
    m.counts.add(before ? r->verdict_before : r->verdict, r->truth);
    scores.push_back(before ? r->y_before : r->y);
    labels.push_back(r->truth);
  }
  m.auc = roc_auc(scores, labels);
  return m;
}

struct MacroMetrics {
  double precision = 0, recall = 0, f1 = 0, fnr = 0, fpr = 0, auc = 0;
  std::size_t classifiers = 0;
  std::size_t auc_classifiers = 0;

  nlohmann::json to_json() const {
    return {{"precision", precision}, {"recall", recall}, {"f1", f1},   {"fnr", fnr},
            {"fpr", fpr},             {"auc", auc},       {"classifiers", classifiers},
            {"auc_classifiers", auc_classifiers}};
  }
};

inline MacroMetrics macro_mean(const std::vector<MetricSummary>& per_user) {
  MacroMetrics m;
  for (const auto& u : per_user) {
    m.precision += u.counts.precision();
    m.recall += u.counts.recall();
    m.f1 += u.counts.f1();
    m.fnr += u.counts.fnr();
    m.fpr += u.counts.fpr();
    if (u.auc) {
      m.auc += *u.auc;
      ++m.auc_classifiers;
    }
  }
  m.classifiers = per_user.size();
  if (m.classifiers > 0) {
    const double n = static_cast<double>(m.classifiers);
    m.precision /= n;
    m.recall /= n;
    m.f1 /= n;
    m.fnr /= n;
    m.fpr /= n;
  }
  if (m.auc_classifiers > 0) m.auc /= static_cast<double>(m.auc_classifiers);
  return m;
}

struct SeriesPoint {
  std::size_t index = 0, start = 0, end = 0;
  std::optional<double> auc;
  double fnr = 0.0, fpr = 0.0;
  std::size_t feedback_count = 0;
};

/// Sliding windows of `window` instances over the global arrival order,
/// advanced by `stride`. A stream shorter than one window yields one
/// window covering everything.
inline std::vector<SeriesPoint> window_series(const std::vector<StreamRecord>& stream, std::size_t window,
                                              std::size_t stride) {
  std::vector<SeriesPoint> out;
  if (stream.empty()) return out;
  const std::size_t w = std::min(window, stream.size());
  for (std::size_t start = 0; start + w <= stream.size(); start += stride) {
    std::vector<const StreamRecord*> rows;
    SeriesPoint p;
    p.index = out.size();
    p.start = start;
    p.end = start + w;
    for (std::size_t i = start; i < start + w; ++i) {
      rows.push_back(&stream[i]);
      if (stream[i].labelled) ++p.feedback_count;
    }
    const auto m = summarize(rows);
    p.auc = m.auc;
    p.fnr = m.counts.fnr();
    p.fpr = m.counts.fpr();
    out.push_back(p);
  }
  return out;
}

/// Mean feedback count of the first and last quartile of windows.
inline std::pair<double, double> quartile_feedback(const std::vector<SeriesPoint>& s) {
  if (s.empty()) return {0.0, 0.0};
  const std::size_t q = std::max<std::size_t>(1, s.size() / 4);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < q; ++i) {
    first += static_cast<double>(s[i].feedback_count);
    last += static_cast<double>(s[s.size() - q + i].feedback_count);
  }
  return {first / static_cast<double>(q), last / static_cast<double>(q)};
}

struct UserResult {
  std::string user_id;
  bool initially_enrolled = true;
  double threshold = 0.0;
  bool calibration_fallback = false;
  MetricSummary final_metrics;
  MetricSummary before_metrics;
  std::size_t test_instances = 0;
  std::size_t requests = 0;
  std::size_t feedback_events = 0;
};

struct RepResult {
  int rep = 0;
  std::uint64_t seed = 0;
  std::vector<UserResult> users;
  MacroMetrics macro;
  MacroMetrics macro_before;
  MetricSummary pooled;
  std::size_t test_instances = 0;
  std::size_t requests = 0;
  std::size_t feedback_events = 0;
  std::size_t timeouts = 0;
  double feedback_proportion = 0.0;
  std::vector<SeriesPoint> series;
  double first_quartile_feedback = 0.0;
  double last_quartile_feedback = 0.0;
  double train_seconds = 0.0;
  double test_seconds = 0.0;
};

struct RunReport {
  ExperimentConfig config;
  std::vector<RepResult> reps;

  double mean(const std::function<double(const RepResult&)>& f) const {
    if (reps.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : reps) s += f(r);
    return s / static_cast<double>(reps.size());
  }
  double mean_auc() const { return mean([](const RepResult& r) { return r.macro.auc; }); }
  double mean_f1() const { return mean([](const RepResult& r) { return r.macro.f1; }); }
  double mean_feedback_proportion() const { return mean([](const RepResult& r) { return r.feedback_proportion; }); }
};

struct RunHooks {
  /// Replaces the built-in feedback source for interactive runs.
  std::function<FeedbackFn(Verdict truth)> interactive;
  /// Called with every outcome in arrival order.
  std::function<void(const IdentificationOutcome&)> on_outcome;
  /// Called with the enrolled users at the end of each rep.
  std::function<void(int rep, std::vector<EnrolledUser>&)> on_rep_end;
};

/// Runs enrollment and the streaming loop for one repetition.
inline RepResult run_repetition(const ExperimentConfig& cfg, const std::vector<DatasetInstance>& data, int rep,
                                const RunHooks& hooks = {}) {
  using Seconds = std::chrono::duration<double>;
  RepResult out;
  out.rep = rep;
  out.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(rep));
  const SplitPlan plan = make_split(data, cfg.enrolled_fraction, out.seed);

  PipelineConfig pcfg = cfg.pipeline;
  if (cfg.mode == FeedbackMode::None) pcfg.gate = 1.0;

  auto rows_of = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::vector<double>> r;
    r.reserve(idx.size());
    for (auto i : idx) r.push_back(data[i].features);
    return r;
  };

  std::vector<std::optional<EnrolledUser>> users(plan.users.size());
  auto enroll = [&](std::size_t u) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& up = plan.users[u];
    users[u] = enroll_user(up.user_id, rows_of(up.train_genuine), rows_of(up.train_impostor), pcfg,
                           mix_seed(out.seed, 1000 + u));
    out.train_seconds += Seconds(std::chrono::steady_clock::now() - t0).count();
  };
  for (std::size_t u = 0; u < plan.users.size(); ++u)
    if (plan.users[u].initially_enrolled) enroll(u);

  const FeedbackFn stdin_fn = cfg.mode == FeedbackMode::Interactive && !hooks.interactive
                                  ? terminal_feedback(std::cin, std::cerr, STDIN_FILENO, pcfg.feedback_timeout)
                                  : FeedbackFn{};
  std::vector<StreamRecord> stream;
  stream.reserve(plan.stream.size());
  for (const auto& item : plan.stream) {
    if (!users[item.user]) enroll(item.user);
    auto& user = *users[item.user];
    const auto& inst = data[plan.users[item.user].test[item.position]];
    const Verdict truth = inst.subject_id == user.user_id ? Verdict::Genuine : Verdict::Impostor;
    FeedbackFn fb;
    switch (cfg.mode) {
      case FeedbackMode::Oracle: fb = oracle_feedback(truth); break;
      case FeedbackMode::None: fb = no_feedback(); break;
      case FeedbackMode::Interactive: fb = hooks.interactive ? hooks.interactive(truth) : stdin_fn; break;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto o = identify(user, inst.instance_id, inst.features, fb);
    out.test_seconds += Seconds(std::chrono::steady_clock::now() - t0).count();
    if (hooks.on_outcome) hooks.on_outcome(o);

    StreamRecord r;
    r.user = item.user;
    r.y = o.y_final();
    r.verdict = o.verdict_final;
    r.truth = truth;
    r.y_before = o.y_before;
    r.verdict_before = o.verdict_before;
    r.requested = o.feedback.has_value();
    r.labelled = o.feedback_applied();
    if (r.requested && !r.labelled) ++out.timeouts;
    stream.push_back(r);
  }

  std::vector<std::vector<const StreamRecord*>> per_user(plan.users.size());
  std::vector<const StreamRecord*> all;
  for (const auto& r : stream) {
    per_user[r.user].push_back(&r);
    all.push_back(&r);
  }
  std::vector<MetricSummary> finals, befores;
  for (std::size_t u = 0; u < plan.users.size(); ++u) {
    if (!users[u]) continue;
    end_stream(*users[u]);
    UserResult ur;
    ur.user_id = plan.users[u].user_id;
    ur.initially_enrolled = plan.users[u].initially_enrolled;
    ur.threshold = users[u]->classifier.threshold();
    ur.calibration_fallback = users[u]->calibration_fallback;
    ur.final_metrics = summarize(per_user[u]);
    ur.before_metrics = summarize(per_user[u], true);
    ur.test_instances = per_user[u].size();
    for (const auto* r : per_user[u]) {
      ur.requests += r->requested ? 1 : 0;
      ur.feedback_events += r->labelled ? 1 : 0;
    }
    out.requests += ur.requests;
    out.feedback_events += ur.feedback_events;
    finals.push_back(ur.final_metrics);
    befores.push_back(ur.before_metrics);
    out.users.push_back(std::move(ur));
  }
  out.macro = macro_mean(finals);
  out.macro_before = macro_mean(befores);
  out.pooled = summarize(all);
  out.test_instances = stream.size();
  out.feedback_proportion =
      stream.empty() ? 0.0 : static_cast<double>(out.feedback_events) / static_cast<double>(stream.size());
  out.series = window_series(stream, cfg.window, cfg.stride);
  std::tie(out.first_quartile_feedback, out.last_quartile_feedback) = quartile_feedback(out.series);

  if (hooks.on_rep_end) {
    std::vector<EnrolledUser> done;
    for (auto& u : users)
      if (u) done.push_back(std::move(*u));
    hooks.on_rep_end(rep, done);
  }
  return out;
}

inline RunReport run_experiment(const ExperimentConfig& cfg, const std::vector<DatasetInstance>& data,
                                const RunHooks& hooks = {}) {
  cfg.validate();
  if (data.empty()) throw ConfigError("dataset is empty");
  RunReport report;
  report.config = cfg;
  for (int rep = 0; rep < cfg.reps; ++rep) report.reps.push_back(run_repetition(cfg, data, rep, hooks));
  return report;
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  auto j = config_to_json(c.pipeline);
  j["mode"] = to_string(c.mode);
  j["seed"] = c.seed;
  j["reps"] = c.reps;
  j["enrolled_fraction"] = c.enrolled_fraction;
  j["series_window"] = c.window;
  j["series_stride"] = c.stride;
  return j;
}

inline nlohmann::json series_to_json(const std::vector<SeriesPoint>& s) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& p : s)
    a.push_back({{"window", p.index},
                 {"start", p.start},
                 {"end", p.end},
                 {"auc", p.auc ? nlohmann::json(*p.auc) : nlohmann::json(nullptr)},
                 {"fnr", p.fnr},
                 {"fpr", p.fpr},
                 {"feedback_count", p.feedback_count}});
  return a;
}

inline nlohmann::json report_to_json(const RunReport& r, const nlohmann::json& dataset_info = nullptr) {
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& rep : r.reps) {
    nlohmann::json users = nlohmann::json::array();
    for (const auto& u : rep.users)
      users.push_back({{"user_id", u.user_id},
                       {"initially_enrolled", u.initially_enrolled},
                       {"threshold", u.threshold},
                       {"calibration_fallback", u.calibration_fallback},
                       {"test_instances", u.test_instances},
                       {"feedback_requests", u.requests},
                       {"feedback_events", u.feedback_events},
                       {"metrics", u.final_metrics.to_json()},
                       {"metrics_before_feedback", u.before_metrics.to_json()}});
    reps.push_back({{"rep", rep.rep},
                    {"seed", rep.seed},
                    {"aggregate", rep.macro.to_json()},
                    {"aggregate_before_feedback", rep.macro_before.to_json()},
                    {"pooled", rep.pooled.to_json()},
                    {"test_instances", rep.test_instances},
                    {"feedback_requests", rep.requests},
                    {"feedback_events", rep.feedback_events},
                    {"feedback_timeouts", rep.timeouts},
                    {"feedback_proportion", rep.feedback_proportion},
                    {"first_quartile_feedback", rep.first_quartile_feedback},
                    {"last_quartile_feedback", rep.last_quartile_feedback},
                    {"per_classifier", users},
                    {"series", series_to_json(rep.series)},
                    {"timing", {{"train_seconds", rep.train_seconds}, {"test_seconds", rep.test_seconds}}}});
  }
  auto m = [&](auto f) { return r.mean(f); };
  nlohmann::json mean{
      {"auc", r.mean_auc()},
      {"f1", r.mean_f1()},
      {"precision", m([](const RepResult& x) { return x.macro.precision; })},
      {"recall", m([](const RepResult& x) { return x.macro.recall; })},
      {"fnr", m([](const RepResult& x) { return x.macro.fnr; })},
      {"fpr", m([](const RepResult& x) { return x.macro.fpr; })},
      {"auc_before_feedback", m([](const RepResult& x) { return x.macro_before.auc; })},
      {"f1_before_feedback", m([](const RepResult& x) { return x.macro_before.f1; })},
      {"pooled_auc", m([](const RepResult& x) { return x.pooled.auc.value_or(0.0); })},
      {"feedback_proportion", r.mean_feedback_proportion()},
      {"first_quartile_feedback", m([](const RepResult& x) { return x.first_quartile_feedback; })},
      {"last_quartile_feedback", m([](const RepResult& x) { return x.last_quartile_feedback; })}};
  return {{"schema", kReportSchema},
          {"config", experiment_config_to_json(r.config)},
          {"dataset", dataset_info},
          {"mean", mean},
          {"reps", reps},
          {"timing",
           {{"train_seconds", m([](const RepResult& x) { return x.train_seconds; })},
            {"test_seconds", m([](const RepResult& x) { return x.test_seconds; })}}}};
}

/// Drops every "timing" member, recursively.
inline nlohmann::json strip_timing(nlohmann::json j) {
  if (j.is_object()) {
    j.erase("timing");
    for (auto& [k, v] : j.items()) v = strip_timing(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = strip_timing(v);
  }
  return j;
}

inline void write_series_csv(std::ostream& os, const RunReport& r) {
  os << "rep,window,start,end,auc,fnr,fpr,feedback_count\n";
  for (const auto& rep : r.reps)
    for (const auto& p : rep.series) {
      os << rep.rep << ',' << p.index << ',' << p.start << ',' << p.end << ',';
      if (p.auc) os << std::setprecision(10) << *p.auc;
      os << ',' << std::setprecision(10) << p.fnr << ',' << p.fpr << ',' << p.feedback_count << '\n';
    }
}

struct SweepPoint {
  int max_depth = 0;
  int trees = 0;
  int terminal_depth = 0;
  RunReport report;
};

/// Grid over (MaxDepth, M). The initial terminal depth follows the
/// config when it fits, otherwise it is clamped to the new MaxDepth.
inline std::vector<SweepPoint> run_sweep(const ExperimentConfig& base, const std::vector<DatasetInstance>& data,
                                         const std::vector<int>& depths, const std::vector<int>& trees) {
  std::vector<SweepPoint> out;
  for (int d : depths)
    for (int m : trees) {
      ExperimentConfig c = base;
      c.pipeline.forest.max_depth = d;
      c.pipeline.forest.trees = m;
      c.pipeline.forest.terminal_depth = std::min(c.pipeline.forest.terminal_depth, d);
      c.pipeline.forest.min_depth = std::min(c.pipeline.forest.min_depth, c.pipeline.forest.terminal_depth);
      out.push_back({d, m, c.pipeline.forest.terminal_depth, run_experiment(c, data)});
    }
  return out;
}

}  // namespace rltir
