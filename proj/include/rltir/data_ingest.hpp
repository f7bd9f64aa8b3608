#pragma once

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rltir/errors.hpp"

namespace rltir {

struct DatasetInstance {
  std::string instance_id;
  std::string subject_id;
  int session_index = 0;
  std::vector<double> features;
  std::int64_t arrival_order = 0;

  bool operator==(const DatasetInstance&) const = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r' || s.front() == '\n'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) return std::nullopt;
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<long> line_numbers;
};

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (t.header.empty()) {
      t.header = split_csv_line(line);
      if (!t.header.empty() && t.header.front().rfind("\xEF\xBB\xBF", 0) == 0) t.header.front().erase(0, 3);
      continue;
    }
    auto fields = split_csv_line(line);
    if (fields.size() != t.header.size())
      throw IngestError("row has " + std::to_string(fields.size()) + " fields, header has " +
                            std::to_string(t.header.size()),
                        line_no);
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(line_no);
  }
  if (t.header.empty()) throw IngestError("empty file: no header row");
  return t;
}

inline std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path);
  return in;
}

}  // namespace detail

/// Keystroke-timing table: `subject`, `sessionIndex`, `rep`, then numeric
/// timing features. `expected_rows`, when given, must match exactly.
inline std::vector<DatasetInstance> parse_cmu_csv(std::istream& in, std::optional<std::size_t> expected_rows = {}) {
  auto t = detail::read_csv(in);
  auto col = [&](std::string_view name) -> std::size_t {
    auto it = std::find(t.header.begin(), t.header.end(), name);
    if (it == t.header.end()) throw IngestError("missing column '" + std::string(name) + "'", 1);
    return static_cast<std::size_t>(it - t.header.begin());
  };
  const std::size_t c_subject = col("subject"), c_session = col("sessionIndex"), c_rep = col("rep");
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < t.header.size(); ++c)
    if (c != c_subject && c != c_session && c != c_rep) feature_cols.push_back(c);
  if (feature_cols.empty()) throw IngestError("no feature columns", 1);
  if (t.rows.empty()) throw IngestError("no data rows");

  std::vector<DatasetInstance> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    DatasetInstance inst;
    inst.subject_id = row[c_subject];
    auto session = detail::parse_double(row[c_session]);
    if (!session) throw IngestError("non-numeric sessionIndex '" + row[c_session] + "'", t.line_numbers[r]);
    inst.session_index = static_cast<int>(*session);
    inst.instance_id = row[c_subject] + ":" + row[c_session] + ":" + row[c_rep];
    inst.features.reserve(feature_cols.size());
    for (auto c : feature_cols) {
      auto v = detail::parse_double(row[c]);
      if (!v) throw IngestError("non-numeric feature '" + row[c] + "' in column " + t.header[c], t.line_numbers[r]);
      inst.features.push_back(*v);
    }
    inst.arrival_order = static_cast<std::int64_t>(r);
    out.push_back(std::move(inst));
  }
  if (expected_rows && out.size() != *expected_rows)
    throw IngestError("expected " + std::to_string(*expected_rows) + " rows, found " + std::to_string(out.size()));
  return out;
}

inline std::vector<DatasetInstance> load_cmu_csv(const std::string& path, std::optional<std::size_t> expected_rows = {}) {
  auto in = detail::open_or_throw(path);
  return parse_cmu_csv(in, expected_rows);
}

/// Any labelled vector table: every column except the label (and an optional
/// `session` column) is a feature.
inline std::vector<DatasetInstance> parse_generic_csv(std::istream& in, const std::string& label_column,
                                                      const std::string& session_column = "session") {
  auto t = detail::read_csv(in);
  auto it = std::find(t.header.begin(), t.header.end(), label_column);
  if (it == t.header.end()) throw IngestError("label column '" + label_column + "' not found", 1);
  const auto c_label = static_cast<std::size_t>(it - t.header.begin());
  auto sit = std::find(t.header.begin(), t.header.end(), session_column);
  // npos when the file has no session column.
  const std::size_t c_session =
      sit == t.header.end() ? std::string::npos : static_cast<std::size_t>(sit - t.header.begin());
  std::vector<DatasetInstance> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    DatasetInstance inst;
    inst.subject_id = row[c_label];
    inst.instance_id = "row" + std::to_string(r + 1);
    inst.arrival_order = static_cast<std::int64_t>(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == c_label) continue;
      auto v = detail::parse_double(row[c]);
      if (!v) throw IngestError("non-numeric value '" + row[c] + "' in column " + t.header[c], t.line_numbers[r]);
      if (c == c_session)
        inst.session_index = static_cast<int>(*v);
      else
        inst.features.push_back(*v);
    }
    if (inst.features.empty()) throw IngestError("row has no feature columns", t.line_numbers[r]);
    out.push_back(std::move(inst));
  }
  if (out.empty()) throw IngestError("no data rows");
  return out;
}

inline std::vector<DatasetInstance> load_generic_csv(const std::string& path, const std::string& label_column) {
  auto in = detail::open_or_throw(path);
  return parse_generic_csv(in, label_column);
}

struct SyntheticSpec {
  int subjects = 51;
  int sessions = 8;
  int reps = 50;
  int dim = 31;
  double noise = 0.35;      // within-subject spread, relative to the subject mean
  double drift = 0.04;      // per-session random-walk step, relative to the subject mean
  double separation = 0.6;  // spread of subject means around the population mean
  std::uint64_t seed = 7;
};

/// Keystroke-like stand-in data: each subject is a log-normal cluster of
/// positive timings whose centre random-walks across sessions.
inline std::vector<DatasetInstance> make_synthetic_keystroke(const SyntheticSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> base(-2.5, -1.0);
  std::vector<double> population(static_cast<std::size_t>(spec.dim));
  for (auto& p : population) p = base(rng);
  std::vector<DatasetInstance> out;
  out.reserve(static_cast<std::size_t>(spec.subjects * spec.sessions * spec.reps));
  std::int64_t order = 0;
  for (int s = 0; s < spec.subjects; ++s) {
    char sid[16];
    std::snprintf(sid, sizeof sid, "s%03d", s + 1);
    std::vector<double> centre(population.size());
    for (std::size_t q = 0; q < centre.size(); ++q) centre[q] = population[q] + spec.separation * z(rng);
    for (int sess = 1; sess <= spec.sessions; ++sess) {
      if (sess > 1)
        for (auto& c : centre) c += spec.drift * z(rng);
      for (int rep = 1; rep <= spec.reps; ++rep) {
        DatasetInstance inst;
        inst.subject_id = sid;
        inst.session_index = sess;
        inst.instance_id = std::string(sid) + ":" + std::to_string(sess) + ":" + std::to_string(rep);
        inst.arrival_order = order++;
        inst.features.resize(centre.size());
        for (std::size_t q = 0; q < centre.size(); ++q) inst.features[q] = std::exp(centre[q] + spec.noise * z(rng));
        out.push_back(std::move(inst));
      }
    }
  }
  return out;
}

inline void write_cmu_csv(std::ostream& os, const std::vector<DatasetInstance>& rows) {
  if (rows.empty()) return;
  os << "subject,sessionIndex,rep";
  for (std::size_t q = 0; q < rows.front().features.size(); ++q) os << ",f" << q;
  os << '\n';
  char buf[32];
  for (const auto& r : rows) {
    const auto rep = r.instance_id.substr(r.instance_id.rfind(':') + 1);
    os << r.subject_id << ',' << r.session_index << ',' << rep;
    for (double v : r.features) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    os << '\n';
  }
}

/// Row indices (into the instance list) for one classifier.
struct UserPlan {
  std::string user_id;
  bool initially_enrolled = true;
  std::size_t enroll_tick = 0;
  std::vector<std::size_t> train_genuine;
  std::vector<std::size_t> train_impostor;
  std::vector<std::size_t> test;  // arrival order for this classifier

  bool operator==(const UserPlan&) const = default;
};

struct StreamItem {
  std::size_t user = 0;      // index into SplitPlan::users
  std::size_t position = 0;  // index into that user's test list
  bool operator==(const StreamItem&) const = default;
};

struct SplitPlan {
  std::uint64_t seed = 0;
  double enrolled_fraction = 1.0;
  std::vector<UserPlan> users;
  std::vector<StreamItem> stream;  // global arrival clock
  std::vector<std::string> excluded_subjects;

  bool operator==(const SplitPlan&) const = default;
};

inline std::size_t train_genuine_count(std::size_t total) {
  const auto n = static_cast<std::size_t>(std::llround(0.30 * static_cast<double>(total)));
  return std::clamp<std::size_t>(n, 1, total - 1);
}

/// Impostor rows making up 20% of the final training set: n = 0.2 (g + n).
inline std::size_t train_impostor_count(std::size_t genuine) {
  return static_cast<std::size_t>(std::llround(0.25 * static_cast<double>(genuine)));
}

/// 30% / 20% / 70% split with round-robin global arrival. Late enrollees
/// (beyond `enrolled_fraction`) join the stream at evenly spaced rounds and
/// serve as impostor data for everyone before that.
inline SplitPlan make_split(const std::vector<DatasetInstance>& instances, double enrolled_fraction,
                            std::uint64_t seed) {
  if (!(enrolled_fraction > 0.0 && enrolled_fraction <= 1.0))
    throw ConfigError("enrolled fraction must lie in (0, 1]");
  std::map<std::string, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < instances.size(); ++i) by_subject[instances[i].subject_id].push_back(i);

  SplitPlan plan;
  plan.seed = seed;
  plan.enrolled_fraction = enrolled_fraction;
  std::vector<std::string> subjects;
  for (const auto& [s, rows] : by_subject) {
    if (rows.size() < 4) {
      std::clog << "warning: subject " << s << " has " << rows.size() << " rows; excluded from the split\n";
      plan.excluded_subjects.push_back(s);
      continue;
    }
    subjects.push_back(s);
  }
  if (subjects.size() < 2) throw ConfigError("split needs at least two subjects with 4 or more rows");

  std::mt19937_64 rng(seed);
  std::vector<std::string> shuffled = subjects;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto n_initial = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(enrolled_fraction * static_cast<double>(subjects.size()))), 1,
      subjects.size());
  std::vector<std::string> initial(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_initial));
  std::vector<std::string> late(shuffled.begin() + static_cast<std::ptrdiff_t>(n_initial), shuffled.end());
  std::sort(initial.begin(), initial.end());

  auto sample = [&](std::vector<std::size_t> pool, std::size_t n) {
    n = std::min(n, pool.size());
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(n);
    return pool;
  };

  auto build_user = [&](const std::string& u, bool initially) {
    UserPlan up;
    up.user_id = u;
    up.initially_enrolled = initially;
    auto own = by_subject.at(u);
    std::shuffle(own.begin(), own.end(), rng);
    const std::size_t g = train_genuine_count(own.size());
    up.train_genuine.assign(own.begin(), own.begin() + static_cast<std::ptrdiff_t>(g));
    std::vector<std::size_t> test_genuine(own.begin() + static_cast<std::ptrdiff_t>(g), own.end());

    std::vector<std::size_t> enrolled_pool;
    for (const auto& o : initial)
      if (o != u)
        for (auto i : by_subject.at(o)) enrolled_pool.push_back(i);
    const std::size_t n_imp = train_impostor_count(g);
    if (enrolled_pool.size() < n_imp)
      std::clog << "warning: only " << enrolled_pool.size() << " impostor rows available for " << u << '\n';
    up.train_impostor = sample(enrolled_pool, n_imp);
    std::sort(up.train_impostor.begin(), up.train_impostor.end());

    std::vector<std::size_t> others;
    for (const auto& o : subjects)
      if (o != u)
        for (auto i : by_subject.at(o))
          if (!std::binary_search(up.train_impostor.begin(), up.train_impostor.end(), i)) others.push_back(i);
    auto test_impostor = sample(others, test_genuine.size());

    // Session order, shuffled within each session.
    std::map<int, std::vector<std::size_t>> by_session;
    for (auto i : test_genuine) by_session[instances[i].session_index].push_back(i);
    for (auto i : test_impostor) by_session[instances[i].session_index].push_back(i);
    for (auto& [sess, rows] : by_session) {
      std::sort(rows.begin(), rows.end());
      std::shuffle(rows.begin(), rows.end(), rng);
      up.test.insert(up.test.end(), rows.begin(), rows.end());
    }
    return up;
  };

  for (const auto& u : initial) plan.users.push_back(build_user(u, true));
  for (const auto& u : late) plan.users.push_back(build_user(u, false));

  std::size_t rounds = 0;
  for (std::size_t k = 0; k < n_initial; ++k) rounds = std::max(rounds, plan.users[k].test.size());
  std::vector<std::size_t> start_round(plan.users.size(), 0);
  for (std::size_t k = 0; k < late.size(); ++k)
    start_round[n_initial + k] = (k + 1) * rounds / (late.size() + 1);

  std::size_t round = 0;
  for (bool more = true; more; ++round) {
    more = false;
    for (std::size_t u = 0; u < plan.users.size(); ++u) {
      if (round < start_round[u]) {
        more = true;
        continue;
      }
      const std::size_t pos = round - start_round[u];
      if (pos == 0) plan.users[u].enroll_tick = plan.stream.size();
      if (pos < plan.users[u].test.size()) {
        plan.stream.push_back({u, pos});
        more = more || pos + 1 < plan.users[u].test.size();
      }
    }
  }
  for (std::size_t u = 0; u < n_initial; ++u) plan.users[u].enroll_tick = 0;
  return plan;
}

inline nlohmann::json split_to_json(const SplitPlan& plan, const std::vector<DatasetInstance>& instances) {
  auto ids = [&](const std::vector<std::size_t>& rows) {
    nlohmann::json a = nlohmann::json::array();
    for (auto i : rows) a.push_back(instances[i].instance_id);
    return a;
  };
  nlohmann::json users = nlohmann::json::array();
  for (const auto& u : plan.users)
    users.push_back({{"user_id", u.user_id},
                     {"initially_enrolled", u.initially_enrolled},
                     {"enroll_tick", u.enroll_tick},
                     {"train_genuine", ids(u.train_genuine)},
                     {"train_impostor", ids(u.train_impostor)},
                     {"test", ids(u.test)}});
  return {{"schema", "rltir-split/1"},
          {"seed", plan.seed},
          {"enrolled_fraction", plan.enrolled_fraction},
          {"excluded_subjects", plan.excluded_subjects},
          {"stream_length", plan.stream.size()},
          {"users", users}};
}

}  // namespace rltir
