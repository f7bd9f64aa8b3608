// rltir: train, evaluate, sweep and serve per-user verification models.

#include <CLI11.hpp>

#include <pthread.h>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rltir/rltir.hpp"
#include "rltir/service.hpp"

namespace {

using namespace rltir;

struct Options {
  std::string dataset;
  std::string format = "cmu";
  std::string label_column = "subject";
  std::string mode = "rltir-oracle";
  int synthetic_subjects = 51;
  std::string head = "softmax";
  std::string scale = "paper";
  ExperimentConfig exp;
  std::string report;
  std::string series;
  std::string model;
  std::string audit;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<int> depths{3, 5, 7, 9};
  std::vector<int> tree_counts{5, 10, 20, 30};
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void add_data_flags(CLI::App& app, Options& o) {
  app.add_option("--dataset", o.dataset, "CSV path (ignored for --format synthetic)");
  app.add_option("--format", o.format, "cmu, generic or synthetic")
      ->check(CLI::IsMember({"cmu", "generic", "synthetic"}));
  app.add_option("--label-column", o.label_column, "subject column for --format generic");
  app.add_option("--synthetic-subjects", o.synthetic_subjects, "subject count for --format synthetic");
}

void add_model_flags(CLI::App& app, Options& o) {
  auto& f = o.exp.pipeline.forest;
  auto& t = o.exp.pipeline.trainer;
  app.add_option("--mode", o.mode, "rltir-oracle, rltir-interactive or nofeed");
  app.add_option("--trees", f.trees, "trees per classifier (M)");
  app.add_option("--max-depth", f.max_depth);
  app.add_option("--min-depth", f.min_depth);
  app.add_option("--terminal-depth", f.terminal_depth, "initial terminal frontier depth");
  app.add_option("--phi", f.phi, "window length between refreshes");
  app.add_option("--rho", f.rho, "window blend weight");
  app.add_option("--logistic-scale", o.scale, "paper or standard")->check(CLI::IsMember({"paper", "standard"}));
  app.add_option("--beta", o.exp.pipeline.beta, "density step of update actions");
  app.add_option("--gate", o.exp.pipeline.gate, "uncertainty threshold for feedback requests");
  app.add_option("--sigma", o.exp.pipeline.sigma, "weight of the global reward");
  app.add_option("--feedback-timeout", [&o](const CLI::results_t& r) {
    o.exp.pipeline.feedback_timeout = std::chrono::milliseconds(static_cast<std::int64_t>(std::stod(r[0]) * 1000.0));
    return true;
  }, "seconds to wait for interactive feedback");
  app.add_option("--gamma", t.gamma);
  app.add_option("--alpha", t.alpha);
  app.add_option("--replace-step", t.replace_step, "target network sync period (C)");
  app.add_option("--h1", t.h1);
  app.add_option("--h2", t.h2);
  app.add_option("--h3", t.h3);
  app.add_option("--head", o.head, "softmax or linear")->check(CLI::IsMember({"softmax", "linear"}));
  app.add_option("--seed", o.exp.seed);
  app.add_option("--reps", o.exp.reps);
  app.add_option("--enrolled-fraction", o.exp.enrolled_fraction, "share of subjects enrolled before the stream");
  app.add_option("--window", o.exp.window, "series window length");
  app.add_option("--stride", o.exp.stride, "series window stride");
}

void finish_config(Options& o) {
  o.exp.mode = parse_mode(o.mode);
  o.exp.pipeline.trainer.head = o.head == "linear" ? QHead::Linear : QHead::Softmax;
  o.exp.pipeline.forest.logistic_scale = o.scale == "standard" ? LogisticScale::Standard : LogisticScale::Paper;
  o.exp.validate();
}

std::vector<DatasetInstance> load(const Options& o) {
  if (o.format == "synthetic") {
    SyntheticSpec s;
    s.subjects = o.synthetic_subjects;
    return make_synthetic_keystroke(s);
  }
  if (o.dataset.empty()) throw UsageError("--dataset is required for --format " + o.format);
  if (!std::filesystem::exists(o.dataset)) throw UsageError("dataset not found: " + o.dataset);
  return o.format == "cmu" ? load_cmu_csv(o.dataset) : load_generic_csv(o.dataset, o.label_column);
}

nlohmann::json dataset_info(const Options& o, const std::vector<DatasetInstance>& data) {
  std::set<std::string> subjects;
  for (const auto& d : data) subjects.insert(d.subject_id);
  return {{"path", o.format == "synthetic" ? nlohmann::json(nullptr) : nlohmann::json(o.dataset)},
          {"format", o.format},
          {"instances", data.size()},
          {"subjects", subjects.size()},
          {"dimension", data.empty() ? 0 : data.front().features.size()}};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
}

/// Enrolls every subject of the first repetition's split.
std::vector<EnrolledUser> enroll_all(const Options& o, const std::vector<DatasetInstance>& data) {
  const auto seed = mix_seed(o.exp.seed, 0);
  const auto plan = make_split(data, 1.0, seed);
  std::vector<EnrolledUser> users;
  for (std::size_t u = 0; u < plan.users.size(); ++u) {
    const auto& up = plan.users[u];
    std::vector<std::vector<double>> g, im;
    for (auto i : up.train_genuine) g.push_back(data[i].features);
    for (auto i : up.train_impostor) im.push_back(data[i].features);
    users.push_back(enroll_user(up.user_id, g, im, o.exp.pipeline, mix_seed(seed, 1000 + u)));
  }
  return users;
}

int cmd_train(const Options& o) {
  if (o.model.empty()) throw UsageError("train needs --model <path>");
  const auto data = load(o);
  const auto users = enroll_all(o, data);
  save_models(o.model, users);
  std::cout << "enrolled " << users.size() << " users into " << o.model << '\n';
  return 0;
}

int cmd_eval(const Options& o) {
  const auto data = load(o);
  std::ofstream audit;
  RunHooks hooks;
  if (!o.audit.empty()) {
    audit.open(o.audit);
    if (!audit) throw UsageError("cannot write " + o.audit);
    hooks.on_outcome = [&audit](const IdentificationOutcome& out) { audit << outcome_to_json(out).dump() << '\n'; };
  }
  const auto report = run_experiment(o.exp, data, hooks);
  const auto j = report_to_json(report, dataset_info(o, data));
  if (!o.report.empty()) write_text(o.report, j.dump(2) + "\n");
  if (!o.series.empty()) {
    std::ostringstream csv;
    write_series_csv(csv, report);
    write_text(o.series, csv.str());
  }
  std::cout << j["mean"].dump(2) << '\n';
  return 0;
}

int cmd_sweep(const Options& o) {
  const auto data = load(o);
  const auto points = run_sweep(o.exp, data, o.depths, o.tree_counts);
  nlohmann::json a = nlohmann::json::array();
  std::ostringstream csv;
  csv << "max_depth,trees,terminal_depth,auc,f1,feedback_proportion\n";
  for (const auto& p : points) {
    a.push_back({{"max_depth", p.max_depth},
                 {"trees", p.trees},
                 {"terminal_depth", p.terminal_depth},
                 {"report", report_to_json(p.report, dataset_info(o, data))}});
    csv << p.max_depth << ',' << p.trees << ',' << p.terminal_depth << ',' << p.report.mean_auc() << ','
        << p.report.mean_f1() << ',' << p.report.mean_feedback_proportion() << '\n';
  }
  if (!o.report.empty()) write_text(o.report, nlohmann::json{{"schema", kReportSchema}, {"sweep", a}}.dump(2) + "\n");
  if (!o.series.empty()) write_text(o.series, csv.str());
  std::cout << csv.str();
  return 0;
}

int cmd_serve(const Options& o) {
  std::vector<EnrolledUser> users;
  if (!o.model.empty()) {
    if (!std::filesystem::exists(o.model)) throw UsageError("model not found: " + o.model);
    users = load_models(o.model);
  } else {
    users = enroll_all(o, load(o));
  }
  ServiceOptions so;
  so.mode = o.exp.mode;
  so.feedback_timeout = o.exp.pipeline.feedback_timeout;
  so.audit_path = o.audit;
  so.series_window = o.exp.window;
  so.series_stride = o.exp.stride;
  // Signals go to a waiter thread that shuts the server down.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);
  Service service(std::move(users), so);
  std::thread([&service, stop_signals] {
    int sig = 0;
    sigwait(&stop_signals, &sig);
    service.stop();
  }).detach();
  std::cerr << "serving " << o.host << ':' << o.port << " mode=" << o.mode << '\n';
  service.listen(o.host, o.port);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Per-user verification with reinforcement-learned tree updates"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "enroll every subject and save the models");
  auto* eval = app.add_subcommand("eval", "run the streaming benchmark and write a report");
  auto* sweep = app.add_subcommand("sweep", "grid over MaxDepth and tree count");
  auto* serve = app.add_subcommand("serve", "HTTP service for interactive feedback");
  for (auto* c : {train, eval, sweep, serve}) {
    add_data_flags(*c, o);
    add_model_flags(*c, o);
  }
  train->add_option("--model", o.model, "output model file")->required();
  for (auto* c : {eval, sweep}) {
    c->add_option("--report", o.report, "report JSON path");
    c->add_option("--series", o.series, "CSV series path");
  }
  eval->add_option("--audit", o.audit, "outcome log (JSON lines)");
  sweep->add_option("--depths", o.depths, "MaxDepth values")->delimiter(',');
  sweep->add_option("--tree-counts", o.tree_counts, "tree counts")->delimiter(',');
  serve->add_option("--model", o.model, "model file from `train` (otherwise enroll from --dataset)");
  serve->add_option("--port", o.port);
  serve->add_option("--host", o.host);
  serve->add_option("--audit", o.audit, "outcome log (JSON lines)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    finish_config(o);
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o);
    if (sweep->parsed()) return cmd_sweep(o);
    if (serve->parsed()) return cmd_serve(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
