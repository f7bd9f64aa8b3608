#pragma once

// JSON documents: pipeline configuration and "rltir-model/1" checkpoints
// (classifier, both Q-network parameter sets, replay memory, counters and
// RNG state, so a resumed run continues bit-for-bit).

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rltir/errors.hpp"
#include "rltir/pipeline.hpp"

namespace rltir {

inline constexpr const char* kModelSchema = "rltir-model/1";

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  const auto& f = c.forest;
  const auto& t = c.trainer;
  return {{"trees", f.trees},
          {"max_depth", f.max_depth},
          {"min_depth", f.min_depth},
          {"terminal_depth", f.terminal_depth},
          {"phi", f.phi},
          {"rho", f.rho},
          {"logistic_scale", f.logistic_scale == LogisticScale::Paper ? "paper" : "standard"},
          {"beta", c.beta},
          {"gate", c.gate},
          {"sigma", c.sigma},
          {"feedback_timeout_ms", c.feedback_timeout.count()},
          {"gamma", t.gamma},
          {"alpha", t.alpha},
          {"replace_step", t.replace_step},
          {"epsilon_start", t.epsilon_start},
          {"epsilon_end", t.epsilon_end},
          {"epsilon_decay", t.epsilon_decay},
          {"batch_size", t.batch_size},
          {"capacity", t.capacity},
          {"h1", t.h1},
          {"h2", t.h2},
          {"h3", t.h3},
          {"head", to_string(t.head)},
          {"zero_init", t.zero_init}};
}

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  auto& f = c.forest;
  auto& t = c.trainer;
  f.trees = j.at("trees");
  f.max_depth = j.at("max_depth");
  f.min_depth = j.at("min_depth");
  f.terminal_depth = j.at("terminal_depth");
  f.phi = j.at("phi");
  f.rho = j.at("rho");
  f.logistic_scale = j.at("logistic_scale") == "paper" ? LogisticScale::Paper : LogisticScale::Standard;
  c.beta = j.at("beta");
  c.gate = j.at("gate");
  c.sigma = j.at("sigma");
  c.feedback_timeout = std::chrono::milliseconds(j.at("feedback_timeout_ms").get<std::int64_t>());
  t.gamma = j.at("gamma");
  t.alpha = j.at("alpha");
  t.replace_step = j.at("replace_step");
  t.epsilon_start = j.at("epsilon_start");
  t.epsilon_end = j.at("epsilon_end");
  t.epsilon_decay = j.at("epsilon_decay");
  t.batch_size = j.at("batch_size");
  t.capacity = j.at("capacity");
  t.h1 = j.at("h1");
  t.h2 = j.at("h2");
  t.h3 = j.at("h3");
  t.head = j.at("head") == "softmax" ? QHead::Softmax : QHead::Linear;
  t.zero_init = j.value("zero_init", false);
  c.validate();
  return c;
}

namespace detail {

inline nlohmann::json tree_to_json(const SpaceTree& t) {
  const auto raw = t.raw();
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : raw.nodes)
    nodes.push_back({n.h, n.k, n.tau, n.v, n.v_latest, n.p, n.n, static_cast<int>(n.type), n.flag ? 1 : 0});
  return {{"max_depth", raw.max_depth},
          {"min_depth", raw.min_depth},
          {"terminal_depth_init", raw.terminal_depth_init},
          {"dim", raw.dim},
          {"welford", {{"count", raw.welford.count}, {"mean", raw.welford.mean}, {"m2", raw.welford.m2}}},
          {"instance_counter", raw.instance_counter},
          {"training_mass", raw.training_mass},
          {"node_fields", {"h", "k", "tau", "v", "v_latest", "p", "n", "type", "flag"}},
          {"nodes", nodes}};
}

inline SpaceTree tree_from_json(const nlohmann::json& j) {
  SpaceTree::Raw raw;
  raw.max_depth = j.at("max_depth");
  raw.min_depth = j.at("min_depth");
  raw.terminal_depth_init = j.at("terminal_depth_init");
  raw.dim = j.at("dim");
  raw.welford.count = j.at("welford").at("count");
  raw.welford.mean = j.at("welford").at("mean");
  raw.welford.m2 = j.at("welford").at("m2");
  raw.instance_counter = j.at("instance_counter");
  raw.training_mass = j.at("training_mass");
  for (const auto& a : j.at("nodes")) {
    TreeNode n;
    n.h = a.at(0);
    n.k = a.at(1);
    n.tau = a.at(2);
    n.v = a.at(3);
    n.v_latest = a.at(4);
    n.p = a.at(5);
    n.n = a.at(6);
    const int type = a.at(7);
    if (type < 0 || type > 2) throw ConfigError("stored node has an invalid type code");
    n.type = static_cast<NodeType>(type);
    n.flag = a.at(8).get<int>() != 0;
    raw.nodes.push_back(n);
  }
  return SpaceTree::from_raw(std::move(raw));
}

inline nlohmann::json encoding_to_json(const TreeStateEncoding& e) { return {{"rows", e.rows}, {"values", e.values}}; }

inline TreeStateEncoding encoding_from_json(const nlohmann::json& j) {
  TreeStateEncoding e;
  e.rows = j.at("rows");
  e.values = j.at("values").get<std::vector<double>>();
  return e;
}

}  // namespace detail

inline nlohmann::json user_to_json(const EnrolledUser& u) {
  const auto& c = u.classifier;
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : c.trees()) trees.push_back(detail::tree_to_json(t));
  nlohmann::json memory = nlohmann::json::array();
  for (const auto& t : u.agent.memory())
    memory.push_back({{"s", detail::encoding_to_json(t.s)},
                      {"a", t.a},
                      {"r", t.r},
                      {"s_next", detail::encoding_to_json(t.s_next)},
                      {"terminal", t.terminal}});
  std::ostringstream rng_state;
  rng_state << u.rng;
  const auto online = u.agent.net().online();
  const auto target = u.agent.net().target();
  return {{"schema", kModelSchema},
          {"user_id", u.user_id},
          {"config", config_to_json(u.config)},
          {"threshold", c.threshold()},
          {"normalizer",
           {{"min", c.normalizer().min},
            {"max", c.normalizer().max},
            {"clamp_lo", c.normalizer().clamp_lo},
            {"clamp_hi", c.normalizer().clamp_hi}}},
          {"trees", trees},
          {"qnet",
           {{"rows", u.agent.net().shape().rows},
            {"online", std::vector<double>(online.begin(), online.end())},
            {"target", std::vector<double>(target.begin(), target.end())},
            {"step_counter", u.agent.steps()},
            {"epsilon", u.agent.epsilon()}}},
          {"memory", memory},
          {"instances_seen", u.instances_seen},
          {"feedback_events", u.feedback_events},
          {"calibration_fallback", u.calibration_fallback},
          {"rng_state", rng_state.str()}};
}

inline EnrolledUser user_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != kModelSchema)
    throw ConfigError("model document schema is not " + std::string(kModelSchema));
  EnrolledUser u;
  u.user_id = j.at("user_id");
  u.config = config_from_json(j.at("config"));
  MinMaxNormalizer norm;
  norm.min = j.at("normalizer").at("min").get<std::vector<double>>();
  norm.max = j.at("normalizer").at("max").get<std::vector<double>>();
  norm.clamp_lo = j.at("normalizer").at("clamp_lo");
  norm.clamp_hi = j.at("normalizer").at("clamp_hi");
  std::vector<SpaceTree> trees;
  for (const auto& t : j.at("trees")) trees.push_back(detail::tree_from_json(t));
  u.classifier = Classifier::from_parts(u.user_id, u.config.forest, std::move(norm), j.at("threshold"), std::move(trees));

  // The scratch initialisation is overwritten by the stored parameters.
  std::mt19937_64 scratch;
  const auto& q = j.at("qnet");
  u.agent = [&] {
    DqnAgent a(u.config.trainer, q.at("rows").get<std::size_t>(), scratch);
    a.net().set_parameters(q.at("online").get<std::vector<double>>(), q.at("target").get<std::vector<double>>());
    a.restore(q.at("step_counter"), q.at("epsilon"));
    for (const auto& t : j.at("memory"))
      a.remember(Transition{detail::encoding_from_json(t.at("s")), t.at("a"), t.at("r"),
                            detail::encoding_from_json(t.at("s_next")), t.at("terminal")});
    return a;
  }();
  u.instances_seen = j.at("instances_seen");
  u.feedback_events = j.at("feedback_events");
  u.calibration_fallback = j.at("calibration_fallback");
  std::istringstream rng_state(j.at("rng_state").get<std::string>());
  rng_state >> u.rng;
  if (!rng_state) throw ConfigError("model document has a malformed rng_state");
  return u;
}

inline void save_models(const std::string& path, const std::vector<EnrolledUser>& users) {
  nlohmann::json doc{{"schema", kModelSchema}, {"users", nlohmann::json::array()}};
  for (const auto& u : users) doc["users"].push_back(user_to_json(u));
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write model file " + path);
  out << doc.dump() << '\n';
}

inline std::vector<EnrolledUser> load_models(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read model file " + path);
  const auto doc = nlohmann::json::parse(in);
  if (doc.value("schema", "") != kModelSchema) throw ConfigError("model file schema is not " + std::string(kModelSchema));
  std::vector<EnrolledUser> users;
  for (const auto& j : doc.at("users")) users.push_back(user_from_json(j));
  return users;
}

}  // namespace rltir
