#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "oracles.hpp"
#include "rltir/rltir.hpp"

using namespace rltir;

namespace {

PipelineConfig small_config() {
  PipelineConfig c;
  c.forest.trees = 5;
  c.forest.max_depth = 6;
  c.forest.terminal_depth = 3;
  c.forest.phi = 30;
  c.trainer.h1 = 8;
  c.trainer.h2 = 6;
  c.trainer.h3 = 4;
  c.trainer.head = QHead::Linear;
  c.beta = 0.05;
  c.feedback_timeout = std::chrono::milliseconds(1234);
  return c;
}

struct Data {
  std::vector<std::vector<double>> genuine, impostor, stream;
  std::vector<Verdict> truth;
};

Data make_data(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Data d;
  d.genuine = oracle::uniform_rows(60, 3, rng, 0.0, 0.6);
  d.impostor = oracle::uniform_rows(15, 3, rng, 0.4, 1.0);
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < 120; ++i) {
    const bool g = coin(rng);
    d.stream.push_back(oracle::uniform_rows(1, 3, rng, g ? 0.0 : 0.4, g ? 0.6 : 1.0)[0]);
    d.truth.push_back(g ? Verdict::Genuine : Verdict::Impostor);
  }
  return d;
}

void expect_same_user(const EnrolledUser& a, const EnrolledUser& b) {
  EXPECT_EQ(a.user_id, b.user_id);
  EXPECT_EQ(a.classifier, b.classifier);
  EXPECT_EQ(a.agent.net(), b.agent.net());
  EXPECT_EQ(a.agent.memory(), b.agent.memory());
  EXPECT_EQ(a.agent.steps(), b.agent.steps());
  EXPECT_EQ(a.agent.epsilon(), b.agent.epsilon());
  EXPECT_EQ(a.agent.config(), b.agent.config());
  EXPECT_EQ(a.rng, b.rng);
  EXPECT_EQ(a.instances_seen, b.instances_seen);
  EXPECT_EQ(a.feedback_events, b.feedback_events);
  EXPECT_EQ(config_to_json(a.config), config_to_json(b.config));
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / (std::string("rltir_") + name + "_" + std::to_string(::getpid())))
      .string();
}

}  // namespace

TEST(Serialization, ConfigRoundTrip) {
  const auto c = small_config();
  const auto back = config_from_json(config_to_json(c));
  EXPECT_EQ(back.forest, c.forest);
  EXPECT_EQ(back.trainer, c.trainer);
  EXPECT_EQ(back.beta, c.beta);
  EXPECT_EQ(back.gate, c.gate);
  EXPECT_EQ(back.sigma, c.sigma);
  EXPECT_EQ(back.feedback_timeout, c.feedback_timeout);
}

TEST(Serialization, FreshUserRoundTrip) {
  const auto d = make_data(1);
  const auto u = enroll_user("alice", d.genuine, d.impostor, small_config(), 2);
  expect_same_user(u, user_from_json(nlohmann::json::parse(user_to_json(u).dump())));
}

TEST(Serialization, TrainedUserRoundTripThroughFile) {
  const auto d = make_data(3);
  auto u = enroll_user("bob", d.genuine, d.impostor, small_config(), 4);
  for (std::size_t i = 0; i < 60; ++i) identify(u, std::to_string(i), d.stream[i], oracle_feedback(d.truth[i]));
  ASSERT_GT(u.agent.memory().size(), 0u);
  const auto path = temp_path("models.json");
  save_models(path, {u});
  const auto loaded = load_models(path);
  std::filesystem::remove(path);
  ASSERT_EQ(loaded.size(), 1u);
  expect_same_user(u, loaded[0]);
  const auto& a = u.classifier.tree(0);
  const auto& b = loaded[0].classifier.tree(0);
  EXPECT_EQ(a.last_path(), b.last_path());
  EXPECT_EQ(a.instance_counter(), b.instance_counter());
}

TEST(Serialization, ResumedRunEqualsContinuousRun) {
  const auto d = make_data(5);
  auto continuous = enroll_user("carol", d.genuine, d.impostor, small_config(), 6);
  auto first_half = continuous;
  std::vector<std::string> expect;
  for (std::size_t i = 0; i < d.stream.size(); ++i) {
    auto j = outcome_to_json(identify(continuous, std::to_string(i), d.stream[i], oracle_feedback(d.truth[i])));
    j.erase("feedback");
    expect.push_back(j.dump());
  }

  std::vector<std::string> got;
  for (std::size_t i = 0; i < 60; ++i) {
    auto j = outcome_to_json(identify(first_half, std::to_string(i), d.stream[i], oracle_feedback(d.truth[i])));
    j.erase("feedback");
    got.push_back(j.dump());
  }
  auto resumed = user_from_json(nlohmann::json::parse(user_to_json(first_half).dump()));
  for (std::size_t i = 60; i < d.stream.size(); ++i) {
    auto j = outcome_to_json(identify(resumed, std::to_string(i), d.stream[i], oracle_feedback(d.truth[i])));
    j.erase("feedback");
    got.push_back(j.dump());
  }
  EXPECT_EQ(got, expect);
  expect_same_user(resumed, continuous);
}

TEST(Serialization, RejectsForeignDocuments) {
  EXPECT_THROW(user_from_json(nlohmann::json{{"schema", "other/1"}}), ConfigError);
  const auto path = temp_path("bad.json");
  {
    std::ofstream out(path);
    out << R"({"schema":"nope","users":[]})";
  }
  EXPECT_THROW(load_models(path), ConfigError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_models("/nonexistent/models.json"), ConfigError);
}
