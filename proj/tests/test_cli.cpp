#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "rltir/serialization.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(RLTIR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch() {
  auto dir = fs::temp_directory_path() / ("rltir_cli_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

const char* kSmall = "--format synthetic --synthetic-subjects 3 --trees 3 --max-depth 5 --terminal-depth 3 "
                     "--h1 6 --h2 6 --h3 4 --reps 1";

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("eval --no-such-flag"), 2);
  EXPECT_EQ(run("eval --dataset /nonexistent/data.csv"), 2);
  EXPECT_EQ(run("eval --format cmu"), 2);
  EXPECT_EQ(run("eval --format synthetic --mode oracle"), 2);
  EXPECT_EQ(run("eval --format synthetic --max-depth 0"), 2);
  EXPECT_EQ(run("eval --format synthetic --terminal-depth 12"), 2);
  EXPECT_EQ(run("eval --format synthetic --gate 1.5"), 2);
  EXPECT_EQ(run("eval --format synthetic --head tanh"), 2);
  EXPECT_EQ(run("train --format synthetic"), 2);
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(run("--help"), 0); }

TEST(Cli, MalformedDatasetIsARuntimeError) {
  const auto dir = scratch();
  const auto csv = dir / "bad.csv";
  {
    std::ofstream out(csv);
    out << "subject,sessionIndex,rep,a\ns1,1,1,0.5\ns1,1,2,notanumber\n";
  }
  EXPECT_EQ(run("eval --dataset " + csv.string()), 1);
  fs::remove_all(dir);
}

TEST(Cli, SyntheticEvalWritesReportAndSeries) {
  const auto dir = scratch();
  const auto report = dir / "report.json";
  const auto series = dir / "series.csv";
  ASSERT_EQ(run(std::string("eval ") + kSmall + " --report " + report.string() + " --series " + series.string()), 0);
  std::ifstream in(report);
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["schema"], "rltir-report/1");
  EXPECT_EQ(j["reps"].size(), 1u);
  EXPECT_EQ(j["dataset"]["subjects"], 3);
  EXPECT_EQ(j["config"]["trees"], 3);
  EXPECT_TRUE(j["mean"]["auc"].is_number());
  std::ifstream s(series);
  std::string header;
  std::getline(s, header);
  EXPECT_EQ(header, "rep,window,start,end,auc,fnr,fpr,feedback_count");
  fs::remove_all(dir);
}

TEST(Cli, TrainWritesLoadableModels) {
  const auto dir = scratch();
  const auto model = dir / "models.json";
  ASSERT_EQ(run(std::string("train ") + kSmall + " --model " + model.string()), 0);
  const auto users = rltir::load_models(model.string());
  ASSERT_EQ(users.size(), 3u);
  EXPECT_EQ(users[0].classifier.size(), 3u);
  fs::remove_all(dir);
}
