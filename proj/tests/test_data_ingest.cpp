#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "rltir/data_ingest.hpp"
#include "rltir/stream_forest.hpp"

using namespace rltir;

namespace {

std::vector<DatasetInstance> synthetic(int subjects, int sessions = 8, int reps = 50) {
  SyntheticSpec s;
  s.subjects = subjects;
  s.sessions = sessions;
  s.reps = reps;
  s.dim = 5;
  return make_synthetic_keystroke(s);
}

}  // namespace

TEST(CmuCsv, ParsesMetadataAndFeatures) {
  std::istringstream in(
      "subject,sessionIndex,rep,H.period,DD.period.t\n"
      "s002,1,1,0.1491,0.3979\n"
      "s002,1,2,0.1111,0.3451\n"
      "\n"
      "s003,2,1,0.0821,0.2001\n");
  const auto rows = parse_cmu_csv(in, 3);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].subject_id, "s002");
  EXPECT_EQ(rows[0].instance_id, "s002:1:1");
  EXPECT_EQ(rows[2].session_index, 2);
  EXPECT_EQ(rows[2].arrival_order, 2);
  EXPECT_EQ(rows[1].features, (std::vector<double>{0.1111, 0.3451}));
}

TEST(CmuCsv, Errors) {
  std::istringstream empty("");
  EXPECT_THROW(parse_cmu_csv(empty), IngestError);
  std::istringstream header_only("subject,sessionIndex,rep,a\n");
  EXPECT_THROW(parse_cmu_csv(header_only), IngestError);
  std::istringstream missing("subject,rep,a\ns1,1,0.5\n");
  EXPECT_THROW(parse_cmu_csv(missing), IngestError);
  std::istringstream bad("subject,sessionIndex,rep,a\ns1,1,1,0.5\ns1,1,2,oops\n");
  try {
    parse_cmu_csv(bad);
    FAIL() << "expected an ingest error";
  } catch (const IngestError& e) {
    EXPECT_EQ(e.line, 3);
  }
  std::istringstream ragged("subject,sessionIndex,rep,a\ns1,1,1\n");
  EXPECT_THROW(parse_cmu_csv(ragged), IngestError);
  std::istringstream counted("subject,sessionIndex,rep,a\ns1,1,1,0.5\n");
  EXPECT_THROW(parse_cmu_csv(counted, 2), IngestError);
  EXPECT_THROW(load_cmu_csv("/nonexistent/file.csv"), IngestError);
}

TEST(CmuCsv, WriteThenParseIsLossless) {
  const auto data = synthetic(3, 2, 4);
  std::stringstream io;
  write_cmu_csv(io, data);
  const auto back = parse_cmu_csv(io, data.size());
  EXPECT_EQ(back, data);
}

TEST(GenericCsv, LabelAndSessionColumns) {
  std::istringstream in("f1,who,session,f2\n1.5,alice,3,2\n-1,bob,1,4e-3\n");
  const auto rows = parse_generic_csv(in, "who");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].subject_id, "alice");
  EXPECT_EQ(rows[0].session_index, 3);
  EXPECT_EQ(rows[1].features, (std::vector<double>{-1.0, 4e-3}));
  std::istringstream nolabel("a,b\n1,2\n");
  EXPECT_THROW(parse_generic_csv(nolabel, "who"), IngestError);
}

TEST(Synthetic, ShapeAndDeterminism) {
  const auto a = synthetic(4);
  EXPECT_EQ(a.size(), 4u * 400u);
  std::set<std::string> subjects;
  for (const auto& r : a) {
    subjects.insert(r.subject_id);
    EXPECT_EQ(r.features.size(), 5u);
    for (double v : r.features) EXPECT_GT(v, 0.0);
  }
  EXPECT_EQ(subjects.size(), 4u);
  EXPECT_EQ(a, synthetic(4));
}

TEST(Split, CountsFor400RowSubjects) {
  const auto data = synthetic(4);
  const auto plan = make_split(data, 1.0, 5);
  ASSERT_EQ(plan.users.size(), 4u);
  EXPECT_EQ(train_genuine_count(400), 120u);
  EXPECT_EQ(train_impostor_count(120), 30u);
  for (const auto& u : plan.users) {
    EXPECT_EQ(u.train_genuine.size(), 120u);
    EXPECT_EQ(u.train_impostor.size(), 30u);
    // Impostors make up 20% of the training set.
    EXPECT_DOUBLE_EQ(u.train_impostor.size() / static_cast<double>(u.train_genuine.size() + u.train_impostor.size()),
                     0.2);
    std::size_t genuine = 0, impostor = 0;
    for (auto i : u.test) (data[i].subject_id == u.user_id ? genuine : impostor) += 1;
    EXPECT_EQ(genuine, 280u);
    EXPECT_EQ(impostor, 280u);
    for (auto i : u.train_genuine) EXPECT_EQ(data[i].subject_id, u.user_id);
    for (auto i : u.train_impostor) EXPECT_NE(data[i].subject_id, u.user_id);
  }
  EXPECT_EQ(plan.stream.size(), 4u * 560u);
}

TEST(Split, TrainAndTestAreDisjoint) {
  const auto data = synthetic(5, 4, 10);
  const auto plan = make_split(data, 1.0, 6);
  for (const auto& u : plan.users) {
    std::set<std::size_t> train(u.train_genuine.begin(), u.train_genuine.end());
    train.insert(u.train_impostor.begin(), u.train_impostor.end());
    EXPECT_EQ(train.size(), u.train_genuine.size() + u.train_impostor.size());
    std::set<std::size_t> test(u.test.begin(), u.test.end());
    EXPECT_EQ(test.size(), u.test.size());
    for (auto i : u.test) EXPECT_FALSE(train.count(i)) << u.user_id << " row " << i;
  }
}

TEST(Split, TestStreamFollowsSessionOrder) {
  const auto data = synthetic(3, 6, 10);
  const auto plan = make_split(data, 1.0, 7);
  for (const auto& u : plan.users)
    for (std::size_t k = 1; k < u.test.size(); ++k)
      EXPECT_LE(data[u.test[k - 1]].session_index, data[u.test[k]].session_index);
}

TEST(Split, SameSeedSamePlan) {
  const auto data = synthetic(6, 4, 10);
  EXPECT_EQ(make_split(data, 0.5, 8), make_split(data, 0.5, 8));
  EXPECT_NE(make_split(data, 0.5, 8), make_split(data, 0.5, 9));
}

TEST(Split, LateEnrolment) {
  const auto data = synthetic(50, 2, 5);
  const auto plan = make_split(data, 0.6, 10);
  std::size_t initial = 0;
  std::set<std::string> enrolled;
  for (const auto& u : plan.users)
    if (u.initially_enrolled) ++initial, enrolled.insert(u.user_id);
  EXPECT_EQ(initial, 30u);
  for (const auto& u : plan.users) {
    if (u.initially_enrolled) {
      EXPECT_EQ(u.enroll_tick, 0u);
      for (auto i : u.train_impostor) EXPECT_TRUE(enrolled.count(data[i].subject_id));
    } else {
      EXPECT_GT(u.enroll_tick, 0u);
    }
  }
  // Each user's items appear in order on the global clock.
  std::vector<std::size_t> next(plan.users.size(), 0);
  for (const auto& item : plan.stream) EXPECT_EQ(item.position, next[item.user]++);
  for (std::size_t u = 0; u < plan.users.size(); ++u) EXPECT_EQ(next[u], plan.users[u].test.size());
  EXPECT_THROW(make_split(data, 0.0, 1), ConfigError);
}

TEST(Split, TinySubjectsAreExcluded) {
  auto data = synthetic(3, 2, 5);
  DatasetInstance lone;
  lone.subject_id = "tiny";
  lone.features.assign(5, 1.0);
  data.push_back(lone);
  const auto plan = make_split(data, 1.0, 11);
  EXPECT_EQ(plan.excluded_subjects, std::vector<std::string>{"tiny"});
  EXPECT_EQ(plan.users.size(), 3u);
}

TEST(Split, NormalisationMapsTrainingRowsIntoUnitCube) {
  const auto data = synthetic(4, 4, 10);
  const auto plan = make_split(data, 1.0, 12);
  for (const auto& u : plan.users) {
    std::vector<std::vector<double>> pool;
    for (auto i : u.train_genuine) pool.push_back(data[i].features);
    for (auto i : u.train_impostor) pool.push_back(data[i].features);
    const auto n = MinMaxNormalizer::fit(pool);
    std::vector<double> lo(5, 1.0), hi(5, 0.0);
    for (const auto& r : pool) {
      const auto x = n.transform(r);
      for (std::size_t q = 0; q < x.size(); ++q) {
        EXPECT_GE(x[q], 0.0);
        EXPECT_LE(x[q], 1.0);
        lo[q] = std::min(lo[q], x[q]);
        hi[q] = std::max(hi[q], x[q]);
      }
    }
    for (std::size_t q = 0; q < lo.size(); ++q) {
      EXPECT_EQ(lo[q], 0.0);
      EXPECT_EQ(hi[q], 1.0);
    }
  }
}

TEST(Split, JsonAudit) {
  const auto data = synthetic(3, 2, 5);
  const auto plan = make_split(data, 1.0, 13);
  const auto j = split_to_json(plan, data);
  EXPECT_EQ(j["schema"], "rltir-split/1");
  EXPECT_EQ(j["users"].size(), 3u);
  EXPECT_EQ(j["stream_length"], plan.stream.size());
}
