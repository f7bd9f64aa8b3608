// Enrolls one synthetic subject, streams its test rows with oracle feedback
// and prints each outcome as a JSON line.

#include <iostream>

#include "rltir/rltir.hpp"

int main() {
  using namespace rltir;

  SyntheticSpec spec;
  spec.subjects = 4;
  spec.reps = 10;
  const auto data = make_synthetic_keystroke(spec);
  const auto plan = make_split(data, 1.0, /*seed=*/3);
  const auto& up = plan.users.front();

  auto rows = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::vector<double>> r;
    for (auto i : idx) r.push_back(data[i].features);
    return r;
  };
  PipelineConfig cfg;
  cfg.forest.trees = 10;
  auto user = enroll_user(up.user_id, rows(up.train_genuine), rows(up.train_impostor), cfg, /*seed=*/11);
  std::cerr << up.user_id << ": threshold " << user.classifier.threshold() << '\n';

  for (auto i : up.test) {
    const auto& inst = data[i];
    const Verdict truth = inst.subject_id == up.user_id ? Verdict::Genuine : Verdict::Impostor;
    const auto out = identify(user, inst.instance_id, inst.features, oracle_feedback(truth));
    std::cout << outcome_to_json(out).dump() << '\n';
  }
  end_stream(user);
}
