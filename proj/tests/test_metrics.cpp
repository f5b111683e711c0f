#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "icpo/errors.hpp"
#include "icpo/metrics.hpp"

using namespace icpo;

namespace {

RolloutGroup group_with_rewards(const std::vector<double>& on_rewards, bool ief_member,
                                double ief_reward) {
  RolloutGroup group;
  for (double r : on_rewards) {
    Trajectory t;
    t.mode = ConditioningMode::on_policy;
    t.generated = {1, 2};
    t.behavior_logprobs = {-1.0, -1.0};
    t.raw_reward = r;
    t.shaped_reward = r;
    group.trajectories.push_back(std::move(t));
  }
  if (ief_member) {
    Trajectory t;
    t.mode = ConditioningMode::ief;
    t.generated = {3, 4};
    t.behavior_logprobs = {-1.0, -1.0};
    t.raw_reward = ief_reward;
    t.shaped_reward = ief_reward;
    group.trajectories.push_back(std::move(t));
  }
  return group;
}

}  // namespace

TEST_CASE("pass-group classification follows the on-policy rewards") {
  std::vector<RolloutGroup> groups;
  groups.push_back(group_with_rewards({1, 1, 1, 1, 1, 1, 1, 1}, false, 0.0));
  groups.push_back(group_with_rewards({0, 0, 0, 0, 0, 0, 0, 0}, false, 0.0));
  groups.push_back(group_with_rewards({1, 0, 0, 0, 0, 0, 0, 0}, false, 0.0));
  const PassCounts counts = classify_pass_groups(groups);
  CHECK(counts.all_pass == 1);
  CHECK(counts.zero_pass == 1);
  CHECK(counts.some_pass == 1);
}

TEST_CASE("an accepted expert trajectory does not affect classification") {
  std::vector<RolloutGroup> groups;
  groups.push_back(group_with_rewards({0, 0, 0, 0, 0, 0, 0}, true, 1.0));
  const PassCounts counts = classify_pass_groups(groups);
  CHECK(counts.zero_pass == 1);
  CHECK(counts.some_pass == 0);
}

TEST_CASE("classification partitions every batch") {
  for (int a = 0; a <= 4; ++a) {
    std::vector<RolloutGroup> groups;
    for (int g = 0; g < 6; ++g) {
      std::vector<double> rewards(4, 0.0);
      for (int i = 0; i < (g + a) % 5; ++i) rewards[static_cast<size_t>(i) % 4] = 1.0;
      groups.push_back(group_with_rewards(rewards, false, 0.0));
    }
    const PassCounts counts = classify_pass_groups(groups);
    CHECK(counts.zero_pass + counts.some_pass + counts.all_pass ==
          static_cast<int>(groups.size()));
  }
}

TEST_CASE("edit distance and pairwise diversity closed forms") {
  CHECK(levenshtein_distance({1, 2, 3}, {1, 2, 3}) == 0);
  CHECK(levenshtein_distance({1, 2, 3}, {4, 5, 6}) == 3);
  CHECK(levenshtein_distance({1, 2, 3}, {1, 2, 4}) == 1);
  CHECK(levenshtein_distance({}, {1, 2}) == 2);

  CHECK(pairwise_diversity({{1, 2, 3}, {1, 2, 3}}) == 0.0);
  CHECK(pairwise_diversity({{1, 2, 3}, {4, 5, 6}}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pairwise_diversity({{1, 2, 3}, {1, 2, 4}}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK_THROWS_AS(pairwise_diversity({{1, 2, 3}}), SizeError);
}

TEST_CASE("step metrics serialize and parse back to identical values") {
  StepMetrics m;
  m.step = 17;
  m.mean_raw_reward = 1.0 / 3.0;
  m.mean_shaped_reward = 0.4375;
  m.accepted_ief_count = 5;
  m.mean_bonus = 0.9975;
  m.zero_pass = 9;
  m.some_pass = 4;
  m.all_pass = 3;
  m.policy_entropy = 2.718281828459045;
  m.kl_to_ref = 1e-7;
  m.mean_response_length = 5.0625;
  m.loss_total = -0.031415926535;
  m.loss_on = -0.02;
  m.loss_off = -0.011415926535;
  m.kl = 1e-7;
  m.entropy = 3.0000000001;
  m.clip_fraction = 0.0078125;
  m.z_tokens = 645;
  m.bonus_clamped = 0;

  const std::string line = step_metrics_to_json(m);
  const StepMetrics back = step_metrics_from_json(line);
  CHECK(back == m);
}

TEST_CASE("metrics writer appends one flushed record per step") {
  const std::string path = "test_metrics_writer.jsonl";
  std::remove(path.c_str());
  {
    MetricsWriter writer(path);
    for (int step = 0; step < 7; ++step) {
      StepMetrics m;
      m.step = step;
      m.mean_raw_reward = step * 0.125;
      writer.log_step(m);
    }
  }
  const auto records = read_metrics_file(path);
  REQUIRE(records.size() == 7);
  for (int step = 0; step < 7; ++step) {
    CHECK(records[step].step == step);
    CHECK(records[step].mean_raw_reward == step * 0.125);
  }
  for (size_t i = 1; i < records.size(); ++i) CHECK(records[i].step > records[i - 1].step);
  std::remove(path.c_str());
}

TEST_CASE("a truncated metrics file parses up to the last complete record") {
  const std::string path = "test_metrics_truncated.jsonl";
  {
    std::ofstream out(path);
    StepMetrics m;
    m.step = 0;
    out << step_metrics_to_json(m) << "\n";
    m.step = 1;
    out << step_metrics_to_json(m) << "\n";
  }
  const auto records = read_metrics_file(path);
  CHECK(records.size() == 2);
  std::remove(path.c_str());
}

TEST_CASE("rollout dump round-trips trajectories with their provenance") {
  const std::string path = "test_rollout_dump.jsonl";
  std::remove(path.c_str());

  RolloutGroup group = group_with_rewards({1, 0}, true, 1.0);
  group.task.rule_id = 3;
  group.task.query = {5, 6, 7, 8};
  group.task.gold_answer = {6, 7, 8, 9};
  group.trajectories[2].shaped_reward = 1.5;
  group.trajectories[2].advantage = 2.1;
  {
    RolloutDumpWriter writer(path);
    writer.log_group(12, 4, group);
  }
  const auto records = read_rollout_dump(path);
  REQUIRE(records.size() == 3);
  CHECK(records[0].step == 12);
  CHECK(records[0].prompt_index == 4);
  CHECK(records[0].rule_id == 3);
  CHECK(records[0].mode == "on_policy");
  CHECK(records[0].in_group);
  CHECK(records[2].mode == "ief");
  CHECK(records[2].shaped_reward == 1.5);
  CHECK(records[2].advantage == 2.1);
  CHECK(records[2].behavior_logprobs == std::vector<double>{-1.0, -1.0});
  std::remove(path.c_str());
}

TEST_CASE("evaluate on the uniform policy sits at chance and carries per-seed stats") {
  const RuleFamilyConfig family = default_rule_family();
  const DemoBank bank = DemoBank::build(family, 8, 5);
  PolicyCheckpoint ckpt;
  ckpt.arch = PolicyArch{};
  ckpt.params.assign(ckpt.arch.param_count(), 0.0);

  const std::vector<TaskInstance> tasks = [&] {
    std::vector<TaskInstance> out;
    for (uint64_t i = 0; i < 40; ++i) out.push_back(generate_task(3000 + i, family));
    return out;
  }();

  EvalOptions opts;
  opts.diversity_samples = 3;
  const std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  const EvalReport report = evaluate(ckpt, tasks, bank, family, 1, seeds, opts);

  CHECK(report.per_seed.size() == 5);
  CHECK(report.n_tasks == 40);
  // chance level for a 4-token answer over a 32-token vocabulary is ~1e-6
  CHECK(report.accuracy_0shot <= 0.05);
  CHECK(report.accuracy_kshot <= 0.05);
  CHECK(report.flip_to_correct_rate <= 0.05);
  // a uniform policy is maximally diverse under both conditions
  CHECK(report.diversity_0shot > 0.5);
  CHECK(report.diversity_kshot > 0.5);

  double mean_acc = 0.0;
  for (const auto& s : report.per_seed) mean_acc += s.accuracy_0shot / 5.0;
  CHECK(report.accuracy_0shot == doctest::Approx(mean_acc).epsilon(1e-12));

  CHECK_THROWS_AS(evaluate(ckpt, {}, bank, family, 1, seeds, opts), SizeError);
}
