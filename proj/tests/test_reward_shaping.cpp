#include <doctest.h>

#include "icpo/reward_shaping.hpp"
#include "icpo/rng.hpp"

using namespace icpo;

namespace {

RuleFamilyConfig test_family() { return default_rule_family(); }

TaskInstance simple_task(const RuleFamilyConfig& family) {
  return generate_task(11, family);
}

Trajectory answer_trajectory(const TaskInstance& task, const RuleFamilyConfig& family,
                             bool correct, ConditioningMode mode) {
  Trajectory traj;
  traj.mode = mode;
  traj.context = build_bare_context(task.query, family);
  traj.generated = correct ? task.gold_answer : TokenSeq{0, 0, 0, 0};
  if (correct && traj.generated == TokenSeq{0, 0, 0, 0}) traj.generated = task.gold_answer;
  traj.generated.push_back(family.eos_token());
  traj.behavior_logprobs.assign(traj.generated.size(), -1.0);
  traj.raw_reward = verify(task, traj.generated, family.eos_token()) ? 1.0 : 0.0;
  traj.shaped_reward = traj.raw_reward;
  return traj;
}

RolloutGroup make_group(const TaskInstance& task, const RuleFamilyConfig& family, int n_correct,
                        int n, bool with_candidate, bool candidate_correct) {
  RolloutGroup group;
  group.task = task;
  group.n_on = n;
  for (int i = 0; i < n; ++i) {
    group.trajectories.push_back(
        answer_trajectory(task, family, i < n_correct, ConditioningMode::on_policy));
  }
  if (with_candidate) {
    Trajectory cand = answer_trajectory(task, family, candidate_correct, ConditioningMode::ief);
    cand.demos.push_back(Demonstration{{1, 2, 3, 4}, {2, 3, 4, 5}, task.rule_id});
    group.ief_candidate = cand;
  }
  return group;
}

}  // namespace

TEST_CASE("verifiable reward is binary") {
  const RuleFamilyConfig family = test_family();
  const TaskInstance task = simple_task(family);
  const auto good = answer_trajectory(task, family, true, ConditioningMode::on_policy);
  const auto bad = answer_trajectory(task, family, false, ConditioningMode::on_policy);
  CHECK(verifiable_reward(task, good, family.eos_token()) == 1.0);
  CHECK(verifiable_reward(task, bad, family.eos_token()) == 0.0);

  Trajectory truncated = good;
  truncated.generated.pop_back();          // drop eos
  truncated.generated.back() = 0;          // and corrupt the tail
  CHECK(verifiable_reward(task, truncated, family.eos_token()) == 0.0);
}

TEST_CASE("expert region acceptance thresholds") {
  const RuleFamilyConfig family = test_family();
  const TaskInstance task = simple_task(family);
  ShapingConfig cfg;

  auto accepted = answer_trajectory(task, family, true, ConditioningMode::ief);
  CHECK(expert_region_accept(accepted, task, family.eos_token(), cfg));

  auto rejected = answer_trajectory(task, family, false, ConditioningMode::ief);
  CHECK_FALSE(expert_region_accept(rejected, task, family.eos_token(), cfg));

  cfg.delta = 0.5;
  CHECK(expert_region_accept(accepted, task, family.eos_token(), cfg));

  // a stale reward field alone is not enough: the verifier must agree
  rejected.raw_reward = 1.0;
  CHECK_FALSE(expert_region_accept(rejected, task, family.eos_token(), cfg));
}

TEST_CASE("annealed bonus closed forms and clamping") {
  ShapingConfig cfg;
  CHECK(annealed_bonus(1.0, 0, cfg) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(annealed_bonus(1.0, 400, cfg) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(annealed_bonus(1.0, 100, cfg) == doctest::Approx(1.75).epsilon(1e-12));

  bool clamped = false;
  CHECK(annealed_bonus(1.0, 401, cfg, &clamped) == 1.0);
  CHECK(clamped);
  annealed_bonus(1.0, 400, cfg, &clamped);
  CHECK_FALSE(clamped);
}

TEST_CASE("bonus is non-increasing in the step and vanishes at the horizon") {
  ShapingConfig cfg;
  cfg.alpha = 0.7;
  double prev = 1e9;
  for (int step = 0; step <= cfg.t_total; ++step) {
    const double shaped = annealed_bonus(1.0, step, cfg);
    CHECK(shaped <= prev);
    CHECK(shaped >= 1.0);
    prev = shaped;
  }
  CHECK(annealed_bonus(1.0, cfg.t_total, cfg) == 1.0);
}

TEST_CASE("accepted candidate replaces one trajectory and carries the bonus") {
  const RuleFamilyConfig family = test_family();
  const TaskInstance task = simple_task(family);
  RolloutGroup group = make_group(task, family, 2, 8, true, true);
  ShapingConfig cfg;
  cfg.rs_enabled = true;

  const MixOutcome outcome = mix_ief_into_group(group, 0, cfg, family.eos_token(), 42);
  CHECK(outcome.accepted);
  CHECK(group.trajectories.size() == 8);
  CHECK(group.n_on == 7);
  CHECK(group.n_off == 1);
  CHECK_FALSE(group.ief_candidate.has_value());

  int ief_count = 0;
  for (const auto& traj : group.trajectories) {
    if (traj.mode == ConditioningMode::ief) {
      ief_count += 1;
      CHECK(traj.shaped_reward == doctest::Approx(2.0).epsilon(1e-12));
      CHECK(traj.raw_reward == 1.0);
    } else {
      CHECK(traj.shaped_reward == traj.raw_reward);
    }
  }
  CHECK(ief_count == 1);
  CHECK(outcome.bonus == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rejected candidate leaves the group untouched") {
  const RuleFamilyConfig family = test_family();
  const TaskInstance task = simple_task(family);
  RolloutGroup group = make_group(task, family, 3, 8, true, false);
  const auto before = group.trajectories;
  ShapingConfig cfg;
  cfg.rs_enabled = true;

  const MixOutcome outcome = mix_ief_into_group(group, 0, cfg, family.eos_token(), 42);
  CHECK_FALSE(outcome.accepted);
  CHECK(group.n_off == 0);
  REQUIRE(group.trajectories.size() == before.size());
  for (size_t i = 0; i < before.size(); ++i) {
    CHECK(group.trajectories[i].generated == before[i].generated);
    CHECK(group.trajectories[i].shaped_reward == before[i].shaped_reward);
  }
  // no accepted trajectory below threshold ever enters a group
  for (const auto& traj : group.trajectories) {
    CHECK_FALSE(traj.mode == ConditioningMode::ief);
  }
}

TEST_CASE("plain mixing without shaping keeps the raw reward") {
  const RuleFamilyConfig family = test_family();
  const TaskInstance task = simple_task(family);
  RolloutGroup group = make_group(task, family, 2, 8, true, true);
  ShapingConfig cfg;
  cfg.rs_enabled = false;

  const MixOutcome outcome = mix_ief_into_group(group, 0, cfg, family.eos_token(), 7);
  CHECK(outcome.accepted);
  CHECK(outcome.bonus == 0.0);
  for (const auto& traj : group.trajectories) {
    CHECK(traj.shaped_reward == traj.raw_reward);
  }
}

TEST_CASE("replacement index is uniform-seeded and deterministic") {
  const RuleFamilyConfig family = test_family();
  const TaskInstance task = simple_task(family);
  ShapingConfig cfg;

  RolloutGroup a = make_group(task, family, 2, 8, true, true);
  RolloutGroup b = make_group(task, family, 2, 8, true, true);
  const MixOutcome oa = mix_ief_into_group(a, 5, cfg, family.eos_token(), 77);
  const MixOutcome ob = mix_ief_into_group(b, 5, cfg, family.eos_token(), 77);
  CHECK(oa.replaced_index == ob.replaced_index);

  // across seeds the whole index range is reachable
  std::vector<bool> hit(8, false);
  for (uint64_t seed = 0; seed < 200; ++seed) {
    RolloutGroup g = make_group(task, family, 2, 8, true, true);
    const MixOutcome o = mix_ief_into_group(g, 5, cfg, family.eos_token(), seed);
    hit[static_cast<size_t>(o.replaced_index)] = true;
  }
  for (bool h : hit) CHECK(h);
}

TEST_CASE("a group without candidate mixes to a no-op") {
  const RuleFamilyConfig family = test_family();
  const TaskInstance task = simple_task(family);
  RolloutGroup group = make_group(task, family, 2, 4, false, false);
  ShapingConfig cfg;
  const MixOutcome outcome = mix_ief_into_group(group, 0, cfg, family.eos_token(), 3);
  CHECK_FALSE(outcome.accepted);
  CHECK(group.trajectories.size() == 4);
  CHECK(group.n_off == 0);
}
