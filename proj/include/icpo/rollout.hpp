#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "icpo/micro_policy.hpp"
#include "icpo/task_env.hpp"

namespace icpo {

enum class ConditioningMode : uint8_t { on_policy, ief };

// One sampled completion, together with everything needed to form importance
// ratios later: the exact conditioning context and the behavior-policy
// log-probabilities recorded at generation time.
struct Trajectory {
  int task_index = 0;
  ConditioningMode mode = ConditioningMode::on_policy;
  std::vector<Demonstration> demos;  // non-empty iff mode == ief
  TokenSeq context;
  TokenSeq generated;
  std::vector<double> behavior_logprobs;
  double raw_reward = 0.0;
  double shaped_reward = 0.0;
  double advantage = 0.0;
  double entropy_sum = 0.0;  // behavior-policy entropy summed over sampled positions
};

// The N trajectories for one prompt. The expert-conditioned candidate is
// attached separately until the mixing step decides whether it replaces an
// on-policy rollout.
struct RolloutGroup {
  TaskInstance task;
  std::vector<Trajectory> trajectories;
  std::optional<Trajectory> ief_candidate;
  int n_on = 0;
  int n_off = 0;
};

struct RolloutConfig {
  int group_size = 8;
  int n_off = 1;           // IEF candidates per group, 0 or 1
  int k_demos = 1;
  int max_gen_len = 8;
  double temperature = 1.0;
  bool want_ief = false;
};

// Autoregressive sampling until EOS or max_gen_len, recording logprobs from
// the exact distributions sampled from.
Trajectory sample_trajectory(const PolicyCheckpoint& frozen, const TokenSeq& context,
                             double temperature, int max_gen_len, uint64_t rng_seed,
                             TokenId eos_token);

// N on-policy rollouts on the bare query plus, when requested and the bank
// can serve it, one expert-conditioned candidate. Raw rewards are computed
// for everything; mixing is left to reward shaping.
RolloutGroup generate_group(const PolicyCheckpoint& frozen, const TaskInstance& task,
                            const DemoBank& bank, const RuleFamilyConfig& family,
                            const RolloutConfig& cfg, uint64_t rng_seed);

}  // namespace icpo
