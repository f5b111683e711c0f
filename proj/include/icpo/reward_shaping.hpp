#pragma once

#include <cstdint>

#include "icpo/rollout.hpp"
#include "icpo/task_env.hpp"

namespace icpo {

struct ShapingConfig {
  double delta = 1.0;       // expert-region acceptance threshold
  double alpha = 1.0;       // bonus weight
  int t_total = 400;        // bonus decays linearly to zero over this many steps
  bool rs_enabled = false;  // bonus on/off (reward-shaping variant vs plain)
};

// Binary verifiable reward: 1 iff the generated answer verifies, else 0.
double verifiable_reward(const TaskInstance& task, const Trajectory& traj, TokenId eos_token);

// Acceptance into the expert region: reward clears delta AND the answer
// verifies. With binary rewards the two coincide; both are checked.
bool expert_region_accept(const Trajectory& traj, const TaskInstance& task, TokenId eos_token,
                          const ShapingConfig& cfg);

// raw + alpha * (1 - step / t_total), clamped to raw once step exceeds
// t_total. `clamped` reports the out-of-range case when non-null.
double annealed_bonus(double raw, int step, const ShapingConfig& cfg, bool* clamped = nullptr);

struct MixOutcome {
  bool accepted = false;
  int replaced_index = -1;
  double bonus = 0.0;
  bool bonus_clamped = false;
};

// The replacement step: an accepted expert-region candidate replaces one
// uniformly chosen on-policy trajectory and, with shaping enabled, carries
// the step-annealed bonus into its shaped reward. A rejected candidate
// leaves the group untouched.
MixOutcome mix_ief_into_group(RolloutGroup& group, int step, const ShapingConfig& cfg,
                              TokenId eos_token, uint64_t rng_seed);

}  // namespace icpo
