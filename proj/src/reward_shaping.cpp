#include "icpo/reward_shaping.hpp"

#include "icpo/errors.hpp"
#include "icpo/rng.hpp"

namespace icpo {

double verifiable_reward(const TaskInstance& task, const Trajectory& traj, TokenId eos_token) {
  return verify(task, traj.generated, eos_token) ? 1.0 : 0.0;
}

bool expert_region_accept(const Trajectory& traj, const TaskInstance& task, TokenId eos_token,
                          const ShapingConfig& cfg) {
  return traj.raw_reward >= cfg.delta && verify(task, traj.generated, eos_token);
}

double annealed_bonus(double raw, int step, const ShapingConfig& cfg, bool* clamped) {
  if (clamped != nullptr) *clamped = step > cfg.t_total;
  if (step > cfg.t_total) return raw;
  const double gamma = 1.0 - static_cast<double>(step) / static_cast<double>(cfg.t_total);
  return raw + cfg.alpha * gamma;
}

MixOutcome mix_ief_into_group(RolloutGroup& group, int step, const ShapingConfig& cfg,
                              TokenId eos_token, uint64_t rng_seed) {
  MixOutcome outcome;
  group.n_off = 0;
  group.n_on = static_cast<int>(group.trajectories.size());
  if (!group.ief_candidate.has_value()) return outcome;

  Trajectory& cand = *group.ief_candidate;
  if (!expert_region_accept(cand, group.task, eos_token, cfg)) return outcome;

  if (cfg.rs_enabled) {
    cand.shaped_reward = annealed_bonus(cand.raw_reward, step, cfg, &outcome.bonus_clamped);
    outcome.bonus = cand.shaped_reward - cand.raw_reward;
  } else {
    cand.shaped_reward = cand.raw_reward;
  }

  Rng rng(rng_seed);
  const int j = static_cast<int>(rng.uniform_below(static_cast<uint32_t>(group.trajectories.size())));
  group.trajectories[j] = std::move(cand);
  group.ief_candidate.reset();
  group.n_on -= 1;
  group.n_off = 1;
  outcome.accepted = true;
  outcome.replaced_index = j;
  return outcome;
}

}  // namespace icpo
