#pragma once

#include <span>
#include <vector>

#include "icpo/micro_policy.hpp"
#include "icpo/rollout.hpp"

namespace icpo {

struct AdvantageSet {
  std::vector<double> advantages;
  double mean = 0.0;
  double stddev = 0.0;   // population standard deviation
  bool degenerate = false;
};

struct ObjectiveConfig {
  double epsilon_clip = 0.2;
  double lambda_shape = 0.01;
  double beta_kl = 1e-3;
  double entropy_coef = 0.0;
  double eps_std = 1e-6;
  bool f_shaping_enabled = true;  // off reproduces the unshaped off-policy ratio
  double temperature = 1.0;
};

// Group-normalized advantages (R - mean) / std with population std. Groups
// whose std falls below eps_std are degenerate and contribute all-zero
// advantages instead of being dropped.
AdvantageSet group_advantages(std::span<const double> rewards, double eps_std);

// min(r * A, clip(r; 1-eps, 1+eps) * A).
double clip_term(double ratio, double advantage, double epsilon);

// Off-policy ratio shaping f(x) = x / (x + lambda), bounded in [0, 1).
double shape_ratio(double ratio, double lambda);

// exp(new_logprob - behavior_logprob).
double importance_ratio(double new_logprob, double behavior_logprob);

// Nonnegative per-token KL estimate exp(d) - d - 1 with d = ref_lp - theta_lp,
// averaged over the trajectory's generated tokens. Log-ratios beyond
// kMaxLogRatio are clamped and flagged.
inline constexpr double kMaxLogRatio = 13.815510557964274;  // ln(1e6)
double kl_penalty(const PolicyCheckpoint& policy, const PolicyCheckpoint& ref,
                  const Trajectory& traj, double temperature, bool* clamped = nullptr);

struct LossDiagnostics {
  double loss_total = 0.0;
  double loss_on = 0.0;        // -(1/Z) * on-policy clipped surrogate
  double loss_off = 0.0;       // -(1/Z) * off-policy clipped surrogate
  double kl = 0.0;             // (1/Z) * summed k3 estimates
  double entropy = 0.0;        // (1/Z) * summed policy entropy at generated positions
  double clip_fraction = 0.0;  // fraction of tokens with ratio outside the clip interval
  long z_tokens = 0;
  int clamped_log_ratios = 0;
};

// The mixed-group objective, negated for minimization:
//   loss = -(1/Z) [ sum_on CLIP(r, A, eps) + sum_off CLIP(f(r_hat), A, eps) ]
//          + beta * (1/Z) sum k3  -  entropy_coef * (1/Z) sum H
// over all trajectories of all groups, Z = total generated tokens. Ratios for
// expert-conditioned trajectories are evaluated on their own expert context.
// When grads is non-null the parameter gradient is accumulated into it.
LossDiagnostics icpo_loss(const PolicyCheckpoint& policy, const PolicyCheckpoint& ref,
                          const std::vector<RolloutGroup>& groups, const ObjectiveConfig& cfg,
                          std::vector<double>* grads);

}  // namespace icpo
