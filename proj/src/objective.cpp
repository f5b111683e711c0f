#include "icpo/objective.hpp"

#include <cmath>

#include "icpo/errors.hpp"
#include "icpo/tape.hpp"

namespace icpo {

AdvantageSet group_advantages(std::span<const double> rewards, double eps_std) {
  if (rewards.size() < 2) throw SizeError("group_advantages needs at least 2 rewards");
  AdvantageSet out;
  const double n = static_cast<double>(rewards.size());
  double sum = 0.0;
  for (double r : rewards) sum += r;
  out.mean = sum / n;
  double sq = 0.0;
  for (double r : rewards) sq += (r - out.mean) * (r - out.mean);
  out.stddev = std::sqrt(sq / n);
  out.degenerate = out.stddev < eps_std;
  out.advantages.resize(rewards.size());
  for (size_t i = 0; i < rewards.size(); ++i) {
    out.advantages[i] = out.degenerate ? 0.0 : (rewards[i] - out.mean) / out.stddev;
  }
  return out;
}

double clip_term(double ratio, double advantage, double epsilon) {
  const double lo = 1.0 - epsilon;
  const double hi = 1.0 + epsilon;
  const double clipped = ratio < lo ? lo : (ratio > hi ? hi : ratio);
  return std::min(ratio * advantage, clipped * advantage);
}

double shape_ratio(double ratio, double lambda) { return ratio / (ratio + lambda); }

double importance_ratio(double new_logprob, double behavior_logprob) {
  const double r = std::exp(new_logprob - behavior_logprob);
  if (!std::isfinite(r)) throw NumericalError("importance ratio is not finite");
  return r;
}

double kl_penalty(const PolicyCheckpoint& policy, const PolicyCheckpoint& ref,
                  const Trajectory& traj, double temperature, bool* clamped) {
  if (clamped != nullptr) *clamped = false;
  if (traj.generated.empty()) return 0.0;
  const auto theta_lp = sequence_logprobs(policy, traj.context, traj.generated, temperature);
  const auto ref_lp = sequence_logprobs(ref, traj.context, traj.generated, temperature);
  double total = 0.0;
  for (size_t t = 0; t < traj.generated.size(); ++t) {
    double d = ref_lp[t] - theta_lp[t];
    if (d > kMaxLogRatio || d < -kMaxLogRatio) {
      if (clamped != nullptr) *clamped = true;
      d = d > 0 ? kMaxLogRatio : -kMaxLogRatio;
    }
    total += std::exp(d) - d - 1.0;
  }
  return total / static_cast<double>(traj.generated.size());
}

namespace {

// Per-trajectory loss assembly on a reusable tape. Returns the scalar loss
// ref; term values for diagnostics are read back from the tape.
struct TrajectoryTerms {
  Ref loss = 0;
  double surrogate_value = 0.0;
  double k3_value = 0.0;
  double entropy_value = 0.0;
  int clipped_tokens = 0;
  int clamped_log_ratios = 0;
};

TrajectoryTerms build_trajectory_loss(Tape& tape, const PolicyArch& arch, const Trajectory& traj,
                                      std::span<const double> ref_logprobs,
                                      const ObjectiveConfig& cfg, double inv_z) {
  TrajectoryTerms terms;
  PolicyEval<Tape> eval(arch, tape, cfg.temperature);
  Ref scaled = 0;
  for (size_t i = 0; i < traj.context.size(); ++i) {
    scaled = eval.feed(traj.context[i], i + 1 == traj.context.size());
  }

  const bool off_policy = traj.mode == ConditioningMode::ief;
  Ref surrogate_sum = 0;
  Ref k3_sum = 0;
  Ref entropy_sum = 0;
  bool have_sums = false;

  for (size_t t = 0; t < traj.generated.size(); ++t) {
    const SoftmaxRefs sm = eval.softmax(scaled);
    const Ref lp = eval.pick_logprob(scaled, sm, traj.generated[t]);

    // Importance ratio against the recorded behavior logprob, clamped in
    // log space before exponentiation.
    const double log_diff_value = tape.value(lp) - traj.behavior_logprobs[t];
    if (log_diff_value > kMaxLogRatio || log_diff_value < -kMaxLogRatio) {
      terms.clamped_log_ratios += 1;
    }
    const Ref log_diff = tape.add_const(lp, -traj.behavior_logprobs[t]);
    const Ref ratio = tape.exp(tape.clamp(log_diff, -kMaxLogRatio, kMaxLogRatio));

    Ref shaped = ratio;
    if (off_policy && cfg.f_shaping_enabled) {
      const Ref denom = tape.add_const(ratio, cfg.lambda_shape);
      shaped = tape.mul(ratio, tape.pow_const(denom, -1.0));
    }
    const double shaped_value = tape.value(shaped);
    if (shaped_value < 1.0 - cfg.epsilon_clip || shaped_value > 1.0 + cfg.epsilon_clip) {
      terms.clipped_tokens += 1;
    }
    const Ref unclipped = tape.scale(shaped, traj.advantage);
    const Ref clipped =
        tape.scale(tape.clamp(shaped, 1.0 - cfg.epsilon_clip, 1.0 + cfg.epsilon_clip),
                   traj.advantage);
    const Ref term = tape.min(unclipped, clipped);

    // k3 = exp(d) - d - 1 with d = ref_lp - theta_lp.
    const Ref d = tape.clamp(tape.add_const(tape.neg(lp), ref_logprobs[t]), -kMaxLogRatio,
                             kMaxLogRatio);
    const Ref k3 = tape.add_const(tape.sub(tape.exp(d), d), -1.0);

    // Entropy H = logZ - sum_v p_v * scaled_v from the softmax nodes; the
    // value is always tracked for diagnostics, nodes only when it trains.
    {
      const double s = tape.value(sm.sum);
      const double lz = tape.value(sm.log_z);
      double dot_value = 0.0;
      for (int v = 0; v < arch.vocab_size; ++v) {
        dot_value += (tape.value(sm.exp_base + v) / s) * tape.value(scaled + v);
      }
      terms.entropy_value += lz - dot_value;
    }
    Ref ent = 0;
    if (cfg.entropy_coef != 0.0) {
      const Ref inv_sum = tape.pow_const(sm.sum, -1.0);
      const Ref p_base = tape.mul(sm.exp_base, inv_sum);
      for (int v = 1; v < arch.vocab_size; ++v) tape.mul(sm.exp_base + v, inv_sum);
      const Ref dot = tape.dot_range(p_base, scaled, static_cast<uint32_t>(arch.vocab_size));
      ent = tape.sub(sm.log_z, dot);
    }

    if (!have_sums) {
      surrogate_sum = term;
      k3_sum = k3;
      if (cfg.entropy_coef != 0.0) entropy_sum = ent;
      have_sums = true;
    } else {
      surrogate_sum = tape.add(surrogate_sum, term);
      k3_sum = tape.add(k3_sum, k3);
      if (cfg.entropy_coef != 0.0) entropy_sum = tape.add(entropy_sum, ent);
    }

    if (t + 1 < traj.generated.size()) scaled = eval.feed(traj.generated[t], true);
  }

  terms.surrogate_value = tape.value(surrogate_sum);
  terms.k3_value = tape.value(k3_sum);
  Ref loss = tape.scale(surrogate_sum, -inv_z);
  if (cfg.beta_kl != 0.0) {
    loss = tape.add(loss, tape.scale(k3_sum, cfg.beta_kl * inv_z));
  }
  if (cfg.entropy_coef != 0.0) {
    loss = tape.sub(loss, tape.scale(entropy_sum, cfg.entropy_coef * inv_z));
  }
  terms.loss = loss;
  return terms;
}

}  // namespace

LossDiagnostics icpo_loss(const PolicyCheckpoint& policy, const PolicyCheckpoint& ref,
                          const std::vector<RolloutGroup>& groups, const ObjectiveConfig& cfg,
                          std::vector<double>* grads) {
  if (groups.empty()) throw SizeError("icpo_loss needs at least one group");
  LossDiagnostics diag;
  for (const auto& group : groups) {
    for (const auto& traj : group.trajectories) {
      diag.z_tokens += static_cast<long>(traj.generated.size());
    }
  }
  if (diag.z_tokens == 0) throw SizeError("icpo_loss saw zero generated tokens");
  const double inv_z = 1.0 / static_cast<double>(diag.z_tokens);

  if (grads != nullptr && grads->size() != policy.params.size()) {
    grads->assign(policy.params.size(), 0.0);
  }

  Tape tape(policy.params);
  int clipped_tokens = 0;
  for (const auto& group : groups) {
    for (const auto& traj : group.trajectories) {
      if (traj.generated.empty()) continue;
      const auto ref_lp = sequence_logprobs(ref, traj.context, traj.generated, cfg.temperature);
      tape.reset();
      const TrajectoryTerms terms =
          build_trajectory_loss(tape, policy.arch, traj, ref_lp, cfg, inv_z);
      const double loss_value = tape.value(terms.loss);
      if (!std::isfinite(loss_value)) {
        throw NumericalError("trajectory loss is not finite");
      }
      if (grads != nullptr) tape.backward(terms.loss, *grads);

      if (traj.mode == ConditioningMode::ief) {
        diag.loss_off -= inv_z * terms.surrogate_value;
      } else {
        diag.loss_on -= inv_z * terms.surrogate_value;
      }
      diag.kl += inv_z * terms.k3_value;
      diag.entropy += inv_z * terms.entropy_value;
      clipped_tokens += terms.clipped_tokens;
      diag.clamped_log_ratios += terms.clamped_log_ratios;
    }
  }
  diag.clip_fraction = static_cast<double>(clipped_tokens) / static_cast<double>(diag.z_tokens);
  diag.loss_total = diag.loss_on + diag.loss_off + cfg.beta_kl * diag.kl -
                    cfg.entropy_coef * diag.entropy;
  return diag;
}

}  // namespace icpo
