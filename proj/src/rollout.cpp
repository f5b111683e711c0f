#include "icpo/rollout.hpp"

#include "icpo/errors.hpp"
#include "icpo/rng.hpp"

namespace icpo {

Trajectory sample_trajectory(const PolicyCheckpoint& frozen, const TokenSeq& context,
                             double temperature, int max_gen_len, uint64_t rng_seed,
                             TokenId eos_token) {
  if (max_gen_len < 1) throw SizeError("max_gen_len must be >= 1");
  if (static_cast<int>(context.size()) + max_gen_len > frozen.arch.max_context) {
    throw ContextOverflowError("context plus generation budget exceeds max context");
  }
  Trajectory traj;
  traj.context = context;

  ValueTape engine(frozen.params);
  PolicyEval<ValueTape> eval(frozen.arch, engine, temperature);
  Ref scaled = 0;
  for (size_t i = 0; i < context.size(); ++i) {
    scaled = eval.feed(context[i], i + 1 == context.size());
  }

  Rng rng(rng_seed);
  std::vector<double> probs;
  TokenDistribution dist;
  for (int t = 0; t < max_gen_len; ++t) {
    const SoftmaxRefs sm = eval.softmax(scaled);
    eval.probabilities(sm, probs);
    dist.probs = probs;
    traj.entropy_sum += token_entropy(dist);
    const TokenId token = static_cast<TokenId>(rng.sample_categorical(probs));
    const Ref lp = eval.pick_logprob(scaled, sm, token);
    traj.generated.push_back(token);
    traj.behavior_logprobs.push_back(engine.value(lp));
    if (token == eos_token || t + 1 == max_gen_len) break;
    scaled = eval.feed(token, true);
  }
  return traj;
}

RolloutGroup generate_group(const PolicyCheckpoint& frozen, const TaskInstance& task,
                            const DemoBank& bank, const RuleFamilyConfig& family,
                            const RolloutConfig& cfg, uint64_t rng_seed) {
  if (cfg.group_size < 2) throw SizeError("group size must be >= 2");
  if (cfg.n_off < 0 || cfg.n_off > 1) throw ConfigError("n_off must be 0 or 1");

  RolloutGroup group;
  group.task = task;
  group.n_on = cfg.group_size;

  const TokenSeq bare = build_bare_context(task.query, family);
  const TokenId eos = family.eos_token();
  for (int i = 0; i < cfg.group_size; ++i) {
    Trajectory traj = sample_trajectory(frozen, bare, cfg.temperature, cfg.max_gen_len,
                                        derive_seed(rng_seed, Stream::rollout, i), eos);
    traj.mode = ConditioningMode::on_policy;
    traj.raw_reward = verify(task, traj.generated, eos) ? 1.0 : 0.0;
    traj.shaped_reward = traj.raw_reward;
    group.trajectories.push_back(std::move(traj));
  }

  // One expert-conditioned candidate, skipped silently when the bank cannot
  // serve the rule (the group then trains as plain GRPO this step).
  if (cfg.want_ief && cfg.n_off == 1 && bank.per_rule_count(task.rule_id) >= cfg.k_demos) {
    auto demos = sample_demonstrations(bank, task.rule_id, cfg.k_demos,
                                       derive_seed(rng_seed, Stream::demos));
    const TokenSeq expert_ctx =
        build_expert_context(demos, task.query, family, frozen.arch.max_context - cfg.max_gen_len);
    Trajectory cand =
        sample_trajectory(frozen, expert_ctx, cfg.temperature, cfg.max_gen_len,
                          derive_seed(rng_seed, Stream::rollout, cfg.group_size), eos);
    cand.mode = ConditioningMode::ief;
    cand.demos = std::move(demos);
    cand.raw_reward = verify(task, cand.generated, eos) ? 1.0 : 0.0;
    cand.shaped_reward = cand.raw_reward;
    group.ief_candidate = std::move(cand);
  }
  return group;
}

}  // namespace icpo
