#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icpo/metrics.hpp"
#include "icpo/micro_policy.hpp"
#include "icpo/objective.hpp"
#include "icpo/optimizer.hpp"
#include "icpo/reward_shaping.hpp"
#include "icpo/rollout.hpp"
#include "icpo/task_env.hpp"

namespace icpo {

// grpo: on-policy groups only. icpo: expert-conditioned candidates mixed in
// through reject sampling. icpo_rs: additionally grants the annealed bonus.
enum class TrainMode { grpo, icpo, icpo_rs };

std::string to_string(TrainMode mode);
TrainMode parse_mode(const std::string& name);

struct TrainConfig {
  // model
  int vocab_size = 32;
  int d_model = 32;
  int max_context = 64;

  // task family
  int query_len = 4;
  int answer_len = 4;
  std::string rules = "add:1,add:5,add:9,add:13,perm:0,perm:1,reverse,rotate:1";
  int demo_bank_per_rule = 64;
  int k_demos = 1;
  int default_rule = 0;  // the habitual zero-shot rule learned at warm start

  // rollout + optimization loop
  int batch_prompts = 16;  // B
  int group_size = 8;      // N
  int n_off = 1;           // expert-conditioned candidates per group, 0 or 1
  int max_gen_len = 8;
  double temperature = 1.0;
  int t_total = 400;
  TrainMode mode = TrainMode::grpo;
  int updates_per_batch = 1;

  // objective
  double epsilon_clip = 0.2;
  double lambda_shape = 0.01;
  double beta_kl = 1e-3;
  double entropy_coef = 0.0;
  double eps_std = 1e-6;
  bool f_shaping = true;

  // reward shaping
  double delta = 1.0;
  double alpha = 1.0;

  // optimizer
  double lr = 3e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // warm start
  int warm_start_steps = 2000;
  int warm_start_batch = 16;
  double warm_start_margin = 0.10;        // required 1-shot minus 0-shot accuracy
  double warm_start_zero_shot_frac = 0.5; // fraction of habitual bare-query sequences

  // evaluation
  double eval_temperature = 0.6;
  int eval_tasks = 500;
  int eval_diversity_samples = 6;
  int eval_every = 100;  // during training; 0 disables

  uint64_t seed = 1;

  PolicyArch arch() const {
    PolicyArch a;
    a.vocab_size = vocab_size;
    a.d_model = d_model;
    a.max_context = max_context;
    return a;
  }

  RuleFamilyConfig family() const {
    RuleFamilyConfig f;
    f.vocab_size = vocab_size;
    f.query_len = query_len;
    f.answer_len = answer_len;
    f.rules = parse_rule_list(rules, vocab_size);
    return f;
  }

  // Throws ConfigError when any invariant fails.
  void validate() const;
};

struct TrainerState {
  PolicyCheckpoint theta;
  PolicyCheckpoint theta_old;
  PolicyCheckpoint ref;  // frozen at the post-warm-start parameters
  AdamState opt;
  int64_t step = 0;
};

struct WarmStartResult {
  PolicyCheckpoint ckpt;
  double accuracy_0shot = 0.0;
  double accuracy_kshot = 0.0;
  bool margin_checked = false;
  int steps_run = 0;
  double final_loss = 0.0;
};

// Supervised maximum-likelihood phase over habit-formatted and few-shot
// formatted sequences; verifies the held-out in-context margin at the end.
// Throws WarmStartFailedError when the margin is not reached.
WarmStartResult warm_start(const TrainConfig& cfg, const DemoBank& bank, uint64_t rng_seed);

// Held-out tasks whose queries never collide with the bank's demonstrations.
std::vector<TaskInstance> make_eval_tasks(const TrainConfig& cfg, const RuleFamilyConfig& family,
                                          const DemoBank& bank, int count, uint64_t salt);

// One full pass of the training procedure: rollouts from theta_old, optional
// candidate mixing, mixed-group advantages, loss and update(s), old-policy
// sync, step advance. `tasks` must hold exactly batch_prompts entries.
StepMetrics train_step(TrainerState& state, const std::vector<TaskInstance>& tasks,
                       const DemoBank& bank, const TrainConfig& cfg,
                       std::vector<RolloutGroup>* groups_out = nullptr);

struct RunOptions {
  std::string out_dir;             // empty: no files written
  std::string resume_state_path;   // empty: fresh start with warm start
  int halt_after_steps = -1;       // stop this session after N steps, -1 = run out
  const PolicyCheckpoint* warm_override = nullptr;  // skip warm start, use this
  bool dump_rollouts = false;
  bool quiet = true;
};

struct RunResult {
  PolicyCheckpoint final_ckpt;
  std::vector<StepMetrics> metrics;  // steps completed in this session
  WarmStartResult warm;
  bool halted_early = false;
};

// Warm start (or resume), then train_steps until t_total, streaming metrics.
// With an out_dir set, writes metrics.jsonl, eval.jsonl, final_checkpoint.bin
// and state.bin, plus crash_state.bin if a step aborts.
RunResult run(const TrainConfig& cfg, const RunOptions& opts);

void save_trainer_state(const TrainerState& state, const std::string& path);
TrainerState load_trainer_state(const std::string& path);

}  // namespace icpo
