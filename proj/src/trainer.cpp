#include "icpo/trainer.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "icpo/errors.hpp"
#include "icpo/rng.hpp"
#include "icpo/tape.hpp"

namespace icpo {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::grpo:
      return "grpo";
    case TrainMode::icpo:
      return "icpo";
    case TrainMode::icpo_rs:
      return "icpo-rs";
  }
  return "grpo";
}

TrainMode parse_mode(const std::string& name) {
  if (name == "grpo") return TrainMode::grpo;
  if (name == "icpo") return TrainMode::icpo;
  if (name == "icpo-rs" || name == "icpo_rs") return TrainMode::icpo_rs;
  throw ConfigError("unknown mode '" + name + "' (expected grpo|icpo|icpo-rs)");
}

void TrainConfig::validate() const {
  if (vocab_size < 8) throw ConfigError("vocab_size must be >= 8");
  if (d_model < PolicyArch::n_heads || d_model % PolicyArch::n_heads != 0) {
    throw ConfigError("d_model must be a positive multiple of " +
                      std::to_string(PolicyArch::n_heads));
  }
  if (query_len < 1 || answer_len < 1) throw ConfigError("query_len and answer_len must be >= 1");
  if (query_len > vocab_size - 3) {
    throw ConfigError("query_len exceeds the payload vocabulary");
  }
  if (group_size < 2) throw ConfigError("group_size must be >= 2");
  if (n_off < 0 || n_off > 1) throw ConfigError("n_off must be 0 or 1");
  if (n_off >= group_size) throw ConfigError("n_off must be smaller than group_size");
  if (batch_prompts < 1) throw ConfigError("batch_prompts must be >= 1");
  if (max_gen_len < 1) throw ConfigError("max_gen_len must be >= 1");
  if (max_gen_len < answer_len + 1) {
    throw ConfigError("max_gen_len must cover the answer plus its terminator");
  }
  if (!(temperature > 0.0) || !(eval_temperature > 0.0)) {
    throw ConfigError("temperatures must be positive");
  }
  if (t_total < 0) throw ConfigError("t_total must be >= 0");
  if (updates_per_batch < 1) throw ConfigError("updates_per_batch must be >= 1");
  if (!(epsilon_clip > 0.0 && epsilon_clip < 1.0)) throw ConfigError("epsilon_clip must be in (0,1)");
  if (!(lambda_shape > 0.0)) throw ConfigError("lambda_shape must be > 0");
  if (beta_kl < 0.0) throw ConfigError("beta_kl must be >= 0");
  if (!(eps_std > 0.0)) throw ConfigError("eps_std must be > 0");
  if (!(delta > 0.0 && delta <= 1.0)) throw ConfigError("delta must be in (0,1]");
  if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
  if (k_demos < 1) throw ConfigError("k_demos must be >= 1");
  if (demo_bank_per_rule < 0) throw ConfigError("demo_bank_per_rule must be >= 0");
  if (warm_start_steps < 0) throw ConfigError("warm_start_steps must be >= 0");
  if (warm_start_batch < 1) throw ConfigError("warm_start_batch must be >= 1");
  if (warm_start_zero_shot_frac < 0.0 || warm_start_zero_shot_frac > 1.0) {
    throw ConfigError("warm_start_zero_shot_frac must be in [0,1]");
  }
  if (eval_tasks < 1) throw ConfigError("eval_tasks must be >= 1");
  if (eval_diversity_samples < 0) throw ConfigError("eval_diversity_samples must be >= 0");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  const auto fam = family();  // validates the rule list
  if (default_rule < 0 || default_rule >= fam.rule_count()) {
    throw ConfigError("default_rule out of range");
  }
  if (expert_context_length(k_demos, query_len, answer_len) + max_gen_len > max_context) {
    throw ConfigError("k_demos * demonstration length plus generation budget exceeds max_context");
  }
}

namespace {

TaskInstance make_train_task(const TrainConfig& cfg, const RuleFamilyConfig& family,
                             const DemoBank& bank, int64_t step, int prompt_index) {
  for (uint64_t attempt = 0; attempt < 64; ++attempt) {
    TaskInstance task = generate_task(
        derive_seed(cfg.seed, Stream::tasks, static_cast<uint64_t>(step),
                    static_cast<uint64_t>(prompt_index), attempt),
        family);
    if (!bank.contains_query(task.rule_id, task.query)) return task;
  }
  throw ConfigError("could not draw a training task disjoint from the demo bank");
}

double zero_shot_accuracy(const PolicyCheckpoint& ckpt, const std::vector<TaskInstance>& tasks,
                          const RuleFamilyConfig& family, const TrainConfig& cfg, uint64_t seed) {
  const TokenId eos = family.eos_token();
  int correct = 0;
  for (size_t i = 0; i < tasks.size(); ++i) {
    const TokenSeq bare = build_bare_context(tasks[i].query, family);
    const auto traj = sample_trajectory(ckpt, bare, cfg.eval_temperature, cfg.max_gen_len,
                                        derive_seed(seed, Stream::eval, i), eos);
    if (verify(tasks[i], traj.generated, eos)) correct += 1;
  }
  return static_cast<double>(correct) / static_cast<double>(tasks.size());
}

}  // namespace

std::vector<TaskInstance> make_eval_tasks(const TrainConfig& cfg, const RuleFamilyConfig& family,
                                          const DemoBank& bank, int count, uint64_t salt) {
  std::vector<TaskInstance> tasks;
  tasks.reserve(count);
  for (int i = 0; i < count; ++i) {
    TaskInstance task;
    bool found = false;
    for (uint64_t attempt = 0; attempt < 64 && !found; ++attempt) {
      task = generate_task(derive_seed(cfg.seed, Stream::eval, salt, static_cast<uint64_t>(i),
                                       attempt),
                           family);
      found = !bank.contains_query(task.rule_id, task.query);
    }
    if (!found) throw ConfigError("could not draw held-out tasks disjoint from the demo bank");
    tasks.push_back(std::move(task));
  }
  return tasks;
}

namespace {

// One warm-start sequence: the token stream and a mask marking which tokens
// carry maximum-likelihood loss (answer tokens and their terminators, both
// for demonstrations and for the final query).
struct WarmSequence {
  TokenSeq tokens;
  std::vector<bool> supervised;
  int supervised_count = 0;

  void append(const TokenSeq& chunk, bool with_loss) {
    for (TokenId t : chunk) {
      tokens.push_back(t);
      supervised.push_back(with_loss);
      supervised_count += with_loss ? 1 : 0;
    }
  }
  void append(TokenId token, bool with_loss) {
    tokens.push_back(token);
    supervised.push_back(with_loss);
    supervised_count += with_loss ? 1 : 0;
  }
};

WarmSequence build_warm_sequence(const TrainConfig& cfg, const RuleFamilyConfig& family,
                                 uint64_t base) {
  Rng decide(base);
  const bool habitual = decide.uniform01() < cfg.warm_start_zero_shot_frac;
  WarmSequence seq;
  if (habitual) {
    const TaskInstance task =
        generate_task_with_rule(mix_label(base, 1), family, cfg.default_rule);
    seq.append(build_bare_context(task.query, family), false);
    seq.append(task.gold_answer, true);
    seq.append(family.eos_token(), true);
    return seq;
  }
  const TaskInstance task = generate_task(mix_label(base, 1), family);
  for (int j = 0; j < cfg.k_demos; ++j) {
    const Demonstration demo = make_demonstration(
        family, task.rule_id, mix_label(base, 2 + static_cast<uint64_t>(j)), task.query);
    seq.append(family.qry_token(), false);
    seq.append(demo.query, false);
    seq.append(family.sep_token(), false);
    seq.append(demo.answer, true);
    seq.append(family.eos_token(), true);
  }
  seq.append(family.qry_token(), false);
  seq.append(task.query, false);
  seq.append(family.sep_token(), false);
  seq.append(task.gold_answer, true);
  seq.append(family.eos_token(), true);
  return seq;
}

}  // namespace

WarmStartResult warm_start(const TrainConfig& cfg, const DemoBank& bank, uint64_t rng_seed) {
  const RuleFamilyConfig family = cfg.family();
  WarmStartResult result;
  result.ckpt = init_checkpoint(cfg.arch(), rng_seed);
  if (cfg.warm_start_steps == 0) return result;

  AdamState opt;
  opt.reset(result.ckpt.params.size());

  std::vector<double> grads(result.ckpt.params.size(), 0.0);
  std::vector<WarmSequence> batch(cfg.warm_start_batch);

  for (int step = 0; step < cfg.warm_start_steps; ++step) {
    // Cosine learning-rate decay to a 10% floor.
    const double progress = static_cast<double>(step) / cfg.warm_start_steps;
    AdamConfig adam{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
    adam.lr = cfg.lr * (0.1 + 0.45 * (1.0 + std::cos(3.14159265358979323846 * progress)));

    int total_supervised = 0;
    for (int b = 0; b < cfg.warm_start_batch; ++b) {
      batch[b] = build_warm_sequence(
          cfg, family,
          derive_seed(rng_seed, Stream::warm, static_cast<uint64_t>(step), static_cast<uint64_t>(b)));
      if (static_cast<int>(batch[b].tokens.size()) > cfg.max_context) {
        throw ContextOverflowError("warm-start sequence exceeds max context");
      }
      total_supervised += batch[b].supervised_count;
    }
    const double inv_total = 1.0 / static_cast<double>(total_supervised);

    std::fill(grads.begin(), grads.end(), 0.0);
    double loss_value = 0.0;
    Tape tape(result.ckpt.params);
    for (int b = 0; b < cfg.warm_start_batch; ++b) {
      const WarmSequence& seq = batch[b];
      tape.reset();
      PolicyEval<Tape> eval(cfg.arch(), tape, 1.0);
      Ref lp_sum = 0;
      bool have_sum = false;
      Ref scaled = 0;
      for (size_t p = 0; p + 1 < seq.tokens.size(); ++p) {
        scaled = eval.feed(seq.tokens[p], seq.supervised[p + 1]);
        if (!seq.supervised[p + 1]) continue;
        const SoftmaxRefs sm = eval.softmax(scaled);
        const Ref lp = eval.pick_logprob(scaled, sm, seq.tokens[p + 1]);
        lp_sum = have_sum ? tape.add(lp_sum, lp) : lp;
        have_sum = true;
      }
      const Ref seq_loss = tape.scale(lp_sum, -inv_total);
      if (!std::isfinite(tape.value(seq_loss))) {
        throw NumericalError("warm-start loss is not finite");
      }
      loss_value += tape.value(seq_loss);
      tape.backward(seq_loss, grads);
    }
    adam_update(result.ckpt, grads, opt, adam);
    result.final_loss = loss_value;
    result.steps_run = step + 1;
  }

  // Final held-out margin check: 1-shot accuracy must clear 0-shot accuracy
  // by the configured number of points. Skipped when the bank cannot serve
  // the conditioning side at all.
  bool bank_serves_k = !bank.empty();
  for (int r = 0; r < family.rule_count() && bank_serves_k; ++r) {
    bank_serves_k = bank.per_rule_count(r) >= cfg.k_demos;
  }
  if (bank_serves_k) {
    const auto tasks = make_eval_tasks(cfg, family, bank, cfg.eval_tasks, /*salt=*/1);
    EvalOptions opts;
    opts.temperature = cfg.eval_temperature;
    opts.max_gen_len = cfg.max_gen_len;
    opts.diversity_samples = 0;
    const std::vector<uint64_t> seeds = {derive_seed(rng_seed, Stream::eval, 9999)};
    const EvalReport report = evaluate(result.ckpt, tasks, bank, family, cfg.k_demos, seeds, opts);
    result.accuracy_0shot = report.accuracy_0shot;
    result.accuracy_kshot = report.accuracy_kshot;
    result.margin_checked = true;
    if (report.accuracy_kshot - report.accuracy_0shot < cfg.warm_start_margin) {
      throw WarmStartFailedError(
          "in-context margin not reached within " + std::to_string(cfg.warm_start_steps) +
          " steps: 0-shot accuracy " + std::to_string(report.accuracy_0shot) +
          ", " + std::to_string(cfg.k_demos) + "-shot accuracy " +
          std::to_string(report.accuracy_kshot) + ", required margin " +
          std::to_string(cfg.warm_start_margin));
    }
  }
  return result;
}

StepMetrics train_step(TrainerState& state, const std::vector<TaskInstance>& tasks,
                       const DemoBank& bank, const TrainConfig& cfg,
                       std::vector<RolloutGroup>* groups_out) {
  if (static_cast<int>(tasks.size()) != cfg.batch_prompts) {
    throw SizeError("train_step expects exactly batch_prompts tasks");
  }
  const RuleFamilyConfig family = cfg.family();
  const TokenId eos = family.eos_token();
  const bool mixing = cfg.mode != TrainMode::grpo;

  RolloutConfig rollout_cfg;
  rollout_cfg.group_size = cfg.group_size;
  rollout_cfg.n_off = cfg.n_off;
  rollout_cfg.k_demos = cfg.k_demos;
  rollout_cfg.max_gen_len = cfg.max_gen_len;
  rollout_cfg.temperature = cfg.temperature;
  rollout_cfg.want_ief = mixing;

  ShapingConfig shaping;
  shaping.delta = cfg.delta;
  shaping.alpha = cfg.alpha;
  shaping.t_total = cfg.t_total;
  shaping.rs_enabled = cfg.mode == TrainMode::icpo_rs;

  StepMetrics metrics;
  metrics.step = static_cast<int>(state.step);

  std::vector<RolloutGroup> groups;
  groups.reserve(tasks.size());
  double bonus_total = 0.0;
  for (size_t i = 0; i < tasks.size(); ++i) {
    RolloutGroup group = generate_group(
        state.theta_old, tasks[i], bank, family, rollout_cfg,
        derive_seed(cfg.seed, Stream::rollout, static_cast<uint64_t>(state.step), i));
    if (mixing) {
      const MixOutcome outcome = mix_ief_into_group(
          group, static_cast<int>(state.step), shaping, eos,
          derive_seed(cfg.seed, Stream::mix, static_cast<uint64_t>(state.step), i));
      if (outcome.accepted) {
        metrics.accepted_ief_count += 1;
        bonus_total += outcome.bonus;
        if (outcome.bonus_clamped) metrics.bonus_clamped += 1;
      }
    }
    groups.push_back(std::move(group));
  }

  // Mixed-group advantages over shaped rewards.
  std::vector<double> rewards;
  for (auto& group : groups) {
    rewards.clear();
    for (const auto& traj : group.trajectories) rewards.push_back(traj.shaped_reward);
    const AdvantageSet adv = group_advantages(rewards, cfg.eps_std);
    for (size_t i = 0; i < group.trajectories.size(); ++i) {
      group.trajectories[i].advantage = adv.advantages[i];
    }
  }

  long tokens = 0;
  long n_traj = 0;
  double entropy_total = 0.0;
  for (const auto& group : groups) {
    for (const auto& traj : group.trajectories) {
      metrics.mean_raw_reward += traj.raw_reward;
      metrics.mean_shaped_reward += traj.shaped_reward;
      metrics.mean_response_length += static_cast<double>(traj.generated.size());
      entropy_total += traj.entropy_sum;
      tokens += static_cast<long>(traj.generated.size());
      n_traj += 1;
    }
  }
  metrics.mean_raw_reward /= static_cast<double>(n_traj);
  metrics.mean_shaped_reward /= static_cast<double>(n_traj);
  metrics.mean_response_length /= static_cast<double>(n_traj);
  metrics.policy_entropy = tokens > 0 ? entropy_total / static_cast<double>(tokens) : 0.0;
  metrics.mean_bonus =
      metrics.accepted_ief_count > 0 ? bonus_total / metrics.accepted_ief_count : 0.0;

  const PassCounts pass = classify_pass_groups(groups);
  metrics.zero_pass = pass.zero_pass;
  metrics.some_pass = pass.some_pass;
  metrics.all_pass = pass.all_pass;

  ObjectiveConfig obj;
  obj.epsilon_clip = cfg.epsilon_clip;
  obj.lambda_shape = cfg.lambda_shape;
  obj.beta_kl = cfg.beta_kl;
  obj.entropy_coef = cfg.entropy_coef;
  obj.eps_std = cfg.eps_std;
  obj.f_shaping_enabled = cfg.f_shaping;
  obj.temperature = cfg.temperature;

  const AdamConfig adam{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  std::vector<double> grads;
  for (int update = 0; update < cfg.updates_per_batch; ++update) {
    grads.assign(state.theta.params.size(), 0.0);
    const LossDiagnostics diag = icpo_loss(state.theta, state.ref, groups, obj, &grads);
    if (update == 0) {
      metrics.loss_total = diag.loss_total;
      metrics.loss_on = diag.loss_on;
      metrics.loss_off = diag.loss_off;
      metrics.kl = diag.kl;
      metrics.entropy = diag.entropy;
      metrics.clip_fraction = diag.clip_fraction;
      metrics.z_tokens = diag.z_tokens;
      metrics.kl_to_ref = diag.kl;
    }
    adam_update(state.theta, grads, state.opt, adam);
  }

  state.theta_old = clone_frozen(state.theta);
  state.step += 1;

  if (groups_out != nullptr) *groups_out = std::move(groups);
  return metrics;
}

// ---- trainer state persistence ----

namespace {

constexpr char kStateMagic[8] = {'I', 'C', 'P', 'O', 'S', 'T', 'A', '1'};

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint64_t get_u64(std::span<const uint8_t> bytes, size_t& offset) {
  if (offset + 8 > bytes.size()) throw IoError("trainer state truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[offset + i]) << (8 * i);
  offset += 8;
  return v;
}

void put_doubles(std::vector<uint8_t>& out, const std::vector<double>& values) {
  put_u64(out, values.size());
  for (double d : values) {
    uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    put_u64(out, bits);
  }
}

std::vector<double> get_doubles(std::span<const uint8_t> bytes, size_t& offset) {
  const uint64_t count = get_u64(bytes, offset);
  std::vector<double> values(count);
  for (uint64_t i = 0; i < count; ++i) {
    const uint64_t bits = get_u64(bytes, offset);
    std::memcpy(&values[i], &bits, sizeof(double));
  }
  return values;
}

}  // namespace

void save_trainer_state(const TrainerState& state, const std::string& path) {
  std::vector<uint8_t> bytes;
  bytes.insert(bytes.end(), kStateMagic, kStateMagic + sizeof(kStateMagic));
  put_u64(bytes, static_cast<uint64_t>(state.step));
  put_u64(bytes, state.opt.t);
  append_checkpoint_bytes(state.theta, bytes);
  append_checkpoint_bytes(state.theta_old, bytes);
  append_checkpoint_bytes(state.ref, bytes);
  put_doubles(bytes, state.opt.m);
  put_doubles(bytes, state.opt.v);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

TrainerState load_trainer_state(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  size_t offset = 0;
  if (bytes.size() < sizeof(kStateMagic) ||
      std::memcmp(bytes.data(), kStateMagic, sizeof(kStateMagic)) != 0) {
    throw IoError("bad trainer state magic in '" + path + "'");
  }
  offset += sizeof(kStateMagic);
  TrainerState state;
  state.step = static_cast<int64_t>(get_u64(bytes, offset));
  state.opt.t = get_u64(bytes, offset);
  state.theta = read_checkpoint_bytes(bytes, offset);
  state.theta_old = read_checkpoint_bytes(bytes, offset);
  state.ref = read_checkpoint_bytes(bytes, offset);
  state.opt.m = get_doubles(bytes, offset);
  state.opt.v = get_doubles(bytes, offset);
  if (offset != bytes.size()) throw IoError("trailing bytes in trainer state '" + path + "'");
  return state;
}

// ---- full run ----

RunResult run(const TrainConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const RuleFamilyConfig family = cfg.family();
  const DemoBank bank = DemoBank::build(family, cfg.demo_bank_per_rule, cfg.seed);

  const bool writing = !opts.out_dir.empty();
  if (writing) std::filesystem::create_directories(opts.out_dir);

  RunResult result;
  TrainerState state;
  if (!opts.resume_state_path.empty()) {
    state = load_trainer_state(opts.resume_state_path);
    if (!(state.theta.arch == cfg.arch())) {
      throw ConfigError("resume state architecture does not match the configuration");
    }
  } else {
    if (opts.warm_override != nullptr) {
      result.warm.ckpt = *opts.warm_override;
    } else {
      result.warm = warm_start(cfg, bank, cfg.seed);
      if (!opts.quiet && result.warm.margin_checked) {
        std::cerr << "warm start: 0-shot " << result.warm.accuracy_0shot << ", " << cfg.k_demos
                  << "-shot " << result.warm.accuracy_kshot << "\n";
      }
    }
    state.theta = clone_frozen(result.warm.ckpt);
    state.theta_old = clone_frozen(result.warm.ckpt);
    state.ref = clone_frozen(result.warm.ckpt);
    state.opt.reset(state.theta.params.size());
    state.step = 0;
  }

  std::unique_ptr<MetricsWriter> metrics_writer;
  std::unique_ptr<RolloutDumpWriter> dump_writer;
  std::unique_ptr<std::ofstream> eval_writer;
  if (writing) {
    metrics_writer = std::make_unique<MetricsWriter>(opts.out_dir + "/metrics.jsonl");
    if (opts.dump_rollouts) {
      dump_writer = std::make_unique<RolloutDumpWriter>(opts.out_dir + "/rollouts.jsonl");
    }
    if (cfg.eval_every > 0) {
      eval_writer = std::make_unique<std::ofstream>(opts.out_dir + "/eval.jsonl", std::ios::app);
    }
  }

  std::vector<TaskInstance> eval_tasks;
  if (cfg.eval_every > 0) {
    eval_tasks = make_eval_tasks(cfg, family, bank, std::min(cfg.eval_tasks, 200), /*salt=*/2);
  }

  std::vector<RolloutGroup> groups;
  int session_steps = 0;
  while (state.step < cfg.t_total) {
    if (opts.halt_after_steps >= 0 && session_steps >= opts.halt_after_steps) {
      result.halted_early = true;
      break;
    }
    std::vector<TaskInstance> tasks;
    tasks.reserve(cfg.batch_prompts);
    for (int i = 0; i < cfg.batch_prompts; ++i) {
      tasks.push_back(make_train_task(cfg, family, bank, state.step, i));
    }
    StepMetrics metrics;
    try {
      metrics = train_step(state, tasks, bank, cfg,
                           dump_writer != nullptr ? &groups : nullptr);
    } catch (const Error&) {
      if (writing) save_trainer_state(state, opts.out_dir + "/crash_state.bin");
      throw;
    }
    if (metrics_writer != nullptr) metrics_writer->log_step(metrics);
    if (dump_writer != nullptr) {
      for (size_t i = 0; i < groups.size(); ++i) {
        dump_writer->log_group(metrics.step, static_cast<int>(i), groups[i]);
      }
    }
    if (!opts.quiet && (metrics.step % 20 == 0 || metrics.step + 1 == cfg.t_total)) {
      std::cerr << "step " << metrics.step << " reward " << metrics.mean_raw_reward
                << " zero-pass " << metrics.zero_pass << "\n";
    }
    result.metrics.push_back(metrics);
    session_steps += 1;

    if (cfg.eval_every > 0 && state.step % cfg.eval_every == 0) {
      const double acc = zero_shot_accuracy(state.theta, eval_tasks, family, cfg,
                                            derive_seed(cfg.seed, Stream::eval, 3,
                                                        static_cast<uint64_t>(state.step)));
      if (eval_writer != nullptr) {
        nlohmann::ordered_json j;
        j["step"] = static_cast<int>(state.step);
        j["accuracy_0shot"] = acc;
        *eval_writer << j.dump() << '\n';
        eval_writer->flush();
      }
    }
  }

  result.final_ckpt = clone_frozen(state.theta);
  if (writing) {
    save_trainer_state(state, opts.out_dir + "/state.bin");
    if (!result.halted_early) {
      save_checkpoint(state.theta, opts.out_dir + "/final_checkpoint.bin");
    }
  }
  return result;
}

}  // namespace icpo
