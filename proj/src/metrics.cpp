#include "icpo/metrics.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "icpo/errors.hpp"
#include "icpo/rng.hpp"

namespace icpo {

using ordered_json = nlohmann::ordered_json;

PassCounts classify_pass_groups(const std::vector<RolloutGroup>& groups) {
  PassCounts counts;
  for (const auto& group : groups) {
    int on = 0;
    int correct = 0;
    for (const auto& traj : group.trajectories) {
      if (traj.mode != ConditioningMode::on_policy) continue;
      on += 1;
      if (traj.raw_reward >= 1.0) correct += 1;
    }
    if (on == 0 || correct == on) {
      counts.all_pass += 1;
    } else if (correct == 0) {
      counts.zero_pass += 1;
    } else {
      counts.some_pass += 1;
    }
  }
  return counts;
}

int levenshtein_distance(const TokenSeq& a, const TokenSeq& b) {
  const size_t n = a.size();
  const size_t m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double pairwise_diversity(const std::vector<TokenSeq>& generations) {
  if (generations.size() < 2) throw SizeError("pairwise_diversity needs at least 2 sequences");
  double total = 0.0;
  size_t pairs = 0;
  for (size_t i = 0; i < generations.size(); ++i) {
    for (size_t j = i + 1; j < generations.size(); ++j) {
      const size_t longest = std::max(generations[i].size(), generations[j].size());
      if (longest > 0) {
        total += static_cast<double>(levenshtein_distance(generations[i], generations[j])) /
                 static_cast<double>(longest);
      }
      pairs += 1;
    }
  }
  return total / static_cast<double>(pairs);
}

std::string step_metrics_to_json(const StepMetrics& m) {
  ordered_json j;
  j["step"] = m.step;
  j["mean_raw_reward"] = m.mean_raw_reward;
  j["mean_shaped_reward"] = m.mean_shaped_reward;
  j["accepted_ief_count"] = m.accepted_ief_count;
  j["mean_bonus"] = m.mean_bonus;
  j["zero_pass"] = m.zero_pass;
  j["some_pass"] = m.some_pass;
  j["all_pass"] = m.all_pass;
  j["policy_entropy"] = m.policy_entropy;
  j["kl_to_ref"] = m.kl_to_ref;
  j["mean_response_length"] = m.mean_response_length;
  j["loss_total"] = m.loss_total;
  j["loss_on"] = m.loss_on;
  j["loss_off"] = m.loss_off;
  j["kl"] = m.kl;
  j["entropy"] = m.entropy;
  j["clip_fraction"] = m.clip_fraction;
  j["z_tokens"] = m.z_tokens;
  j["bonus_clamped"] = m.bonus_clamped;
  return j.dump();
}

StepMetrics step_metrics_from_json(const std::string& line) {
  const auto j = ordered_json::parse(line);
  StepMetrics m;
  m.step = j.at("step").get<int>();
  m.mean_raw_reward = j.at("mean_raw_reward").get<double>();
  m.mean_shaped_reward = j.at("mean_shaped_reward").get<double>();
  m.accepted_ief_count = j.at("accepted_ief_count").get<int>();
  m.mean_bonus = j.at("mean_bonus").get<double>();
  m.zero_pass = j.at("zero_pass").get<int>();
  m.some_pass = j.at("some_pass").get<int>();
  m.all_pass = j.at("all_pass").get<int>();
  m.policy_entropy = j.at("policy_entropy").get<double>();
  m.kl_to_ref = j.at("kl_to_ref").get<double>();
  m.mean_response_length = j.at("mean_response_length").get<double>();
  m.loss_total = j.at("loss_total").get<double>();
  m.loss_on = j.at("loss_on").get<double>();
  m.loss_off = j.at("loss_off").get<double>();
  m.kl = j.at("kl").get<double>();
  m.entropy = j.at("entropy").get<double>();
  m.clip_fraction = j.at("clip_fraction").get<double>();
  m.z_tokens = j.at("z_tokens").get<long>();
  m.bonus_clamped = j.at("bonus_clamped").get<int>();
  return m;
}

std::vector<StepMetrics> read_metrics_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file '" + path + "'");
  std::vector<StepMetrics> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(step_metrics_from_json(line));
  }
  return out;
}

MetricsWriter::MetricsWriter(const std::string& path)
    : path_(path), out_(std::make_unique<std::ofstream>(path, std::ios::app)) {
  if (!*out_) throw IoError("cannot open metrics file '" + path + "' for append");
}

MetricsWriter::~MetricsWriter() = default;

void MetricsWriter::log_step(const StepMetrics& m) {
  *out_ << step_metrics_to_json(m) << '\n';
  out_->flush();
  if (!*out_) throw IoError("failed writing metrics record to '" + path_ + "'");
}

namespace {

ordered_json trajectory_record(int step, int prompt_index, const RolloutGroup& group,
                               const Trajectory& traj, bool in_group) {
  ordered_json j;
  j["step"] = step;
  j["prompt_index"] = prompt_index;
  j["rule_id"] = group.task.rule_id;
  j["mode"] = traj.mode == ConditioningMode::ief ? "ief" : "on_policy";
  j["in_group"] = in_group;
  j["query"] = group.task.query;
  j["gold"] = group.task.gold_answer;
  j["generated"] = traj.generated;
  j["behavior_logprobs"] = traj.behavior_logprobs;
  j["raw_reward"] = traj.raw_reward;
  j["shaped_reward"] = traj.shaped_reward;
  j["advantage"] = traj.advantage;
  return j;
}

}  // namespace

RolloutDumpWriter::RolloutDumpWriter(const std::string& path)
    : path_(path), out_(std::make_unique<std::ofstream>(path, std::ios::app)) {
  if (!*out_) throw IoError("cannot open rollout dump '" + path + "' for append");
}

RolloutDumpWriter::~RolloutDumpWriter() = default;

void RolloutDumpWriter::log_group(int step, int prompt_index, const RolloutGroup& group) {
  for (const auto& traj : group.trajectories) {
    *out_ << trajectory_record(step, prompt_index, group, traj, true).dump() << '\n';
  }
  if (group.ief_candidate.has_value()) {
    *out_ << trajectory_record(step, prompt_index, group, *group.ief_candidate, false).dump()
          << '\n';
  }
  out_->flush();
  if (!*out_) throw IoError("failed writing rollout dump to '" + path_ + "'");
}

std::vector<RolloutRecord> read_rollout_dump(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open rollout dump '" + path + "'");
  std::vector<RolloutRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = ordered_json::parse(line);
    RolloutRecord r;
    r.step = j.at("step").get<int>();
    r.prompt_index = j.at("prompt_index").get<int>();
    r.rule_id = j.at("rule_id").get<int>();
    r.mode = j.at("mode").get<std::string>();
    r.in_group = j.at("in_group").get<bool>();
    r.query = j.at("query").get<TokenSeq>();
    r.gold = j.at("gold").get<TokenSeq>();
    r.generated = j.at("generated").get<TokenSeq>();
    r.behavior_logprobs = j.at("behavior_logprobs").get<std::vector<double>>();
    r.raw_reward = j.at("raw_reward").get<double>();
    r.shaped_reward = j.at("shaped_reward").get<double>();
    r.advantage = j.at("advantage").get<double>();
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

TokenSeq sample_generation(const PolicyCheckpoint& ckpt, const TokenSeq& context,
                           const EvalOptions& opts, TokenId eos, uint64_t seed) {
  return sample_trajectory(ckpt, context, opts.temperature, opts.max_gen_len, seed, eos).generated;
}

}  // namespace

EvalReport evaluate(const PolicyCheckpoint& ckpt, const std::vector<TaskInstance>& tasks,
                    const DemoBank& bank, const RuleFamilyConfig& family, int k,
                    const std::vector<uint64_t>& seeds, const EvalOptions& opts) {
  if (tasks.empty()) throw SizeError("evaluate needs at least one task");
  if (seeds.empty()) throw SizeError("evaluate needs at least one seed");

  EvalReport report;
  report.n_tasks = static_cast<int>(tasks.size());
  report.k = k;
  const TokenId eos = family.eos_token();
  const double n = static_cast<double>(tasks.size());

  for (uint64_t seed : seeds) {
    EvalSeedStats stats;
    stats.seed = seed;
    int correct0 = 0;
    int correct_k = 0;
    int flip_correct = 0;
    int flip_wrong = 0;
    int flip_correct_resample = 0;
    double div0_total = 0.0;
    double divk_total = 0.0;

    for (size_t i = 0; i < tasks.size(); ++i) {
      const TaskInstance& task = tasks[i];
      const TokenSeq bare = build_bare_context(task.query, family);

      const TokenSeq gen0 = sample_generation(ckpt, bare, opts, eos,
                                              derive_seed(seed, Stream::eval, i, 0));
      const TokenSeq gen0_resample = sample_generation(ckpt, bare, opts, eos,
                                                       derive_seed(seed, Stream::eval, i, 1));
      const auto demos = sample_demonstrations(bank, task.rule_id, k,
                                               derive_seed(seed, Stream::eval, i, 2));
      const TokenSeq expert =
          build_expert_context(demos, task.query, family, ckpt.arch.max_context - opts.max_gen_len);
      const TokenSeq genk = sample_generation(ckpt, expert, opts, eos,
                                              derive_seed(seed, Stream::eval, i, 3));

      const bool ok0 = verify(task, gen0, eos);
      const bool ok0b = verify(task, gen0_resample, eos);
      const bool okk = verify(task, genk, eos);
      correct0 += ok0 ? 1 : 0;
      correct_k += okk ? 1 : 0;
      flip_correct += (!ok0 && okk) ? 1 : 0;
      flip_wrong += (ok0 && !okk) ? 1 : 0;
      flip_correct_resample += (!ok0 && ok0b) ? 1 : 0;

      if (opts.diversity_samples >= 2) {
        std::vector<TokenSeq> gens0;
        std::vector<TokenSeq> gensk;
        for (int s = 0; s < opts.diversity_samples; ++s) {
          gens0.push_back(sample_generation(ckpt, bare, opts, eos,
                                            derive_seed(seed, Stream::eval, i, 10 + s)));
          const auto demos_s = sample_demonstrations(
              bank, task.rule_id, k, derive_seed(seed, Stream::eval, i, 100 + s));
          const TokenSeq expert_s = build_expert_context(
              demos_s, task.query, family, ckpt.arch.max_context - opts.max_gen_len);
          gensk.push_back(sample_generation(ckpt, expert_s, opts, eos,
                                            derive_seed(seed, Stream::eval, i, 200 + s)));
        }
        div0_total += pairwise_diversity(gens0);
        divk_total += pairwise_diversity(gensk);
      }
    }

    stats.accuracy_0shot = correct0 / n;
    stats.accuracy_kshot = correct_k / n;
    stats.flip_to_correct_rate = flip_correct / n;
    stats.flip_to_wrong_rate = flip_wrong / n;
    stats.flip_to_correct_resample_rate = flip_correct_resample / n;
    stats.diversity_0shot = div0_total / n;
    stats.diversity_kshot = divk_total / n;
    report.per_seed.push_back(stats);
  }

  const double ns = static_cast<double>(report.per_seed.size());
  for (const auto& s : report.per_seed) {
    report.accuracy_0shot += s.accuracy_0shot / ns;
    report.accuracy_kshot += s.accuracy_kshot / ns;
    report.flip_to_correct_rate += s.flip_to_correct_rate / ns;
    report.flip_to_wrong_rate += s.flip_to_wrong_rate / ns;
    report.flip_to_correct_resample_rate += s.flip_to_correct_resample_rate / ns;
    report.diversity_0shot += s.diversity_0shot / ns;
    report.diversity_kshot += s.diversity_kshot / ns;
  }
  report.mean_pairwise_edit_distance = report.diversity_kshot;
  return report;
}

}  // namespace icpo
