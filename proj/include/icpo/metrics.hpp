#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "icpo/micro_policy.hpp"
#include "icpo/rollout.hpp"

namespace icpo {

// One training step's record. Field names are the stable schema of the
// metrics stream.
struct StepMetrics {
  int step = 0;
  double mean_raw_reward = 0.0;
  double mean_shaped_reward = 0.0;
  int accepted_ief_count = 0;
  double mean_bonus = 0.0;
  int zero_pass = 0;
  int some_pass = 0;
  int all_pass = 0;
  double policy_entropy = 0.0;
  double kl_to_ref = 0.0;
  double mean_response_length = 0.0;
  double loss_total = 0.0;
  double loss_on = 0.0;
  double loss_off = 0.0;
  double kl = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  long z_tokens = 0;
  int bonus_clamped = 0;

  bool operator==(const StepMetrics&) const = default;
};

struct PassCounts {
  int zero_pass = 0;
  int some_pass = 0;
  int all_pass = 0;
};

// Per-prompt classification by the on-policy trajectories' raw rewards only:
// all correct, none correct, or anything in between.
PassCounts classify_pass_groups(const std::vector<RolloutGroup>& groups);

// Mean normalized token-level edit distance over all unordered pairs.
double pairwise_diversity(const std::vector<TokenSeq>& generations);

int levenshtein_distance(const TokenSeq& a, const TokenSeq& b);

// Line-delimited metrics records (one JSON object per line).
std::string step_metrics_to_json(const StepMetrics& m);
StepMetrics step_metrics_from_json(const std::string& line);
std::vector<StepMetrics> read_metrics_file(const std::string& path);

// Append-only per-step sink, flushed per record so an aborted run stays
// parseable up to its last completed step.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  ~MetricsWriter();
  MetricsWriter(const MetricsWriter&) = delete;
  MetricsWriter& operator=(const MetricsWriter&) = delete;

  void log_step(const StepMetrics& m);

 private:
  std::string path_;
  std::unique_ptr<std::ofstream> out_;
};

// One dumped trajectory. Post-mix group members carry in_group = true; a
// rejected expert-conditioned candidate is dumped with in_group = false so
// acceptance statistics stay reconstructible.
struct RolloutRecord {
  int step = 0;
  int prompt_index = 0;
  int rule_id = 0;
  std::string mode;
  bool in_group = true;
  TokenSeq query;
  TokenSeq gold;
  TokenSeq generated;
  std::vector<double> behavior_logprobs;
  double raw_reward = 0.0;
  double shaped_reward = 0.0;
  double advantage = 0.0;
};

class RolloutDumpWriter {
 public:
  explicit RolloutDumpWriter(const std::string& path);
  ~RolloutDumpWriter();
  RolloutDumpWriter(const RolloutDumpWriter&) = delete;
  RolloutDumpWriter& operator=(const RolloutDumpWriter&) = delete;

  void log_group(int step, int prompt_index, const RolloutGroup& group);

 private:
  std::string path_;
  std::unique_ptr<std::ofstream> out_;
};

std::vector<RolloutRecord> read_rollout_dump(const std::string& path);

struct EvalSeedStats {
  uint64_t seed = 0;
  double accuracy_0shot = 0.0;
  double accuracy_kshot = 0.0;
  double flip_to_correct_rate = 0.0;
  double flip_to_wrong_rate = 0.0;
  // Flip rate of an independent 0-shot redraw, the unconditioned-resampling
  // baseline the conditioned flip rate is compared against.
  double flip_to_correct_resample_rate = 0.0;
  double diversity_0shot = 0.0;
  double diversity_kshot = 0.0;
};

struct EvalReport {
  int n_tasks = 0;
  int k = 0;
  std::vector<EvalSeedStats> per_seed;
  double accuracy_0shot = 0.0;
  double accuracy_kshot = 0.0;
  double flip_to_correct_rate = 0.0;
  double flip_to_wrong_rate = 0.0;
  double flip_to_correct_resample_rate = 0.0;
  double diversity_0shot = 0.0;
  double diversity_kshot = 0.0;
  // Conditioned-sampling diversity, the headline pairwise distance.
  double mean_pairwise_edit_distance = 0.0;
};

struct EvalOptions {
  double temperature = 0.6;
  int max_gen_len = 8;
  int diversity_samples = 6;
};

// Paired 0-shot vs k-shot evaluation over held-out tasks, sampled at the
// evaluation temperature, averaged over the given seeds. Each k-shot sample
// conditions on freshly drawn rule-matched demonstrations.
EvalReport evaluate(const PolicyCheckpoint& ckpt, const std::vector<TaskInstance>& tasks,
                    const DemoBank& bank, const RuleFamilyConfig& family, int k,
                    const std::vector<uint64_t>& seeds, const EvalOptions& opts);

}  // namespace icpo
