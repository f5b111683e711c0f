// Command-line entry points: warmstart, train, eval, compare, analyze.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "icpo/config.hpp"
#include "icpo/errors.hpp"
#include "icpo/metrics.hpp"
#include "icpo/trainer.hpp"

namespace {

using icpo::TrainConfig;

std::string default_out_dir() {
  const char* env = std::getenv("ICPO_OUT_DIR");
  return env != nullptr ? std::string(env) : std::string("out");
}

std::vector<uint64_t> parse_seed_list(const std::string& text) {
  std::vector<uint64_t> seeds;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw icpo::ConfigError("empty seed list");
  return seeds;
}

TrainConfig load_cfg(const std::string& config_path, std::optional<uint64_t> seed,
                     std::optional<std::string> mode) {
  TrainConfig cfg = icpo::load_config_file(config_path);
  if (seed.has_value()) cfg.seed = *seed;
  if (mode.has_value()) cfg.mode = icpo::parse_mode(*mode);
  cfg.validate();
  return cfg;
}

int cmd_warmstart(const std::string& config_path, std::optional<uint64_t> seed,
                  const std::string& out_dir) {
  const TrainConfig cfg = load_cfg(config_path, seed, std::nullopt);
  const auto family = cfg.family();
  const auto bank = icpo::DemoBank::build(family, cfg.demo_bank_per_rule, cfg.seed);
  const auto result = icpo::warm_start(cfg, bank, cfg.seed);
  std::filesystem::create_directories(out_dir);
  const std::string path = out_dir + "/warm_checkpoint.bin";
  icpo::save_checkpoint(result.ckpt, path);
  std::cout << "steps_run " << result.steps_run << "\n";
  if (result.margin_checked) {
    std::cout << "accuracy_0shot " << result.accuracy_0shot << "\n"
              << "accuracy_" << cfg.k_demos << "shot " << result.accuracy_kshot << "\n";
  }
  std::cout << "checkpoint " << path << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, std::optional<uint64_t> seed,
              std::optional<std::string> mode, const std::string& out_dir, bool dump_rollouts,
              const std::string& resume, int halt_after, bool verbose) {
  const TrainConfig cfg = load_cfg(config_path, seed, mode);
  icpo::RunOptions opts;
  opts.out_dir = out_dir;
  opts.dump_rollouts = dump_rollouts;
  opts.resume_state_path = resume;
  opts.halt_after_steps = halt_after;
  opts.quiet = !verbose;
  const auto result = icpo::run(cfg, opts);
  std::cout << "mode " << icpo::to_string(cfg.mode) << "\n"
            << "seed " << cfg.seed << "\n"
            << "steps_this_session " << result.metrics.size() << "\n"
            << "out " << out_dir << "\n";
  if (!result.metrics.empty()) {
    std::cout << "final_mean_raw_reward " << result.metrics.back().mean_raw_reward << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path, std::optional<int> k,
             const std::string& seeds_text, std::optional<int> n_tasks, bool as_json) {
  const TrainConfig cfg = load_cfg(config_path, std::nullopt, std::nullopt);
  const auto family = cfg.family();
  const auto bank = icpo::DemoBank::build(family, cfg.demo_bank_per_rule, cfg.seed);
  const auto ckpt = icpo::load_checkpoint(ckpt_path);
  if (!(ckpt.arch == cfg.arch())) {
    throw icpo::ConfigError("checkpoint architecture does not match the configuration");
  }
  const int kk = k.value_or(cfg.k_demos);
  const int count = n_tasks.value_or(cfg.eval_tasks);
  const auto tasks = icpo::make_eval_tasks(cfg, family, bank, count, /*salt=*/7);
  icpo::EvalOptions opts;
  opts.temperature = cfg.eval_temperature;
  opts.max_gen_len = cfg.max_gen_len;
  opts.diversity_samples = cfg.eval_diversity_samples;
  const auto report =
      icpo::evaluate(ckpt, tasks, bank, family, kk, parse_seed_list(seeds_text), opts);

  if (as_json) {
    nlohmann::ordered_json j;
    j["n_tasks"] = report.n_tasks;
    j["k"] = report.k;
    j["accuracy_0shot"] = report.accuracy_0shot;
    j["accuracy_kshot"] = report.accuracy_kshot;
    j["flip_to_correct_rate"] = report.flip_to_correct_rate;
    j["flip_to_wrong_rate"] = report.flip_to_wrong_rate;
    j["flip_to_correct_resample_rate"] = report.flip_to_correct_resample_rate;
    j["diversity_0shot"] = report.diversity_0shot;
    j["diversity_kshot"] = report.diversity_kshot;
    j["mean_pairwise_edit_distance"] = report.mean_pairwise_edit_distance;
    nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
    for (const auto& s : report.per_seed) {
      nlohmann::ordered_json sj;
      sj["seed"] = s.seed;
      sj["accuracy_0shot"] = s.accuracy_0shot;
      sj["accuracy_kshot"] = s.accuracy_kshot;
      sj["flip_to_correct_rate"] = s.flip_to_correct_rate;
      sj["flip_to_wrong_rate"] = s.flip_to_wrong_rate;
      sj["flip_to_correct_resample_rate"] = s.flip_to_correct_resample_rate;
      sj["diversity_0shot"] = s.diversity_0shot;
      sj["diversity_kshot"] = s.diversity_kshot;
      per_seed.push_back(sj);
    }
    j["per_seed"] = per_seed;
    std::cout << j.dump(2) << "\n";
    return 0;
  }

  std::cout << "n_tasks " << report.n_tasks << "  k " << report.k << "\n";
  std::cout << std::left << std::setw(12) << "seed" << std::setw(12) << "acc_0shot"
            << std::setw(12) << "acc_kshot" << std::setw(14) << "flip_correct" << std::setw(12)
            << "flip_wrong" << std::setw(12) << "div_0shot" << std::setw(12) << "div_kshot"
            << "\n";
  for (const auto& s : report.per_seed) {
    std::cout << std::left << std::setw(12) << s.seed << std::setw(12) << s.accuracy_0shot
              << std::setw(12) << s.accuracy_kshot << std::setw(14) << s.flip_to_correct_rate
              << std::setw(12) << s.flip_to_wrong_rate << std::setw(12) << s.diversity_0shot
              << std::setw(12) << s.diversity_kshot << "\n";
  }
  std::cout << std::left << std::setw(12) << "mean" << std::setw(12) << report.accuracy_0shot
            << std::setw(12) << report.accuracy_kshot << std::setw(14)
            << report.flip_to_correct_rate << std::setw(12) << report.flip_to_wrong_rate
            << std::setw(12) << report.diversity_0shot << std::setw(12) << report.diversity_kshot
            << "\n";
  return 0;
}

int cmd_compare(const std::string& config_path, std::optional<uint64_t> seed,
                const std::string& out_dir) {
  TrainConfig cfg = load_cfg(config_path, seed, std::nullopt);
  const auto family = cfg.family();
  const auto bank = icpo::DemoBank::build(family, cfg.demo_bank_per_rule, cfg.seed);
  const auto warm = icpo::warm_start(cfg, bank, cfg.seed);

  auto run_mode = [&](icpo::TrainMode mode) {
    TrainConfig mode_cfg = cfg;
    mode_cfg.mode = mode;
    icpo::RunOptions opts;
    opts.out_dir = out_dir + "/" + icpo::to_string(mode);
    opts.warm_override = &warm.ckpt;
    return icpo::run(mode_cfg, opts);
  };
  const auto grpo = run_mode(icpo::TrainMode::grpo);
  const auto icpo_run = run_mode(icpo::TrainMode::icpo);

  std::cout << "step\tgrpo_reward\ticpo_reward\n";
  std::ofstream table(out_dir + "/compare.tsv");
  table << "step\tgrpo_reward\ticpo_reward\n";
  for (size_t i = 0; i < grpo.metrics.size() && i < icpo_run.metrics.size(); ++i) {
    std::ostringstream row;
    row << grpo.metrics[i].step << '\t' << grpo.metrics[i].mean_raw_reward << '\t'
        << icpo_run.metrics[i].mean_raw_reward;
    std::cout << row.str() << "\n";
    table << row.str() << "\n";
  }
  const auto tail_mean = [](const std::vector<icpo::StepMetrics>& ms, size_t window) {
    const size_t n = std::min(window, ms.size());
    double total = 0.0;
    for (size_t i = ms.size() - n; i < ms.size(); ++i) total += ms[i].mean_raw_reward;
    return n > 0 ? total / static_cast<double>(n) : 0.0;
  };
  std::cerr << "final-100 mean reward: grpo " << tail_mean(grpo.metrics, 100) << ", icpo "
            << tail_mean(icpo_run.metrics, 100) << "\n";
  return 0;
}

int cmd_analyze(const std::string& dump_path) {
  const auto records = icpo::read_rollout_dump(dump_path);
  if (records.empty()) throw icpo::SizeError("rollout dump is empty");

  long on_policy = 0;
  long ief_in_group = 0;
  long ief_rejected = 0;
  long errs_violations = 0;
  double on_reward = 0.0;
  double ief_reward = 0.0;
  int max_step = 0;

  // Group members keyed by (step, prompt) for per-group statistics.
  std::map<std::pair<int, int>, std::vector<const icpo::RolloutRecord*>> groups;
  for (const auto& r : records) {
    max_step = std::max(max_step, r.step);
    if (r.in_group) groups[{r.step, r.prompt_index}].push_back(&r);
    if (r.mode == "ief") {
      if (r.in_group) {
        ief_in_group += 1;
        ief_reward += r.raw_reward;
        if (r.raw_reward < 1.0) errs_violations += 1;
      } else {
        ief_rejected += 1;
      }
    } else {
      on_policy += 1;
      on_reward += r.raw_reward;
    }
  }

  double diversity_total = 0.0;
  long diversity_groups = 0;
  long zero_pass_groups = 0;
  long rescued_groups = 0;
  for (const auto& [key, members] : groups) {
    std::vector<icpo::TokenSeq> gens;
    bool any_on_correct = false;
    bool has_correct_ief = false;
    for (const auto* r : members) {
      gens.push_back(r->generated);
      if (r->mode == "ief") {
        has_correct_ief = has_correct_ief || r->raw_reward >= 1.0;
      } else if (r->raw_reward >= 1.0) {
        any_on_correct = true;
      }
    }
    if (gens.size() >= 2) {
      diversity_total += icpo::pairwise_diversity(gens);
      diversity_groups += 1;
    }
    if (!any_on_correct) {
      zero_pass_groups += 1;
      if (has_correct_ief) rescued_groups += 1;
    }
  }

  std::cout << "records " << records.size() << "\n"
            << "steps " << (max_step + 1) << "\n"
            << "groups " << groups.size() << "\n"
            << "on_policy_trajectories " << on_policy << "\n"
            << "ief_accepted " << ief_in_group << "\n"
            << "ief_rejected " << ief_rejected << "\n"
            << "ief_accept_rate "
            << (ief_in_group + ief_rejected > 0
                    ? static_cast<double>(ief_in_group) / (ief_in_group + ief_rejected)
                    : 0.0)
            << "\n"
            << "errs_violations " << errs_violations << "\n"
            << "mean_on_policy_reward " << (on_policy > 0 ? on_reward / on_policy : 0.0) << "\n"
            << "mean_accepted_ief_reward " << (ief_in_group > 0 ? ief_reward / ief_in_group : 0.0)
            << "\n"
            << "mean_group_diversity "
            << (diversity_groups > 0 ? diversity_total / diversity_groups : 0.0) << "\n"
            << "zero_pass_groups " << zero_pass_groups << "\n"
            << "zero_pass_rescued_by_ief " << rescued_groups << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale mixed-policy GRPO laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = default_out_dir();
  std::optional<uint64_t> seed;
  std::optional<std::string> mode;

  auto* warmstart = app.add_subcommand("warmstart", "supervised warm start, saves a checkpoint");
  warmstart->add_option("--config", config_path, "config file")->required();
  warmstart->add_option("--seed", seed, "seed override");
  warmstart->add_option("--out", out_dir, "output directory");

  auto* train = app.add_subcommand("train", "run the training loop");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--mode", mode, "grpo|icpo|icpo-rs");
  train->add_option("--seed", seed, "seed override");
  train->add_option("--out", out_dir, "output directory");
  bool dump_rollouts = false;
  train->add_flag("--dump-rollouts", dump_rollouts, "write one record per trajectory");
  std::string resume;
  train->add_option("--resume", resume, "trainer state file to resume from");
  int halt_after = -1;
  train->add_option("--halt-after", halt_after, "stop this session after N steps");
  bool verbose = false;
  train->add_flag("--verbose", verbose, "progress lines on stderr");

  auto* eval = app.add_subcommand("eval", "paired 0-shot vs k-shot evaluation of a checkpoint");
  eval->add_option("--config", config_path, "config file")->required();
  std::string ckpt_path;
  eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  std::optional<int> k;
  eval->add_option("--k", k, "demonstrations per context");
  std::string seeds_text = "1,2,3,4,5";
  eval->add_option("--seeds", seeds_text, "comma-separated eval seeds");
  std::optional<int> n_tasks;
  eval->add_option("--tasks", n_tasks, "number of held-out tasks");
  bool as_json = false;
  eval->add_flag("--json", as_json, "emit the full report as JSON");

  auto* compare = app.add_subcommand("compare", "matched-seed side-by-side reward curves");
  compare->add_option("--config", config_path, "config file")->required();
  compare->add_option("--seed", seed, "seed override");
  compare->add_option("--out", out_dir, "output directory");

  auto* analyze = app.add_subcommand("analyze", "statistics over a rollout dump");
  std::string dump_path;
  analyze->add_option("--dump", dump_path, "rollout dump file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (warmstart->parsed()) return cmd_warmstart(config_path, seed, out_dir);
    if (train->parsed()) {
      return cmd_train(config_path, seed, mode, out_dir, dump_rollouts, resume, halt_after,
                       verbose);
    }
    if (eval->parsed()) return cmd_eval(config_path, ckpt_path, k, seeds_text, n_tasks, as_json);
    if (compare->parsed()) return cmd_compare(config_path, seed, out_dir);
    if (analyze->parsed()) return cmd_analyze(dump_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
