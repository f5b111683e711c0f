#include "icpo/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "icpo/errors.hpp"

namespace icpo {

namespace {

std::string trim(const std::string& s) {
  size_t begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  size_t end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

int to_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects an integer, got '" + value + "'");
  }
}

uint64_t to_u64(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return static_cast<uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects an unsigned integer, got '" + value + "'");
  }
}

double to_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects a number, got '" + value + "'");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("key '" + key + "' expects true|false, got '" + value + "'");
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"schema_version",
       [](TrainConfig&, const std::string& k, const std::string& v) {
         if (to_int(k, v) != kConfigSchemaVersion) {
           throw ConfigError("unsupported schema_version " + v + " (expected " +
                             std::to_string(kConfigSchemaVersion) + ")");
         }
       }},
      {"vocab_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.vocab_size = to_int(k, v); }},
      {"d_model", [](TrainConfig& c, const std::string& k, const std::string& v) { c.d_model = to_int(k, v); }},
      {"max_context", [](TrainConfig& c, const std::string& k, const std::string& v) { c.max_context = to_int(k, v); }},
      {"query_len", [](TrainConfig& c, const std::string& k, const std::string& v) { c.query_len = to_int(k, v); }},
      {"answer_len", [](TrainConfig& c, const std::string& k, const std::string& v) { c.answer_len = to_int(k, v); }},
      {"rules", [](TrainConfig& c, const std::string&, const std::string& v) { c.rules = v; }},
      {"demo_bank_per_rule", [](TrainConfig& c, const std::string& k, const std::string& v) { c.demo_bank_per_rule = to_int(k, v); }},
      {"k_demos", [](TrainConfig& c, const std::string& k, const std::string& v) { c.k_demos = to_int(k, v); }},
      {"default_rule", [](TrainConfig& c, const std::string& k, const std::string& v) { c.default_rule = to_int(k, v); }},
      {"batch_prompts", [](TrainConfig& c, const std::string& k, const std::string& v) { c.batch_prompts = to_int(k, v); }},
      {"group_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.group_size = to_int(k, v); }},
      {"n_off", [](TrainConfig& c, const std::string& k, const std::string& v) { c.n_off = to_int(k, v); }},
      {"max_gen_len", [](TrainConfig& c, const std::string& k, const std::string& v) { c.max_gen_len = to_int(k, v); }},
      {"temperature", [](TrainConfig& c, const std::string& k, const std::string& v) { c.temperature = to_double(k, v); }},
      {"t_total", [](TrainConfig& c, const std::string& k, const std::string& v) { c.t_total = to_int(k, v); }},
      {"mode", [](TrainConfig& c, const std::string&, const std::string& v) { c.mode = parse_mode(v); }},
      {"updates_per_batch", [](TrainConfig& c, const std::string& k, const std::string& v) { c.updates_per_batch = to_int(k, v); }},
      {"epsilon_clip", [](TrainConfig& c, const std::string& k, const std::string& v) { c.epsilon_clip = to_double(k, v); }},
      {"lambda_shape", [](TrainConfig& c, const std::string& k, const std::string& v) { c.lambda_shape = to_double(k, v); }},
      {"beta_kl", [](TrainConfig& c, const std::string& k, const std::string& v) { c.beta_kl = to_double(k, v); }},
      {"entropy_coef", [](TrainConfig& c, const std::string& k, const std::string& v) { c.entropy_coef = to_double(k, v); }},
      {"eps_std", [](TrainConfig& c, const std::string& k, const std::string& v) { c.eps_std = to_double(k, v); }},
      {"f_shaping", [](TrainConfig& c, const std::string& k, const std::string& v) { c.f_shaping = to_bool(k, v); }},
      {"delta", [](TrainConfig& c, const std::string& k, const std::string& v) { c.delta = to_double(k, v); }},
      {"alpha", [](TrainConfig& c, const std::string& k, const std::string& v) { c.alpha = to_double(k, v); }},
      {"lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.lr = to_double(k, v); }},
      {"adam_beta1", [](TrainConfig& c, const std::string& k, const std::string& v) { c.adam_beta1 = to_double(k, v); }},
      {"adam_beta2", [](TrainConfig& c, const std::string& k, const std::string& v) { c.adam_beta2 = to_double(k, v); }},
      {"adam_eps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.adam_eps = to_double(k, v); }},
      {"warm_start_steps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.warm_start_steps = to_int(k, v); }},
      {"warm_start_batch", [](TrainConfig& c, const std::string& k, const std::string& v) { c.warm_start_batch = to_int(k, v); }},
      {"warm_start_margin", [](TrainConfig& c, const std::string& k, const std::string& v) { c.warm_start_margin = to_double(k, v); }},
      {"warm_start_zero_shot_frac", [](TrainConfig& c, const std::string& k, const std::string& v) { c.warm_start_zero_shot_frac = to_double(k, v); }},
      {"eval_temperature", [](TrainConfig& c, const std::string& k, const std::string& v) { c.eval_temperature = to_double(k, v); }},
      {"eval_tasks", [](TrainConfig& c, const std::string& k, const std::string& v) { c.eval_tasks = to_int(k, v); }},
      {"eval_diversity_samples", [](TrainConfig& c, const std::string& k, const std::string& v) { c.eval_diversity_samples = to_int(k, v); }},
      {"eval_every", [](TrainConfig& c, const std::string& k, const std::string& v) { c.eval_every = to_int(k, v); }},
      {"seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); }},
  };
  return table;
}

}  // namespace

TrainConfig parse_config_text(const std::string& text, const std::string& origin) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  bool saw_schema = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    line_no += 1;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    if (key == "schema_version") saw_schema = true;
    it->second(cfg, key, value);
  }
  if (!saw_schema) throw ConfigError(origin + ": missing schema_version");
  cfg.validate();
  return cfg;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path);
}

std::string default_config_text() {
  const TrainConfig d;
  std::ostringstream out;
  out << "schema_version = " << kConfigSchemaVersion << "\n\n";
  out << "# model\n";
  out << "vocab_size = " << d.vocab_size << "\n";
  out << "d_model = " << d.d_model << "\n";
  out << "max_context = " << d.max_context << "\n\n";
  out << "# task family\n";
  out << "query_len = " << d.query_len << "\n";
  out << "answer_len = " << d.answer_len << "\n";
  out << "rules = " << d.rules << "\n";
  out << "demo_bank_per_rule = " << d.demo_bank_per_rule << "\n";
  out << "k_demos = " << d.k_demos << "\n";
  out << "default_rule = " << d.default_rule << "\n\n";
  out << "# rollouts and training loop\n";
  out << "batch_prompts = " << d.batch_prompts << "\n";
  out << "group_size = " << d.group_size << "\n";
  out << "n_off = " << d.n_off << "\n";
  out << "max_gen_len = " << d.max_gen_len << "\n";
  out << "temperature = " << d.temperature << "\n";
  out << "t_total = " << d.t_total << "\n";
  out << "mode = " << to_string(d.mode) << "\n";
  out << "updates_per_batch = " << d.updates_per_batch << "\n\n";
  out << "# objective\n";
  out << "epsilon_clip = " << d.epsilon_clip << "\n";
  out << "lambda_shape = " << d.lambda_shape << "\n";
  out << "beta_kl = " << d.beta_kl << "\n";
  out << "entropy_coef = " << d.entropy_coef << "\n";
  out << "eps_std = " << d.eps_std << "\n";
  out << "f_shaping = " << (d.f_shaping ? "true" : "false") << "\n\n";
  out << "# reward shaping\n";
  out << "delta = " << d.delta << "\n";
  out << "alpha = " << d.alpha << "\n\n";
  out << "# optimizer\n";
  out << "lr = " << d.lr << "\n";
  out << "adam_beta1 = " << d.adam_beta1 << "\n";
  out << "adam_beta2 = " << d.adam_beta2 << "\n";
  out << "adam_eps = " << d.adam_eps << "\n\n";
  out << "# warm start\n";
  out << "warm_start_steps = " << d.warm_start_steps << "\n";
  out << "warm_start_batch = " << d.warm_start_batch << "\n";
  out << "warm_start_margin = " << d.warm_start_margin << "\n";
  out << "warm_start_zero_shot_frac = " << d.warm_start_zero_shot_frac << "\n\n";
  out << "# evaluation\n";
  out << "eval_temperature = " << d.eval_temperature << "\n";
  out << "eval_tasks = " << d.eval_tasks << "\n";
  out << "eval_diversity_samples = " << d.eval_diversity_samples << "\n";
  out << "eval_every = " << d.eval_every << "\n\n";
  out << "seed = " << d.seed << "\n";
  return out.str();
}

}  // namespace icpo
