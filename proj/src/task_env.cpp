#include "icpo/task_env.hpp"

#include <algorithm>

#include "icpo/errors.hpp"

namespace icpo {

namespace {

std::vector<TokenId> seeded_permutation(int vocab_size, uint64_t seed) {
  std::vector<TokenId> table(vocab_size);
  for (int i = 0; i < vocab_size; ++i) table[i] = i;
  Rng rng(seed);
  for (int i = vocab_size - 1; i > 0; --i) {
    const uint32_t j = rng.uniform_below(static_cast<uint32_t>(i + 1));
    std::swap(table[i], table[j]);
  }
  return table;
}

Rule make_perm_rule(int index, int vocab_size) {
  Rule rule;
  rule.kind = RuleKind::permutation;
  rule.param = index;
  rule.table = seeded_permutation(vocab_size, 0xb4c0ffeeull + static_cast<uint64_t>(index));
  rule.name = "perm:" + std::to_string(index);
  return rule;
}

}  // namespace

RuleFamilyConfig default_rule_family(int vocab_size, int query_len) {
  RuleFamilyConfig family;
  family.vocab_size = vocab_size;
  family.query_len = query_len;
  family.answer_len = query_len;
  family.rules = parse_rule_list("add:1,add:5,add:9,add:13,perm:0,perm:1,reverse,rotate:1",
                                 vocab_size);
  return family;
}

std::vector<Rule> parse_rule_list(const std::string& spec, int vocab_size) {
  std::vector<Rule> rules;
  size_t pos = 0;
  while (pos <= spec.size()) {
    size_t comma = spec.find(',', pos);
    if (comma == std::string::npos) comma = spec.size();
    const std::string item = spec.substr(pos, comma - pos);
    pos = comma + 1;
    if (item.empty()) continue;
    Rule rule;
    rule.name = item;
    if (item.rfind("add:", 0) == 0) {
      rule.kind = RuleKind::add_const;
      rule.param = std::stoi(item.substr(4));
    } else if (item.rfind("perm:", 0) == 0) {
      rule = make_perm_rule(std::stoi(item.substr(5)), vocab_size);
    } else if (item == "reverse") {
      rule.kind = RuleKind::reverse;
    } else if (item.rfind("rotate:", 0) == 0) {
      rule.kind = RuleKind::rotate_left;
      rule.param = std::stoi(item.substr(7));
    } else {
      throw ConfigError("unknown rule '" + item + "'");
    }
    rules.push_back(std::move(rule));
  }
  if (rules.empty()) throw ConfigError("rule family is empty");
  return rules;
}

TokenSeq apply_rule(const Rule& rule, const TokenSeq& query, int vocab_size) {
  const size_t n = query.size();
  TokenSeq out(n);
  switch (rule.kind) {
    case RuleKind::add_const:
      for (size_t i = 0; i < n; ++i) {
        out[i] = static_cast<TokenId>((query[i] + rule.param) % vocab_size);
      }
      break;
    case RuleKind::permutation:
      for (size_t i = 0; i < n; ++i) out[i] = rule.table[query[i]];
      break;
    case RuleKind::reverse:
      for (size_t i = 0; i < n; ++i) out[i] = query[n - 1 - i];
      break;
    case RuleKind::rotate_left:
      for (size_t i = 0; i < n; ++i) out[i] = query[(i + rule.param) % n];
      break;
  }
  return out;
}

namespace {

bool in_payload(const TokenSeq& seq, const RuleFamilyConfig& family) {
  for (TokenId t : seq) {
    if (t < 0 || t >= family.payload_tokens()) return false;
  }
  return true;
}

TokenSeq random_payload_query(Rng& rng, const RuleFamilyConfig& family, bool distinct_tokens) {
  TokenSeq query(family.query_len);
  if (distinct_tokens) {
    const auto picks = rng.sample_without_replacement(
        static_cast<uint32_t>(family.payload_tokens()), static_cast<uint32_t>(family.query_len));
    for (int i = 0; i < family.query_len; ++i) query[i] = static_cast<TokenId>(picks[i]);
  } else {
    for (int i = 0; i < family.query_len; ++i) {
      query[i] = static_cast<TokenId>(rng.uniform_below(static_cast<uint32_t>(family.payload_tokens())));
    }
  }
  return query;
}

TaskInstance make_task(Rng& rng, const RuleFamilyConfig& family, int rule_id,
                       bool distinct_tokens) {
  // Resample until the gold answer avoids the reserved marker ids.
  for (int attempt = 0; attempt < 256; ++attempt) {
    TaskInstance task;
    task.rule_id = rule_id;
    task.query = random_payload_query(rng, family, distinct_tokens);
    task.gold_answer = apply_rule(family.rules[rule_id], task.query, family.vocab_size);
    if (in_payload(task.gold_answer, family)) return task;
  }
  throw ConfigError("rule '" + family.rules[rule_id].name +
                    "' cannot produce payload-only answers");
}

}  // namespace

TaskInstance generate_task(uint64_t rng_seed, const RuleFamilyConfig& family) {
  if (family.rules.empty()) throw ConfigError("rule family is empty");
  Rng rng(rng_seed);
  const int rule_id = static_cast<int>(rng.uniform_below(static_cast<uint32_t>(family.rule_count())));
  return make_task(rng, family, rule_id, /*distinct_tokens=*/false);
}

TaskInstance generate_task_with_rule(uint64_t rng_seed, const RuleFamilyConfig& family,
                                     int rule_id) {
  if (rule_id < 0 || rule_id >= family.rule_count()) throw ConfigError("rule_id out of range");
  Rng rng(rng_seed);
  return make_task(rng, family, rule_id, /*distinct_tokens=*/false);
}

bool verify(const TaskInstance& task, const TokenSeq& answer, TokenId eos_token) {
  TokenSeq body;
  body.reserve(answer.size());
  for (TokenId t : answer) {
    if (t == eos_token) break;
    body.push_back(t);
  }
  return body == task.gold_answer;
}

namespace {

// Distinct-token query whose answer stays in the payload range and
// identifies the rule uniquely within the family.
Demonstration make_unambiguous_demo(Rng& rng, const RuleFamilyConfig& family, int rule_id,
                                    const TokenSeq* avoid_query) {
  for (int attempt = 0; attempt < 4096; ++attempt) {
    TokenSeq query = random_payload_query(rng, family, /*distinct_tokens=*/true);
    if (avoid_query != nullptr && query == *avoid_query) continue;
    TokenSeq answer = apply_rule(family.rules[rule_id], query, family.vocab_size);
    if (!in_payload(answer, family)) continue;
    bool ambiguous = false;
    for (int other = 0; other < family.rule_count() && !ambiguous; ++other) {
      if (other == rule_id) continue;
      if (apply_rule(family.rules[other], query, family.vocab_size) == answer) ambiguous = true;
    }
    if (ambiguous) continue;
    return Demonstration{std::move(query), std::move(answer), rule_id};
  }
  throw ConfigError("rule '" + family.rules[rule_id].name +
                    "' admits no disambiguating demonstrations");
}

}  // namespace

Demonstration make_demonstration(const RuleFamilyConfig& family, int rule_id, uint64_t rng_seed,
                                 const TokenSeq& avoid_query) {
  if (rule_id < 0 || rule_id >= family.rule_count()) throw ConfigError("rule_id out of range");
  Rng rng(rng_seed);
  return make_unambiguous_demo(rng, family, rule_id, &avoid_query);
}

DemoBank DemoBank::build(const RuleFamilyConfig& family, int demos_per_rule, uint64_t rng_seed) {
  DemoBank bank;
  bank.by_rule_.resize(family.rule_count());
  if (demos_per_rule <= 0) return bank;
  for (int rule_id = 0; rule_id < family.rule_count(); ++rule_id) {
    auto& demos = bank.by_rule_[rule_id];
    Rng rng(derive_seed(rng_seed, Stream::bank, static_cast<uint64_t>(rule_id)));
    int attempts = 0;
    while (static_cast<int>(demos.size()) < demos_per_rule) {
      if (++attempts > demos_per_rule * 256) {
        throw ConfigError("unable to build a disambiguating demo bank for rule '" +
                          family.rules[rule_id].name + "'");
      }
      Demonstration d = make_unambiguous_demo(rng, family, rule_id, nullptr);
      bool duplicate = false;
      for (const auto& existing : demos) {
        if (existing.query == d.query) {
          duplicate = true;
          break;
        }
      }
      if (duplicate) continue;
      demos.push_back(std::move(d));
    }
  }
  return bank;
}

int DemoBank::per_rule_count(int rule_id) const {
  if (rule_id < 0 || rule_id >= static_cast<int>(by_rule_.size())) return 0;
  return static_cast<int>(by_rule_[rule_id].size());
}

const Demonstration& DemoBank::demo(int rule_id, int index) const {
  return by_rule_[rule_id][index];
}

bool DemoBank::contains_query(int rule_id, const TokenSeq& query) const {
  if (rule_id < 0 || rule_id >= static_cast<int>(by_rule_.size())) return false;
  for (const auto& d : by_rule_[rule_id]) {
    if (d.query == query) return true;
  }
  return false;
}

std::vector<Demonstration> sample_demonstrations(const DemoBank& bank, int rule_id, int k,
                                                 uint64_t rng_seed) {
  if (k < 1) throw SizeError("k must be >= 1");
  const int available = bank.per_rule_count(rule_id);
  if (available < k) {
    throw BankExhaustedError("rule " + std::to_string(rule_id) + " holds " +
                             std::to_string(available) + " demos, need " + std::to_string(k));
  }
  Rng rng(rng_seed);
  const auto picks =
      rng.sample_without_replacement(static_cast<uint32_t>(available), static_cast<uint32_t>(k));
  std::vector<Demonstration> out;
  out.reserve(k);
  for (uint32_t p : picks) out.push_back(bank.demo(rule_id, static_cast<int>(p)));
  return out;
}

TokenSeq build_expert_context(const std::vector<Demonstration>& demos, const TokenSeq& query,
                              const RuleFamilyConfig& family, int max_context) {
  if (demos.empty()) throw SizeError("build_expert_context requires at least one demonstration");
  TokenSeq ctx;
  for (const auto& d : demos) {
    ctx.push_back(family.qry_token());
    ctx.insert(ctx.end(), d.query.begin(), d.query.end());
    ctx.push_back(family.sep_token());
    ctx.insert(ctx.end(), d.answer.begin(), d.answer.end());
    ctx.push_back(family.eos_token());
  }
  ctx.push_back(family.qry_token());
  ctx.insert(ctx.end(), query.begin(), query.end());
  ctx.push_back(family.sep_token());
  if (static_cast<int>(ctx.size()) > max_context) {
    throw ContextOverflowError("expert context length " + std::to_string(ctx.size()) +
                               " exceeds max context " + std::to_string(max_context));
  }
  return ctx;
}

TokenSeq build_bare_context(const TokenSeq& query, const RuleFamilyConfig& family) {
  TokenSeq ctx;
  ctx.reserve(query.size() + 2);
  ctx.push_back(family.qry_token());
  ctx.insert(ctx.end(), query.begin(), query.end());
  ctx.push_back(family.sep_token());
  return ctx;
}

int expert_context_length(int k, int query_len, int answer_len) {
  return k * (query_len + answer_len + 3) + query_len + 2;
}

}  // namespace icpo
