#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icpo/rng.hpp"

namespace icpo {

using TokenId = int32_t;
using TokenSeq = std::vector<TokenId>;

// Token-sequence transformations. One demonstration pair identifies which
// rule of a family produced it, which is what makes 1-shot conditioning
// informative.
enum class RuleKind : uint8_t {
  add_const,     // (x + c) mod V, token-wise
  permutation,   // x -> P[x], token-wise, P a fixed seeded permutation of [0, V)
  reverse,       // positions mirrored
  rotate_left,   // positions rotated left by r
};

struct Rule {
  RuleKind kind = RuleKind::add_const;
  int param = 0;               // c for add_const, r for rotate_left, perm seed index otherwise
  std::vector<TokenId> table;  // permutation lookup, empty for other kinds
  std::string name;
};

// Vocabulary layout plus the rule family. The three highest token ids are
// reserved markers; rules operate on raw ids so payload queries are filtered
// so their answers never collide with the markers.
struct RuleFamilyConfig {
  int vocab_size = 32;
  int query_len = 4;
  int answer_len = 4;
  std::vector<Rule> rules;

  TokenId qry_token() const { return vocab_size - 3; }
  TokenId eos_token() const { return vocab_size - 2; }
  TokenId sep_token() const { return vocab_size - 1; }
  int payload_tokens() const { return vocab_size - 3; }
  int rule_count() const { return static_cast<int>(rules.size()); }
};

// The default family: four additive shifts, two fixed permutations, reverse
// and rotate. Rule 0 doubles as the policy's habitual zero-shot behavior.
RuleFamilyConfig default_rule_family(int vocab_size = 32, int query_len = 4);

// Parses a comma-separated rule list like "add:1,perm:0,reverse,rotate:1".
std::vector<Rule> parse_rule_list(const std::string& spec, int vocab_size);

TokenSeq apply_rule(const Rule& rule, const TokenSeq& query, int vocab_size);

struct TaskInstance {
  int rule_id = 0;
  TokenSeq query;
  TokenSeq gold_answer;
};

struct Demonstration {
  TokenSeq query;
  TokenSeq answer;
  int rule_id = 0;
};

// Generates a task with a uniformly drawn rule whose gold answer stays inside
// the payload range. Identical seeds yield identical instances.
TaskInstance generate_task(uint64_t rng_seed, const RuleFamilyConfig& family);

// Same query distribution but with the rule pinned (warm-start habit data).
TaskInstance generate_task_with_rule(uint64_t rng_seed, const RuleFamilyConfig& family,
                                     int rule_id);

// True iff the tokens before the first EOS equal the gold answer exactly.
// Malformed answers return false, never throw.
bool verify(const TaskInstance& task, const TokenSeq& answer, TokenId eos_token);

// Demonstrations grouped by rule. Queries within a rule are distinct, use
// all-distinct payload tokens, and each (query, answer) pair identifies its
// rule uniquely within the family.
class DemoBank {
 public:
  DemoBank() = default;
  static DemoBank build(const RuleFamilyConfig& family, int demos_per_rule, uint64_t rng_seed);

  int per_rule_count(int rule_id) const;
  const Demonstration& demo(int rule_id, int index) const;
  bool contains_query(int rule_id, const TokenSeq& query) const;
  bool empty() const { return by_rule_.empty() || by_rule_[0].empty(); }

 private:
  std::vector<std::vector<Demonstration>> by_rule_;
};

// k distinct demonstrations for the given rule, deterministic under seed.
// Throws BankExhaustedError when the bank holds fewer than k.
std::vector<Demonstration> sample_demonstrations(const DemoBank& bank, int rule_id, int k,
                                                 uint64_t rng_seed);

// A fresh rule-matched demonstration (distinct-token query, unambiguous
// within the family) whose query differs from avoid_query. Used to format
// warm-start sequences on the fly.
Demonstration make_demonstration(const RuleFamilyConfig& family, int rule_id, uint64_t rng_seed,
                                 const TokenSeq& avoid_query);

// Few-shot context layout:
//   QRY d1.query SEP d1.answer EOS ... QRY query SEP
// The policy generates from after the final SEP. Length is
// sum_i (|d.query| + |d.answer| + 3) + |query| + 2.
TokenSeq build_expert_context(const std::vector<Demonstration>& demos, const TokenSeq& query,
                              const RuleFamilyConfig& family, int max_context);

// Zero-shot layout: QRY query SEP.
TokenSeq build_bare_context(const TokenSeq& query, const RuleFamilyConfig& family);

int expert_context_length(int k, int query_len, int answer_len);

}  // namespace icpo
