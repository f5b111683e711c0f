#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "icpo/errors.hpp"
#include "icpo/tape.hpp"
#include "icpo/task_env.hpp"

namespace icpo {

// One embedding table, one causal self-attention layer, one feed-forward
// block, untied unembedding. Head count and feed-forward width are fixed
// constants so the parameter count is a pure function of (vocab_size,
// d_model, max_context).
struct PolicyArch {
  int vocab_size = 32;
  int d_model = 32;
  int max_context = 64;

  static constexpr int n_heads = 4;
  static constexpr int ffn_mult = 4;
  static constexpr double rms_eps = 1e-5;

  int head_dim() const { return d_model / n_heads; }
  int ffn_dim() const { return ffn_mult * d_model; }

  struct Layout {
    uint32_t tok_emb = 0;
    uint32_t pos_emb = 0;
    uint32_t wq = 0;
    uint32_t wk = 0;
    uint32_t wv = 0;
    uint32_t wo = 0;
    uint32_t w1 = 0;
    uint32_t b1 = 0;
    uint32_t w2 = 0;
    uint32_t b2 = 0;
    uint32_t wu = 0;
    uint32_t bu = 0;
    uint32_t total = 0;
  };

  Layout layout() const {
    Layout l;
    const uint32_t v = static_cast<uint32_t>(vocab_size);
    const uint32_t d = static_cast<uint32_t>(d_model);
    const uint32_t c = static_cast<uint32_t>(max_context);
    const uint32_t f = static_cast<uint32_t>(ffn_dim());
    uint32_t cursor = 0;
    l.tok_emb = cursor;
    cursor += v * d;
    l.pos_emb = cursor;
    cursor += c * d;
    l.wq = cursor;
    cursor += d * d;
    l.wk = cursor;
    cursor += d * d;
    l.wv = cursor;
    cursor += d * d;
    l.wo = cursor;
    cursor += d * d;
    l.w1 = cursor;
    cursor += f * d;
    l.b1 = cursor;
    cursor += f;
    l.w2 = cursor;
    cursor += d * f;
    l.b2 = cursor;
    cursor += d;
    l.wu = cursor;
    cursor += v * d;
    l.bu = cursor;
    cursor += v;
    l.total = cursor;
    return l;
  }

  uint32_t param_count() const { return layout().total; }

  bool operator==(const PolicyArch& other) const {
    return vocab_size == other.vocab_size && d_model == other.d_model &&
           max_context == other.max_context;
  }
};

// Immutable-by-convention parameter snapshot. The version counter advances
// only through optimizer updates.
struct PolicyCheckpoint {
  PolicyArch arch;
  uint64_t version = 0;
  std::vector<double> params;
};

PolicyCheckpoint init_checkpoint(const PolicyArch& arch, uint64_t rng_seed);

// Deep copy isolated from later updates to the source; keeps the source's
// version.
inline PolicyCheckpoint clone_frozen(const PolicyCheckpoint& ckpt) { return ckpt; }

struct TokenDistribution {
  std::vector<double> probs;
};

// -sum p ln p in nats, with 0 ln 0 taken as 0.
double token_entropy(const TokenDistribution& dist);

// Value-only engine with the same interface and arithmetic as Tape, used for
// sampling and behavior-logprob evaluation where no gradients are needed.
// Keeping the operation sequence identical to the tape path is what makes
// recorded behavior logprobs reproducible by the loss-side forward.
class ValueTape {
 public:
  explicit ValueTape(std::span<const double> params) : params_(params) {}

  void reset() { vals_.clear(); }
  size_t size() const { return vals_.size(); }

  double value(Ref r) const {
    return is_param_ref(r) ? params_[ref_index(r)] : vals_[ref_index(r)];
  }

  Ref leaf(double v) { return push(v); }
  Ref add(Ref a, Ref b) { return push(value(a) + value(b)); }
  Ref sub(Ref a, Ref b) { return push(value(a) - value(b)); }
  Ref mul(Ref a, Ref b) { return push(value(a) * value(b)); }
  Ref add_const(Ref a, double c) { return push(value(a) + c); }
  Ref scale(Ref a, double c) { return push(value(a) * c); }
  Ref neg(Ref a) { return push(-value(a)); }
  Ref exp(Ref a) { return push(std::exp(value(a))); }
  Ref exp_shifted(Ref a, double shift) { return push(std::exp(value(a) - shift)); }
  Ref log(Ref a) { return push(std::log(value(a))); }
  Ref relu(Ref a) {
    const double x = value(a);
    return push(x > 0.0 ? x : 0.0);
  }
  Ref pow_const(Ref a, double p) { return push(std::pow(value(a), p)); }
  Ref clamp(Ref a, double lo, double hi) {
    const double x = value(a);
    return push(x < lo ? lo : (x > hi ? hi : x));
  }
  Ref min(Ref a, Ref b) {
    const double av = value(a);
    const double bv = value(b);
    return push(av <= bv ? av : bv);
  }
  Ref dot_range(Ref a_base, Ref b_base, uint32_t n) {
    double acc = 0.0;
    for (uint32_t i = 0; i < n; ++i) acc += value(a_base + i) * value(b_base + i);
    return push(acc);
  }
  Ref sum_range(Ref a_base, uint32_t n) {
    double acc = 0.0;
    for (uint32_t i = 0; i < n; ++i) acc += value(a_base + i);
    return push(acc);
  }
  Ref dot_gather(Ref a_base, std::span<const Ref> b_refs) {
    double acc = 0.0;
    for (size_t i = 0; i < b_refs.size(); ++i) acc += value(a_base + static_cast<Ref>(i)) * value(b_refs[i]);
    return push(acc);
  }

 private:
  Ref push(double v) {
    vals_.push_back(v);
    return static_cast<Ref>(vals_.size() - 1);
  }

  std::span<const double> params_;
  std::vector<double> vals_;
};

// Softmax bookkeeping over one position's scaled logits.
struct SoftmaxRefs {
  Ref exp_base = 0;   // vocab_size consecutive exp(l_i - m) entries
  Ref sum = 0;        // their total
  Ref log_z = 0;      // log-partition: log(sum) + m
  double max_scaled = 0.0;
};

// Incremental causal evaluation of the policy over one engine. Feed tokens
// left to right; positions that only serve as context skip everything but
// the key/value projections (nothing downstream reads their outputs in a
// one-layer model).
template <class Engine>
class PolicyEval {
 public:
  PolicyEval(const PolicyArch& arch, Engine& engine, double temperature)
      : arch_(arch), layout_(arch.layout()), engine_(engine), temperature_(temperature) {
    if (!(temperature > 0.0)) throw NumericalError("temperature must be positive");
    k_cache_.reserve(static_cast<size_t>(arch.max_context) * arch.d_model);
    v_cache_.reserve(static_cast<size_t>(arch.max_context) * arch.d_model);
  }

  int position() const { return position_; }

  // Consumes one token. When need_logits is set, returns the base ref of
  // vocab_size consecutive temperature-scaled logits predicting the next
  // token.
  Ref feed(TokenId token, bool need_logits) {
    if (position_ >= arch_.max_context) {
      throw ContextOverflowError("sequence length exceeds max context " +
                                 std::to_string(arch_.max_context));
    }
    if (token < 0 || token >= arch_.vocab_size) throw NumericalError("token id out of range");
    const int d = arch_.d_model;
    const int pos = position_;

    // Token + positional embedding.
    x_.clear();
    for (int i = 0; i < d; ++i) {
      x_.push_back(engine_.add(param_ref(layout_.tok_emb + token * d + i),
                               param_ref(layout_.pos_emb + pos * d + i)));
    }
    rmsnorm(x_, xn_);

    const Ref k_base = matvec(layout_.wk, xn_);
    const Ref v_base = matvec(layout_.wv, xn_);
    for (int i = 0; i < d; ++i) {
      k_cache_.push_back(k_base + i);
      v_cache_.push_back(v_base + i);
    }
    position_ += 1;
    if (!need_logits) return 0;

    const int heads = PolicyArch::n_heads;
    const int hd = arch_.head_dim();
    const int t_len = position_;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

    const Ref q_base = matvec(layout_.wq, xn_);
    att_.clear();
    att_.resize(d);
    for (int h = 0; h < heads; ++h) {
      scores_.clear();
      for (int t = 0; t < t_len; ++t) {
        const Ref s = engine_.dot_range(q_base + h * hd, k_cache_[t * d + h * hd], hd);
        scores_.push_back(engine_.scale(s, inv_sqrt_hd));
      }
      double max_score = engine_.value(scores_[0]);
      for (int t = 1; t < t_len; ++t) max_score = std::max(max_score, engine_.value(scores_[t]));
      const Ref e_base = engine_.exp_shifted(scores_[0], max_score);
      for (int t = 1; t < t_len; ++t) engine_.exp_shifted(scores_[t], max_score);
      const Ref e_sum = engine_.sum_range(e_base, static_cast<uint32_t>(t_len));
      const Ref inv_sum = engine_.pow_const(e_sum, -1.0);
      const Ref w_base = engine_.mul(e_base, inv_sum);
      for (int t = 1; t < t_len; ++t) engine_.mul(e_base + t, inv_sum);
      for (int j = 0; j < hd; ++j) {
        gather_.clear();
        for (int t = 0; t < t_len; ++t) gather_.push_back(v_cache_[t * d + h * hd + j]);
        att_[h * hd + j] = engine_.dot_gather(w_base, gather_);
      }
    }

    const Ref ao_base = matvec_vec(layout_.wo, att_);
    x2_.clear();
    for (int i = 0; i < d; ++i) x2_.push_back(engine_.add(x_[i], ao_base + i));
    rmsnorm(x2_, x2n_);

    const int f = arch_.ffn_dim();
    const Ref h1_dot = matvec(layout_.w1, x2n_, f);
    const Ref h1_bias = engine_.add(h1_dot, param_ref(layout_.b1));
    for (int o = 1; o < f; ++o) engine_.add(h1_dot + o, param_ref(layout_.b1 + o));
    const Ref h1_act = engine_.relu(h1_bias);
    for (int o = 1; o < f; ++o) engine_.relu(h1_bias + o);

    const Ref h2_dot = engine_.dot_range(param_ref(layout_.w2), h1_act, static_cast<uint32_t>(f));
    for (int i = 1; i < d; ++i) {
      engine_.dot_range(param_ref(layout_.w2 + i * f), h1_act, static_cast<uint32_t>(f));
    }
    const Ref h2_bias = engine_.add(h2_dot, param_ref(layout_.b2));
    for (int i = 1; i < d; ++i) engine_.add(h2_dot + i, param_ref(layout_.b2 + i));

    x3_.clear();
    for (int i = 0; i < d; ++i) x3_.push_back(engine_.add(x2_[i], h2_bias + i));
    rmsnorm(x3_, x3n_);

    const int v = arch_.vocab_size;
    const Ref logit_dot = matvec(layout_.wu, x3n_, v);
    const Ref logit_bias = engine_.add(logit_dot, param_ref(layout_.bu));
    for (int o = 1; o < v; ++o) engine_.add(logit_dot + o, param_ref(layout_.bu + o));
    const Ref scaled = engine_.scale(logit_bias, 1.0 / temperature_);
    for (int o = 1; o < v; ++o) engine_.scale(logit_bias + o, 1.0 / temperature_);
    return scaled;
  }

  SoftmaxRefs softmax(Ref scaled_base) {
    const int v = arch_.vocab_size;
    SoftmaxRefs sm;
    sm.max_scaled = engine_.value(scaled_base);
    for (int i = 1; i < v; ++i) sm.max_scaled = std::max(sm.max_scaled, engine_.value(scaled_base + i));
    sm.exp_base = engine_.exp_shifted(scaled_base, sm.max_scaled);
    for (int i = 1; i < v; ++i) engine_.exp_shifted(scaled_base + i, sm.max_scaled);
    sm.sum = engine_.sum_range(sm.exp_base, static_cast<uint32_t>(v));
    sm.log_z = engine_.add_const(engine_.log(sm.sum), sm.max_scaled);
    return sm;
  }

  // Log-probability node for one vocabulary entry.
  Ref pick_logprob(Ref scaled_base, const SoftmaxRefs& sm, TokenId token) {
    return engine_.sub(scaled_base + token, sm.log_z);
  }

  // Normalized probabilities as plain values (sampling and metrics only).
  void probabilities(const SoftmaxRefs& sm, std::vector<double>& out) const {
    const int v = arch_.vocab_size;
    const double total = engine_.value(sm.sum);
    out.resize(v);
    for (int i = 0; i < v; ++i) out[i] = engine_.value(sm.exp_base + i) / total;
  }

 private:
  // y = W x for a weight block of `rows` rows stored row-major at `w_base`.
  // Produces `rows` consecutive refs and returns the first.
  Ref matvec(uint32_t w_base, const std::vector<Ref>& x, int rows = -1) {
    const int d = static_cast<int>(x.size());
    if (rows < 0) rows = arch_.d_model;
    const Ref first = engine_.dot_range(param_ref(w_base), x[0], static_cast<uint32_t>(d));
    for (int o = 1; o < rows; ++o) {
      engine_.dot_range(param_ref(w_base + o * d), x[0], static_cast<uint32_t>(d));
    }
    return first;
  }

  // Same, but the input refs may be non-consecutive.
  Ref matvec_vec(uint32_t w_base, const std::vector<Ref>& x) {
    const int d = static_cast<int>(x.size());
    const Ref first = engine_.dot_gather(param_ref(w_base), x);
    for (int o = 1; o < arch_.d_model; ++o) {
      engine_.dot_gather(param_ref(w_base + o * d), x);
    }
    return first;
  }

  // Scale-free rms normalization; outputs d consecutive refs in `out`.
  void rmsnorm(const std::vector<Ref>& x, std::vector<Ref>& out) {
    const int d = static_cast<int>(x.size());
    const Ref ss = engine_.dot_range(x[0], x[0], static_cast<uint32_t>(d));
    const Ref ms = engine_.scale(ss, 1.0 / static_cast<double>(d));
    const Ref shifted = engine_.add_const(ms, PolicyArch::rms_eps);
    const Ref inv_rms = engine_.pow_const(shifted, -0.5);
    out.clear();
    for (int i = 0; i < d; ++i) out.push_back(engine_.mul(x[i], inv_rms));
  }

  PolicyArch arch_;
  PolicyArch::Layout layout_;
  Engine& engine_;
  double temperature_;
  int position_ = 0;

  std::vector<Ref> k_cache_;
  std::vector<Ref> v_cache_;
  std::vector<Ref> x_, xn_, x2_, x2n_, x3_, x3n_, att_, scores_, gather_;
};

// Distribution over the next token after `context`, at the given temperature.
TokenDistribution next_token_distribution(const PolicyCheckpoint& ckpt, const TokenSeq& context,
                                          double temperature);

// Per-token log-probabilities of `generated` after `context`. Entry t is the
// log-probability of generated[t] given context plus generated[<t].
std::vector<double> sequence_logprobs(const PolicyCheckpoint& ckpt, const TokenSeq& context,
                                      const TokenSeq& generated, double temperature);

// Gradient of a tape-built scalar with respect to every parameter.
std::vector<double> loss_gradient(const PolicyCheckpoint& ckpt, Tape& tape, Ref loss);

// Versioned flat-array persistence: magic, arch tuple, version, then the
// parameters as little-endian 64-bit floats. Round-trips bit-exactly.
void save_checkpoint(const PolicyCheckpoint& ckpt, const std::string& path);
PolicyCheckpoint load_checkpoint(const std::string& path);
void append_checkpoint_bytes(const PolicyCheckpoint& ckpt, std::vector<uint8_t>& out);
PolicyCheckpoint read_checkpoint_bytes(std::span<const uint8_t> bytes, size_t& offset);

}  // namespace icpo
