#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "icpo/errors.hpp"

namespace icpo {

// A value reference is either a tape node index or, with the high bit set,
// an index into the external parameter vector.
using Ref = uint32_t;
constexpr Ref kParamBit = 0x80000000u;

inline Ref param_ref(uint32_t param_index) { return kParamBit | param_index; }
inline bool is_param_ref(Ref r) { return (r & kParamBit) != 0; }
inline uint32_t ref_index(Ref r) { return r & ~kParamBit; }

// Reverse-mode tape over scalar primitives plus fused dot products.
//
// Scalar ops store their local partials at creation time, so the backward
// sweep is a single reverse pass over creation order (nodes are always
// created after their operands, which makes creation order a valid
// topological order). Fused dots keep the whole forward graph small enough
// that one trajectory's loss fits in a few hundred kilobytes.
//
// The tape reads parameters through a span captured at construction; the
// parameter vector must stay alive and unchanged for the tape's lifetime.
class Tape {
 public:
  explicit Tape(std::span<const double> params) : params_(params) {}

  void reset() {
    nodes_.clear();
    aux_.clear();
  }

  size_t size() const { return nodes_.size(); }

  double value(Ref r) const {
    return is_param_ref(r) ? params_[ref_index(r)] : nodes_[ref_index(r)].value;
  }

  // ---- scalar primitives ----

  Ref leaf(double v) { return push(Op::leaf, v, 0, 0, 0.0, 0.0); }

  Ref add(Ref a, Ref b) { return push(Op::binary, value(a) + value(b), a, b, 1.0, 1.0); }

  Ref sub(Ref a, Ref b) { return push(Op::binary, value(a) - value(b), a, b, 1.0, -1.0); }

  Ref mul(Ref a, Ref b) {
    const double av = value(a);
    const double bv = value(b);
    return push(Op::binary, av * bv, a, b, bv, av);
  }

  // x + c for a plain constant c.
  Ref add_const(Ref a, double c) { return push(Op::unary, value(a) + c, a, 0, 1.0, 0.0); }

  // c * x for a plain constant c.
  Ref scale(Ref a, double c) { return push(Op::unary, value(a) * c, a, 0, c, 0.0); }

  Ref neg(Ref a) { return push(Op::unary, -value(a), a, 0, -1.0, 0.0); }

  Ref exp(Ref a) {
    const double v = std::exp(value(a));
    return push(Op::unary, v, a, 0, v, 0.0);
  }

  // exp(x - shift) for a plain constant shift (softmax stabilization).
  Ref exp_shifted(Ref a, double shift) {
    const double v = std::exp(value(a) - shift);
    return push(Op::unary, v, a, 0, v, 0.0);
  }

  Ref log(Ref a) {
    const double x = value(a);
    return push(Op::unary, std::log(x), a, 0, 1.0 / x, 0.0);
  }

  Ref relu(Ref a) {
    const double x = value(a);
    return push(Op::unary, x > 0.0 ? x : 0.0, a, 0, x > 0.0 ? 1.0 : 0.0, 0.0);
  }

  Ref pow_const(Ref a, double p) {
    const double x = value(a);
    return push(Op::unary, std::pow(x, p), a, 0, p * std::pow(x, p - 1.0), 0.0);
  }

  // Clamp with pass-through gradient inside the interval, zero outside.
  Ref clamp(Ref a, double lo, double hi) {
    const double x = value(a);
    const double v = x < lo ? lo : (x > hi ? hi : x);
    return push(Op::unary, v, a, 0, (x >= lo && x <= hi) ? 1.0 : 0.0, 0.0);
  }

  // min(a, b); ties take a. Subgradient of the selected branch.
  Ref min(Ref a, Ref b) {
    const double av = value(a);
    const double bv = value(b);
    const bool take_a = av <= bv;
    return push(Op::binary, take_a ? av : bv, a, b, take_a ? 1.0 : 0.0, take_a ? 0.0 : 1.0);
  }

  // ---- fused range primitives ----
  // "Range" operands are n consecutive refs starting at a base ref, i.e. a
  // contiguous run of nodes or of parameters. Forward sums in index order.

  // Dot product of two contiguous ranges.
  Ref dot_range(Ref a_base, Ref b_base, uint32_t n) {
    double acc = 0.0;
    for (uint32_t i = 0; i < n; ++i) acc += value(a_base + i) * value(b_base + i);
    Node node;
    node.value = acc;
    node.grad = 0.0;
    node.a = a_base;
    node.b = b_base;
    node.n = n;
    node.op = Op::dot_range;
    nodes_.push_back(node);
    return static_cast<Ref>(nodes_.size() - 1);
  }

  // Sum of a contiguous range of nodes.
  Ref sum_range(Ref a_base, uint32_t n) {
    double acc = 0.0;
    for (uint32_t i = 0; i < n; ++i) acc += value(a_base + i);
    Node node;
    node.value = acc;
    node.grad = 0.0;
    node.a = a_base;
    node.b = 0;
    node.n = n;
    node.op = Op::sum_range;
    nodes_.push_back(node);
    return static_cast<Ref>(nodes_.size() - 1);
  }

  // Dot product of a contiguous range with a gathered (strided) operand.
  Ref dot_gather(Ref a_base, std::span<const Ref> b_refs) {
    const uint32_t n = static_cast<uint32_t>(b_refs.size());
    const uint32_t aux_base = static_cast<uint32_t>(aux_.size());
    aux_.insert(aux_.end(), b_refs.begin(), b_refs.end());
    double acc = 0.0;
    for (uint32_t i = 0; i < n; ++i) acc += value(a_base + i) * value(b_refs[i]);
    Node node;
    node.value = acc;
    node.grad = 0.0;
    node.a = a_base;
    node.b = aux_base;
    node.n = n;
    node.op = Op::dot_gather;
    nodes_.push_back(node);
    return static_cast<Ref>(nodes_.size() - 1);
  }

  // ---- backward ----

  // Accumulates d(seed * node)/d(param) into param_grads, which must have
  // one entry per parameter. Node gradients are scratch state; the tape can
  // be reset and reused afterwards.
  void backward(Ref loss, std::span<double> param_grads, double seed = 1.0) {
    if (is_param_ref(loss)) {
      param_grads[ref_index(loss)] += seed;
      return;
    }
    nodes_[ref_index(loss)].grad += seed;
    for (uint32_t i = static_cast<uint32_t>(nodes_.size()); i-- > 0;) {
      Node& node = nodes_[i];
      const double g = node.grad;
      if (g == 0.0) continue;
      switch (node.op) {
        case Op::leaf:
          break;
        case Op::unary:
          add_grad(node.a, node.da * g, param_grads);
          break;
        case Op::binary:
          add_grad(node.a, node.da * g, param_grads);
          add_grad(node.b, node.db * g, param_grads);
          break;
        case Op::dot_range:
          for (uint32_t k = 0; k < node.n; ++k) {
            add_grad(node.a + k, value(node.b + k) * g, param_grads);
            add_grad(node.b + k, value(node.a + k) * g, param_grads);
          }
          break;
        case Op::sum_range:
          for (uint32_t k = 0; k < node.n; ++k) add_grad(node.a + k, g, param_grads);
          break;
        case Op::dot_gather:
          for (uint32_t k = 0; k < node.n; ++k) {
            const Ref b = aux_[node.b + k];
            add_grad(node.a + k, value(b) * g, param_grads);
            add_grad(b, value(node.a + k) * g, param_grads);
          }
          break;
      }
    }
  }

 private:
  enum class Op : uint8_t { leaf, unary, binary, dot_range, sum_range, dot_gather };

  struct Node {
    double value = 0.0;
    double grad = 0.0;
    double da = 0.0;
    double db = 0.0;
    Ref a = 0;
    Ref b = 0;
    uint32_t n = 0;
    Op op = Op::leaf;
  };

  Ref push(Op op, double v, Ref a, Ref b, double da, double db) {
    Node node;
    node.value = v;
    node.grad = 0.0;
    node.a = a;
    node.b = b;
    node.da = da;
    node.db = db;
    node.op = op;
    nodes_.push_back(node);
    return static_cast<Ref>(nodes_.size() - 1);
  }

  void add_grad(Ref r, double g, std::span<double> param_grads) {
    if (is_param_ref(r)) {
      param_grads[ref_index(r)] += g;
    } else {
      nodes_[ref_index(r)].grad += g;
    }
  }

  std::span<const double> params_;
  std::vector<Node> nodes_;
  std::vector<Ref> aux_;
};

}  // namespace icpo
