#include <doctest.h>

#include <cmath>
#include <vector>

#include "icpo/rng.hpp"
#include "icpo/tape.hpp"

using namespace icpo;

namespace {

// Central finite differences of a scalar function of the parameter vector.
template <class F>
std::vector<double> finite_difference(std::vector<double> params, F f, double h = 1e-5) {
  std::vector<double> grad(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    const double original = params[i];
    params[i] = original + h;
    const double up = f(params);
    params[i] = original - h;
    const double down = f(params);
    params[i] = original;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace

TEST_CASE("scalar ops propagate exact gradients") {
  std::vector<double> params = {0.5, -1.25, 2.0};
  Tape tape(params);

  // f = exp(p0 * p1) + log(p2) - p0
  const Ref prod = tape.mul(param_ref(0), param_ref(1));
  const Ref e = tape.exp(prod);
  const Ref lg = tape.log(param_ref(2));
  const Ref f = tape.sub(tape.add(e, lg), param_ref(0));

  const double expected = std::exp(0.5 * -1.25) + std::log(2.0) - 0.5;
  CHECK(tape.value(f) == doctest::Approx(expected).epsilon(1e-12));

  std::vector<double> grads(params.size(), 0.0);
  tape.backward(f, grads);
  CHECK(grads[0] == doctest::Approx(-1.25 * std::exp(-0.625) - 1.0).epsilon(1e-12));
  CHECK(grads[1] == doctest::Approx(0.5 * std::exp(-0.625)).epsilon(1e-12));
  CHECK(grads[2] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("quadratic loss gradient equals 2p") {
  std::vector<double> params = {0.3, -0.7, 1.1, 0.0};
  Tape tape(params);
  const Ref loss = tape.dot_range(param_ref(0), param_ref(0), 4);
  std::vector<double> grads(params.size(), 0.0);
  tape.backward(loss, grads);
  for (size_t i = 0; i < params.size(); ++i) {
    CHECK(grads[i] == doctest::Approx(2.0 * params[i]).epsilon(1e-12));
  }
}

TEST_CASE("constant loss has zero gradient") {
  std::vector<double> params = {0.3, -0.7};
  Tape tape(params);
  const Ref loss = tape.leaf(3.5);
  std::vector<double> grads(params.size(), 0.0);
  tape.backward(loss, grads);
  CHECK(grads[0] == 0.0);
  CHECK(grads[1] == 0.0);
}

TEST_CASE("fused dots match finite differences on a random composite") {
  Rng rng(123);
  std::vector<double> params(12);
  for (double& p : params) p = rng.uniform01() * 2.0 - 1.0;

  const auto eval = [](const std::vector<double>& p) {
    // mirror of the taped expression below, recomputed from scratch
    double dot = 0.0;
    for (int i = 0; i < 4; ++i) dot += p[i] * p[4 + i];
    double gathered = 0.0;
    const int idx[3] = {1, 7, 10};
    for (int i = 0; i < 3; ++i) gathered += p[8 + i] * p[idx[i]];
    double sum = 0.0;
    for (int i = 2; i < 6; ++i) sum += p[i];
    const double clamped = std::min(1.5, std::max(-1.5, dot));
    return std::exp(clamped) * gathered + std::pow(std::abs(sum) + 1.0, -0.5);
  };

  Tape tape(params);
  const Ref dot = tape.dot_range(param_ref(0), param_ref(4), 4);
  std::vector<Ref> gather_refs = {param_ref(1), param_ref(7), param_ref(10)};
  const Ref gathered = tape.dot_gather(param_ref(8), gather_refs);
  const Ref sum = tape.sum_range(param_ref(2), 4);
  const Ref clamped = tape.clamp(dot, -1.5, 1.5);
  // |sum| via relu pair keeps everything differentiable at the sampled point
  const Ref abs_sum = tape.add(tape.relu(sum), tape.relu(tape.neg(sum)));
  const Ref f = tape.add(tape.mul(tape.exp(clamped), gathered),
                         tape.pow_const(tape.add_const(abs_sum, 1.0), -0.5));

  CHECK(tape.value(f) == doctest::Approx(eval(params)).epsilon(1e-12));

  std::vector<double> grads(params.size(), 0.0);
  tape.backward(f, grads);
  const auto fd = finite_difference(params, eval);
  for (size_t i = 0; i < params.size(); ++i) {
    CHECK(grads[i] == doctest::Approx(fd[i]).epsilon(1e-6));
  }
}

TEST_CASE("min takes the subgradient of the selected branch") {
  std::vector<double> params = {2.0, 3.0};
  Tape tape(params);
  const Ref m = tape.min(param_ref(0), param_ref(1));
  CHECK(tape.value(m) == 2.0);
  std::vector<double> grads(params.size(), 0.0);
  tape.backward(m, grads);
  CHECK(grads[0] == 1.0);
  CHECK(grads[1] == 0.0);
}

TEST_CASE("backward accumulates across repeated use of one node") {
  std::vector<double> params = {0.7};
  Tape tape(params);
  const Ref x = tape.scale(param_ref(0), 2.0);
  const Ref f = tape.mul(x, x);  // (2p)^2 -> d/dp = 8p
  std::vector<double> grads(params.size(), 0.0);
  tape.backward(f, grads);
  CHECK(grads[0] == doctest::Approx(8.0 * 0.7).epsilon(1e-12));
}

TEST_CASE("tape reset allows reuse with gradient accumulation") {
  std::vector<double> params = {1.5};
  Tape tape(params);
  std::vector<double> grads(params.size(), 0.0);
  const Ref a = tape.mul(param_ref(0), param_ref(0));
  tape.backward(a, grads);
  tape.reset();
  const Ref b = tape.scale(param_ref(0), 3.0);
  tape.backward(b, grads);
  CHECK(grads[0] == doctest::Approx(2.0 * 1.5 + 3.0).epsilon(1e-12));
}
