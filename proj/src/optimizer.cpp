#include "icpo/optimizer.hpp"

#include <cmath>

#include "icpo/errors.hpp"

namespace icpo {

void adam_update(PolicyCheckpoint& ckpt, std::span<const double> grads, AdamState& state,
                 const AdamConfig& cfg) {
  if (grads.size() != ckpt.params.size()) throw SizeError("gradient size mismatch");
  if (state.m.size() != ckpt.params.size()) state.reset(ckpt.params.size());
  for (double g : grads) {
    if (!std::isfinite(g)) throw NumericalError("non-finite gradient");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < ckpt.params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    ckpt.params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
  ckpt.version += 1;
}

}  // namespace icpo
