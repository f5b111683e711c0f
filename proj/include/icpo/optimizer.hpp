#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "icpo/micro_policy.hpp"

namespace icpo {

struct AdamConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  uint64_t t = 0;

  void reset(size_t param_count) {
    m.assign(param_count, 0.0);
    v.assign(param_count, 0.0);
    t = 0;
  }
};

// Bias-corrected adaptive-moment update in place; bumps the checkpoint
// version. Throws NumericalError on non-finite gradients.
void adam_update(PolicyCheckpoint& ckpt, std::span<const double> grads, AdamState& state,
                 const AdamConfig& cfg);

}  // namespace icpo
