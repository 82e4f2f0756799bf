#pragma once

#include <cstdint>
#include <vector>

namespace dode {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;
  std::uint64_t skipped = 0;
};

/// Adam with bias correction, then decoupled decay p *= (1 - lr wd).
/// Returns false (and counts a skip) when any gradient entry is non-finite.
bool adamw_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& st, const AdamConfig& cfg);

/// ema <- rate ema + (1 - rate) params
void ema_update(std::vector<double>& ema, const std::vector<double>& params, double rate);

}  // namespace dode
