#pragma once

#include <cstddef>
#include <vector>

#include "mefa/encoders/encoder.hpp"

namespace mefa::harness {

struct LambConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.0;
};

/// Moment buffers, one per parameter block.
struct LambState {
  LambConfig config;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

/// One LAMB update over every block, reading gradients from the tensors'
/// grad buffers (missing grads count as zero). Per block:
/// u = m̂/(√v̂+ε) + λ·w, φ = ‖w‖/‖u‖ (1 if either is 0), w ← w − lr·φ·u.
/// Throws DivergenceError, leaving parameters and state untouched, if any
/// gradient is non-finite.
template <typename T>
void lamb_step(std::vector<Tensor<T>>& params, LambState& state, double lr);

/// lr_start + (lr_end − lr_start)·step/total; steps past the end clamp to lr_end.
double lr_schedule(std::size_t step, std::size_t total_steps, double lr_start, double lr_end);

}  // namespace mefa::harness
