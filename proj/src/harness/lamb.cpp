#include "mefa/harness/lamb.hpp"

#include <cmath>
#include <iostream>

#include "mefa/errors.hpp"

namespace mefa::harness {

template <typename T>
void lamb_step(std::vector<Tensor<T>>& params, LambState& state, double lr) {
  if (!(lr >= 0.0)) throw InputError("lamb_step: learning rate must be non-negative");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("lamb_step: state does not match parameter list");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (state.m[b].size() != params[b].size()) throw DimensionError("lamb_step: moment shape mismatch");
    if (!params[b].has_grad()) continue;
    for (T g : params[b].grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw DivergenceError("lamb_step: non-finite gradient");
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  std::vector<double> u;
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& p = params[b];
    auto w = p.mutable_data();
    auto& m = state.m[b];
    auto& v = state.v[b];
    const bool has = p.has_grad();
    u.assign(p.size(), 0.0);
    double wn = 0.0, un = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = has ? static_cast<double>(p.grad()[i]) : 0.0;
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      u[i] = mh / (std::sqrt(vh) + c.eps) + c.weight_decay * static_cast<double>(w[i]);
      wn += static_cast<double>(w[i]) * w[i];
      un += u[i] * u[i];
    }
    wn = std::sqrt(wn);
    un = std::sqrt(un);
    const double trust = (wn > 0.0 && un > 0.0) ? wn / un : 1.0;
    for (std::size_t i = 0; i < p.size(); ++i) w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * trust * u[i]);
  }
}

template void lamb_step(std::vector<Tensor<float>>&, LambState&, double);
template void lamb_step(std::vector<Tensor<double>>&, LambState&, double);

double lr_schedule(std::size_t step, std::size_t total_steps, double lr_start, double lr_end) {
  if (total_steps == 0) return lr_end;
  if (step > total_steps) {
    std::cerr << "warning: schedule step " << step << " past total " << total_steps << ", using lr_end\n";
    return lr_end;
  }
  if (step == total_steps) return lr_end;
  return lr_start + (lr_end - lr_start) * static_cast<double>(step) / static_cast<double>(total_steps);
}

}  // namespace mefa::harness
