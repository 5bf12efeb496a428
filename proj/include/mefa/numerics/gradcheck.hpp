#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "mefa/numerics/tensor.hpp"

namespace mefa::num {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
  bool pass = false;
};

struct GradCheckOptions {
  double step = 1e-4;
  double tol = 1e-5;
  // Denominator floor: the error at a coordinate is |a−n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

/// Compares precomputed analytic gradients against central differences of `value`
/// taken with respect to every entry of `inputs`. `value` must read the inputs'
/// current values; it is evaluated with recording disabled.
GradCheckReport compare_gradients(const std::function<double()>& value,
                                  std::vector<Tensor<double>> inputs,
                                  const std::vector<std::vector<double>>& analytic,
                                  const GradCheckOptions& options);

/// Runs `loss` on a fresh tape, back-propagates, and checks the gradient of every
/// tensor in `inputs` by central differences.
GradCheckReport check_gradient(const std::function<Tensor<double>()>& loss,
                               std::vector<Tensor<double>> inputs,
                               const GradCheckOptions& options = {});

/// Single-input form: f(x) → scalar.
GradCheckReport check_gradient(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                               const Tensor<double>& x, const GradCheckOptions& options = {});

}  // namespace mefa::num
