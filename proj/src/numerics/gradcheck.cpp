#include "mefa/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mefa::num {

GradCheckReport compare_gradients(const std::function<double()>& value,
                                  std::vector<Tensor<double>> inputs,
                                  const std::vector<std::vector<double>>& analytic,
                                  const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw InputError("check_gradient: step must be positive");
  if (analytic.size() != inputs.size()) throw DimensionError("check_gradient: one gradient per input required");
  NoGradScope<double> no_grad;
  GradCheckReport report;
  report.pass = true;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto x = inputs[t].mutable_data();
    if (analytic[t].size() != x.size()) throw DimensionError("check_gradient: gradient size mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + options.step;
      const double up = value();
      x[i] = saved - options.step;
      const double down = value();
      x[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw ProbeError("check_gradient: non-finite value probing input " + std::to_string(t) +
                         " coordinate " + std::to_string(i));
      }
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double err = std::abs(a - numeric) / denom;
      ++report.coordinates;
      if (err > report.max_rel_err || report.coordinates == 1) {
        report.max_rel_err = err;
        report.worst_tensor = t;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.pass = report.max_rel_err <= options.tol;
  return report;
}

GradCheckReport check_gradient(const std::function<Tensor<double>()>& loss,
                               std::vector<Tensor<double>> inputs, const GradCheckOptions& options) {
  std::vector<std::vector<double>> analytic;
  {
    for (auto& x : inputs) {
      x.zero_grad();
      x.set_requires_grad(true);
    }
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> out = loss();
    if (!std::isfinite(out.item())) throw ProbeError("check_gradient: non-finite value at the base point");
    tape.backward(out);
    for (auto& x : inputs) {
      if (x.has_grad()) {
        analytic.emplace_back(x.grad().begin(), x.grad().end());
      } else {
        analytic.emplace_back(x.size(), 0.0);
      }
      x.zero_grad();
    }
  }
  return compare_gradients([&] { return loss().item(); }, inputs, analytic, options);
}

GradCheckReport check_gradient(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                               const Tensor<double>& x, const GradCheckOptions& options) {
  return check_gradient([&] { return f(x); }, std::vector<Tensor<double>>{x}, options);
}

}  // namespace mefa::num
