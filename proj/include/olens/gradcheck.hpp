#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "olens/tensor.hpp"

// Central-difference verification of tape gradients. Runs in double precision;
// the loss function is re-evaluated with each parameter element nudged by ±h.

namespace olens {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;

  bool ok(double tol) const { return checked > 0 && max_rel_err < tol; }
};

struct NamedParam {
  std::string name;
  Tensor<double> tensor;
};

// loss_fn must rebuild the whole computation from the current parameter values
// each time it is called (it runs 2 * numel + 1 times).
inline GradCheckReport gradient_check(std::vector<NamedParam>& params,
                                      const std::function<Tensor<double>()>& loss_fn,
                                      double h = 1e-4) {
  GradCheckReport report;
  // Analytic pass.
  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params)
    analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());

  // Numeric pass, one element at a time.
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto vals = params[pi].tensor.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double up = loss_fn().item();
      vals[i] = orig - h;
      const double down = loss_fn().item();
      vals[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[pi].name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace olens
