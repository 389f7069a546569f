#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "kdnas/tensor.hpp"

namespace kdnas {

enum class Stencil { central3, central5 };

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries = 0;
  double tolerance = 0.0;
  bool passed = true;
};

// Compares reverse-mode gradients of a scalar function against central finite
// differences. `f` must rebuild its graph from `inputs` on every call. Relative
// error is |analytic - numeric| / max(|analytic|, |numeric|, scale_floor); the
// floor keeps entries that are zero up to roundoff from dominating the report.
// The five-point stencil has O(h^4) truncation error, so a larger h can be used
// and roundoff on small gradient entries shrinks accordingly.
template <class F>
GradCheckReport grad_check(F&& f, std::vector<Tensor> inputs, double h = 1e-5, double tolerance = 1e-4,
                           double scale_floor = 1e-6, Stencil stencil = Stencil::central3) {
  for (auto& t : inputs) t.zero_grad();
  Tensor out = f();
  out.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& t : inputs) analytic.push_back(t.grad());

  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto at = [&](double x) {
        values[i] = x;
        const double v = f().item();
        values[i] = saved;
        return v;
      };
      const double numeric = stencil == Stencil::central3
                                 ? (at(saved + h) - at(saved - h)) / (2.0 * h)
                                 : (8.0 * (at(saved + h) - at(saved - h)) - (at(saved + 2.0 * h) - at(saved - 2.0 * h))) / (12.0 * h);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), scale_floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      report.max_rel_error = std::max(report.max_rel_error, abs_err / denom);
      ++report.entries;
    }
  }
  for (auto& t : inputs) t.zero_grad();
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace kdnas
