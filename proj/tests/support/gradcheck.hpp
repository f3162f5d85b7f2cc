#pragma once

// Central finite-difference gradient checker (64-bit). The analytic gradient
// of scalar_fn(inputs) is compared elementwise against
// (f(x+h) - f(x-h)) / 2h with relative tolerance `tol` and absolute floor
// 1e-6.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "errornet/autodiff.hpp"
#include "errornet/tensor.hpp"

namespace errornet::testref {

struct GradCheckResult {
  bool ok = true;
  double max_rel_err = 0.0;
  size_t elements = 0;
  std::string worst;
};

inline GradCheckResult grad_check(
    std::vector<Tensor<double>*> inputs,
    const std::function<Tensor<double>()>& scalar_fn, double h = 1e-5,
    double tol = 1e-3, double abs_floor = 1e-6) {
  for (auto* t : inputs) t->set_requires_grad(true);

  std::vector<std::vector<double>> analytic;
  {
    Graph<double> graph;
    Graph<double>::Scope scope(graph);
    Tensor<double> loss = scalar_fn();
    graph.backward(loss);
    for (auto* t : inputs) {
      if (t->has_grad())
        analytic.emplace_back(t->grad().begin(), t->grad().end());
      else
        analytic.emplace_back(t->numel(), 0.0);
      t->zero_grad();
    }
  }

  GradCheckResult res;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor<double>& t = *inputs[ti];
    auto data = t.data_mut();
    for (size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double lp = scalar_fn().item();
      data[i] = orig - h;
      const double lm = scalar_fn().item();
      data[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = analytic[ti][i];
      const double err = std::abs(fd - an);
      const double denom = std::max({std::abs(fd), std::abs(an), abs_floor});
      const double rel = err <= abs_floor ? 0.0 : err / denom;
      ++res.elements;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = "input " + std::to_string(ti) + " element " +
                    std::to_string(i) + ": analytic " + std::to_string(an) +
                    " vs fd " + std::to_string(fd);
      }
      if (rel > tol) res.ok = false;
    }
  }
  return res;
}

}  // namespace errornet::testref
