#pragma once

// Central finite-difference oracle for reverse-mode gradients.
//
// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor);
// the floor keeps gradients that are zero up to roundoff from dominating.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "iftpp/ad/ops.hpp"
#include "iftpp/ad/tape.hpp"

namespace iftpp::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
};

inline double rel_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// `build(tape, vars)` must return a scalar Var computed from `vars`.
template <class Build>
GradCheck check_input_gradients(std::vector<ad::Tensor> inputs, Build build,
                                double step = 1e-5) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  ad::Var loss = build(tape, vars);
  tape.backward(loss);
  std::vector<ad::Tensor> analytic;
  for (const auto& v : vars) analytic.push_back(tape.grad(v));

  auto eval = [&](const std::vector<ad::Tensor>& xs) {
    ad::Tape t;
    std::vector<ad::Var> vs;
    for (const auto& x : xs) vs.push_back(t.constant(x));
    return build(t, vs).value().item();
  };

  GradCheck out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs;
      auto minus = inputs;
      plus[k][i] += step;
      minus[k][i] -= step;
      const double numeric = (eval(plus) - eval(minus)) / (2.0 * step);
      const double err = rel_error(analytic[k][i], numeric);
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = "input " + std::to_string(k) + "[" + std::to_string(i) +
                    "]: analytic " + std::to_string(analytic[k][i]) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  return out;
}

/// `loss(tape)` must read parameters through tape.parameter(); gradients of
/// every entry of every parameter in `params` are compared.
template <class Loss>
GradCheck check_parameter_gradients(ad::ParameterStore& params, Loss loss,
                                    double step = 1e-5, std::size_t max_entries = 40) {
  params.zero_grad();
  {
    ad::Tape tape;
    ad::Var l = loss(tape);
    tape.backward(l);
  }
  GradCheck out;
  for (auto& [name, p] : params) {
    const std::size_t n = p.value.size();
    const std::size_t stride = std::max<std::size_t>(1, n / max_entries);
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = p.value[i];
      p.value[i] = orig + step;
      double fp;
      {
        ad::Tape t;
        fp = loss(t).value().item();
      }
      p.value[i] = orig - step;
      double fm;
      {
        ad::Tape t;
        fm = loss(t).value().item();
      }
      p.value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double err = rel_error(p.grad[i], numeric);
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = name + "[" + std::to_string(i) + "]: analytic " + std::to_string(p.grad[i]) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

}  // namespace iftpp::testing
