#include "iftpp/ad/adam.hpp"

#include <cmath>

namespace iftpp::ad {

void adam_step(ParameterStore& params, AdamState& state, const AdamOptions& opts) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opts.beta1, t);
  const double c2 = 1.0 - std::pow(opts.beta2, t);
  for (auto& [name, p] : params) {
    auto [mit, m_new] = state.m.try_emplace(name, Tensor::zeros_like(p.value));
    auto [vit, v_new] = state.v.try_emplace(name, Tensor::zeros_like(p.value));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * g;
      v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= opts.lr * mhat / (std::sqrt(vhat) + opts.eps);
    }
  }
}

double clip_grad_norm(ParameterStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, p] : params)
    for (double g : p.grad.values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& [_, p] : params)
      for (double& g : p.grad.values()) g *= scale;
  }
  return norm;
}

}  // namespace iftpp::ad
