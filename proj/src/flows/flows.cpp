#include "iftpp/flows/flows.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "iftpp/dist/special.hpp"
#include "iftpp/errors.hpp"

namespace iftpp::flows {
namespace {

using dist::log_sigmoid;
using dist::log_sum_exp;

constexpr double kInf = std::numeric_limits<double>::infinity();

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

}  // namespace

void DsfLayerParams::validate() const {
  const std::size_t k = weights.size();
  if (k == 0 || means.size() != k || scales.size() != k)
    throw DomainError("dsf layer: weights/means/scales must be non-empty and equally sized");
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!(weights[i] >= 0.0)) throw DomainError("dsf layer: negative weight");
    if (!(scales[i] > 0.0)) throw DomainError("dsf layer: non-positive scale");
    total += weights[i];
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw DomainError("dsf layer: weights sum to " + std::to_string(total));
}

void SosLayerParams::validate() const {
  if (components == 0 || a.size() != (degree + 1) * components)
    throw DomainError("sos layer: expected (R+1)*K = " +
                      std::to_string((degree + 1) * components) + " coefficients, got " +
                      std::to_string(a.size()));
  if (std::all_of(a.begin(), a.end(), [](double x) { return x == 0.0; }))
    throw DomainError("sos layer: all coefficients are zero (constant map)");
}

void BatchNormFlowParams::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale) || !std::isfinite(shift))
    throw DomainError("batch-norm flow layer: scale must be positive and finite");
}

void FlowStack::validate() const {
  for (const FlowLayer& layer : layers) std::visit([](const auto& l) { l.validate(); }, layer);
}

MapValue dsf_inverse(double x, const DsfLayerParams& p) {
  const std::size_t k = p.components();
  std::vector<double> lo(k), hi(k), der(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double u = (x - p.means[i]) / p.scales[i];
    const double lw = std::log(p.weights[i]);
    lo[i] = lw + log_sigmoid(u);
    hi[i] = lw + log_sigmoid(-u);
    der[i] = lo[i] + log_sigmoid(-u) - std::log(p.scales[i]);
  }
  const double log_s = log_sum_exp(lo);
  const double log_1ms = log_sum_exp(hi);
  return {log_s - log_1ms, log_sum_exp(der) - log_s - log_1ms};
}

MapValue sos_inverse(double x, const SosLayerParams& p) {
  const std::size_t r = p.degree;
  std::vector<double> powers(2 * r + 2, 1.0);
  for (std::size_t j = 1; j < powers.size(); ++j) powers[j] = powers[j - 1] * x;
  double value = p.a0;
  double deriv = 0.0;
  for (std::size_t k = 0; k < p.components; ++k) {
    double poly = 0.0;
    for (std::size_t i = 0; i <= r; ++i) {
      poly += p.coef(i, k) * powers[i];
      for (std::size_t j = 0; j <= r; ++j) {
        const std::size_t e = i + j + 1;
        value += p.coef(i, k) * p.coef(j, k) / static_cast<double>(e) * powers[e];
      }
    }
    deriv += poly * poly;
  }
  return {value, deriv > 0.0 ? std::log(deriv) : -kInf};
}

MapValue batchnorm_inverse(double x, const BatchNormFlowParams& p) {
  return {(x - p.shift) / p.scale, -std::log(p.scale)};
}

MapValue flow_inverse(double tau, const FlowStack& stack) {
  if (!(tau > 0.0)) throw DomainError("flow: tau must be positive");
  MapValue z{std::log(tau), -std::log(tau)};
  for (const FlowLayer& layer : stack.layers) {
    const MapValue step = std::visit(
        Overloaded{[&](const DsfLayerParams& l) { return dsf_inverse(z.value, l); },
                   [&](const SosLayerParams& l) {
                     l.validate();
                     return sos_inverse(z.value, l);
                   },
                   [&](const BatchNormFlowParams& l) { return batchnorm_inverse(z.value, l); }},
        layer);
    z.value = step.value;
    z.log_derivative += step.log_derivative;
  }
  return z;
}

double flow_logpdf(double tau, const FlowStack& stack) {
  const MapValue z = flow_inverse(tau, stack);
  return log_sigmoid(z.value) + log_sigmoid(-z.value) + z.log_derivative;
}

double flow_cdf(double tau, const FlowStack& stack) {
  if (!(tau > 0.0)) return 0.0;
  return dist::sigmoid(flow_inverse(tau, stack).value);
}

double solve_monotone(const std::function<double(double)>& cdf, double u,
                      const BisectionOptions& opts) {
  if (!(u > 0.0 && u < 1.0)) throw DomainError("bisection: target level must lie in (0, 1)");
  if (!(opts.tol > 0.0)) throw DomainError("bisection: tol must be positive");
  double lo = 1e-12, hi = 1.0;
  for (int i = 0; cdf(hi) < u; ++i) {
    if (i == opts.max_bracket_steps)
      throw DomainError("bisection: no upper bracket within " +
                        std::to_string(opts.max_bracket_steps) + " doublings");
    lo = hi;
    hi *= 2.0;
  }
  for (int i = 0; cdf(lo) > u; ++i) {
    if (i == opts.max_bracket_steps)
      throw DomainError("bisection: no lower bracket within " +
                        std::to_string(opts.max_bracket_steps) + " halvings");
    hi = lo;
    lo *= 0.5;
  }
  double mid = lo;
  for (int i = 0; i < opts.max_iterations; ++i) {
    mid = std::sqrt(lo) * std::sqrt(hi);
    const double f = cdf(mid);
    if (std::abs(f - u) < opts.tol) return mid;
    if (f < u)
      lo = mid;
    else
      hi = mid;
    if (!(hi > std::nextafter(lo, kInf))) break;
  }
  return mid;
}

double flow_sample(const FlowStack& stack, Rng& rng, const BisectionOptions& opts) {
  const double u = uniform_open(rng);
  return solve_monotone([&](double t) { return flow_cdf(t, stack); }, u, opts);
}

FlowDistribution::FlowDistribution(FlowStack stack, BisectionOptions opts)
    : stack_(std::move(stack)), opts_(opts) {
  stack_.validate();
}

double FlowDistribution::log_pdf(double tau) const { return flow_logpdf(tau, stack_); }
double FlowDistribution::cdf(double tau) const { return flow_cdf(tau, stack_); }
double FlowDistribution::sample(Rng& rng) const { return flow_sample(stack_, rng, opts_); }

// ---------------------------------------------------------------------------

void FullyNnParams::validate() const {
  const std::size_t d = hidden;
  if (d == 0 || w1.size() != d || w2.size() != d * d || w3.size() != d || b0.size() != d ||
      b2.size() != d || v.size() != d * context)
    throw DomainError("fullynn: parameter sizes do not match D=" + std::to_string(d) +
                      ", H=" + std::to_string(context));
}

void FullyNnParams::clip_nonnegative() {
  for (auto* w : {&w1, &w2, &w3})
    for (double& x : *w) x = std::max(x, 0.0);
}

FullyNnValue fullynn_eval(double tau, const FullyNnParams& p, std::span<const double> h) {
  if (h.size() != p.context) throw DomainError("fullynn: history vector has wrong length");
  const std::size_t d = p.hidden;
  std::vector<double> h1(d), d1(d);
  for (std::size_t i = 0; i < d; ++i) {
    double a = p.w1[i] * tau + p.b0[i];
    for (std::size_t j = 0; j < p.context; ++j) a += p.v[i * p.context + j] * h[j];
    h1[i] = std::tanh(a);
    d1[i] = (1.0 - h1[i] * h1[i]) * p.w1[i];
  }
  double a3 = p.b3, da3 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double a = p.b2[i], da = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      a += p.w2[i * d + j] * h1[j];
      da += p.w2[i * d + j] * d1[j];
    }
    const double h2 = std::tanh(a);
    a3 += p.w3[i] * h2;
    da3 += p.w3[i] * (1.0 - h2 * h2) * da;
  }
  return {dist::softplus(a3), dist::sigmoid(a3) * da3};
}

double fullynn_cumint(double tau, const FullyNnParams& p, std::span<const double> h) {
  if (!(tau >= 0.0)) throw DomainError("fullynn: tau must be nonnegative");
  return fullynn_eval(tau, p, h).cumulative;
}

double fullynn_logpdf(double tau, const FullyNnParams& p, std::span<const double> h) {
  if (!(tau >= 0.0)) throw DomainError("fullynn: tau must be nonnegative");
  const FullyNnValue v = fullynn_eval(tau, p, h);
  return std::log(v.intensity) - v.cumulative;
}

double fullynn_cumint_bound(const FullyNnParams& p) {
  double s = p.b3;
  for (double w : p.w3) s += std::abs(w);
  return dist::softplus(s);
}

FullyNnDistribution::FullyNnDistribution(FullyNnParams params, std::vector<double> history,
                                         BisectionOptions opts)
    : params_(std::move(params)), history_(std::move(history)), opts_(opts) {
  params_.validate();
  if (history_.size() != params_.context)
    throw DomainError("fullynn: history vector has wrong length");
}

double FullyNnDistribution::log_pdf(double tau) const {
  return fullynn_logpdf(tau, params_, history_);
}

double FullyNnDistribution::cdf(double tau) const {
  if (tau < 0.0) return 0.0;
  return -std::expm1(-fullynn_cumint(tau, params_, history_));
}

double FullyNnDistribution::sample(Rng& rng) const {
  const double u = uniform_open(rng);
  if (u <= cdf(0.0))
    throw DomainError("fullynn: sampled level falls on the mass the model puts below tau = 0");
  if (u >= -std::expm1(-fullynn_cumint_bound(params_)))
    throw DomainError("fullynn: sampled level exceeds the model's total mass");
  return solve_monotone([&](double t) { return cdf(t); }, u, opts_);
}

// ---------------------------------------------------------------------------

Intensity intensity_from_density(const std::function<double(double)>& log_pdf,
                                 const std::function<double(double)>& cdf, double tau) {
  const double f = cdf(tau);
  if (f >= 1.0 - 1e-12)
    throw SaturationError("intensity: CDF saturated at tau = " + std::to_string(tau));
  const double log_survival = std::log1p(-f);
  return {std::exp(log_pdf(tau) - log_survival), -log_survival};
}

double merge_cdfs(const std::function<double(double)>& f1,
                  const std::function<double(double)>& f2, double tau) {
  return merge_cdfs(f1(tau), f2(tau));
}

// ---------------------------------------------------------------------------

MapVars dsf_inverse(const ad::Var& x, const DsfVars& p) {
  const std::size_t k = p.means.shape().at(1);
  ad::Var u = (ad::repeat_cols(x, k) - p.means) * ad::exp(ad::neg(p.log_scales));
  ad::Var ls_pos = ad::log_sigmoid(u);
  ad::Var ls_neg = ad::log_sigmoid(ad::neg(u));
  ad::Var log_s = ad::logsumexp(p.log_weights + ls_pos);
  ad::Var log_1ms = ad::logsumexp(p.log_weights + ls_neg);
  ad::Var f = log_s - log_1ms;
  ad::Var der = ad::logsumexp(p.log_weights + ls_pos + ls_neg - p.log_scales) - log_s - log_1ms;
  return {f, der};
}

MapVars sos_inverse(const ad::Var& x, const SosVars& p) {
  const std::size_t r = p.degree;
  const std::size_t k = p.a.shape().at(1) / (r + 1);
  if (k * (r + 1) != p.a.shape().at(1))
    throw ad::ShapeError("sos_inverse: coefficient columns not divisible by R+1");
  ad::Var xs = ad::repeat_cols(x, k);
  std::vector<ad::Var> powers{xs};  // powers[j] = x^(j+1)
  for (std::size_t j = 1; j < 2 * r + 1; ++j) powers.push_back(powers.back() * xs);
  std::vector<ad::Var> coef;
  for (std::size_t i = 0; i <= r; ++i) coef.push_back(ad::slice_cols(p.a, i * k, (i + 1) * k));

  ad::Var poly = coef[0];
  for (std::size_t i = 1; i <= r; ++i) poly = poly + coef[i] * powers[i - 1];
  ad::Var deriv = ad::sum_rows(ad::square(poly));

  std::optional<ad::Var> integral;
  for (std::size_t e = 0; e <= 2 * r; ++e) {
    std::optional<ad::Var> c;
    for (std::size_t i = 0; i <= std::min(e, r); ++i) {
      if (e - i > r) continue;
      ad::Var term = coef[i] * coef[e - i];
      c = c ? *c + term : term;
    }
    ad::Var term = *c * powers[e] * (1.0 / static_cast<double>(e + 1));
    integral = integral ? *integral + term : term;
  }
  return {p.a0 + ad::sum_rows(*integral), ad::log(deriv)};
}

MapVars batchnorm_inverse(const ad::Var& x, const BatchNormFlowParams& p) {
  ad::Var value = (x - p.shift) * (1.0 / p.scale);
  ad::Var der = x.tape().constant(ad::Tensor(x.shape(), -std::log(p.scale)));
  return {value, der};
}

ad::Var sigmoid_base_logpdf(const MapVars& z2) {
  return ad::log_sigmoid(z2.value) + ad::log_sigmoid(ad::neg(z2.value)) + z2.log_derivative;
}

FullyNnOutput fullynn_logpdf(const ad::Var& tau, const ad::Var& pre, const FullyNnVars& p) {
  const std::size_t n = tau.size();
  const std::size_t d = p.w1.size();
  ad::Var a1 = ad::matmul(ad::reshape(tau, {n, 1}), ad::reshape(p.w1, {1, d})) + pre;
  ad::Var h1 = ad::tanh(a1);
  ad::Var d1 = (1.0 - ad::square(h1)) * p.w1;
  ad::Var w2t = ad::transpose(p.w2);
  ad::Var h2 = ad::tanh(ad::matmul(h1, w2t) + p.b2);
  ad::Var d2 = (1.0 - ad::square(h2)) * ad::matmul(d1, w2t);
  ad::Var a3 = ad::matmul(h2, p.w3) + p.b3;
  ad::Var da3 = ad::matmul(d2, p.w3);
  ad::Var cum = ad::softplus(a3);
  // The floor only guards exact underflow of saturated tanh units.
  ad::Var log_lambda = ad::log_sigmoid(a3) + ad::log(ad::clamp(da3, 1e-300, kInf));
  return {log_lambda - cum, cum};
}

}  // namespace iftpp::flows
