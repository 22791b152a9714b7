#pragma once

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "iftpp/ad/ops.hpp"
#include "iftpp/dist/rng.hpp"
#include "iftpp/dist/time_distribution.hpp"

// Densities on (0, inf) defined through a chain of monotone maps
//   tau -> log tau -> f_M -> ... -> f_1 -> sigmoid -> z in (0, 1)
// with a Uniform(0, 1) base, plus the FullyNN cumulative-intensity network.

namespace iftpp::flows {

/// Value and log-derivative of a scalar monotone map.
struct MapValue {
  double value = 0.0;
  double log_derivative = 0.0;
};

struct DsfLayerParams {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> scales;

  std::size_t components() const { return weights.size(); }
  void validate() const;
};

/// Coefficients a(p, k) are stored p-major: a[p * K + k].
struct SosLayerParams {
  std::size_t degree = 0;  // R
  std::size_t components = 1;  // K
  std::vector<double> a;
  double a0 = 0.0;

  double coef(std::size_t p, std::size_t k) const { return a[p * components + k]; }
  /// Throws DomainError on a size mismatch or when every coefficient is 0.
  void validate() const;
};

/// Affine standardisation z -> (z - shift) / scale in the density direction.
struct BatchNormFlowParams {
  double shift = 0.0;
  double scale = 1.0;
  void validate() const;
};

using FlowLayer = std::variant<DsfLayerParams, SosLayerParams, BatchNormFlowParams>;

/// Layers listed in the order they are applied to log(tau).
struct FlowStack {
  std::vector<FlowLayer> layers;
  void validate() const;
};

/// sigma^-1(sum_k w_k sigma((x - mu_k) / s_k)).  The inner sum S is carried
/// as the pair (log S, log(1 - S)), so it never rounds to 0 or 1 and the map
/// stays a bijection of the real line.
MapValue dsf_inverse(double x, const DsfLayerParams& p);
/// a0 + sum_k integral_0^x (sum_p a(p, k) t^p)^2 dt.  The log-derivative is
/// -inf wherever every squared polynomial vanishes.
MapValue sos_inverse(double x, const SosLayerParams& p);
MapValue batchnorm_inverse(double x, const BatchNormFlowParams& p);

/// z_2 (the value fed to the terminal sigmoid) and the accumulated
/// log|dz_2/dtau|, including the -log(tau) of the log transform.
MapValue flow_inverse(double tau, const FlowStack& stack);
double flow_logpdf(double tau, const FlowStack& stack);
double flow_cdf(double tau, const FlowStack& stack);

struct BisectionOptions {
  double tol = 1e-9;
  int max_bracket_steps = 200;
  int max_iterations = 2000;
};

/// Bisection on log(tau) for F(tau) = u with F monotone increasing on
/// (0, inf).  The bracket starts at [1e-12, 1] and is doubled / halved.
/// Throws DomainError if no bracket is found.
double solve_monotone(const std::function<double(double)>& cdf, double u,
                      const BisectionOptions& opts = {});

/// Draws u ~ Uniform(0, 1) and solves flow_cdf(tau) = u.
double flow_sample(const FlowStack& stack, Rng& rng, const BisectionOptions& opts = {});

class FlowDistribution final : public dist::TimeDistribution {
 public:
  explicit FlowDistribution(FlowStack stack, BisectionOptions opts = {});
  double log_pdf(double tau) const override;
  double cdf(double tau) const override;
  double sample(Rng& rng) const override;
  const FlowStack& stack() const { return stack_; }

 private:
  FlowStack stack_;
  BisectionOptions opts_;
};

// ---------------------------------------------------------------------------
// FullyNN: Lambda(tau) = softplus(W3 tanh(W2 tanh(W1 tau + V h + b0) + b2) + b3)

struct FullyNnParams {
  std::size_t hidden = 64;   // D
  std::size_t context = 0;   // H
  std::vector<double> w1;    // [D]
  std::vector<double> w2;    // [D x D], row i feeds unit i of the second layer
  std::vector<double> w3;    // [D]
  std::vector<double> v;     // [D x H]
  std::vector<double> b0;    // [D]
  std::vector<double> b2;    // [D]
  double b3 = 0.0;

  void validate() const;
  /// Sets negative entries of w1, w2, w3 to 0.
  void clip_nonnegative();
};

struct FullyNnValue {
  double cumulative = 0.0;  // Lambda(tau)
  double intensity = 0.0;   // dLambda/dtau
};

/// Lambda and its exact tau-derivative (forward-mode tangent).  `h` has
/// length `context`.
FullyNnValue fullynn_eval(double tau, const FullyNnParams& p, std::span<const double> h);
double fullynn_cumint(double tau, const FullyNnParams& p, std::span<const double> h);
/// log(lambda) - Lambda.
double fullynn_logpdf(double tau, const FullyNnParams& p, std::span<const double> h);
/// Upper bound softplus(sum |w3| + b3) on Lambda.
double fullynn_cumint_bound(const FullyNnParams& p);

/// FullyNN conditioned on a fixed history vector.  Its CDF is
/// 1 - exp(-Lambda(tau)), which is positive at 0 and stays below 1.
class FullyNnDistribution final : public dist::TimeDistribution {
 public:
  FullyNnDistribution(FullyNnParams params, std::vector<double> history,
                      BisectionOptions opts = {});
  double log_pdf(double tau) const override;
  double cdf(double tau) const override;
  /// Inverse method on Lambda; throws DomainError when the drawn level is
  /// outside [Lambda(0), sup Lambda).
  double sample(Rng& rng) const override;

 private:
  FullyNnParams params_;
  std::vector<double> history_;
  BisectionOptions opts_;
};

// ---------------------------------------------------------------------------

class SaturationError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct Intensity {
  double lambda = 0.0;
  double cumulative = 0.0;
};

/// lambda = p / (1 - F), Lambda = -log(1 - F).  Throws SaturationError when
/// F >= 1 - 1e-12.
Intensity intensity_from_density(const std::function<double(double)>& log_pdf,
                                 const std::function<double(double)>& cdf, double tau);

/// CDF of the first event of two independent merged processes.
inline double merge_cdfs(double f1, double f2) { return f1 + f2 - f1 * f2; }
double merge_cdfs(const std::function<double(double)>& f1,
                  const std::function<double(double)>& f2, double tau);

// ---------------------------------------------------------------------------
// Batched, differentiable forms.  Every row carries its own layer parameters.

struct MapVars {
  ad::Var value;           // [N]
  ad::Var log_derivative;  // [N]
};

struct DsfVars {
  ad::Var log_weights;  // [N x K]
  ad::Var means;        // [N x K]
  ad::Var log_scales;   // [N x K]
};

struct SosVars {
  std::size_t degree = 0;
  ad::Var a;   // [N x (R+1)K], p-major
  ad::Var a0;  // [N]
};

MapVars dsf_inverse(const ad::Var& x, const DsfVars& p);
MapVars sos_inverse(const ad::Var& x, const SosVars& p);
MapVars batchnorm_inverse(const ad::Var& x, const BatchNormFlowParams& p);

/// log density from z_2 and the accumulated log-derivative (the terminal
/// sigmoid's Jacobian and the Uniform base are added here).
ad::Var sigmoid_base_logpdf(const MapVars& z2);

struct FullyNnVars {
  ad::Var w1;  // [D]
  ad::Var w2;  // [D x D]
  ad::Var w3;  // [D]
  ad::Var b2;  // [D]
  ad::Var b3;  // scalar
};

struct FullyNnOutput {
  ad::Var log_pdf;     // [N]
  ad::Var cumulative;  // [N]
};

/// `pre` is V h + b0 per row, [N x D].
FullyNnOutput fullynn_logpdf(const ad::Var& tau, const ad::Var& pre, const FullyNnVars& p);

}  // namespace iftpp::flows
