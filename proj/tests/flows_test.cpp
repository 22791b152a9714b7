#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "iftpp/dist/gompertz.hpp"
#include "iftpp/dist/lognormal_mixture.hpp"
#include "iftpp/dist/special.hpp"
#include "iftpp/errors.hpp"
#include "iftpp/flows/flows.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace iftpp;
using namespace iftpp::flows;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

DsfLayerParams random_dsf(std::size_t k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> w(0.1, 1.0), m(-2.0, 2.0), s(0.3, 2.0);
  DsfLayerParams p;
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    p.weights.push_back(w(rng));
    total += p.weights.back();
    p.means.push_back(m(rng));
    p.scales.push_back(s(rng));
  }
  for (double& x : p.weights) x /= total;
  return p;
}

SosLayerParams random_sos(std::size_t r, std::size_t k, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.3);
  SosLayerParams p{r, k, std::vector<double>((r + 1) * k), n(rng)};
  for (std::size_t i = 0; i < p.a.size(); ++i) p.a[i] = n(rng);
  for (std::size_t j = 0; j < k; ++j) p.a[j] += 1.0 / std::sqrt(static_cast<double>(k));
  return p;
}

BatchNormFlowParams random_bn(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> b(-1.0, 1.0), a(0.5, 2.0);
  return {b(rng), a(rng)};
}

// M parametric layers of one kind with batch-norm layers between them.
FlowStack random_stack(bool dsf, int depth, std::mt19937_64& rng) {
  FlowStack s;
  for (int m = 0; m < depth; ++m) {
    if (m > 0) s.layers.emplace_back(random_bn(rng));
    if (dsf)
      s.layers.emplace_back(random_dsf(3, rng));
    else
      s.layers.emplace_back(random_sos(2, 2, rng));
  }
  return s;
}

double identity_logpdf(double tau) {
  const double x = std::log(tau);
  return dist::log_sigmoid(x) + dist::log_sigmoid(-x) - x;
}

FullyNnParams random_fullynn(std::size_t d, std::size_t h, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  FullyNnParams p;
  p.hidden = d;
  p.context = h;
  auto fill = [&](std::vector<double>& v, std::size_t size, double scale, bool positive) {
    v.resize(size);
    for (double& x : v) x = positive ? std::abs(n(rng)) * scale : n(rng) * scale;
  };
  fill(p.w1, d, 1.0, true);
  fill(p.w2, d * d, 1.0 / std::sqrt(static_cast<double>(d)), true);
  fill(p.w3, d, 1.0 / std::sqrt(static_cast<double>(d)), true);
  fill(p.v, d * h, 0.5, false);
  fill(p.b0, d, 1.0, false);
  fill(p.b2, d, 1.0, false);
  p.b3 = n(rng);
  return p;
}

}  // namespace

TEST_CASE("dsf_inverse examples") {
  const DsfLayerParams id{{1.0}, {0.0}, {1.0}};
  for (double x : {-5.0, -0.3, 0.0, 2.0, 7.5}) {
    const MapValue v = dsf_inverse(x, id);
    CHECK(v.value == doctest::Approx(x).epsilon(1e-12));
    CHECK(std::abs(v.log_derivative) < 1e-12);
  }
  for (double s : {0.1, 1.0, 9.0}) CHECK(std::abs(dsf_inverse(1.7, {{1.0}, {1.7}, {s}}).value) < 1e-15);
  // far outside the range where the sigmoid mixture rounds to 0 or 1
  CHECK(dsf_inverse(1e4, id).value == doctest::Approx(1e4).epsilon(1e-12));
  CHECK(dsf_inverse(-800.0, id).value == doctest::Approx(-800.0).epsilon(1e-12));
}

TEST_CASE("dsf and sos log-derivatives match finite differences") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> xs(-4.0, 4.0);
  const double h = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    const DsfLayerParams d = random_dsf(4, rng);
    const SosLayerParams s = random_sos(3, 2, rng);
    const double x = xs(rng);
    const double fd_dsf = (dsf_inverse(x + h, d).value - dsf_inverse(x - h, d).value) / (2 * h);
    CHECK(testing::rel_error(std::exp(dsf_inverse(x, d).log_derivative), fd_dsf) < 1e-5);
    const double fd_sos = (sos_inverse(x + h, s).value - sos_inverse(x - h, s).value) / (2 * h);
    CHECK(testing::rel_error(std::exp(sos_inverse(x, s).log_derivative), fd_sos) < 1e-5);
  }
}

TEST_CASE("sos_inverse examples") {
  const SosLayerParams id{0, 1, {1.0}, 0.0};
  for (double x : {-3.0, 0.0, 0.4, 11.0}) CHECK(sos_inverse(x, id).value == doctest::Approx(x));
  const SosLayerParams zero{2, 2, std::vector<double>(6, 0.0), 0.7};
  CHECK(sos_inverse(3.0, zero).value == 0.7);
  CHECK_THROWS_AS(zero.validate(), DomainError);
  CHECK_THROWS_AS(flow_logpdf(1.0, FlowStack{{zero}}), DomainError);
  CHECK_THROWS_AS((SosLayerParams{1, 2, {1.0, 2.0}, 0.0}).validate(), DomainError);
}

TEST_CASE("parametric inverse layers are increasing on random grids") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> xs(-10.0, 10.0);
  for (int trial = 0; trial < 20; ++trial) {
    const DsfLayerParams d = random_dsf(5, rng);
    const SosLayerParams s = random_sos(3, 4, rng);
    std::vector<double> grid(1000);
    for (double& x : grid) x = xs(rng);
    std::sort(grid.begin(), grid.end());
    for (std::size_t i = 1; i < grid.size(); ++i) {
      if (grid[i] == grid[i - 1]) continue;
      CHECK(dsf_inverse(grid[i - 1], d).value < dsf_inverse(grid[i], d).value);
      CHECK(sos_inverse(grid[i - 1], s).value <= sos_inverse(grid[i], s).value);
    }
  }
}

TEST_CASE("identity stack gives the logistic-in-log-time density") {
  const FlowStack empty;
  const FlowStack id_layers{{DsfLayerParams{{1.0}, {0.0}, {1.0}}, BatchNormFlowParams{0.0, 1.0},
                             SosLayerParams{0, 1, {1.0}, 0.0}}};
  CHECK(std::exp(flow_logpdf(1.0, empty)) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(std::exp(flow_logpdf(1.0, id_layers)) == doctest::Approx(0.25).epsilon(1e-12));
  for (double tau : {1e-3, 0.2, 3.0, 150.0}) {
    CHECK(flow_logpdf(tau, id_layers) == doctest::Approx(identity_logpdf(tau)).epsilon(1e-12));
    CHECK(flow_cdf(tau, id_layers) == doctest::Approx(dist::sigmoid(std::log(tau))).epsilon(1e-12));
  }
  CHECK_THROWS_AS(flow_logpdf(0.0, empty), DomainError);
  CHECK_THROWS_AS(flow_logpdf(-2.0, empty), DomainError);
}

TEST_CASE("flow densities integrate to one") {
  std::mt19937_64 rng(3);
  for (bool dsf : {true, false}) {
    for (int depth : {1, 2, 3}) {
      for (int trial = 0; trial < 3; ++trial) {
        const FlowStack s = random_stack(dsf, depth, rng);
        CAPTURE(dsf);
        CAPTURE(depth);
        const double mass = testing::total_mass([&](double t) { return flow_logpdf(t, s); }, -60, 60);
        CHECK(std::abs(mass - 1.0) < 1e-5);
        // CDF agrees with the integral of the density
        const double part = testing::integrate_log_axis(
            [&](double t) { return std::exp(flow_logpdf(t, s)); }, 2.0, -60);
        CHECK(std::abs(part - (flow_cdf(2.0, s) - flow_cdf(std::exp(-60.0), s))) < 1e-6);
      }
    }
  }
}

TEST_CASE("batched flow layers agree with the scalar forms and have correct gradients") {
  std::mt19937_64 rng(4);
  const std::vector<double> taus{0.05, 0.6, 1.0, 7.0};
  const std::size_t n = taus.size();
  for (bool dsf : {true, false}) {
    for (int depth : {1, 2, 3}) {
      CAPTURE(dsf);
      CAPTURE(depth);
      const FlowStack s = random_stack(dsf, depth, rng);
      std::vector<Tensor> inputs;
      std::vector<BatchNormFlowParams> bns;
      for (const FlowLayer& layer : s.layers) {
        if (const auto* d = std::get_if<DsfLayerParams>(&layer)) {
          const std::size_t k = d->components();
          Tensor lw(Shape{n, k}), mu(Shape{n, k}), ls(Shape{n, k});
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              lw.at(i, j) = std::log(d->weights[j]);
              mu.at(i, j) = d->means[j];
              ls.at(i, j) = std::log(d->scales[j]);
            }
          inputs.insert(inputs.end(), {lw, mu, ls});
        } else if (const auto* o = std::get_if<SosLayerParams>(&layer)) {
          Tensor a(Shape{n, o->a.size()}), a0(Shape{n}, o->a0);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < o->a.size(); ++j) a.at(i, j) = o->a[j];
          inputs.insert(inputs.end(), {a, a0});
        } else {
          bns.push_back(std::get<BatchNormFlowParams>(layer));
        }
      }
      auto logpdf = [&](Tape& t, const std::vector<Var>& v) {
        std::vector<double> lt(n);
        for (std::size_t i = 0; i < n; ++i) lt[i] = std::log(taus[i]);
        Var x = t.constant(Tensor::vector(lt));
        MapVars z{x, ad::neg(x)};
        std::size_t next = 0, bn = 0;
        for (const FlowLayer& layer : s.layers) {
          MapVars step;
          if (std::holds_alternative<DsfLayerParams>(layer)) {
            step = dsf_inverse(z.value, DsfVars{ad::log_softmax(v[next]), v[next + 1], v[next + 2]});
            next += 3;
          } else if (std::holds_alternative<SosLayerParams>(layer)) {
            step = sos_inverse(z.value, SosVars{2, v[next], v[next + 1]});
            next += 2;
          } else {
            step = batchnorm_inverse(z.value, bns[bn++]);
          }
          z = {step.value, z.log_derivative + step.log_derivative};
        }
        return sigmoid_base_logpdf(z);
      };
      {
        Tape t;
        std::vector<Var> vs;
        for (const auto& x : inputs) vs.push_back(t.constant(x));
        const Tensor lp = logpdf(t, vs).value();
        for (std::size_t i = 0; i < n; ++i)
          CHECK(lp[i] == doctest::Approx(flow_logpdf(taus[i], s)).epsilon(1e-10));
      }
      const auto r = testing::check_input_gradients(
          inputs, [&](Tape& t, const std::vector<Var>& v) { return ad::sum(logpdf(t, v)); });
      CAPTURE(r.worst);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("flow sampling") {
  Rng rng(5);
  SUBCASE("identity stack passes KS against the analytic CDF") {
    const FlowDistribution d{FlowStack{}};
    std::vector<double> xs(100'000);
    for (double& x : xs) x = d.sample(rng);
    CHECK(testing::ks_statistic(xs, [](double t) { return dist::sigmoid(std::log(t)); }) < 0.01);
  }
  SUBCASE("random stacks pass KS and round trip within the tolerance") {
    std::mt19937_64 prng(6);
    for (bool dsf : {true, false}) {
      const FlowStack s = random_stack(dsf, 2, prng);
      const FlowDistribution d{s};
      std::vector<double> xs(20'000);
      for (double& x : xs) x = d.sample(rng);
      CHECK(testing::ks_statistic(xs, [&](double t) { return flow_cdf(t, s); }) < 0.015);
      for (int i = 0; i < 200; ++i) {
        const double u = uniform_open(rng);
        const double tau = solve_monotone([&](double t) { return flow_cdf(t, s); }, u);
        CHECK(std::abs(flow_cdf(tau, s) - u) < 1e-9);
      }
    }
  }
  SUBCASE("unreachable level reports a bracketing failure") {
    CHECK_THROWS_AS(solve_monotone([](double) { return 0.3; }, 0.5), DomainError);
    CHECK_THROWS_AS(solve_monotone([](double t) { return t / (1 + t); }, 1.5), DomainError);
  }
}

TEST_CASE("fullynn intensity is the exact derivative of the cumulative intensity") {
  std::mt19937_64 rng(7);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const FullyNnParams p = random_fullynn(16, 3, rng);
    const std::vector<double> ctx{0.3, -0.2, 1.1};
    for (double tau : {0.01, 0.5, 2.0, 9.0}) {
      const double fd = (fullynn_cumint(tau + h, p, ctx) - fullynn_cumint(tau - h, p, ctx)) / (2 * h);
      CHECK(testing::rel_error(fullynn_eval(tau, p, ctx).intensity, fd) < 1e-5);
    }
  }
}

TEST_CASE("fullynn deficiencies") {
  std::mt19937_64 rng(8);
  const std::vector<double> ctx{-0.4, 0.9};
  for (int trial = 0; trial < 20; ++trial) {
    const FullyNnParams p = random_fullynn(64, 2, rng);
    const double lambda0 = fullynn_cumint(0.0, p, ctx);
    CHECK(lambda0 > 0.0);
    const double bound = fullynn_cumint_bound(p);
    CHECK(fullynn_cumint(1e12, p, ctx) <= bound);
    for (double x = -8.0; x < 8.0; x += 0.1) CHECK(fullynn_eval(std::exp(x), p, ctx).intensity >= 0.0);
    const double mass = testing::integrate_log_axis(
        [&](double t) { return std::exp(fullynn_logpdf(t, p, ctx)); }, 1e6, -60);
    CHECK(mass < 1.0);
    CHECK(mass <= std::exp(-lambda0) + 1e-9);
  }
}

TEST_CASE("fullynn negative weights are clipped") {
  std::mt19937_64 rng(9);
  FullyNnParams p = random_fullynn(4, 1, rng);
  p.w1[0] = -1.0;
  p.w2[5] = -0.5;
  p.w3[3] = -2.0;
  p.clip_nonnegative();
  CHECK(p.w1[0] == 0.0);
  CHECK(p.w2[5] == 0.0);
  CHECK(p.w3[3] == 0.0);
  std::mt19937_64 again(9);
  CHECK(p.b0 == random_fullynn(4, 1, again).b0);
}

TEST_CASE("batched fullynn agrees with the scalar form and has correct gradients") {
  std::mt19937_64 rng(10);
  const std::size_t d = 6, h = 2;
  const FullyNnParams p = random_fullynn(d, h, rng);
  const std::vector<double> taus{0.1, 0.8, 2.5};
  const std::vector<std::vector<double>> ctx{{0.1, 0.2}, {-0.5, 0.4}, {1.0, -1.0}};
  Tensor pre(Shape{taus.size(), d});
  for (std::size_t i = 0; i < taus.size(); ++i)
    for (std::size_t j = 0; j < d; ++j)
      pre.at(i, j) = p.b0[j] + p.v[j * h] * ctx[i][0] + p.v[j * h + 1] * ctx[i][1];
  std::vector<Tensor> inputs{pre,
                             Tensor::vector(p.w1),
                             Tensor(Shape{d, d}, p.w2),
                             Tensor::vector(p.w3),
                             Tensor::vector(p.b2),
                             Tensor::scalar(p.b3)};
  auto build = [&](Tape& t, const std::vector<Var>& v) {
    return fullynn_logpdf(t.constant(Tensor::vector(taus)), v[0], {v[1], v[2], v[3], v[4], v[5]});
  };
  {
    Tape t;
    std::vector<Var> vs;
    for (const auto& x : inputs) vs.push_back(t.constant(x));
    const FullyNnOutput out = build(t, vs);
    for (std::size_t i = 0; i < taus.size(); ++i) {
      CHECK(out.log_pdf.value()[i] == doctest::Approx(fullynn_logpdf(taus[i], p, ctx[i])).epsilon(1e-12));
      CHECK(out.cumulative.value()[i] == doctest::Approx(fullynn_cumint(taus[i], p, ctx[i])).epsilon(1e-12));
    }
  }
  const auto r = testing::check_input_gradients(
      inputs, [&](Tape& t, const std::vector<Var>& v) { return ad::sum(build(t, v).log_pdf); });
  CAPTURE(r.worst);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("intensity_from_density") {
  SUBCASE("exponential has constant intensity") {
    const dist::ExponentialParams e{1.7};
    for (double tau : {0.0, 0.3, 2.0, 10.0}) {
      const Intensity i = intensity_from_density(
          [&](double t) { return dist::exponential_logpdf(t, e); },
          [&](double t) { return dist::exponential_cdf(t, e); }, tau);
      CHECK(i.lambda == doctest::Approx(1.7).epsilon(1e-9));
      CHECK(i.cumulative == doctest::Approx(1.7 * tau).epsilon(1e-9));
    }
  }
  SUBCASE("gompertz intensity at zero is alpha") {
    const dist::GompertzParams g{0.8, 1.3};
    const Intensity i = intensity_from_density(
        [&](double t) { return dist::gompertz_logpdf(t, g); },
        [&](double t) { return dist::gompertz_cdf(t, g); }, 0.0);
    CHECK(i.lambda == doctest::Approx(0.8).epsilon(1e-14));
    CHECK(i.cumulative == 0.0);
  }
  SUBCASE("mixture cumulative intensity equals the integral of the intensity") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0), s(0.3, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
      const dist::MixtureParams m{{0.2, 0.5, 0.3}, {u(rng), u(rng), u(rng)}, {s(rng), s(rng), s(rng)}};
      auto lp = [&](double t) { return dist::lognormmix_logpdf(t, m); };
      auto cdf = [&](double t) { return dist::lognormmix_cdf(t, m); };
      for (double tau : {0.3, 1.5, 4.0}) {
        const double quad = testing::integrate_log_axis(
            [&](double t) { return intensity_from_density(lp, cdf, t).lambda; }, tau);
        CHECK(std::abs(intensity_from_density(lp, cdf, tau).cumulative - quad) < 1e-5);
      }
    }
  }
  SUBCASE("saturated CDF is an error") {
    CHECK_THROWS_AS(intensity_from_density([](double) { return -50.0; },
                                           [](double) { return 1.0 - 1e-13; }, 3.0),
                    SaturationError);
  }
}

TEST_CASE("merge_cdfs") {
  CHECK(merge_cdfs(0.5, 0.5) == 0.75);
  for (double f : {0.0, 0.2, 0.9, 1.0}) CHECK(merge_cdfs(f, 0.0) == f);

  auto f1 = [](double t) { return dist::exponential_cdf(t, {0.7}); };
  auto f2 = [](double t) { return dist::exponential_cdf(t, {2.1}); };
  double prev = 0.0;
  for (double x = -20.0; x < 20.0; x += 0.5) {
    const double m = merge_cdfs(f1, f2, std::exp(x));
    CHECK(m >= prev);
    prev = m;
  }
  CHECK(merge_cdfs(f1, f2, 1e-300) < 1e-12);
  CHECK(merge_cdfs(f1, f2, 1e6) == doctest::Approx(1.0));
  for (double t : {0.1, 0.5, 2.0})
    CHECK(merge_cdfs(f1, f2, t) == doctest::Approx(-std::expm1(-2.8 * t)).epsilon(1e-14));

  // first arrival of two superposed Poisson processes
  Rng rng(12);
  std::vector<double> first(100'000);
  for (double& x : first) {
    x = std::min(dist::exponential_sample({0.7}, rng), dist::exponential_sample({2.1}, rng));
  }
  CHECK(testing::ks_statistic(first, [&](double t) { return merge_cdfs(f1, f2, t); }) < 0.01);
}
