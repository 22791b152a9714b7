#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <boost/math/special_functions/expint.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include "doctest.h"
#include "iftpp/dist/gompertz.hpp"
#include "iftpp/dist/lognormal_mixture.hpp"
#include "iftpp/dist/special.hpp"
#include "iftpp/errors.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace iftpp;
using namespace iftpp::dist;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

MixtureParams random_mixture(std::size_t k, std::mt19937_64& rng, double mu_lo = -1.0,
                             double mu_hi = 1.0) {
  std::uniform_real_distribution<double> u(0.2, 1.0), m(mu_lo, mu_hi), s(0.3, 1.2);
  MixtureParams p;
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    p.weights.push_back(u(rng));
    total += p.weights.back();
    p.means.push_back(m(rng));
    p.scales.push_back(s(rng));
  }
  for (double& w : p.weights) w /= total;
  return p;
}

GompertzParams random_gompertz(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> a(0.2, 3.0), b(0.2, 3.0);
  return {a(rng), b(rng)};
}

// Packs scalar mixture parameters into one row of batched tape variables.
MixtureVars mixture_row(Tape& tape, const MixtureParams& p) {
  const std::size_t k = p.components();
  Tensor lw(Shape{1, k}), mu(Shape{1, k}), ls(Shape{1, k});
  for (std::size_t i = 0; i < k; ++i) {
    lw[i] = std::log(p.weights[i]);
    mu[i] = p.means[i];
    ls[i] = std::log(p.scales[i]);
  }
  return {tape.variable(lw), tape.variable(mu), tape.variable(ls)};
}

}  // namespace

TEST_CASE("lognormmix_logpdf examples") {
  const MixtureParams std_ln{{1.0}, {0.0}, {1.0}};
  CHECK(lognormmix_logpdf(1.0, std_ln) == doctest::Approx(-0.9189385332046727).epsilon(1e-14));
  const MixtureParams shifted{{1.0}, {1.0}, {1.0}};
  CHECK(lognormmix_logpdf(std::numbers::e, shifted) ==
        doctest::Approx(-1.0 - 0.9189385332046727).epsilon(1e-14));
  CHECK_THROWS_AS(lognormmix_logpdf(0.0, std_ln), DomainError);
  CHECK_THROWS_AS(lognormmix_logpdf(-1.0, std_ln), DomainError);
}

TEST_CASE("lognormmix_logpdf matches high-precision direct summation") {
  using Big = boost::multiprecision::cpp_bin_float_50;
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const MixtureParams p = random_mixture(3, rng);
    const double tau = 0.7;
    Big total = 0;
    const Big two_pi = 2 * boost::math::constants::pi<Big>();
    for (std::size_t k = 0; k < 3; ++k) {
      const Big lt = log(Big(tau));
      const Big d = (lt - Big(p.means[k])) / Big(p.scales[k]);
      total += Big(p.weights[k]) / (Big(tau) * Big(p.scales[k]) * sqrt(two_pi)) * exp(-d * d / 2);
    }
    const double expected = static_cast<double>(log(total));
    CHECK(lognormmix_logpdf(tau, p) == doctest::Approx(expected).epsilon(1e-13));
  }
}

TEST_CASE("lognormmix_cdf examples and quadrature oracle") {
  const MixtureParams std_ln{{1.0}, {0.0}, {1.0}};
  CHECK(lognormmix_cdf(1.0, std_ln) == doctest::Approx(0.5).epsilon(1e-15));
  const MixtureParams q{{1.0}, {0.3}, {0.7}};
  CHECK(std::abs(lognormmix_cdf(std::exp(0.3 + 10 * 0.7), q) - 1.0) < 1e-9);
  CHECK_THROWS_AS(lognormmix_cdf(0.0, q), DomainError);
  CHECK(lognormmix_cdf(0.0, q, NonPositiveTau::zero) == 0.0);

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const MixtureParams p = random_mixture(3, rng);
    for (double tau : {0.2, 1.0, 3.5}) {
      const double quad = testing::integrate_log_axis(
          [&](double t) { return std::exp(lognormmix_logpdf(t, p)); }, tau);
      CHECK(std::abs(lognormmix_cdf(tau, p) - quad) < 1e-6);
    }
  }
}

TEST_CASE("lognormmix_mean examples and Monte Carlo oracle") {
  CHECK(lognormmix_mean({{1.0}, {0.0}, {1.0}}) == doctest::Approx(1.6487212707001282));
  CHECK(lognormmix_mean({{0.5, 0.5}, {0.0, 0.0}, {1.0, 1.0}}) ==
        doctest::Approx(std::exp(0.5)).epsilon(1e-15));
  std::mt19937_64 prng(3);
  const MixtureParams p = random_mixture(4, prng, -0.5, 0.5);
  Rng rng(4);
  double total = 0.0;
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) total += lognormmix_sample(p, rng);
  CHECK(std::abs(total / n / lognormmix_mean(p) - 1.0) < 0.01);
}

TEST_CASE("lognormmix_sample") {
  Rng rng(5);
  SUBCASE("zero scale is deterministic") {
    const MixtureParams p{{1.0}, {0.4}, {0.0}};
    for (int i = 0; i < 10; ++i) CHECK(lognormmix_sample(p, rng) == std::exp(0.4));
  }
  SUBCASE("standard log-normal passes KS") {
    const MixtureParams p{{1.0}, {0.0}, {1.0}};
    std::vector<double> xs(100'000);
    for (double& x : xs) x = lognormmix_sample(p, rng);
    CHECK(testing::ks_statistic(xs, [&](double t) { return lognormmix_cdf(t, p); }) < 0.01);
  }
  SUBCASE("separated modes keep the weight ratio") {
    const MixtureParams p{{0.3, 0.7}, {-3.0, 3.0}, {0.2, 0.2}};
    int low = 0;
    const int n = 100'000;
    for (int i = 0; i < n; ++i) low += lognormmix_sample(p, rng) < 1.0 ? 1 : 0;
    CHECK(static_cast<double>(low) / n == doctest::Approx(0.3).epsilon(0.02));
  }
}

TEST_CASE("batched mixture log density agrees with the scalar form") {
  std::mt19937_64 rng(6);
  const MixtureParams p = random_mixture(5, rng);
  Tape tape;
  MixtureVars v = mixture_row(tape, p);
  Var lt = tape.constant(Tensor::vector({std::log(0.37)}));
  CHECK(lognormmix_logpdf(v, lt).value()[0] ==
        doctest::Approx(lognormmix_logpdf(0.37, p)).epsilon(1e-13));
}

TEST_CASE("K=1 mixture reproduces the single log-normal") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2, 2), s(0.2, 2), t(0.01, 20);
  for (int i = 0; i < 100; ++i) {
    const double mu = u(rng), sc = s(rng), tau = t(rng);
    const double direct = -std::log(tau * sc * std::sqrt(2 * std::numbers::pi)) -
                          std::pow(std::log(tau) - mu, 2) / (2 * sc * sc);
    CHECK(std::abs(lognormmix_logpdf(tau, {{1.0}, {mu}, {sc}}) - direct) < 1e-12);
  }
}

TEST_CASE("reparametrized sampling") {
  SUBCASE("K=1 equals plain sampling and d tau / d mu = tau") {
    Tape tape;
    MixtureVars v = mixture_row(tape, {{1.0}, {0.3}, {0.8}});
    ReparamNoise noise{Tensor(Shape{1, 1}, 0.25), Tensor::vector({-0.6})};
    Var tau = ad::exp(lognormmix_sample_reparam_log(v, noise, 1.0));
    CHECK(tau.value()[0] == doctest::Approx(std::exp(0.3 + 0.8 * -0.6)).epsilon(1e-14));
    tape.backward(ad::sum(tau));
    CHECK(tape.grad(v.means)[0] == doctest::Approx(tau.value()[0]).epsilon(1e-14));
  }
  SUBCASE("small temperature selects the hard argmax") {
    Tape tape;
    MixtureVars v = mixture_row(tape, {{0.2, 0.5, 0.3}, {-1.0, 0.0, 1.0}, {0.5, 0.5, 0.5}});
    ReparamNoise noise{Tensor(Shape{1, 3}, std::vector<double>{1.2, -0.3, 0.4}),
                       Tensor::vector({0.0})};
    // argmax of log w + g: log .2 + 1.2 = -0.41, log .5 - .3 = -0.99, log .3 + .4 = -0.80
    Var x = lognormmix_sample_reparam_log(v, noise, 1e-3);
    CHECK(x.value()[0] == doctest::Approx(-1.0));
  }
  SUBCASE("gradient of E[tau] w.r.t. means matches the analytic moment gradient") {
    const MixtureParams p{{0.25, 0.45, 0.3}, {-0.5, 0.1, 0.6}, {0.4, 0.6, 0.3}};
    const std::size_t n = 100'000;
    Tape tape;
    Tensor lw(Shape{n, 3}), mu(Shape{n, 3}), ls(Shape{n, 3});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < 3; ++k) {
        lw.at(i, k) = std::log(p.weights[k]);
        mu.at(i, k) = p.means[k];
        ls.at(i, k) = std::log(p.scales[k]);
      }
    MixtureVars v{tape.constant(lw), tape.variable(mu), tape.constant(ls)};
    Rng rng(8);
    Var tau = lognormmix_sample_reparam(v, rng, 1.0);
    tape.backward(ad::mean(tau));
    const Tensor g = tape.grad(v.means);
    for (std::size_t k = 0; k < 3; ++k) {
      double est = 0.0;
      for (std::size_t i = 0; i < n; ++i) est += g.at(i, k);  // mean over rows already applied
      const double analytic = p.weights[k] * std::exp(p.means[k] + 0.5 * p.scales[k] * p.scales[k]);
      CHECK(std::abs(est / analytic - 1.0) < 0.05);
    }
  }
}

TEST_CASE("gompertz and exponential examples") {
  CHECK(gompertz_logpdf(0.0, {2.5, 0.7}) == doctest::Approx(std::log(2.5)));
  CHECK(exponential_logpdf(0.5, {2.0}) == doctest::Approx(std::log(2.0) - 1.0));
  CHECK_THROWS_AS(gompertz_logpdf(1.0, {-1.0, 1.0}), DomainError);
  CHECK_THROWS_AS(exponential_logpdf(1.0, {0.0}), DomainError);
  CHECK_THROWS_AS(gompertz_logpdf(-0.1, {1.0, 1.0}), DomainError);
}

TEST_CASE("gompertz_mean against quadrature of tau p(tau)") {
  auto quad_mean = [](const GompertzParams& p) {
    return testing::integrate_log_axis(
        [&](double t) { return t * std::exp(gompertz_logpdf(t, p)); }, 1e4);
  };
  CHECK(gompertz_mean({1.0, 1.0}) == doctest::Approx(0.5963473623231940).epsilon(1e-12));
  CHECK(gompertz_mean({1.0, 1.0}) == doctest::Approx(quad_mean({1.0, 1.0})).epsilon(1e-9));
  std::mt19937_64 rng(9);
  for (int i = 0; i < 30; ++i) {
    const GompertzParams p = random_gompertz(rng);
    CHECK(std::abs(gompertz_mean(p) / quad_mean(p) - 1.0) < 1e-4);
  }
  double prev = gompertz_mean({0.1, 1.0});
  for (double a : {0.5, 1.0, 5.0, 20.0, 80.0}) {
    const double m = gompertz_mean({a, 1.0});
    CHECK(m < prev);
    prev = m;
  }
  CHECK(prev < 0.02);
}

TEST_CASE("exponential integral against an independent implementation") {
  for (double x : {-1e-6, -0.01, -0.5, -1.0, -3.7, -9.99, -10.0, -10.01, -25.0, -80.0, 0.3, 5.0, 50.0}) {
    CAPTURE(x);
    CHECK(expint_ei(x) == doctest::Approx(boost::math::expint(x)).epsilon(1e-10));
  }
}

TEST_CASE("every family normalises and has a monotone CDF from 0 to 1") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const MixtureParams mix = random_mixture(4, rng);
    const MixtureParams single = random_mixture(1, rng);
    const GompertzParams gom = random_gompertz(rng);
    const ExponentialParams ex{std::uniform_real_distribution<double>(0.2, 5.0)(rng)};
    const LogNormalMixture d_mix(mix), d_single(single);
    const Gompertz d_gom(gom);
    const Exponential d_ex(ex);
    for (const TimeDistribution* d :
         std::vector<const TimeDistribution*>{&d_mix, &d_single, &d_gom, &d_ex}) {
      const double mass = testing::total_mass([&](double t) { return d->log_pdf(t); });
      CHECK(std::abs(mass - 1.0) < 1e-6);
      double prev = 0.0;
      for (double x = -30.0; x <= 30.0; x += 0.25) {
        const double f = d->cdf(std::exp(x));
        CHECK(f >= prev);
        prev = f;
      }
      CHECK(d->cdf(1e-300) < 1e-12);
      CHECK(d->cdf(1e30) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("sampling passes KS for every family") {
  Rng rng(11);
  const std::size_t n = 100'000;
  const LogNormalMixture mix({{0.3, 0.7}, {-1.0, 0.8}, {0.5, 0.3}});
  const Gompertz gom({0.6, 1.4});
  const Exponential ex({2.5});
  for (const TimeDistribution* d : std::vector<const TimeDistribution*>{&mix, &gom, &ex}) {
    std::vector<double> xs(n);
    for (double& x : xs) x = d->sample(rng);
    CHECK(testing::ks_statistic(xs, [&](double t) { return d->cdf(t); }) < 0.01);
  }
}

TEST_CASE("density gradients w.r.t. parameters match finite differences") {
  std::mt19937_64 rng(12);
  const std::vector<double> taus = {0.05, 0.4, 1.3, 4.0};
  for (int trial = 0; trial < 10; ++trial) {
    const MixtureParams p = random_mixture(3, rng);
    std::vector<Tensor> inputs(3, Tensor(Shape{4, 3}));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < 3; ++k) {
        inputs[0].at(i, k) = std::log(p.weights[k]) + 0.1 * static_cast<double>(i);
        inputs[1].at(i, k) = p.means[k];
        inputs[2].at(i, k) = std::log(p.scales[k]);
      }
    // log-weights enter through log_softmax so the simplex constraint holds.
    auto mix = [&](Tape& t, const std::vector<Var>& v) {
      Var lt = t.constant(Tensor::vector({std::log(taus[0]), std::log(taus[1]), std::log(taus[2]),
                                          std::log(taus[3])}));
      return ad::sum(ad::exp(lognormmix_logpdf({ad::log_softmax(v[0]), v[1], v[2]}, lt)));
    };
    const auto r = testing::check_input_gradients(inputs, mix);
    CAPTURE(r.worst);
    CHECK(r.max_rel_error < 1e-4);

    const GompertzParams g = random_gompertz(rng);
    auto gom = [&](Tape& t, const std::vector<Var>& v) {
      Var tau = t.constant(Tensor::vector(taus));
      return ad::sum(ad::exp(gompertz_logpdf(tau, v[0], v[1])));
    };
    const auto rg = testing::check_input_gradients(
        {Tensor::vector(std::vector<double>(4, std::log(g.alpha))), Tensor::scalar(g.beta)}, gom);
    CAPTURE(rg.worst);
    CHECK(rg.max_rel_error < 1e-4);

    auto ex = [&](Tape& t, const std::vector<Var>& v) {
      return ad::sum(ad::exp(exponential_logpdf(t.constant(Tensor::vector(taus)), v[0])));
    };
    const auto re = testing::check_input_gradients(
        {Tensor::vector({0.3, -0.2, 0.9, 0.1})}, ex);
    CHECK(re.max_rel_error < 1e-4);
  }
}

TEST_CASE("batched Gompertz density agrees with the scalar form") {
  Tape tape;
  Var tau = tape.constant(Tensor::vector({0.0, 0.3, 2.0}));
  Var la = tape.constant(Tensor::vector(std::vector<double>(3, std::log(1.7))));
  Var b = tape.constant(Tensor::scalar(0.6));
  Var lp = gompertz_logpdf(tau, la, b);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(lp.value()[i] == doctest::Approx(gompertz_logpdf(tau.value()[i], {1.7, 0.6})).epsilon(1e-13));
}
