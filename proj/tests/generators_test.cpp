#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "iftpp/data/sequence.hpp"
#include "iftpp/errors.hpp"
#include "iftpp/gen/generators.hpp"
#include "support/oracles.hpp"

using namespace iftpp;
using namespace iftpp::gen;
using namespace iftpp::testing;

namespace {

GeneratorSpec sized(std::string_view name, std::size_t n_seq, std::size_t n_ev, std::uint64_t seed = 1) {
  GeneratorSpec s = preset(name);
  s.n_sequences = n_seq;
  s.n_events = n_ev;
  s.seed = seed;
  return s;
}

std::vector<double> all_gaps(const std::vector<EventSequence>& seqs) {
  std::vector<double> out;
  for (const auto& s : seqs) {
    auto g = s.gaps();
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

double coefficient_of_variation(const std::vector<double>& xs) {
  const double m = sample_mean(xs);
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  return std::sqrt(v / (xs.size() - 1)) / m;
}

// Brute-force Hawkes intensity and compensator, summing over the full history.
double hawkes_lambda(const HawkesParams& p, const std::vector<double>& t, std::size_t n_before, double at) {
  double lam = p.mu;
  for (std::size_t i = 0; i < n_before; ++i)
    for (std::size_t j = 0; j < p.alpha.size(); ++j)
      lam += p.alpha[j] * p.beta[j] * std::exp(-p.beta[j] * (at - t[i]));
  return lam;
}

}  // namespace

TEST_CASE("all generated sequences are strictly increasing and positive") {
  for (const auto& name : preset_names()) {
    const auto seqs = generate(sized(name, 4, 500));
    REQUIRE(seqs.size() == 4);
    for (const auto& s : seqs) {
      CHECK(s.size() == 500);
      CHECK_NOTHROW(s.validate());
      for (double g : s.gaps()) CHECK(g > 0.0);
    }
  }
}

TEST_CASE("poisson mean gap is 1") {
  const auto g = all_gaps(generate(sized("poisson", 10, 10000)));
  CHECK(sample_mean(g) == doctest::Approx(1.0).epsilon(0.01));
  CHECK(ks_statistic(g, [](double x) { return -std::expm1(-x); }) < 0.01);
}

TEST_CASE("renewal gaps have mean 1 and standard deviation 6 in distribution") {
  GeneratorSpec s = sized("renewal", 8, 5000);
  const auto g = all_gaps(generate(s));
  const double m = s.renewal.log_mean, sd = s.renewal.log_std;
  CHECK(std::exp(m + 0.5 * sd * sd) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::sqrt(std::expm1(sd * sd)) * std::exp(m + 0.5 * sd * sd) == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(ks_statistic(g, [&](double x) { return 0.5 * std::erfc(-(std::log(x) - m) / (sd * std::sqrt(2.0))); }) < 0.02);
}

TEST_CASE("hawkes stationary rate matches mu / (1 - sum alpha)") {
  SUBCASE("low base rate") {
    GeneratorSpec s = sized("hawkes1", 1, 100000);
    s.hawkes.mu = 0.02;
    const auto seq = generate(s)[0];
    const double rate = seq.size() / seq.arrival_times.back();
    CHECK(rate == doctest::Approx(0.1).epsilon(0.10));
  }
  SUBCASE("hawkes1 preset") {
    const auto seq = generate(sized("hawkes1", 1, 100000))[0];
    CHECK(seq.size() / seq.arrival_times.back() == doctest::Approx(1.0).epsilon(0.10));
  }
  SUBCASE("hawkes2 preset") {
    const auto seq = generate(sized("hawkes2", 1, 100000))[0];
    CHECK(seq.size() / seq.arrival_times.back() == doctest::Approx(1.0).epsilon(0.10));
  }
}

TEST_CASE("hawkes thinning passes the time-rescaling test") {
  // Compensator increments of a correctly simulated process are iid Exp(1).
  for (const char* name : {"hawkes1", "hawkes2"}) {
    const GeneratorSpec s = sized(name, 1, 3000, 7);
    const auto seq = generate(s)[0];
    const auto& t = seq.arrival_times;
    std::vector<double> increments;
    double prev = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      double comp = s.hawkes.mu * (t[i] - prev);
      for (std::size_t k = 0; k < i; ++k)
        for (std::size_t j = 0; j < s.hawkes.alpha.size(); ++j)
          comp += s.hawkes.alpha[j] *
                  (std::exp(-s.hawkes.beta[j] * (prev - t[k])) - std::exp(-s.hawkes.beta[j] * (t[i] - t[k])));
      increments.push_back(comp);
      prev = t[i];
    }
    CHECK(ks_statistic(increments, [](double x) { return -std::expm1(-x); }) < 0.03);
  }
}

TEST_CASE("self-correcting gaps are regular and exactly distributed") {
  const auto seqs = generate(sized("self_correcting", 2000, 20));
  CHECK(coefficient_of_variation(all_gaps(seqs)) < 1.0);
  // first gap: Lambda(tau) = e^tau - 1
  std::vector<double> first;
  for (const auto& s : seqs) first.push_back(s.arrival_times[0]);
  CHECK(ks_statistic(first, [](double x) { return -std::expm1(-std::expm1(x)); }) < 0.035);
}

TEST_CASE("generation is deterministic per seed") {
  for (const auto& name : preset_names()) {
    std::ostringstream a, b, c;
    write_jsonl(a, generate(sized(name, 3, 50, 42)));
    write_jsonl(b, generate(sized(name, 3, 50, 42)));
    write_jsonl(c, generate(sized(name, 3, 50, 43)));
    CHECK(a.str() == b.str());
    CHECK(a.str() != c.str());
  }
}

TEST_CASE("unstable or invalid specs are rejected") {
  GeneratorSpec s = preset("hawkes2");
  s.hawkes.alpha = {0.6, 0.5};
  CHECK_THROWS_AS(generate(s), InputError);
  s.hawkes.alpha = {0.5};
  CHECK_THROWS_AS(generate(s), InputError);
  GeneratorSpec p = preset("poisson");
  p.rate = 0.0;
  CHECK_THROWS_AS(generate(p), InputError);
  CHECK_THROWS_AS(preset("weibull"), InputError);
}

TEST_CASE("true NLL matches known values") {
  CHECK(std::abs(true_nll(sized("poisson", 64, 1024), generate(sized("poisson", 64, 1024))) - 0.999) < 0.02);
  struct Row {
    const char* name;
    double nll;
  };
  for (Row r : {Row{"renewal", 0.254}, Row{"self_correcting", 0.757}, Row{"hawkes1", 0.453},
                Row{"hawkes2", -0.043}}) {
    INFO(r.name);
    const auto s = sized(r.name, 64, 1024, 3);
    CHECK(std::abs(true_nll(s, generate(s)) - r.nll) < 0.05);
  }
}

TEST_CASE("true log densities agree with brute-force intensity quadrature") {
  SUBCASE("hawkes") {
    for (const char* name : {"hawkes1", "hawkes2"}) {
      const auto s = sized(name, 1, 60, 5);
      const auto seq = generate(s)[0];
      const auto lp = true_log_densities(s, seq);
      const auto& t = seq.arrival_times;
      double prev = 0.0;
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double comp = integrate([&](double x) { return hawkes_lambda(s.hawkes, t, i, x); }, prev, t[i]);
        const double expect = std::log(hawkes_lambda(s.hawkes, t, i, t[i])) - comp;
        CHECK(lp[i] == doctest::Approx(expect).epsilon(1e-9));
        prev = t[i];
      }
    }
  }
  SUBCASE("self-correcting") {
    const auto s = sized("self_correcting", 1, 40, 5);
    const auto seq = generate(s)[0];
    const auto lp = true_log_densities(s, seq);
    double prev = 0.0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const double n = static_cast<double>(i);
      const double comp = integrate([&](double x) { return std::exp(x - n); }, prev, seq.arrival_times[i]);
      CHECK(lp[i] == doctest::Approx(seq.arrival_times[i] - n - comp).epsilon(1e-9));
      prev = seq.arrival_times[i];
    }
  }
  SUBCASE("each conditional density integrates to one") {
    const auto s = sized("hawkes2", 1, 10, 9);
    auto seq = generate(s)[0];
    const double t_last = seq.arrival_times.back();
    const double mass = integrate_panels(
        [&](double tau) {
          EventSequence probe = seq;
          probe.arrival_times.push_back(t_last + tau);
          return std::exp(true_log_densities(s, probe).back());
        },
        0.0, 200.0, 200);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("two-regime data carries its regime in metadata") {
  const auto s = sized("two_regime", 4, 2000);
  const auto seqs = generate(s);
  std::vector<double> g0, g1;
  for (const auto& q : seqs) {
    REQUIRE(q.metadata);
    REQUIRE(q.metadata->size() == q.size());
    const auto g = q.gaps();
    for (std::size_t i = 0; i < g.size(); ++i) ((*q.metadata)[i] != 0.0 ? g1 : g0).push_back(std::log(g[i]));
  }
  CHECK(sample_mean(g0) == doctest::Approx(-1.0).epsilon(0.05));
  CHECK(sample_mean(g1) == doctest::Approx(1.0).epsilon(0.05));
  // conditioning on the regime beats the marginal by the mutual information
  CHECK(true_nll(s, seqs) < 1.0);
}

TEST_CASE("mask_interval partitions the sequence") {
  Rng rng(11);
  const auto s = sized("hawkes1", 1, 100, 4);
  const auto seq = generate(s)[0];
  const auto gaps = seq.gaps();
  const double maxgap = *std::max_element(gaps.begin(), gaps.end());
  for (int rep = 0; rep < 50; ++rep) {
    const MaskedSequence m = mask_interval(seq, 1.0 / 3.0, rng);
    CHECK(m.ground_truth.arrival_times == seq.arrival_times);
    CHECK(!m.removed.empty());
    CHECK(m.observed.size() + m.removed.size() == seq.size());
    std::set<double> obs(m.observed.arrival_times.begin(), m.observed.arrival_times.end());
    for (std::size_t idx : m.removed) {
      const double t = seq.arrival_times[idx];
      CHECK(obs.count(t) == 0);
      CHECK(t > m.gap_start);
      CHECK(t < m.gap_end);
    }
    for (double t : m.observed.arrival_times) CHECK((t <= m.gap_start || t >= m.gap_end));
    const double target = seq.arrival_times.back() / 3.0;
    CHECK(std::abs((m.gap_end - m.gap_start) - target) <= maxgap);
    CHECK_NOTHROW(m.observed.validate());
  }
}

TEST_CASE("tiny mask fraction removes nothing") {
  Rng rng(3);
  const auto seq = generate(sized("poisson", 1, 50))[0];
  const MaskedSequence m = mask_interval(seq, 1e-9, rng);
  CHECK(m.removed.empty());
  CHECK(m.observed.arrival_times == seq.arrival_times);
  CHECK_THROWS_AS(mask_interval(seq, 1.0, rng), InputError);
}

TEST_CASE("mask keeps marks and per-event metadata aligned") {
  Rng rng(5);
  auto seq = generate(sized("two_regime", 1, 200))[0];
  seq.marks = std::vector<int>(seq.size());
  std::iota(seq.marks->begin(), seq.marks->end(), 0);
  const MaskedSequence m = mask_interval(seq, 0.25, rng);
  REQUIRE(m.observed.marks);
  for (std::size_t j = 0; j < m.observed.size(); ++j) {
    const int idx = (*m.observed.marks)[j];
    CHECK(m.observed.arrival_times[j] == seq.arrival_times[idx]);
    CHECK((*m.observed.metadata)[j] == (*seq.metadata)[idx]);
  }
}

TEST_CASE("jsonl round trip and error reporting") {
  auto seqs = generate(sized("two_regime", 3, 20));
  seqs[1].marks = std::vector<int>(20, 2);
  std::stringstream buf;
  write_jsonl(buf, seqs);
  const auto back = read_jsonl(buf);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].id == seqs[i].id);
    CHECK(back[i].arrival_times == seqs[i].arrival_times);
    CHECK(back[i].metadata == seqs[i].metadata);
    CHECK(back[i].marks == seqs[i].marks);
  }

  auto message = [](const std::string& text) {
    std::istringstream in(text);
    try {
      read_jsonl(in);
    } catch (const InputError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("{\"arrival_times\":[1,2]}\n{\"arrival_times\":[2,1]}\n").rfind("line 2:", 0) == 0);
  CHECK(message("{\"arrival_times\":[1,2]}\n\n{oops\n").rfind("line 3:", 0) == 0);
  CHECK(message("{\"arrival_times\":[1,2],\"marks\":[0]}\n").rfind("line 1:", 0) == 0);
  CHECK(message("{\"times\":[1,2]}\n").find("unknown field") != std::string::npos);
  CHECK(message("{\"arrival_times\":[0,1]}\n").find("strictly increasing") != std::string::npos);
}
