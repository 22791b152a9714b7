#include "iftpp/gen/generators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "iftpp/dist/special.hpp"
#include "iftpp/errors.hpp"

namespace iftpp::gen {

namespace {

double lognormal_logpdf(double tau, double m, double s) {
  const double z = (std::log(tau) - m) / s;
  return -0.5 * z * z - std::log(s) - dist::kLogSqrt2Pi - std::log(tau);
}

double lognormal_draw(Rng& rng, double m, double s) { return std::exp(m + s * standard_normal(rng)); }

// Excitation state S_j(t) = sum_{t_i < t} exp(-beta_j (t - t_i)).
struct HawkesState {
  const HawkesParams& p;
  std::vector<double> s;
  explicit HawkesState(const HawkesParams& params) : p(params), s(params.alpha.size(), 0.0) {}

  double intensity() const {
    double lam = p.mu;
    for (std::size_t j = 0; j < s.size(); ++j) lam += p.alpha[j] * p.beta[j] * s[j];
    return lam;
  }
  // Integral of the intensity over the next dt, starting from the current state.
  double compensator(double dt) const {
    double c = p.mu * dt;
    for (std::size_t j = 0; j < s.size(); ++j) c -= p.alpha[j] * s[j] * std::expm1(-p.beta[j] * dt);
    return c;
  }
  void decay(double dt) {
    for (std::size_t j = 0; j < s.size(); ++j) s[j] *= std::exp(-p.beta[j] * dt);
  }
  void jump() {
    for (double& v : s) v += 1.0;
  }
};

std::vector<double> hawkes_times(const HawkesParams& p, std::size_t n, Rng& rng) {
  std::vector<double> times;
  times.reserve(n);
  HawkesState st(p);
  double t = 0.0;
  while (times.size() < n) {
    const double bound = st.intensity();
    const double w = standard_exponential(rng) / bound;
    t += w;
    st.decay(w);
    if (uniform_open(rng) * bound <= st.intensity()) {
      times.push_back(t);
      st.jump();
    }
  }
  return times;
}

}  // namespace

std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::poisson: return "poisson";
    case Kind::renewal: return "renewal";
    case Kind::self_correcting: return "self_correcting";
    case Kind::hawkes: return "hawkes";
    case Kind::two_regime: return "two_regime";
  }
  return "?";
}

void GeneratorSpec::validate() const {
  if (n_events == 0) throw InputError("n_events must be positive");
  switch (kind) {
    case Kind::poisson:
      if (!(rate > 0.0) || !std::isfinite(rate)) throw InputError("poisson rate must be positive");
      break;
    case Kind::renewal:
      if (!(renewal.log_std > 0.0) || !std::isfinite(renewal.log_mean))
        throw InputError("renewal needs finite log_mean and positive log_std");
      break;
    case Kind::self_correcting:
      break;
    case Kind::hawkes: {
      const auto& h = hawkes;
      if (h.alpha.empty() || h.alpha.size() != h.beta.size())
        throw InputError("hawkes alpha and beta must be nonempty and of equal length");
      if (!(h.mu > 0.0)) throw InputError("hawkes mu must be positive");
      double total = 0.0;
      for (std::size_t j = 0; j < h.alpha.size(); ++j) {
        if (!(h.alpha[j] >= 0.0) || !(h.beta[j] > 0.0))
          throw InputError("hawkes needs alpha >= 0 and beta > 0");
        total += h.alpha[j];
      }
      if (!(total < 1.0)) throw InputError("unstable hawkes process: sum of alpha must be < 1");
      break;
    }
    case Kind::two_regime: {
      const auto& r = two_regime;
      if (!(r.switch_prob >= 0.0 && r.switch_prob <= 1.0))
        throw InputError("two_regime switch_prob must lie in [0, 1]");
      if (!(r.log_std[0] > 0.0 && r.log_std[1] > 0.0))
        throw InputError("two_regime log_std must be positive");
      break;
    }
  }
}

GeneratorSpec preset(std::string_view name) {
  GeneratorSpec s;
  if (name == "poisson") {
    s.kind = Kind::poisson;
  } else if (name == "renewal") {
    // gap mean 1 and standard deviation 6
    s.kind = Kind::renewal;
    const double var = std::log(37.0);
    s.renewal = {-0.5 * var, std::sqrt(var)};
  } else if (name == "self_correcting") {
    s.kind = Kind::self_correcting;
  } else if (name == "hawkes1") {
    s.kind = Kind::hawkes;
    s.hawkes = {0.2, {0.8}, {1.0}};
  } else if (name == "hawkes2") {
    s.kind = Kind::hawkes;
    s.hawkes = {0.2, {0.4, 0.4}, {1.0, 20.0}};
  } else if (name == "two_regime") {
    s.kind = Kind::two_regime;
  } else {
    throw InputError("unknown generator '" + std::string(name) + "'");
  }
  return s;
}

std::vector<std::string> preset_names() {
  return {"poisson", "renewal", "self_correcting", "hawkes1", "hawkes2", "two_regime"};
}

EventSequence generate_sequence(const GeneratorSpec& spec, Rng& rng, std::string id) {
  spec.validate();
  const std::size_t n = spec.n_events;
  EventSequence seq;
  seq.id = std::move(id);
  switch (spec.kind) {
    case Kind::poisson: {
      std::vector<double> g(n);
      for (double& x : g) x = standard_exponential(rng) / spec.rate;
      seq.arrival_times = from_gaps("", g).arrival_times;
      break;
    }
    case Kind::renewal: {
      std::vector<double> g(n);
      for (double& x : g) x = lognormal_draw(rng, spec.renewal.log_mean, spec.renewal.log_std);
      seq.arrival_times = from_gaps("", g).arrival_times;
      break;
    }
    case Kind::self_correcting: {
      // After i events the intensity is exp(t - i); its integral over the next
      // gap tau is c (e^tau - 1) with c = exp(t_i - i), inverted in closed form.
      double t = 0.0;
      seq.arrival_times.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double c = std::exp(t - static_cast<double>(i));
        t += std::log1p(standard_exponential(rng) / c);
        seq.arrival_times.push_back(t);
      }
      break;
    }
    case Kind::hawkes:
      seq.arrival_times = hawkes_times(spec.hawkes, n, rng);
      break;
    case Kind::two_regime: {
      const auto& r = spec.two_regime;
      std::vector<double> g(n), meta(n);
      int y = uniform_open(rng) < 0.5 ? 0 : 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (i > 0 && uniform_open(rng) < r.switch_prob) y = 1 - y;
        meta[i] = y;
        g[i] = lognormal_draw(rng, r.log_mean[y], r.log_std[y]);
      }
      seq.arrival_times = from_gaps("", g).arrival_times;
      seq.metadata = std::move(meta);
      break;
    }
  }
  // Gaps below the resolution of t can collapse two arrivals; nudge forward.
  for (std::size_t i = 0; i < seq.arrival_times.size(); ++i) {
    const double prev = i ? seq.arrival_times[i - 1] : 0.0;
    if (!(seq.arrival_times[i] > prev))
      seq.arrival_times[i] = std::nextafter(prev, std::numeric_limits<double>::infinity());
  }
  return seq;
}

std::vector<EventSequence> generate(const GeneratorSpec& spec) {
  spec.validate();
  std::vector<EventSequence> out;
  out.reserve(spec.n_sequences);
  for (std::size_t j = 0; j < spec.n_sequences; ++j) {
    Rng rng = derive_rng(spec.seed, j);
    out.push_back(generate_sequence(spec, rng, std::string(kind_name(spec.kind)) + "_" + std::to_string(j)));
  }
  return out;
}

std::vector<double> true_log_densities(const GeneratorSpec& spec, const EventSequence& seq) {
  spec.validate();
  const std::vector<double> tau = seq.gaps();
  std::vector<double> out(tau.size());
  switch (spec.kind) {
    case Kind::poisson:
      for (std::size_t i = 0; i < tau.size(); ++i) out[i] = std::log(spec.rate) - spec.rate * tau[i];
      break;
    case Kind::renewal:
      for (std::size_t i = 0; i < tau.size(); ++i)
        out[i] = lognormal_logpdf(tau[i], spec.renewal.log_mean, spec.renewal.log_std);
      break;
    case Kind::self_correcting: {
      double t = 0.0;
      for (std::size_t i = 0; i < tau.size(); ++i) {
        const double shift = t - static_cast<double>(i);
        out[i] = shift + tau[i] - std::exp(shift) * std::expm1(tau[i]);
        t = seq.arrival_times[i];
      }
      break;
    }
    case Kind::hawkes: {
      HawkesState st(spec.hawkes);
      for (std::size_t i = 0; i < tau.size(); ++i) {
        const double comp = st.compensator(tau[i]);
        st.decay(tau[i]);
        out[i] = std::log(st.intensity()) - comp;
        st.jump();
      }
      break;
    }
    case Kind::two_regime: {
      if (!seq.metadata || seq.metadata->size() != tau.size())
        throw InputError("two_regime sequences need per-event metadata");
      const auto& r = spec.two_regime;
      for (std::size_t i = 0; i < tau.size(); ++i) {
        const int y = (*seq.metadata)[i] != 0.0 ? 1 : 0;
        out[i] = lognormal_logpdf(tau[i], r.log_mean[y], r.log_std[y]);
      }
      break;
    }
  }
  return out;
}

double true_nll(const GeneratorSpec& spec, const EventSequence& seq) {
  return true_nll(spec, std::vector<EventSequence>{seq});
}

double true_nll(const GeneratorSpec& spec, const std::vector<EventSequence>& seqs) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : seqs) {
    const auto lp = true_log_densities(spec, s);
    total -= std::accumulate(lp.begin(), lp.end(), 0.0);
    count += lp.size();
  }
  if (count == 0) throw InputError("true_nll needs at least one event");
  return total / static_cast<double>(count);
}

MaskedSequence mask_interval(const EventSequence& seq, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw InputError("mask fraction must lie in (0, 1)");
  MaskedSequence out;
  out.ground_truth = seq;
  out.observed = seq;
  const std::size_t n = seq.size();
  if (n == 0) return out;

  // time[0] = 0, time[j] = t_j
  std::vector<double> time(n + 1, 0.0);
  std::copy(seq.arrival_times.begin(), seq.arrival_times.end(), time.begin() + 1);
  const double len = fraction * time[n];

  struct Candidate {
    std::size_t start, end;
  };
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < n && time[i] + len <= time[n]; ++i) {
    const auto it = std::lower_bound(time.begin() + i + 1, time.end(), time[i] + len);
    std::size_t e = static_cast<std::size_t>(it - time.begin());
    if (e > n) e = n;
    if (e > i + 1 && std::abs(time[e - 1] - time[i] - len) < std::abs(time[e] - time[i] - len)) --e;
    if (e > i + 1) cands.push_back({i, e});
  }
  if (cands.empty()) {
    out.gap_start = out.gap_end = time[n];
    return out;
  }
  const Candidate c = cands[std::uniform_int_distribution<std::size_t>(0, cands.size() - 1)(rng)];
  out.gap_start = time[c.start];
  out.gap_end = time[c.end];
  // events c.start+1 .. c.end-1 (1-based) are removed
  for (std::size_t j = c.start + 1; j < c.end; ++j) out.removed.push_back(j - 1);

  auto keep = [&](std::size_t idx) { return idx + 1 <= c.start || idx + 1 >= c.end; };
  EventSequence& obs = out.observed;
  obs.arrival_times.clear();
  if (obs.marks) obs.marks->clear();
  const bool per_event_meta = seq.metadata && seq.metadata->size() == n && n > 1;
  if (per_event_meta) obs.metadata->clear();
  for (std::size_t idx = 0; idx < n; ++idx) {
    if (!keep(idx)) continue;
    obs.arrival_times.push_back(seq.arrival_times[idx]);
    if (seq.marks) obs.marks->push_back((*seq.marks)[idx]);
    if (per_event_meta) obs.metadata->push_back((*seq.metadata)[idx]);
  }
  return out;
}

}  // namespace iftpp::gen
