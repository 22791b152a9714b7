#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "iftpp/data/sequence.hpp"
#include "iftpp/dist/rng.hpp"

namespace iftpp::gen {

enum class Kind { poisson, renewal, self_correcting, hawkes, two_regime };

std::string_view kind_name(Kind k);

/// Excitation kernel sum_j alpha_j beta_j exp(-beta_j t).
struct HawkesParams {
  double mu = 0.2;
  std::vector<double> alpha{0.8};
  std::vector<double> beta{1.0};
};

/// Log-normal gaps, parametrised in log space.
struct RenewalParams {
  double log_mean = 0.0;
  double log_std = 1.0;
};

/// Hidden binary regime per event, observed only through metadata. The
/// regime flips with probability switch_prob after each event and selects
/// one of two log-normal gap laws.
struct TwoRegimeParams {
  double switch_prob = 0.5;
  double log_mean[2] = {-1.0, 1.0};
  double log_std[2] = {0.5, 0.5};
};

struct GeneratorSpec {
  Kind kind = Kind::poisson;
  double rate = 1.0;
  RenewalParams renewal;
  HawkesParams hawkes;
  TwoRegimeParams two_regime;
  std::size_t n_sequences = 64;
  std::size_t n_events = 1024;
  std::uint64_t seed = 0;

  /// Throws InputError for non-positive rates or an unstable Hawkes kernel.
  void validate() const;
};

/// Named datasets: poisson, renewal, self_correcting, hawkes1, hawkes2,
/// two_regime. Throws InputError for an unknown name.
GeneratorSpec preset(std::string_view name);
std::vector<std::string> preset_names();

/// Sequence j uses derive_rng(seed, j); output is identical for equal specs.
std::vector<EventSequence> generate(const GeneratorSpec& spec);
EventSequence generate_sequence(const GeneratorSpec& spec, Rng& rng, std::string id);

/// Per-event log p*(tau_i | history) under the generating process.
std::vector<double> true_log_densities(const GeneratorSpec& spec, const EventSequence& seq);
/// Mean negative log-likelihood per event.
double true_nll(const GeneratorSpec& spec, const EventSequence& seq);
double true_nll(const GeneratorSpec& spec, const std::vector<EventSequence>& seqs);

struct MaskedSequence {
  EventSequence observed;
  double gap_start = 0.0;
  double gap_end = 0.0;
  EventSequence ground_truth;
  std::vector<std::size_t> removed;  // indices into ground_truth
};

/// Removes the events strictly inside an interval (t_i, t_{i+k}) whose length
/// is closest to fraction * t_N. The start index i is uniform over the starts
/// that remove at least one event; if none does, nothing is removed.
MaskedSequence mask_interval(const EventSequence& seq, double fraction, Rng& rng);

}  // namespace iftpp::gen
