#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iftpp/ad/ops.hpp"
#include "iftpp/ad/tape.hpp"
#include "iftpp/data/sequence.hpp"
#include "iftpp/dist/lognormal_mixture.hpp"
#include "iftpp/dist/rng.hpp"

namespace iftpp::enc {

struct EncoderConfig {
  std::size_t hidden = 64;
  bool use_history = true;
  std::size_t num_marks = 0;  // 0 disables mark inputs
  std::size_t mark_embed = 32;
  std::size_t metadata_classes = 0;  // 0 disables metadata
  std::size_t metadata_embed = 64;
  std::size_t num_sequences = 0;  // 0 disables sequence embeddings
  std::size_t seq_embed = 32;

  std::size_t input_dim() const { return 1 + (num_marks ? mark_embed : 0); }
  /// Width of the context; an unconditioned model gets one constant zero.
  std::size_t context_dim() const;
  void validate() const;
};

/// Dataset statistics for input normalisation.
struct Scaling {
  double log_mean = 0.0;
  double log_std = 1.0;
  double tau_mean = 1.0;

  static Scaling fit(const std::vector<EventSequence>& seqs);
  double scaled_log(double tau) const { return (std::log(tau) - log_mean) / log_std; }
  void validate() const;
};

/// One training item: the gaps of a (chunk of a) sequence plus aligned
/// per-event codes.  metadata[i] conditions the prediction of taus[i].
struct Example {
  std::vector<double> taus;
  std::vector<int> marks;     // empty when unmarked
  std::vector<int> metadata;  // empty when absent
  std::vector<unsigned char> in_loss;  // empty: every event is scored
  std::size_t sequence_index = 0;
};

/// Expands per-sequence metadata to one code per event.  Throws InputError
/// for non-integer or negative codes.
Example make_example(const EventSequence& seq, std::size_t sequence_index);

/// Contexts of every valid event in a batch, in example-major order.
struct EncodedBatch {
  ad::Var context;                  // [N x context_dim]
  std::vector<double> tau;          // [N]
  std::vector<int> marks;           // [N] or empty
  std::vector<std::size_t> example; // row -> example
  std::vector<std::size_t> offset;  // row -> event position within example
  std::size_t rows() const { return tau.size(); }
};

/// Parameters of the encoder bound to one tape.
struct BoundEncoder {
  ad::Var w_input, w_hidden, b_input, b_hidden;
  std::optional<ad::Var> mark_table, metadata_table, seq_table;
};

/// Gated recurrent history encoder with optional mark, metadata and
/// sequence embeddings.  Parameters live in the caller's store under
/// "encoder.*".
class Encoder {
 public:
  Encoder() = default;
  Encoder(EncoderConfig cfg, ad::ParameterStore& store, Rng& rng);
  /// Re-attaches to parameters already present in `store` (after load).
  static Encoder attach(EncoderConfig cfg, ad::ParameterStore& store);

  const EncoderConfig& config() const { return cfg_; }

  BoundEncoder bind(ad::Tape& tape) const;

  /// Zero initial state [batch x H].
  ad::Var initial_state(ad::Tape& tape, std::size_t batch) const;
  /// h' = cell([scaled log tau, mark embedding], h).  `scaled_log_tau` is [B].
  ad::Var advance(const BoundEncoder& b, const ad::Var& h, const ad::Var& scaled_log_tau,
                  std::span<const int> marks) const;
  /// c = [h | metadata embedding | sequence embedding] for B rows.  An
  /// override ([E] or [1 x E]) replaces the learned sequence embedding.
  /// Without history, h is only a placeholder giving the row count.
  ad::Var context(const BoundEncoder& b, const ad::Var& h, std::span<const int> metadata,
                  std::span<const std::size_t> sequence_index,
                  const ad::Var* seq_override = nullptr) const;

  /// Runs the encoder over padded examples.  With suppress_history the
  /// hidden part of every context is zero.
  EncodedBatch encode(ad::Tape& tape, std::span<const Example* const> batch, const Scaling& scaling,
                      bool suppress_history = false, const ad::Var* seq_override = nullptr) const;

 private:
  EncoderConfig cfg_;
  ad::ParameterStore* store_ = nullptr;
};

/// y = x W + b with W [in x out], initialised uniform(+-1/sqrt(in)).
class Affine {
 public:
  Affine() = default;
  Affine(ad::ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         double init_scale = 1.0);
  static Affine attach(ad::ParameterStore& store, const std::string& name);

  ad::Var apply(const ad::Var& x) const;
  std::size_t in() const;
  std::size_t out() const;
  ad::Parameter& weight() const { return *w_; }
  ad::Parameter& bias() const { return *b_; }

 private:
  ad::Parameter* w_ = nullptr;
  ad::Parameter* b_ = nullptr;
};

/// Mixture parameters as affine functions of the context:
/// w = softmax(V_w c + b_w), s = exp(V_s c + b_s), mu = V_mu c + b_mu.
struct MixtureHead {
  Affine weights, log_scales, means;

  MixtureHead() = default;
  MixtureHead(ad::ParameterStore& store, const std::string& name, std::size_t context_dim,
              std::size_t components, Rng& rng);
  static MixtureHead attach(ad::ParameterStore& store, const std::string& name);

  dist::MixtureVars apply(const ad::Var& context) const;
  std::size_t components() const { return means.out(); }
};

/// pi = softmax(V2 tanh(V1 c + b1) + b2).
struct MarkHead {
  Affine hidden, logits;

  MarkHead() = default;
  MarkHead(ad::ParameterStore& store, const std::string& name, std::size_t context_dim,
           std::size_t classes, Rng& rng, std::size_t width = 64);
  static MarkHead attach(ad::ParameterStore& store, const std::string& name);

  /// Row-wise log-probabilities [N x C].
  ad::Var log_probs(const ad::Var& context) const;
};

// Plain-value wrappers for a single context vector.
dist::MixtureParams heads_mixture(std::span<const double> context, const MixtureHead& head);
std::vector<double> heads_marks(std::span<const double> context, const MarkHead& head);

}  // namespace iftpp::enc
