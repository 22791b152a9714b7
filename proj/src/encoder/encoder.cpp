#include "iftpp/encoder/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "iftpp/errors.hpp"

namespace iftpp::enc {

using ad::Parameter;
using ad::ParameterStore;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.values()) v = u(rng);
  return t;
}

Parameter& require(ParameterStore& store, const std::string& name) {
  if (!store.contains(name)) throw InputError("missing parameter '" + name + "'");
  return store.get(name);
}

}  // namespace

std::size_t EncoderConfig::context_dim() const {
  const std::size_t d = (use_history ? hidden : 0) + (metadata_classes ? metadata_embed : 0) +
                        (num_sequences ? seq_embed : 0);
  return d ? d : 1;
}

void EncoderConfig::validate() const {
  if (hidden == 0) throw InputError("hidden size must be positive");
  if (num_marks && mark_embed == 0) throw InputError("mark embedding size must be positive");
  if (metadata_classes && metadata_embed == 0) throw InputError("metadata embedding size must be positive");
  if (num_sequences && seq_embed == 0) throw InputError("sequence embedding size must be positive");
}

Scaling Scaling::fit(const std::vector<EventSequence>& seqs) {
  double sum_log = 0.0, sum_sq = 0.0, sum_tau = 0.0;
  std::size_t n = 0;
  for (const auto& s : seqs) {
    for (double tau : s.gaps()) {
      const double l = std::log(tau);
      sum_log += l;
      sum_sq += l * l;
      sum_tau += tau;
      ++n;
    }
  }
  if (n == 0) throw InputError("cannot fit scaling on an empty dataset");
  Scaling sc;
  sc.log_mean = sum_log / n;
  const double var = n > 1 ? (sum_sq - n * sc.log_mean * sc.log_mean) / (n - 1) : 0.0;
  sc.log_std = var > 1e-24 ? std::sqrt(var) : 1.0;
  sc.tau_mean = sum_tau / n;
  return sc;
}

void Scaling::validate() const {
  if (!(log_std > 0.0) || !(tau_mean > 0.0) || !std::isfinite(log_mean))
    throw InputError("scaling needs finite log_mean and positive log_std and tau_mean");
}

Example make_example(const EventSequence& seq, std::size_t sequence_index) {
  Example ex;
  ex.taus = seq.gaps();
  ex.sequence_index = sequence_index;
  if (seq.marks) ex.marks = *seq.marks;
  if (seq.metadata) {
    const auto& m = *seq.metadata;
    ex.metadata.resize(ex.taus.size());
    for (std::size_t i = 0; i < ex.taus.size(); ++i) {
      const double v = m.size() == 1 ? m[0] : m[i];
      if (v < 0.0 || v != std::floor(v))
        throw InputError("sequence '" + seq.id + "': metadata codes must be nonnegative integers");
      ex.metadata[i] = static_cast<int>(v);
    }
  }
  return ex;
}

Encoder::Encoder(EncoderConfig cfg, ParameterStore& store, Rng& rng) : cfg_(cfg), store_(&store) {
  cfg_.validate();
  const std::size_t h = cfg_.hidden, g3 = 3 * cfg_.hidden, in = cfg_.input_dim();
  if (cfg_.use_history) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    store.add("encoder.gru.w_input", uniform_tensor({in, g3}, bound, rng));
    store.add("encoder.gru.w_hidden", uniform_tensor({h, g3}, bound, rng));
    store.add("encoder.gru.b_input", uniform_tensor({g3}, bound, rng));
    store.add("encoder.gru.b_hidden", uniform_tensor({g3}, bound, rng));
    if (cfg_.num_marks) store.add("encoder.mark_embedding", uniform_tensor({cfg_.num_marks, cfg_.mark_embed}, 1.0, rng));
  }
  if (cfg_.metadata_classes)
    store.add("encoder.metadata_embedding", uniform_tensor({cfg_.metadata_classes, cfg_.metadata_embed}, 1.0, rng));
  // near zero, so a trained embedding holds what the data put there
  if (cfg_.num_sequences)
    store.add("encoder.sequence_embedding", uniform_tensor({cfg_.num_sequences, cfg_.seq_embed}, 0.01, rng));
}

Encoder Encoder::attach(EncoderConfig cfg, ParameterStore& store) {
  cfg.validate();
  Encoder e;
  e.cfg_ = cfg;
  e.store_ = &store;
  const std::size_t in = cfg.input_dim(), g3 = 3 * cfg.hidden;
  auto check = [&](const std::string& name, Shape shape) {
    if (require(store, name).value.shape() != shape)
      throw InputError("parameter '" + name + "' has shape " + ad::to_string(store.get(name).value.shape()) +
                       ", expected " + ad::to_string(shape));
  };
  if (cfg.use_history) {
    check("encoder.gru.w_input", {in, g3});
    check("encoder.gru.w_hidden", {cfg.hidden, g3});
    check("encoder.gru.b_input", {g3});
    check("encoder.gru.b_hidden", {g3});
    if (cfg.num_marks) check("encoder.mark_embedding", {cfg.num_marks, cfg.mark_embed});
  }
  if (cfg.metadata_classes) check("encoder.metadata_embedding", {cfg.metadata_classes, cfg.metadata_embed});
  if (cfg.num_sequences) check("encoder.sequence_embedding", {cfg.num_sequences, cfg.seq_embed});
  return e;
}

BoundEncoder Encoder::bind(Tape& tape) const {
  BoundEncoder b;
  if (cfg_.use_history) {
    b.w_input = tape.parameter(store_->get("encoder.gru.w_input"));
    b.w_hidden = tape.parameter(store_->get("encoder.gru.w_hidden"));
    b.b_input = tape.parameter(store_->get("encoder.gru.b_input"));
    b.b_hidden = tape.parameter(store_->get("encoder.gru.b_hidden"));
    if (cfg_.num_marks) b.mark_table = tape.parameter(store_->get("encoder.mark_embedding"));
  }
  if (cfg_.metadata_classes) b.metadata_table = tape.parameter(store_->get("encoder.metadata_embedding"));
  if (cfg_.num_sequences) b.seq_table = tape.parameter(store_->get("encoder.sequence_embedding"));
  return b;
}

Var Encoder::initial_state(Tape& tape, std::size_t batch) const {
  return tape.constant(Tensor(Shape{batch, cfg_.hidden}, 0.0));
}

Var Encoder::advance(const BoundEncoder& b, const Var& h, const Var& scaled_log_tau,
                     std::span<const int> marks) const {
  const std::size_t batch = scaled_log_tau.size();
  Var x = ad::reshape(scaled_log_tau, Shape{batch, 1});
  if (cfg_.num_marks) {
    if (marks.size() != batch) throw InputError("mark inputs required for a marked encoder");
    std::vector<std::size_t> idx(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      if (marks[i] < 0 || static_cast<std::size_t>(marks[i]) >= cfg_.num_marks)
        throw InputError("unknown mark index " + std::to_string(marks[i]));
      idx[i] = static_cast<std::size_t>(marks[i]);
    }
    x = ad::concat({x, ad::gather_rows(*b.mark_table, idx)}, 1);
  }
  return ad::gru_cell(x, h, b.w_input, b.w_hidden, b.b_input, b.b_hidden);
}

Var Encoder::context(const BoundEncoder& b, const Var& h, std::span<const int> metadata,
                     std::span<const std::size_t> sequence_index, const Var* seq_override) const {
  if (!h.valid()) throw InputError("context needs a state (or a placeholder of the right row count)");
  const std::size_t n = h.shape()[0];
  std::vector<Var> parts;
  if (cfg_.use_history) parts.push_back(h);
  if (cfg_.metadata_classes) {
    if (metadata.size() != n) throw InputError("metadata codes required for a metadata-conditioned model");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (metadata[i] < 0 || static_cast<std::size_t>(metadata[i]) >= cfg_.metadata_classes)
        throw InputError("metadata code " + std::to_string(metadata[i]) + " outside [0, " +
                         std::to_string(cfg_.metadata_classes) + ")");
      idx[i] = static_cast<std::size_t>(metadata[i]);
    }
    parts.push_back(ad::gather_rows(*b.metadata_table, idx));
  }
  if (cfg_.num_sequences) {
    if (seq_override != nullptr) {
      if (seq_override->size() != cfg_.seq_embed)
        throw InputError("sequence embedding override must have " + std::to_string(cfg_.seq_embed) + " entries");
      const Var row = ad::reshape(*seq_override, Shape{1, cfg_.seq_embed});
      parts.push_back(ad::gather_rows(row, std::vector<std::size_t>(n, 0)));
    } else {
      if (sequence_index.size() != n) throw InputError("sequence indices required for sequence embeddings");
      for (std::size_t j : sequence_index)
        if (j >= cfg_.num_sequences)
          throw InputError("sequence index " + std::to_string(j) + " outside the embedding table");
      parts.push_back(ad::gather_rows(*b.seq_table, sequence_index));
    }
  }
  if (parts.empty()) return h.tape().constant(Tensor(Shape{n, 1}, 0.0));
  return parts.size() == 1 ? parts.front() : ad::concat(parts, 1);
}

EncodedBatch Encoder::encode(Tape& tape, std::span<const Example* const> batch, const Scaling& scaling,
                             bool suppress_history, const Var* seq_override) const {
  EncodedBatch out;
  const std::size_t nb = batch.size();
  std::size_t len = 0;
  for (const Example* ex : batch) {
    if (cfg_.num_marks && ex->marks.size() != ex->taus.size())
      throw InputError("every event needs a mark for a marked model");
    if (cfg_.metadata_classes && ex->metadata.size() != ex->taus.size())
      throw InputError("every event needs a metadata code for a metadata-conditioned model");
    len = std::max(len, ex->taus.size());
  }
  for (std::size_t b = 0; b < nb; ++b) {
    const Example& ex = *batch[b];
    for (std::size_t t = 0; t < ex.taus.size(); ++t) {
      if (!(ex.taus[t] > 0.0)) throw InputError("inter-event times must be positive");
      out.tau.push_back(ex.taus[t]);
      if (cfg_.num_marks) out.marks.push_back(ex.marks[t]);
      out.example.push_back(b);
      out.offset.push_back(t);
    }
  }
  const std::size_t n = out.rows();

  const BoundEncoder bound = bind(tape);
  Var hidden = tape.constant(Tensor(Shape{n, 1}, 0.0));  // row-count placeholder
  if (cfg_.use_history) {
    if (suppress_history || len == 0) {
      hidden = tape.constant(Tensor(Shape{n, cfg_.hidden}, 0.0));
    } else {
      // h_t summarises events 0..t-1 and is the context for event t.
      std::vector<Var> states{initial_state(tape, nb)};
      std::vector<int> marks(cfg_.num_marks ? nb : 0);
      for (std::size_t t = 1; t < len; ++t) {
        Tensor x(Shape{nb}, 0.0);
        for (std::size_t b = 0; b < nb; ++b) {
          const Example& ex = *batch[b];
          if (t - 1 < ex.taus.size()) {
            x[b] = scaling.scaled_log(ex.taus[t - 1]);
            if (cfg_.num_marks) marks[b] = ex.marks[t - 1];
          } else if (cfg_.num_marks) {
            marks[b] = 0;
          }
        }
        states.push_back(advance(bound, states.back(), tape.constant(std::move(x)), marks));
      }
      const Var stacked = states.size() == 1 ? states.front() : ad::concat(states, 0);
      std::vector<std::size_t> rows(n);
      for (std::size_t i = 0; i < n; ++i) rows[i] = out.offset[i] * nb + out.example[i];
      hidden = ad::gather_rows(stacked, rows);
    }
  }

  std::vector<int> metadata;
  if (cfg_.metadata_classes) {
    metadata.resize(n);
    for (std::size_t i = 0; i < n; ++i) metadata[i] = batch[out.example[i]]->metadata[out.offset[i]];
  }
  std::vector<std::size_t> seq_idx;
  if (cfg_.num_sequences) {
    seq_idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) seq_idx[i] = batch[out.example[i]]->sequence_index;
  }
  out.context = context(bound, hidden, metadata, seq_idx, seq_override);
  return out;
}

Affine::Affine(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               double init_scale) {
  const double bound = init_scale / std::sqrt(static_cast<double>(in));
  w_ = &store.add(name + ".weight", uniform_tensor({in, out}, bound, rng));
  b_ = &store.add(name + ".bias", uniform_tensor({out}, bound, rng));
}

Affine Affine::attach(ParameterStore& store, const std::string& name) {
  Affine a;
  a.w_ = &require(store, name + ".weight");
  a.b_ = &require(store, name + ".bias");
  if (a.w_->value.rank() != 2 || a.b_->value.shape() != Shape{a.w_->value.shape()[1]})
    throw InputError("parameter '" + name + "' has inconsistent weight and bias shapes");
  return a;
}

Var Affine::apply(const Var& x) const {
  Tape& tape = x.tape();
  return ad::matmul(x, tape.parameter(*w_)) + tape.parameter(*b_);
}

std::size_t Affine::in() const { return w_->value.shape()[0]; }
std::size_t Affine::out() const { return w_->value.shape()[1]; }

MixtureHead::MixtureHead(ParameterStore& store, const std::string& name, std::size_t context_dim,
                         std::size_t components, Rng& rng)
    : weights(store, name + ".weights", context_dim, components, rng),
      log_scales(store, name + ".log_scales", context_dim, components, rng),
      means(store, name + ".means", context_dim, components, rng) {}

MixtureHead MixtureHead::attach(ParameterStore& store, const std::string& name) {
  MixtureHead h;
  h.weights = Affine::attach(store, name + ".weights");
  h.log_scales = Affine::attach(store, name + ".log_scales");
  h.means = Affine::attach(store, name + ".means");
  return h;
}

dist::MixtureVars MixtureHead::apply(const Var& context) const {
  return {ad::log_softmax(weights.apply(context)), means.apply(context), log_scales.apply(context)};
}

MarkHead::MarkHead(ParameterStore& store, const std::string& name, std::size_t context_dim,
                   std::size_t classes, Rng& rng, std::size_t width)
    : hidden(store, name + ".hidden", context_dim, width, rng), logits(store, name + ".logits", width, classes, rng) {}

MarkHead MarkHead::attach(ParameterStore& store, const std::string& name) {
  MarkHead h;
  h.hidden = Affine::attach(store, name + ".hidden");
  h.logits = Affine::attach(store, name + ".logits");
  return h;
}

Var MarkHead::log_probs(const Var& context) const {
  return ad::log_softmax(logits.apply(ad::tanh(hidden.apply(context))));
}

namespace {

Var context_row(Tape& tape, std::span<const double> context) {
  return tape.constant(Tensor::matrix(1, context.size(), std::vector<double>(context.begin(), context.end())));
}

}  // namespace

dist::MixtureParams heads_mixture(std::span<const double> context, const MixtureHead& head) {
  Tape tape;
  const dist::MixtureVars v = head.apply(context_row(tape, context));
  dist::MixtureParams p;
  for (std::size_t k = 0; k < head.components(); ++k) {
    p.weights.push_back(std::exp(v.log_weights.value()[k]));
    p.means.push_back(v.means.value()[k]);
    p.scales.push_back(std::exp(v.log_scales.value()[k]));
  }
  return p;
}

std::vector<double> heads_marks(std::span<const double> context, const MarkHead& head) {
  Tape tape;
  const Var lp = head.log_probs(context_row(tape, context));
  std::vector<double> out(lp.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = std::exp(lp.value()[c]);
  return out;
}

}  // namespace iftpp::enc
