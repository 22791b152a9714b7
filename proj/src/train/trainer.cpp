#include "iftpp/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "iftpp/ad/adam.hpp"
#include "iftpp/ad/ops.hpp"
#include "iftpp/errors.hpp"

namespace iftpp::train {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using enc::EncodedBatch;
using enc::Example;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointFormat = "iftpp-checkpoint";
constexpr int kCheckpointVersion = 1;
constexpr std::size_t kMaxImputed = 10000;

std::string_view imputation_name(Imputation m) {
  switch (m) {
    case Imputation::none: return "none";
    case Imputation::mean: return "mean";
    case Imputation::reparam: return "reparam";
  }
  return "?";
}

std::vector<const Example*> pointers(const std::vector<Example>& xs, std::span<const std::size_t> idx) {
  std::vector<const Example*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(&xs[i]);
  return out;
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

bool scored(const EncodedBatch& eb, std::span<const Example* const> batch, std::size_t row) {
  const Example& ex = *batch[eb.example[row]];
  return ex.in_loss.empty() || ex.in_loss[eb.offset[row]] != 0;
}

/// Row weights (1 scored, 0 excluded) and their count.
std::pair<Tensor, double> loss_weights(const EncodedBatch& eb, std::span<const Example* const> batch) {
  Tensor w(Shape{eb.rows()}, 1.0);
  double count = 0.0;
  for (std::size_t i = 0; i < eb.rows(); ++i) {
    w[i] = scored(eb, batch, i) ? 1.0 : 0.0;
    count += w[i];
  }
  return {std::move(w), count};
}

enc::Scaling scaling_of(const std::vector<Example>& xs) {
  std::vector<EventSequence> seqs;
  for (const auto& ex : xs) seqs.push_back(from_gaps("", ex.taus));
  return enc::Scaling::fit(seqs);
}

Example slice(const Example& ex, std::size_t begin, std::size_t end) {
  Example out;
  out.sequence_index = ex.sequence_index;
  out.taus.assign(ex.taus.begin() + begin, ex.taus.begin() + end);
  if (!ex.marks.empty()) out.marks.assign(ex.marks.begin() + begin, ex.marks.begin() + end);
  if (!ex.metadata.empty()) out.metadata.assign(ex.metadata.begin() + begin, ex.metadata.begin() + end);
  if (!ex.in_loss.empty()) out.in_loss.assign(ex.in_loss.begin() + begin, ex.in_loss.begin() + end);
  return out;
}

std::vector<Example> chunk(const std::vector<Example>& xs, std::size_t len) {
  if (len == 0) return xs;
  std::vector<Example> out;
  for (const auto& ex : xs)
    for (std::size_t b = 0; b < ex.taus.size(); b += len) out.push_back(slice(ex, b, std::min(ex.taus.size(), b + len)));
  return out;
}

// --- config parsing -------------------------------------------------------

template <class T>
T field(const json& j, const std::string& key);

std::string pointer(const std::string& key) { return "/" + key; }

template <>
double field<double>(const json& j, const std::string& key) {
  const json& v = j.at(key);
  if (!v.is_number()) throw InputError(pointer(key) + ": expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw InputError(pointer(key) + ": must be finite");
  return x;
}

template <>
std::size_t field<std::size_t>(const json& j, const std::string& key) {
  const json& v = j.at(key);
  if (v.is_number_unsigned()) return v.get<std::size_t>();
  if (v.is_number_integer() || v.is_number_float()) {
    const double x = v.get<double>();
    if (x >= 0.0 && x == std::floor(x)) return static_cast<std::size_t>(x);
  }
  throw InputError(pointer(key) + ": expected a nonnegative integer");
}

template <>
bool field<bool>(const json& j, const std::string& key) {
  const json& v = j.at(key);
  if (!v.is_boolean()) throw InputError(pointer(key) + ": expected true or false");
  return v.get<bool>();
}

template <>
std::string field<std::string>(const json& j, const std::string& key) {
  const json& v = j.at(key);
  if (!v.is_string()) throw InputError(pointer(key) + ": expected a string");
  return v.get<std::string>();
}

}  // namespace

// --- configuration ----------------------------------------------------------

void TrainConfig::validate() const {
  auto bad = [](const std::string& key, const std::string& why) { throw InputError(pointer(key) + ": " + why); };
  if (!(lr > 0.0)) bad("lr", "must be positive");
  if (batch_size == 0) bad("batch_size", "must be positive");
  if (max_epochs == 0) bad("max_epochs", "must be positive");
  if (patience >= max_epochs) bad("patience", "must be smaller than max_epochs");
  if (!(l2 >= 0.0)) bad("l2", "must be nonnegative");
  for (double v : l2_grid)
    if (!(v >= 0.0)) bad("l2_grid", "entries must be nonnegative");
  if (!(grad_clip >= 0.0)) bad("grad_clip", "must be nonnegative");
  for (double f : split)
    if (!(f >= 0.0)) bad("split", "fractions must be nonnegative");
  if (std::abs(split[0] + split[1] + split[2] - 1.0) > 1e-9) bad("split", "fractions must sum to 1");
  if (components == 0) bad("components", "must be positive");
  if (hidden == 0) bad("hidden", "must be positive");
  if ((model == ModelKind::dsflow || model == ModelKind::sosflow) && layers == 0) bad("layers", "must be positive");
  if (fullynn_hidden == 0) bad("fullynn_hidden", "must be positive");
  if (mc_samples == 0) bad("mc_samples", "must be positive");
  if (!(temperature > 0.0)) bad("temperature", "must be positive");
}

TrainConfig config_from_json(const json& j) {
  if (!j.is_object()) throw InputError("/: config must be a JSON object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "model") c.model = parse_model(field<std::string>(j, key));
    else if (key == "components") c.components = field<std::size_t>(j, key);
    else if (key == "layers") c.layers = field<std::size_t>(j, key);
    else if (key == "degree") c.degree = field<std::size_t>(j, key);
    else if (key == "hidden") c.hidden = field<std::size_t>(j, key);
    else if (key == "fullynn_hidden") c.fullynn_hidden = field<std::size_t>(j, key);
    else if (key == "lr") c.lr = field<double>(j, key);
    else if (key == "batch_size") c.batch_size = field<std::size_t>(j, key);
    else if (key == "max_epochs") c.max_epochs = field<std::size_t>(j, key);
    else if (key == "patience") c.patience = field<std::size_t>(j, key);
    else if (key == "l2") c.l2 = field<double>(j, key);
    else if (key == "l2_grid") {
      if (!value.is_array()) throw InputError("/l2_grid: expected an array of numbers");
      c.l2_grid.clear();
      for (std::size_t i = 0; i < value.size(); ++i) {
        if (!value[i].is_number()) throw InputError("/l2_grid/" + std::to_string(i) + ": expected a number");
        c.l2_grid.push_back(value[i].get<double>());
      }
    } else if (key == "grad_clip") c.grad_clip = field<double>(j, key);
    else if (key == "chunk_len") c.chunk_len = field<std::size_t>(j, key);
    else if (key == "split") {
      if (!value.is_array() || value.size() != 3) throw InputError("/split: expected three fractions");
      for (std::size_t i = 0; i < 3; ++i) {
        if (!value[i].is_number()) throw InputError("/split/" + std::to_string(i) + ": expected a number");
        c.split[i] = value[i].get<double>();
      }
    } else if (key == "seed") c.seed = field<std::size_t>(j, key);
    else if (key == "use_history") c.use_history = field<bool>(j, key);
    else if (key == "use_marks") c.use_marks = field<bool>(j, key);
    else if (key == "use_metadata") c.use_metadata = field<bool>(j, key);
    else if (key == "use_sequence_embedding") c.use_sequence_embedding = field<bool>(j, key);
    else if (key == "mark_embed") c.mark_embed = field<std::size_t>(j, key);
    else if (key == "metadata_embed") c.metadata_embed = field<std::size_t>(j, key);
    else if (key == "seq_embed") c.seq_embed = field<std::size_t>(j, key);
    else if (key == "pretrain_epochs") c.pretrain_epochs = field<std::size_t>(j, key);
    else if (key == "imputation") {
      const std::string v = field<std::string>(j, key);
      if (v == "none") c.imputation = Imputation::none;
      else if (v == "mean") c.imputation = Imputation::mean;
      else if (v == "reparam") c.imputation = Imputation::reparam;
      else throw InputError("/imputation: expected none, mean or reparam");
    } else if (key == "mc_samples") c.mc_samples = field<std::size_t>(j, key);
    else if (key == "temperature") c.temperature = field<double>(j, key);
    else throw InputError(pointer(key) + ": unknown key");
  }
  c.validate();
  return c;
}

json config_to_json(const TrainConfig& c) {
  return {{"model", std::string(model_name(c.model))},
          {"components", c.components},
          {"layers", c.layers},
          {"degree", c.degree},
          {"hidden", c.hidden},
          {"fullynn_hidden", c.fullynn_hidden},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"l2", c.l2},
          {"l2_grid", c.l2_grid},
          {"grad_clip", c.grad_clip},
          {"chunk_len", c.chunk_len},
          {"split", c.split},
          {"seed", c.seed},
          {"use_history", c.use_history},
          {"use_marks", c.use_marks},
          {"use_metadata", c.use_metadata},
          {"use_sequence_embedding", c.use_sequence_embedding},
          {"mark_embed", c.mark_embed},
          {"metadata_embed", c.metadata_embed},
          {"seq_embed", c.seq_embed},
          {"pretrain_epochs", c.pretrain_epochs},
          {"imputation", std::string(imputation_name(c.imputation))},
          {"mc_samples", c.mc_samples},
          {"temperature", c.temperature}};
}

// --- data -------------------------------------------------------------------

Split split_dataset(std::size_t n, const std::array<double, 3>& fractions, std::uint64_t seed) {
  if (n < 5) throw InputError("splitting needs at least 5 sequences, got " + std::to_string(n));
  std::vector<std::size_t> order = iota_n(n);
  Rng rng = derive_rng(seed, 0x5b117);
  std::shuffle(order.begin(), order.end(), rng);
  auto count = [&](double f) { return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * n))); };
  std::size_t n_train = count(fractions[0]), n_val = count(fractions[1]);
  while (n_train + n_val > n - 1) (n_train > n_val ? n_train : n_val) -= 1;
  Split s;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test.assign(order.begin() + n_train + n_val, order.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

std::vector<Example> make_examples(const std::vector<EventSequence>& seqs, std::span<const std::size_t> which,
                                   std::size_t chunk_len) {
  std::vector<Example> out;
  for (std::size_t j : which) out.push_back(enc::make_example(seqs.at(j), j));
  return chunk(out, chunk_len);
}

DataInfo DataInfo::of(const std::vector<EventSequence>& seqs) {
  DataInfo info;
  info.num_sequences = seqs.size();
  for (const auto& s : seqs) {
    if (s.marks)
      for (int m : *s.marks) info.num_marks = std::max(info.num_marks, static_cast<std::size_t>(m) + 1);
    if (s.metadata)
      for (double v : *s.metadata)
        if (v >= 0.0) info.metadata_classes = std::max(info.metadata_classes, static_cast<std::size_t>(v) + 1);
  }
  return info;
}

std::unique_ptr<Model> build_model(const TrainConfig& cfg, const DataInfo& info, const enc::Scaling& scaling) {
  cfg.validate();
  ModelConfig mc;
  mc.kind = cfg.model;
  mc.components = cfg.components;
  mc.layers = cfg.layers;
  mc.degree = cfg.degree;
  mc.fullynn_hidden = cfg.fullynn_hidden;
  mc.encoder.hidden = cfg.hidden;
  mc.encoder.use_history = cfg.use_history;
  mc.encoder.mark_embed = cfg.mark_embed;
  mc.encoder.metadata_embed = cfg.metadata_embed;
  mc.encoder.seq_embed = cfg.seq_embed;
  if (cfg.use_marks) {
    if (info.num_marks == 0) throw InputError("/use_marks: the data has no marks");
    mc.encoder.num_marks = info.num_marks;
  }
  if (cfg.use_metadata) {
    if (info.metadata_classes == 0) throw InputError("/use_metadata: the data has no metadata");
    mc.encoder.metadata_classes = info.metadata_classes;
  }
  if (cfg.use_sequence_embedding) mc.encoder.num_sequences = info.num_sequences;
  return std::make_unique<Model>(mc, scaling, cfg.seed);
}

// --- evaluation -------------------------------------------------------------

namespace {

struct BatchSums {
  double time = 0.0, marks = 0.0, correct = 0.0, count = 0.0;
};

BatchSums score_batch(const Model& model, std::span<const Example* const> batch, bool with_marks,
                      bool suppress_history) {
  Tape tape;
  const EncodedBatch eb = model.encoder().encode(tape, batch, model.scaling(), suppress_history);
  const Var lp = model.log_density(eb.context, eb.tau);
  BatchSums s;
  Tensor lm;
  if (with_marks) lm = model.mark_log_probs(eb.context).value();
  for (std::size_t i = 0; i < eb.rows(); ++i) {
    if (!scored(eb, batch, i)) continue;
    s.time -= lp.value()[i];
    s.count += 1.0;
    if (with_marks) {
      const std::size_t c = lm.cols();
      const double* row = lm.data() + i * c;
      s.marks -= row[eb.marks[i]];
      const std::size_t best = static_cast<std::size_t>(std::max_element(row, row + c) - row);
      s.correct += best == static_cast<std::size_t>(eb.marks[i]) ? 1.0 : 0.0;
    }
  }
  return s;
}

}  // namespace

NllReport evaluate(const Model& model, const std::vector<Example>& data, std::size_t batch_size,
                   bool suppress_history) {
  if (batch_size == 0) throw InputError("batch size must be positive");
  const bool with_marks = model.has_marks();
  BatchSums total;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    const auto idx = iota_n(std::min(data.size(), b + batch_size));
    const auto batch = pointers(data, std::span(idx).subspan(b));
    BatchSums s;
    try {
      s = score_batch(model, batch, with_marks, suppress_history);
    } catch (const ad::NumericError& e) {
      for (const Example* ex : batch) {
        const Example* one[] = {ex};
        try {
          score_batch(model, one, with_marks, suppress_history);
        } catch (const ad::NumericError&) {
          throw DomainError("non-finite log-likelihood for sequence " + std::to_string(ex->sequence_index) + ": " +
                            e.what());
        }
      }
      throw DomainError(std::string("non-finite log-likelihood: ") + e.what());
    }
    total.time += s.time;
    total.marks += s.marks;
    total.correct += s.correct;
    total.count += s.count;
  }
  if (total.count == 0.0) throw InputError("no events to evaluate");
  NllReport r;
  r.events = static_cast<std::size_t>(total.count);
  r.time_nll = total.time / total.count;
  if (with_marks) {
    r.total_nll = (total.time + total.marks) / total.count;
    r.mark_accuracy = total.correct / total.count;
  }
  return r;
}

double nll_time(const Model& model, const std::vector<Example>& data, std::size_t batch_size) {
  return evaluate(model, data, batch_size).time_nll;
}

NllReport nll_total(const Model& model, const std::vector<Example>& data, std::size_t batch_size) {
  if (!model.has_marks()) throw InputError("model has no mark head");
  for (const auto& ex : data)
    if (ex.marks.size() != ex.taus.size()) throw InputError("nll_total needs marks on every event");
  return evaluate(model, data, batch_size);
}

// --- training ---------------------------------------------------------------

namespace {

/// Objective used for optimisation and early stopping: time NLL, plus mark
/// NLL for marked models.
double objective(const NllReport& r) { return r.total_nll ? *r.total_nll : r.time_nll; }

void apply_update(const TrainConfig& cfg, Model& model, ad::AdamState& adam, double l2) {
  if (l2 > 0.0)
    for (auto& [name, p] : model.params())
      for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += 2.0 * l2 * p.value[i];
  if (cfg.grad_clip > 0.0) ad::clip_grad_norm(model.params(), cfg.grad_clip);
  ad::adam_step(model.params(), adam, ad::AdamOptions{cfg.lr});
  model.post_step();
}

/// One gradient step on a batch; returns the summed NLL and event count.
std::pair<double, double> train_step(const TrainConfig& cfg, Model& model, ad::AdamState& adam, double l2,
                                     std::span<const Example* const> batch, bool suppress_history) {
  model.params().zero_grad();
  Tape tape;
  const EncodedBatch eb = model.encoder().encode(tape, batch, model.scaling(), suppress_history);
  auto [w, count] = loss_weights(eb, batch);
  if (count == 0.0) return {0.0, 0.0};
  Var ll = model.log_density(eb.context, eb.tau);
  if (model.has_marks()) {
    std::vector<std::size_t> mk(eb.marks.begin(), eb.marks.end());
    ll = ll + ad::gather_cols(model.mark_log_probs(eb.context), mk);
  }
  const Var total = ad::sum(ll * tape.constant(std::move(w)));
  const Var loss = total * (-1.0 / count);
  tape.backward(loss);
  apply_update(cfg, model, adam, l2);
  return {-total.value().item(), count};
}

struct Phase {
  std::size_t max_epochs;
  bool suppress_history;
};

void run_phase(const TrainConfig& cfg, Model& model, double l2, const std::vector<Example>& train,
               const std::vector<Example>& val, const Phase& phase, FitResult& out, const EpochCallback& on_epoch) {
  ad::AdamState adam;
  Rng rng = derive_rng(cfg.seed, 0xe90c + (phase.suppress_history ? 1 : 0));
  std::vector<std::size_t> order = iota_n(train.size());
  double best = std::numeric_limits<double>::infinity();
  auto best_params = model.params().snapshot();
  std::size_t best_epoch = 0, since_best = 0;
  const std::size_t offset = out.history.size();
  for (std::size_t epoch = 1; epoch <= phase.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0, count = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const auto idx = std::span(order).subspan(b, std::min(cfg.batch_size, order.size() - b));
      const auto batch = pointers(train, idx);
      try {
        const auto [s, c] = train_step(cfg, model, adam, l2, batch, phase.suppress_history);
        sum += s;
        count += c;
      } catch (const ad::NumericError& e) {
        throw TrainingError("training diverged at epoch " + std::to_string(offset + epoch) + ", batch " +
                            std::to_string(b / cfg.batch_size) + ": " + e.what());
      }
    }
    EpochRecord rec{offset + epoch, count > 0 ? sum / count : 0.0, 0.0};
    try {
      rec.val_nll = val.empty() ? rec.train_nll
                                : objective(evaluate(model, val, cfg.batch_size, phase.suppress_history));
    } catch (const DomainError& e) {
      throw TrainingError("validation diverged at epoch " + std::to_string(rec.epoch) + ": " + e.what());
    }
    if (!std::isfinite(rec.train_nll) || !std::isfinite(rec.val_nll))
      throw TrainingError("non-finite loss at epoch " + std::to_string(rec.epoch));
    out.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_nll < best) {
      best = rec.val_nll;
      best_params = model.params().snapshot();
      best_epoch = rec.epoch;
      since_best = 0;
    } else if (++since_best > cfg.patience) {
      break;
    }
  }
  model.params().restore(best_params);
  out.best_epoch = best_epoch;
  out.best_val = best;
}

std::vector<std::vector<double>> contexts_of(const Model& model, const std::vector<Example>& xs,
                                             std::vector<double>& taus, std::size_t batch_size) {
  std::vector<std::vector<double>> ctx;
  for (std::size_t b = 0; b < xs.size(); b += batch_size) {
    const auto idx = iota_n(std::min(xs.size(), b + batch_size));
    const auto batch = pointers(xs, std::span(idx).subspan(b));
    Tape tape;
    const EncodedBatch eb = model.encoder().encode(tape, batch, model.scaling());
    const Tensor& c = eb.context.value();
    for (std::size_t i = 0; i < eb.rows(); ++i) {
      if (!scored(eb, batch, i)) continue;
      ctx.emplace_back(c.data() + i * c.cols(), c.data() + (i + 1) * c.cols());
      taus.push_back(eb.tau[i]);
    }
  }
  return ctx;
}

void init_batchnorm(Model& model, const std::vector<Example>& train, std::size_t batch_size) {
  if (model.config().kind != ModelKind::dsflow && model.config().kind != ModelKind::sosflow) return;
  std::vector<double> taus;
  const auto ctx = contexts_of(model, train, taus, batch_size);
  model.fit_batchnorm(ctx, taus);
}

}  // namespace

FitResult fit(const TrainConfig& cfg, std::unique_ptr<Model> model, const std::vector<Example>& train,
              const std::vector<Example>& val, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.empty()) throw InputError("no training sequences");
  FitResult out;
  out.l2 = cfg.l2;
  init_batchnorm(*model, train, cfg.batch_size);
  if (cfg.use_sequence_embedding && cfg.use_history && cfg.pretrain_epochs > 0)
    run_phase(cfg, *model, cfg.l2, train, val, {cfg.pretrain_epochs, true}, out, on_epoch);
  run_phase(cfg, *model, cfg.l2, train, val, {cfg.max_epochs, false}, out, on_epoch);
  out.model = std::move(model);
  return out;
}

ExampleSplit split_examples(const TrainConfig& cfg, const std::vector<EventSequence>& data, const Split& split) {
  ExampleSplit out;
  if (!cfg.use_sequence_embedding) {
    out.train = make_examples(data, split.train, cfg.chunk_len);
    out.val = make_examples(data, split.val);
    out.test = make_examples(data, split.test);
    return out;
  }
  // split every sequence in time so each one has a trained embedding
  for (std::size_t j = 0; j < data.size(); ++j) {
    const Example ex = enc::make_example(data[j], j);
    const std::size_t n = ex.taus.size();
    const std::size_t n_train = static_cast<std::size_t>(std::llround(cfg.split[0] * n));
    const std::size_t n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(cfg.split[1] * n)));
    if (n_train > 0) {
      auto parts = chunk({slice(ex, 0, n_train)}, cfg.chunk_len);
      out.train.insert(out.train.end(), parts.begin(), parts.end());
    }
    if (n_val > 0) out.val.push_back(slice(ex, n_train, n_train + n_val));
    if (n_train + n_val < n) out.test.push_back(slice(ex, n_train + n_val, n));
  }
  return out;
}

TrainResult train(const TrainConfig& cfg, const std::vector<EventSequence>& data, const EpochCallback& on_epoch) {
  cfg.validate();
  TrainResult res;
  if (cfg.use_sequence_embedding) {
    res.split.train = res.split.val = res.split.test = iota_n(data.size());
  } else {
    res.split = split_dataset(data.size(), cfg.split, cfg.seed);
  }
  const ExampleSplit ex = split_examples(cfg, data, res.split);
  const enc::Scaling scaling = scaling_of(ex.train);
  const DataInfo info = DataInfo::of(data);
  const std::vector<double> grid = cfg.l2_grid.empty() ? std::vector<double>{cfg.l2} : cfg.l2_grid;
  for (double l2 : grid) {
    TrainConfig c = cfg;
    c.l2 = l2;
    FitResult f = fit(c, build_model(c, info, scaling), ex.train, ex.val, on_epoch);
    if (!res.fit.model || f.best_val < res.fit.best_val) res.fit = std::move(f);
  }
  const Model& m = *res.fit.model;
  std::vector<Example> train_full;
  if (cfg.use_sequence_embedding) {
    train_full = split_examples([&] {
      TrainConfig c = cfg;
      c.chunk_len = 0;
      return c;
    }(), data, res.split).train;
  } else {
    train_full = make_examples(data, res.split.train);
  }
  res.train = evaluate(m, train_full, cfg.batch_size);
  if (!ex.val.empty()) res.val = evaluate(m, ex.val, cfg.batch_size);
  if (!ex.test.empty()) res.test = evaluate(m, ex.test, cfg.batch_size);
  return res;
}

// --- imputation -------------------------------------------------------------

std::vector<double> mean_imputation_times(double gap_start, double gap_end, double tau_hat) {
  if (!(tau_hat > 0.0)) throw InputError("mean inter-event time must be positive");
  std::vector<double> out;
  for (std::size_t n = 1;; ++n) {
    const double t = gap_start + static_cast<double>(n) * tau_hat;
    if (!(t < gap_end)) break;
    out.push_back(t);
    if (out.size() > kMaxImputed) throw InputError("mean imputation would insert more than 1e4 events");
  }
  return out;
}

namespace {

/// Index (into observed events) of the first event after the gap.
std::size_t gap_index(const GapSequence& g) {
  const auto& t = g.observed.arrival_times;
  const auto it = std::lower_bound(t.begin(), t.end(), g.gap_end);
  if (it == t.end() || *it != g.gap_end)
    throw InputError("gap end " + std::to_string(g.gap_end) + " is not an observed event time");
  const std::size_t k = static_cast<std::size_t>(it - t.begin());
  const double prev = k == 0 ? 0.0 : t[k - 1];
  if (prev != g.gap_start) throw InputError("gap start must be the observed event preceding the gap end");
  return k;
}

Example mean_imputed_example(const GapSequence& g, std::size_t k) {
  const auto gaps = g.observed.gaps();
  double sum = 0.0;
  for (std::size_t i = 0; i < gaps.size(); ++i)
    if (i != k) sum += gaps[i];
  const double tau_hat = gaps.size() > 1 ? sum / static_cast<double>(gaps.size() - 1) : gaps[0];
  const auto imputed = mean_imputation_times(g.gap_start, g.gap_end, tau_hat);
  std::vector<double> times(g.observed.arrival_times.begin(), g.observed.arrival_times.begin() + k);
  std::vector<unsigned char> in_loss(k, 1);
  times.insert(times.end(), imputed.begin(), imputed.end());
  in_loss.insert(in_loss.end(), imputed.size(), 0);
  times.insert(times.end(), g.observed.arrival_times.begin() + k, g.observed.arrival_times.end());
  in_loss.insert(in_loss.end(), g.observed.size() - k, 1);
  EventSequence s;
  s.arrival_times = std::move(times);
  Example ex = enc::make_example(s, 0);
  ex.in_loss = std::move(in_loss);
  return ex;
}

/// Expected observed log-likelihood over `samples` rollouts through the gap;
/// returns the (negated, per-event) loss Var.
Var reparam_loss(const Model& model, const GapSequence& g, std::size_t k, std::size_t samples, double temperature,
                 Rng& rng, Tape& tape) {
  const enc::Encoder& encoder = model.encoder();
  const enc::Scaling& sc = model.scaling();
  const enc::BoundEncoder bound = encoder.bind(tape);
  const std::vector<double> taus = g.observed.gaps();
  const std::size_t s = samples;
  const bool history = encoder.config().use_history;
  std::vector<Var> contexts, log_taus;

  Var h = history ? encoder.initial_state(tape, s) : tape.constant(Tensor(Shape{s, 1}, 0.0));
  auto ctx = [&]() { return encoder.context(bound, h, {}, {}); };
  auto feed = [&](const Var& log_tau) {
    if (history) h = encoder.advance(bound, h, (log_tau - sc.log_mean) * (1.0 / sc.log_std), {});
  };
  auto constant_log = [&](double tau) { return tape.constant(Tensor(Shape{s}, std::log(tau))); };

  for (std::size_t i = 0; i < k; ++i) {
    contexts.push_back(ctx());
    log_taus.push_back(constant_log(taus[i]));
    feed(log_taus.back());
  }
  // rollouts through the unobserved interval
  const double length = g.gap_end - g.gap_start;
  Var elapsed = tape.constant(Tensor(Shape{s}, 0.0));
  std::vector<bool> done(s, false);
  for (std::size_t step = 0;; ++step) {
    if (step >= kMaxImputed)
      throw TrainingError("reparametrized imputation exceeded 1e4 events in one rollout");
    const Var c = ctx();
    const Var lt = model.sample_log_tau_reparam(c, rng, temperature);
    Tensor keep(Shape{s}, 0.0);
    Tensor keep_rows(Shape{s, history ? encoder.config().hidden : 1}, 0.0);
    bool any = false;
    for (std::size_t r = 0; r < s; ++r) {
      if (done[r]) continue;
      if (elapsed.value()[r] + std::exp(lt.value()[r]) < length) {
        keep[r] = 1.0;
        for (std::size_t j = 0; j < keep_rows.cols(); ++j) keep_rows.at(r, j) = 1.0;
        any = true;
      } else {
        done[r] = true;
      }
    }
    if (!any) break;
    elapsed = elapsed + ad::exp(lt) * tape.constant(std::move(keep));
    if (history) {
      const Var next = encoder.advance(bound, h, (lt - sc.log_mean) * (1.0 / sc.log_std), {});
      h = h + (next - h) * tape.constant(std::move(keep_rows));
    }
  }
  // the first observed event after the interval, then the rest
  contexts.push_back(ctx());
  log_taus.push_back(ad::log(length - elapsed));
  feed(log_taus.back());
  for (std::size_t i = k + 1; i < taus.size(); ++i) {
    contexts.push_back(ctx());
    log_taus.push_back(constant_log(taus[i]));
    if (i + 1 < taus.size()) feed(log_taus.back());
  }
  const Var lp = model.log_density(ad::concat(contexts, 0), ad::concat(log_taus, 0));
  return ad::mean(lp) * -1.0;
}

}  // namespace

std::unique_ptr<Model> train_with_imputation(const TrainConfig& cfg, const GapSequence& data,
                                             const enc::Scaling& scaling, const EpochCallback& on_epoch) {
  cfg.validate();
  data.observed.validate();
  if (cfg.use_marks || cfg.use_metadata || cfg.use_sequence_embedding)
    throw InputError("imputation training supports unmarked sequences without metadata or embeddings");
  if (data.observed.size() == 0) throw InputError("observed sequence is empty");
  auto model = build_model(cfg, DataInfo::of({data.observed}), scaling);
  const bool has_gap = data.gap_end > data.gap_start;
  const std::size_t k = has_gap ? gap_index(data) : 0;
  Imputation mode = has_gap ? cfg.imputation : Imputation::none;
  if (mode == Imputation::reparam && !model->supports_reparam())
    throw InputError("/imputation: reparam needs a lognormmix or lognormal model");

  const Example example = mode == Imputation::mean ? mean_imputed_example(data, k) : enc::make_example(data.observed, 0);
  init_batchnorm(*model, {example}, 1);

  ad::AdamState adam;
  Rng rng = derive_rng(cfg.seed, 0x1a9b);
  const Example* one[] = {&example};
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec{epoch, 0.0, 0.0};
    try {
      if (mode == Imputation::reparam) {
        model->params().zero_grad();
        Tape tape;
        const Var loss = reparam_loss(*model, data, k, cfg.mc_samples, cfg.temperature, rng, tape);
        tape.backward(loss);
        apply_update(cfg, *model, adam, cfg.l2);
        rec.train_nll = loss.value().item();
      } else {
        const auto [sum, count] = train_step(cfg, *model, adam, cfg.l2, one, false);
        rec.train_nll = sum / count;
      }
    } catch (const ad::NumericError& e) {
      throw TrainingError("training diverged at step " + std::to_string(epoch) + ": " + e.what());
    } catch (const TrainingError& e) {
      throw TrainingError("step " + std::to_string(epoch) + ": " + e.what());
    }
    rec.val_nll = rec.train_nll;
    if (on_epoch) on_epoch(rec);
  }
  return model;
}

double sequence_nll(const Model& model, const EventSequence& truth) {
  return evaluate(model, {enc::make_example(truth, 0)}).time_nll;
}

// --- conditional information -------------------------------------------------

std::vector<ConditionalResult> evaluate_conditional(const TrainConfig& base, const std::vector<EventSequence>& data) {
  if (DataInfo::of(data).metadata_classes == 0) throw InputError("conditional evaluation needs metadata");
  std::vector<ConditionalResult> out;
  for (bool history : {true, false})
    for (bool metadata : {false, true}) {
      TrainConfig c = base;
      c.use_history = history;
      c.use_metadata = metadata;
      out.push_back({history, metadata, train(c, data).test.time_nll});
    }
  return out;
}

// --- using a trained model ------------------------------------------------------

namespace {

struct Cursor {
  Tensor h;  // [1 x H]
};

Tensor advance_state(const Model& model, const Tensor& h, double tau, std::optional<int> mark) {
  Tape tape;
  const auto b = model.encoder().bind(tape);
  std::vector<int> marks;
  if (mark) marks.push_back(*mark);
  const Var next = model.encoder().advance(b, tape.constant(h), tape.constant(Tensor(Shape{1}, model.scaling().scaled_log(tau))),
                                           marks);
  return next.value();
}

std::vector<double> context_from_state(const Model& model, const Tensor& h, std::optional<int> metadata,
                                       std::optional<std::size_t> sequence_index,
                                       const std::vector<double>* seq_embedding) {
  Tape tape;
  const auto b = model.encoder().bind(tape);
  std::vector<int> meta;
  if (model.encoder().config().metadata_classes) {
    if (!metadata) throw InputError("model is conditioned on metadata; a code for the next event is required");
    meta.push_back(*metadata);
  }
  std::vector<std::size_t> seq;
  std::optional<Var> over;
  if (model.encoder().config().num_sequences) {
    if (seq_embedding) {
      over = tape.constant(Tensor::vector(*seq_embedding));
    } else {
      if (!sequence_index) throw InputError("model uses sequence embeddings; a sequence index or embedding is required");
      seq.push_back(*sequence_index);
    }
  }
  const Var hv = model.encoder().config().use_history ? tape.constant(h) : tape.constant(Tensor(Shape{1, 1}, 0.0));
  const Var c = model.encoder().context(b, hv, meta, seq, over ? &*over : nullptr);
  return {c.value().values().begin(), c.value().values().end()};
}

}  // namespace

std::vector<double> history_context(const Model& model, const EventSequence& history, std::optional<int> metadata,
                                    std::optional<std::size_t> sequence_index,
                                    const std::vector<double>* seq_embedding) {
  history.validate();
  Tensor h(Shape{1, model.encoder().config().hidden}, 0.0);
  if (model.encoder().config().use_history) {
    const auto gaps = history.gaps();
    for (std::size_t i = 0; i < gaps.size(); ++i) {
      std::optional<int> mark;
      if (model.has_marks()) {
        if (!history.marks) throw InputError("model is mark-aware but the history has no marks");
        mark = (*history.marks)[i];
      }
      h = advance_state(model, h, gaps[i], mark);
    }
  }
  return context_from_state(model, h, metadata, sequence_index, seq_embedding);
}

EventSequence generate_sequence(const Model& model, const EventSequence& history, std::size_t n, Rng& rng,
                                std::optional<std::size_t> sequence_index, const std::vector<double>* seq_embedding,
                                const std::function<int(double)>& metadata_fn) {
  if (model.has_marks()) throw InputError("sequence generation is implemented for unmarked models");
  history.validate();
  const bool uses_meta = model.encoder().config().metadata_classes > 0;
  if (uses_meta && !metadata_fn) throw InputError("metadata-conditioned generation needs a metadata rule");
  EventSequence out = history;
  out.id = history.id.empty() ? "generated" : history.id;
  // per-event metadata continues only when the history carries it per event
  out.metadata.reset();
  if (uses_meta && (history.size() == 0 || (history.metadata && history.metadata->size() == history.size())))
    out.metadata = history.metadata.value_or(std::vector<double>());
  Tensor h(Shape{1, model.encoder().config().hidden}, 0.0);
  const auto gaps = history.gaps();
  if (model.encoder().config().use_history)
    for (double g : gaps) h = advance_state(model, h, g, std::nullopt);
  double t = history.size() ? history.arrival_times.back() : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::optional<int> code;
    if (uses_meta) {
      code = metadata_fn(t);
      if (out.metadata) out.metadata->push_back(*code);
    }
    const auto c = context_from_state(model, h, code, sequence_index, seq_embedding);
    double tau = model.conditional(c)->sample(rng);
    t = std::max(t + tau, std::nextafter(t, std::numeric_limits<double>::infinity()));
    tau = t - (out.size() ? out.arrival_times.back() : 0.0);
    out.arrival_times.push_back(t);
    if (model.encoder().config().use_history) h = advance_state(model, h, tau, std::nullopt);
  }
  return out;
}

std::vector<std::vector<double>> sequence_embeddings(const Model& model) {
  if (!model.params().contains("encoder.sequence_embedding"))
    throw InputError("model was trained without sequence embeddings");
  const Tensor& t = model.params().get("encoder.sequence_embedding").value;
  std::vector<std::vector<double>> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) out[i].assign(t.data() + i * t.cols(), t.data() + (i + 1) * t.cols());
  return out;
}

// --- files --------------------------------------------------------------------

json checkpoint_json(const TrainConfig& cfg, const Model& model) {
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"config", config_to_json(cfg)},
          {"model", model.state_json()}};
}

Checkpoint checkpoint_from_json(const json& j) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat) throw InputError("not a checkpoint file");
  if (j.value("version", 0) != kCheckpointVersion)
    throw InputError("unsupported checkpoint version " + j.value("version", json()).dump());
  Checkpoint c;
  c.config = config_from_json(j.at("config"));
  c.model = Model::from_state_json(j.at("model"));
  return c;
}

void save_checkpoint(const std::string& path, const TrainConfig& cfg, const Model& model) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write checkpoint '" + path + "'");
  out << checkpoint_json(cfg, model).dump() << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open checkpoint '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

void write_metrics_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw InputError("cannot write metrics '" + path + "'");
  std::fprintf(f, "epoch,train_nll,val_nll\n");
  for (const auto& r : history) std::fprintf(f, "%zu,%.17g,%.17g\n", r.epoch, r.train_nll, r.val_nll);
  std::fclose(f);
}

}  // namespace iftpp::train
