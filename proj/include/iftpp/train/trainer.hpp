#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "iftpp/data/sequence.hpp"
#include "iftpp/encoder/encoder.hpp"
#include "iftpp/train/model.hpp"

namespace iftpp::train {

enum class Imputation { none, mean, reparam };

struct TrainConfig {
  ModelKind model = ModelKind::lognormmix;
  std::size_t components = 64;  // K
  std::size_t layers = 2;       // M
  std::size_t degree = 3;       // R
  std::size_t hidden = 64;      // H
  std::size_t fullynn_hidden = 64;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 2000;
  std::size_t patience = 100;
  double l2 = 0.0;
  std::vector<double> l2_grid;  // when nonempty, the best of these is kept
  double grad_clip = 10.0;      // global norm; 0 disables
  std::size_t chunk_len = 128;
  std::array<double, 3> split{0.6, 0.2, 0.2};
  std::uint64_t seed = 0;
  bool use_history = true;
  bool use_marks = false;
  bool use_metadata = false;
  bool use_sequence_embedding = false;
  std::size_t mark_embed = 32;
  std::size_t metadata_embed = 64;
  std::size_t seq_embed = 32;
  std::size_t pretrain_epochs = 100;  // history-free phase for sequence embeddings
  Imputation imputation = Imputation::none;
  std::size_t mc_samples = 10;
  double temperature = 1.0;

  void validate() const;
};

/// Flat JSON object; unknown keys and type mismatches raise InputError
/// naming the offending field as a JSON pointer ("/lr").
TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const TrainConfig& c);

struct Split {
  std::vector<std::size_t> train, val, test;  // indices into the input
};

/// Random partition by sequence with the given fractions (each part gets at
/// least one sequence).  Throws InputError for fewer than 5 sequences.
Split split_dataset(std::size_t n_sequences, const std::array<double, 3>& fractions, std::uint64_t seed);

/// Cuts every sequence into consecutive pieces of at most chunk_len events.
/// sequence_index is the position of the source sequence in `seqs`.
std::vector<enc::Example> make_examples(const std::vector<EventSequence>& seqs, std::span<const std::size_t> which,
                                        std::size_t chunk_len = 0);

/// Vocabulary sizes needed to build a model for this data.
struct DataInfo {
  std::size_t num_marks = 0;
  std::size_t metadata_classes = 0;
  std::size_t num_sequences = 0;
  static DataInfo of(const std::vector<EventSequence>& seqs);
};

std::unique_ptr<Model> build_model(const TrainConfig& cfg, const DataInfo& info, const enc::Scaling& scaling);

struct NllReport {
  double time_nll = 0.0;
  std::optional<double> total_nll;
  std::optional<double> mark_accuracy;
  std::size_t events = 0;
};

/// Mean per-event NLL, evaluated in batches of `batch_size` examples.
NllReport evaluate(const Model& model, const std::vector<enc::Example>& data, std::size_t batch_size = 64,
                   bool suppress_history = false);
double nll_time(const Model& model, const std::vector<enc::Example>& data, std::size_t batch_size = 64);
/// Time plus mark NLL; throws InputError when the data or model lacks marks.
NllReport nll_total(const Model& model, const std::vector<enc::Example>& data, std::size_t batch_size = 64);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FitResult {
  std::unique_ptr<Model> model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  double l2 = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam with early stopping on `val`; the returned model holds the
/// parameters of the epoch with the lowest validation NLL.
FitResult fit(const TrainConfig& cfg, std::unique_ptr<Model> model, const std::vector<enc::Example>& train,
              const std::vector<enc::Example>& val, const EpochCallback& on_epoch = {});

struct TrainResult {
  FitResult fit;
  Split split;
  NllReport train, val, test;
};

/// Split, scale, build, fit (over the l2 grid when given) and report.
/// With sequence embeddings every sequence is split in time instead
/// (first 60% of events train, next 20% validation, rest test), and a
/// history-free pre-training phase of pretrain_epochs runs first.
TrainResult train(const TrainConfig& cfg, const std::vector<EventSequence>& data,
                  const EpochCallback& on_epoch = {});

/// Examples used for the training/validation/test parts of `data`.
struct ExampleSplit {
  std::vector<enc::Example> train, val, test;
};
ExampleSplit split_examples(const TrainConfig& cfg, const std::vector<EventSequence>& data, const Split& split);

// ---------------------------------------------------------------------------
// Learning from a sequence with a known unobserved interval.

struct GapSequence {
  EventSequence observed;
  double gap_start = 0.0;
  double gap_end = 0.0;
};

/// Mean-imputed times t_s + n * tau_hat < t_e, n = 1, 2, ...
std::vector<double> mean_imputation_times(double gap_start, double gap_end, double tau_hat);

/// Trains on one partially observed sequence for cfg.max_epochs steps (no
/// validation data exists, so there is no early stopping).  Strategy from
/// cfg.imputation.  Reparam rollouts beyond 1e4 imputed events abort.
std::unique_ptr<Model> train_with_imputation(const TrainConfig& cfg, const GapSequence& data,
                                             const enc::Scaling& scaling, const EpochCallback& on_epoch = {});

/// Per-event NLL of `truth` (a complete sequence) under the model.
double sequence_nll(const Model& model, const EventSequence& truth);

// ---------------------------------------------------------------------------

struct ConditionalResult {
  bool history = false;
  bool metadata = false;
  double test_nll = 0.0;
};

/// The 2x2 grid {history on/off} x {metadata on/off}; test NLL for each.
std::vector<ConditionalResult> evaluate_conditional(const TrainConfig& base, const std::vector<EventSequence>& data);

// ---------------------------------------------------------------------------
// Using a trained model.

/// Context vector after observing `history` (empty history -> h = 0).
/// `metadata` is the code for the next event when the model uses metadata.
std::vector<double> history_context(const Model& model, const EventSequence& history, std::optional<int> metadata,
                                    std::optional<std::size_t> sequence_index,
                                    const std::vector<double>* seq_embedding = nullptr);

/// Generates n events autoregressively after `history`.  `metadata_fn`
/// supplies the metadata code for each new event from its predecessor time.
EventSequence generate_sequence(const Model& model, const EventSequence& history, std::size_t n, Rng& rng,
                                std::optional<std::size_t> sequence_index = std::nullopt,
                                const std::vector<double>* seq_embedding = nullptr,
                                const std::function<int(double)>& metadata_fn = {});

/// Learned sequence embeddings, one row per training sequence.
std::vector<std::vector<double>> sequence_embeddings(const Model& model);

// ---------------------------------------------------------------------------
// Checkpoints and metrics.

nlohmann::json checkpoint_json(const TrainConfig& cfg, const Model& model);
struct Checkpoint {
  TrainConfig config;
  std::unique_ptr<Model> model;
};
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::string& path, const TrainConfig& cfg, const Model& model);
Checkpoint load_checkpoint(const std::string& path);

void write_metrics_csv(const std::string& path, const std::vector<EpochRecord>& history);

}  // namespace iftpp::train
