// iftpp: generate synthetic event data, train and evaluate next-event-time
// models, sample, export intensities and embeddings.
//
// Machine-readable results go to stdout as JSON; logs go to stderr.
// Exit codes: 0 ok, 1 runtime error, 2 input error.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "iftpp/errors.hpp"
#include "iftpp/flows/flows.hpp"
#include "iftpp/gen/generators.hpp"
#include "iftpp/train/trainer.hpp"

using namespace iftpp;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kInput = 2;

void log(const std::string& msg) { std::cerr << "iftpp: " << msg << '\n'; }

void emit(const json& j) { std::cout << j.dump(2) << std::endl; }

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InputError(flag + ": '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw InputError(flag + ": empty list");
  return out;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("'" + path + "' is not valid JSON: " + e.what());
  }
}

train::TrainConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  try {
    return train::config_from_json(read_json_file(path));
  } catch (const InputError& e) {
    throw InputError("config '" + path + "': " + e.what());
  }
}

// --- files with an unobserved interval ----------------------------------------

// One JSON object per line: {"id", "arrival_times", "gap": [start, end],
// "ground_truth": [...]} where ground_truth (optional) holds the complete
// arrival times.
struct GapRecord {
  train::GapSequence gap;
  std::optional<EventSequence> truth;
};

json times_json(const EventSequence& s) { return {{"id", s.id}, {"arrival_times", s.arrival_times}}; }

std::vector<GapRecord> read_gap_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::vector<GapRecord> out;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(no) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw InputError(where + "invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw InputError(where + "expected an object");
    if (!j.contains("gap")) throw InputError(where + "missing gap annotation \"gap\": [start, end]");
    GapRecord r;
    try {
      json seq = j;
      seq.erase("gap");
      seq.erase("ground_truth");
      std::istringstream one(seq.dump());
      auto parsed = read_jsonl(one);
      if (parsed.size() != 1) throw InputError("expected one sequence");
      r.gap.observed = std::move(parsed[0]);
      const auto g = j.at("gap").get<std::vector<double>>();
      if (g.size() != 2 || !(g[0] <= g[1])) throw InputError("gap must be [start, end] with start <= end");
      r.gap.gap_start = g[0];
      r.gap.gap_end = g[1];
      if (j.contains("ground_truth")) {
        EventSequence t;
        t.id = r.gap.observed.id;
        t.arrival_times = j.at("ground_truth").get<std::vector<double>>();
        t.validate();
        r.truth = std::move(t);
      }
    } catch (const json::exception& e) {
      throw InputError(where + e.what());
    } catch (const InputError& e) {
      const std::string msg = e.what();
      throw InputError(msg.rfind("line ", 0) == 0 ? msg.substr(msg.find(": ") + 2).insert(0, where) : where + msg);
    }
    out.push_back(std::move(r));
  }
  if (out.empty()) throw InputError("'" + path + "' holds no sequences");
  return out;
}

// --- generate -----------------------------------------------------------------

struct GenerateArgs {
  std::string kind, out;
  std::size_t n_seqs = 64, n_events = 1024;
  std::uint64_t seed = 0;
  std::optional<double> rate, mu, log_mean, log_std, switch_prob;
  std::string alpha, beta;
  std::optional<double> mask_fraction;
};

int cmd_generate(const GenerateArgs& a) {
  gen::GeneratorSpec spec = gen::preset(a.kind);
  spec.n_sequences = a.n_seqs;
  spec.n_events = a.n_events;
  spec.seed = a.seed;
  if (a.rate) spec.rate = *a.rate;
  if (a.mu) spec.hawkes.mu = *a.mu;
  if (!a.alpha.empty()) spec.hawkes.alpha = parse_list(a.alpha, "--alpha");
  if (!a.beta.empty()) spec.hawkes.beta = parse_list(a.beta, "--beta");
  if (a.log_mean) spec.renewal.log_mean = *a.log_mean;
  if (a.log_std) spec.renewal.log_std = *a.log_std;
  if (a.switch_prob) spec.two_regime.switch_prob = *a.switch_prob;
  spec.validate();
  const auto seqs = gen::generate(spec);
  json out{{"kind", a.kind},
           {"n_sequences", spec.n_sequences},
           {"n_events", spec.n_events},
           {"seed", spec.seed},
           {"true_nll", gen::true_nll(spec, seqs)},
           {"out", a.out}};
  if (a.mask_fraction) {
    if (!(*a.mask_fraction > 0.0 && *a.mask_fraction < 1.0)) throw InputError("--mask-fraction must lie in (0, 1)");
    std::ofstream f(a.out);
    if (!f) throw InputError("cannot write '" + a.out + "'");
    std::size_t removed = 0;
    for (std::size_t j = 0; j < seqs.size(); ++j) {
      Rng rng = derive_rng(a.seed, 0x3a5c0000 + j);
      const auto m = gen::mask_interval(seqs[j], *a.mask_fraction, rng);
      json line = times_json(m.observed);
      if (m.observed.metadata) line["metadata"] = *m.observed.metadata;
      line["gap"] = {m.gap_start, m.gap_end};
      line["ground_truth"] = m.ground_truth.arrival_times;
      f << line.dump() << '\n';
      removed += m.removed.size();
    }
    out["mask_fraction"] = *a.mask_fraction;
    out["removed_events"] = removed;
  } else {
    write_jsonl_file(a.out, seqs);
  }
  emit(out);
  return kOk;
}

// --- train / evaluate ---------------------------------------------------------

json report_json(const train::NllReport& r) {
  json j{{"time_nll", r.time_nll}, {"events", r.events}};
  if (r.total_nll) j["total_nll"] = *r.total_nll;
  if (r.mark_accuracy) j["mark_accuracy"] = *r.mark_accuracy;
  return j;
}

void warn_deficient(const train::TrainConfig& cfg) {
  if (cfg.model == train::ModelKind::fullynn)
    log("warning: the fullynn density is deficient (it integrates to less than 1 over positive times), so its "
        "NLL is not comparable to normalised models");
}

struct TrainArgs {
  std::string config, data, checkpoint, metrics;
  std::optional<std::uint64_t> seed;
  std::size_t log_every = 50;
};

int cmd_train(const TrainArgs& a) {
  train::TrainConfig cfg = load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  const auto data = read_jsonl_file(a.data);
  warn_deficient(cfg);
  log("training " + std::string(train::model_name(cfg.model)) + " on " + std::to_string(data.size()) +
      " sequences");
  const auto res = train::train(cfg, data, [&](const train::EpochRecord& r) {
    if (a.log_every && r.epoch % a.log_every == 0) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "epoch %zu train %.5f val %.5f", r.epoch, r.train_nll, r.val_nll);
      log(buf);
    }
  });
  if (!a.checkpoint.empty()) train::save_checkpoint(a.checkpoint, cfg, *res.fit.model);
  if (!a.metrics.empty()) train::write_metrics_csv(a.metrics, res.fit.history);
  emit({{"model", std::string(train::model_name(cfg.model))},
        {"seed", cfg.seed},
        {"epochs", res.fit.history.size()},
        {"best_epoch", res.fit.best_epoch},
        {"l2", res.fit.l2},
        {"deficient", res.fit.model->deficient()},
        {"train", report_json(res.train)},
        {"val", report_json(res.val)},
        {"test", report_json(res.test)},
        {"test_nll", res.test.time_nll}});
  return kOk;
}

struct EvaluateArgs {
  std::string checkpoint, data, split = "all", true_model;
};

void check_compatible(const train::Model& m, const std::vector<EventSequence>& data) {
  const auto& ec = m.encoder().config();
  const auto info = train::DataInfo::of(data);
  for (const auto& s : data) {
    if (ec.num_marks && !s.marks)
      throw InputError("sequence '" + s.id + "' has no marks but the checkpoint is mark-aware");
    if (ec.metadata_classes && !s.metadata)
      throw InputError("sequence '" + s.id + "' has no metadata but the checkpoint is metadata-conditioned");
  }
  if (ec.num_marks && info.num_marks > ec.num_marks)
    throw InputError("data has " + std::to_string(info.num_marks) + " mark classes, checkpoint has " +
                     std::to_string(ec.num_marks));
  if (ec.metadata_classes && info.metadata_classes > ec.metadata_classes)
    throw InputError("data has " + std::to_string(info.metadata_classes) + " metadata classes, checkpoint has " +
                     std::to_string(ec.metadata_classes));
  if (ec.num_sequences && data.size() != ec.num_sequences)
    throw InputError("checkpoint has embeddings for " + std::to_string(ec.num_sequences) +
                     " sequences, data has " + std::to_string(data.size()));
}

int cmd_evaluate(const EvaluateArgs& a) {
  const auto data = read_jsonl_file(a.data);
  if (!a.true_model.empty()) {
    if (!a.checkpoint.empty()) throw InputError("--true-model and --checkpoint are exclusive");
    const gen::GeneratorSpec spec = gen::preset(a.true_model);
    std::size_t events = 0;
    for (const auto& s : data) events += s.size();
    emit({{"true_model", a.true_model}, {"time_nll", gen::true_nll(spec, data)}, {"events", events}});
    return kOk;
  }
  if (a.checkpoint.empty()) throw InputError("--checkpoint or --true-model is required");
  auto ck = train::load_checkpoint(a.checkpoint);
  check_compatible(*ck.model, data);
  std::vector<enc::Example> xs;
  if (a.split == "all") {
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    xs = train::make_examples(data, all);
  } else {
    // the split the training run used, recomputed from its config
    train::TrainConfig cfg = ck.config;
    cfg.chunk_len = 0;
    train::Split split;
    if (cfg.use_sequence_embedding) {
      for (std::size_t i = 0; i < data.size(); ++i) split.train.push_back(i);
      split.val = split.test = split.train;
    } else {
      split = train::split_dataset(data.size(), cfg.split, cfg.seed);
    }
    auto ex = train::split_examples(cfg, data, split);
    if (a.split == "train") xs = std::move(ex.train);
    else if (a.split == "val") xs = std::move(ex.val);
    else if (a.split == "test") xs = std::move(ex.test);
    else throw InputError("--split must be all, train, val or test");
  }
  if (ck.model->deficient()) warn_deficient(ck.config);
  json out = report_json(train::evaluate(*ck.model, xs, ck.config.batch_size));
  out["split"] = a.split;
  out["model"] = std::string(train::model_name(ck.config.model));
  emit(out);
  return kOk;
}

// --- sample / intensity ---------------------------------------------------------

struct ConditionArgs {
  std::string checkpoint, history_file;
  std::size_t history_index = 0;
  std::optional<int> metadata;
  std::optional<std::size_t> sequence_index;
  std::string embedding;
};

EventSequence load_history(const ConditionArgs& a) {
  if (a.history_file.empty()) return {};
  const auto seqs = read_jsonl_file(a.history_file);
  if (a.history_index >= seqs.size())
    throw InputError("--history-index " + std::to_string(a.history_index) + " but the file holds " +
                     std::to_string(seqs.size()) + " sequences");
  return seqs[a.history_index];
}

std::optional<std::vector<double>> load_embedding(const ConditionArgs& a) {
  if (a.embedding.empty()) return std::nullopt;
  return parse_list(a.embedding, "--embedding");
}

struct SampleArgs {
  ConditionArgs cond;
  std::size_t n = 1;
  std::uint64_t seed = 0;
  bool continuation = false;
};

int cmd_sample(const SampleArgs& a) {
  const auto ck = train::load_checkpoint(a.cond.checkpoint);
  const auto& m = *ck.model;
  const EventSequence history = load_history(a.cond);
  const auto emb = load_embedding(a.cond);
  Rng rng = derive_rng(a.seed, 0x5a3b1e);
  std::vector<double> taus;
  if (a.continuation) {
    std::function<int(double)> meta;
    if (a.cond.metadata) meta = [code = *a.cond.metadata](double) { return code; };
    const EventSequence out =
        train::generate_sequence(m, history, a.n, rng, a.cond.sequence_index, emb ? &*emb : nullptr, meta);
    const auto gaps = out.gaps();
    taus.assign(gaps.end() - static_cast<std::ptrdiff_t>(a.n), gaps.end());
  } else {
    const auto c = train::history_context(m, history, a.cond.metadata, a.cond.sequence_index, emb ? &*emb : nullptr);
    const auto dist = m.conditional(c);
    taus.reserve(a.n);
    for (std::size_t i = 0; i < a.n; ++i) taus.push_back(dist->sample(rng));
  }
  emit(taus);
  return kOk;
}

struct IntensityArgs {
  ConditionArgs cond;
  std::string grid = "0.01:10:200";
  std::string out;
};

int cmd_intensity(const IntensityArgs& a) {
  const auto g = [&] {
    std::string s = a.grid;
    for (char& ch : s)
      if (ch == ':') ch = ',';
    return parse_list(s, "--grid");
  }();
  if (g.size() != 3 || !(g[0] > 0.0) || !(g[1] > g[0]) || g[2] < 2 || g[2] != std::floor(g[2]))
    throw InputError("--grid must be lo:hi:points with 0 < lo < hi and points >= 2");
  const auto ck = train::load_checkpoint(a.cond.checkpoint);
  const auto emb = load_embedding(a.cond);
  const auto c = train::history_context(*ck.model, load_history(a.cond), a.cond.metadata, a.cond.sequence_index,
                                        emb ? &*emb : nullptr);
  const auto dist = ck.model->conditional(c);
  if (ck.model->deficient()) warn_deficient(ck.config);
  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw InputError("cannot write '" + a.out + "'");
  }
  std::ostream& os = a.out.empty() ? std::cout : file;
  os << "tau,pdf,cdf,intensity,cumulative_intensity\n";
  const std::size_t n = static_cast<std::size_t>(g[2]);
  char buf[160];
  for (std::size_t i = 0; i < n; ++i) {
    const double tau = g[0] + (g[1] - g[0]) * static_cast<double>(i) / static_cast<double>(n - 1);
    double lambda = std::nan(""), cum = std::nan("");
    try {
      const auto in = flows::intensity_from_density([&](double t) { return dist->log_pdf(t); },
                                                    [&](double t) { return dist->cdf(t); }, tau);
      lambda = in.lambda;
      cum = in.cumulative;
    } catch (const flows::SaturationError&) {
      // survival below resolution; left as nan
    }
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", tau, std::exp(dist->log_pdf(tau)),
                  dist->cdf(tau), lambda, cum);
    os << buf;
  }
  if (!a.out.empty()) emit({{"out", a.out}, {"points", n}});
  return kOk;
}

// --- impute -----------------------------------------------------------------------

struct ImputeArgs {
  std::string strategy = "all", data, config, checkpoint;
  std::size_t index = 0;
  std::optional<std::uint64_t> seed;
};

int cmd_impute(const ImputeArgs& a) {
  train::TrainConfig cfg = load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  const auto records = read_gap_file(a.data);
  if (a.index >= records.size()) throw InputError("--index outside the file");
  const GapRecord& r = records[a.index];
  std::vector<std::pair<std::string, train::Imputation>> modes;
  if (a.strategy == "none" || a.strategy == "all") modes.emplace_back("none", train::Imputation::none);
  if (a.strategy == "mean" || a.strategy == "all") modes.emplace_back("mean", train::Imputation::mean);
  if (a.strategy == "reparam" || a.strategy == "all") modes.emplace_back("reparam", train::Imputation::reparam);
  if (modes.empty()) throw InputError("--strategy must be none, mean, reparam or all");
  if (!a.checkpoint.empty() && modes.size() != 1) throw InputError("--out-checkpoint needs a single --strategy");
  const enc::Scaling scaling = enc::Scaling::fit({r.gap.observed});
  json results = json::array();
  for (const auto& [name, mode] : modes) {
    train::TrainConfig c = cfg;
    c.imputation = mode;
    log("training with imputation strategy '" + name + "'");
    auto model = train::train_with_imputation(c, r.gap, scaling);
    json row{{"strategy", name}};
    if (r.truth) row["ground_truth_nll"] = train::sequence_nll(*model, *r.truth);
    row["observed_nll"] = train::sequence_nll(*model, r.gap.observed);
    results.push_back(row);
    if (!a.checkpoint.empty()) train::save_checkpoint(a.checkpoint, c, *model);
  }
  emit({{"gap", {r.gap.gap_start, r.gap.gap_end}}, {"seed", cfg.seed}, {"results", results}});
  return kOk;
}

// --- embed ------------------------------------------------------------------------

struct EmbedArgs {
  std::string checkpoint, data, out;
};

int cmd_embed(const EmbedArgs& a) {
  const auto ck = train::load_checkpoint(a.checkpoint);
  const auto emb = train::sequence_embeddings(*ck.model);
  std::vector<std::string> ids;
  if (!a.data.empty()) {
    const auto data = read_jsonl_file(a.data);
    if (data.size() != emb.size())
      throw InputError("checkpoint has " + std::to_string(emb.size()) + " embeddings, data has " +
                       std::to_string(data.size()) + " sequences");
    for (const auto& s : data) ids.push_back(s.id);
  } else {
    for (std::size_t i = 0; i < emb.size(); ++i) ids.push_back(std::to_string(i));
  }
  if (a.out.empty()) {
    json rows = json::array();
    for (std::size_t i = 0; i < emb.size(); ++i) rows.push_back({{"id", ids[i]}, {"embedding", emb[i]}});
    emit(rows);
    return kOk;
  }
  std::ofstream f(a.out);
  if (!f) throw InputError("cannot write '" + a.out + "'");
  f << "id";
  for (std::size_t k = 0; k < emb.front().size(); ++k) f << ",e" << k;
  f << '\n';
  char buf[32];
  for (std::size_t i = 0; i < emb.size(); ++i) {
    f << json(ids[i]).dump();
    for (double v : emb[i]) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      f << buf;
    }
    f << '\n';
  }
  emit({{"out", a.out}, {"sequences", emb.size()}, {"dimension", emb.front().size()}});
  return kOk;
}

void add_condition_flags(CLI::App* cmd, ConditionArgs& c) {
  cmd->add_option("--checkpoint", c.checkpoint, "Model checkpoint")->required();
  cmd->add_option("--history-file", c.history_file, "JSONL file holding the observed history (default: none)");
  cmd->add_option("--history-index", c.history_index, "Line of the history file to use");
  cmd->add_option("--metadata", c.metadata, "Metadata code for the next event");
  cmd->add_option("--sequence-index", c.sequence_index, "Learned sequence embedding to condition on");
  cmd->add_option("--embedding", c.embedding, "Explicit sequence embedding, comma separated");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Next-event-time models for temporal point processes"};
  app.require_subcommand(1);

  GenerateArgs gen_a;
  auto* gen_cmd = app.add_subcommand("generate", "Simulate a synthetic dataset and print its true-model NLL");
  gen_cmd->add_option("kind", gen_a.kind, "poisson | renewal | self_correcting | hawkes1 | hawkes2 | two_regime")
      ->required();
  gen_cmd->add_option("--n-seqs", gen_a.n_seqs, "Number of sequences");
  gen_cmd->add_option("--n-events", gen_a.n_events, "Events per sequence");
  gen_cmd->add_option("--seed", gen_a.seed, "Random seed");
  gen_cmd->add_option("--out", gen_a.out, "Output JSONL file")->required();
  gen_cmd->add_option("--rate", gen_a.rate, "Poisson rate");
  gen_cmd->add_option("--mu", gen_a.mu, "Hawkes base rate");
  gen_cmd->add_option("--alpha", gen_a.alpha, "Hawkes kernel weights, comma separated");
  gen_cmd->add_option("--beta", gen_a.beta, "Hawkes kernel decays, comma separated");
  gen_cmd->add_option("--log-mean", gen_a.log_mean, "Renewal log-normal location");
  gen_cmd->add_option("--log-std", gen_a.log_std, "Renewal log-normal scale");
  gen_cmd->add_option("--switch-prob", gen_a.switch_prob, "Two-regime switching probability");
  gen_cmd->add_option("--mask-fraction", gen_a.mask_fraction,
                      "Hide an interval holding about this fraction of each sequence and write gap records");

  TrainArgs train_a;
  auto* train_cmd = app.add_subcommand("train", "Train a model; prints train/val/test NLL");
  train_cmd->add_option("--config", train_a.config, "Flat JSON config (defaults when omitted)");
  train_cmd->add_option("--data", train_a.data, "JSONL dataset")->required();
  train_cmd->add_option("--out-checkpoint", train_a.checkpoint, "Checkpoint to write");
  train_cmd->add_option("--metrics", train_a.metrics, "CSV of epoch,train_nll,val_nll");
  train_cmd->add_option("--seed", train_a.seed, "Overrides the config seed");
  train_cmd->add_option("--log-every", train_a.log_every, "Epochs between progress lines (0: silent)");

  EvaluateArgs eval_a;
  auto* eval_cmd = app.add_subcommand("evaluate", "NLL of a checkpoint (or the true model) on a dataset");
  eval_cmd->add_option("--checkpoint", eval_a.checkpoint, "Model checkpoint");
  eval_cmd->add_option("--data", eval_a.data, "JSONL dataset")->required();
  eval_cmd->add_option("--split", eval_a.split, "all | train | val | test (as split by the training run)");
  eval_cmd->add_option("--true-model", eval_a.true_model, "Score with the generating process of this preset");

  SampleArgs sample_a;
  auto* sample_cmd = app.add_subcommand("sample", "Sample inter-event times after a history (JSON array)");
  add_condition_flags(sample_cmd, sample_a.cond);
  sample_cmd->add_option("--n", sample_a.n, "Number of samples");
  sample_cmd->add_option("--seed", sample_a.seed, "Random seed");
  sample_cmd->add_flag("--continue", sample_a.continuation,
                       "Generate a continuation (each time conditions the next) instead of independent draws");

  IntensityArgs int_a;
  auto* int_cmd = app.add_subcommand("intensity", "CSV grid of density, CDF and conditional intensity");
  add_condition_flags(int_cmd, int_a.cond);
  int_cmd->add_option("--grid", int_a.grid, "lo:hi:points over the time since the last event");
  int_cmd->add_option("--out", int_a.out, "CSV file (default: stdout)");

  ImputeArgs imp_a;
  auto* imp_cmd = app.add_subcommand("impute", "Train on a sequence with a hidden interval; ground-truth NLL");
  imp_cmd->add_option("--strategy", imp_a.strategy, "none | mean | reparam | all");
  imp_cmd->add_option("--data-with-gap", imp_a.data, "Gap records as written by generate --mask-fraction")
      ->required();
  imp_cmd->add_option("--index", imp_a.index, "Record of the file to use");
  imp_cmd->add_option("--config", imp_a.config, "Flat JSON config");
  imp_cmd->add_option("--seed", imp_a.seed, "Overrides the config seed");
  imp_cmd->add_option("--out-checkpoint", imp_a.checkpoint, "Checkpoint to write (single strategy)");

  EmbedArgs emb_a;
  auto* emb_cmd = app.add_subcommand("embed", "Export learned sequence embeddings");
  emb_cmd->add_option("--checkpoint", emb_a.checkpoint, "Checkpoint trained with sequence embeddings")->required();
  emb_cmd->add_option("--data", emb_a.data, "Training dataset, for sequence ids");
  emb_cmd->add_option("--out", emb_a.out, "CSV file (default: JSON on stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInput;
  }

  try {
    if (*gen_cmd) return cmd_generate(gen_a);
    if (*train_cmd) return cmd_train(train_a);
    if (*eval_cmd) return cmd_evaluate(eval_a);
    if (*sample_cmd) return cmd_sample(sample_a);
    if (*int_cmd) return cmd_intensity(int_a);
    if (*imp_cmd) return cmd_impute(imp_a);
    if (*emb_cmd) return cmd_embed(emb_a);
  } catch (const InputError& e) {
    log(std::string("input error: ") + e.what());
    return kInput;
  } catch (const json::exception& e) {
    log(std::string("input error: ") + e.what());
    return kInput;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return kRuntime;
  }
  return kRuntime;
}
