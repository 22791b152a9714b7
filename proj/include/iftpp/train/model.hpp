#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "iftpp/ad/tape.hpp"
#include "iftpp/dist/lognormal_mixture.hpp"
#include "iftpp/dist/time_distribution.hpp"
#include "iftpp/encoder/encoder.hpp"
#include "iftpp/flows/flows.hpp"

namespace iftpp::train {

enum class ModelKind { lognormmix, lognormal, dsflow, sosflow, fullynn, gompertz, exponential };

std::string_view model_name(ModelKind k);
/// Throws InputError for an unknown name.
ModelKind parse_model(std::string_view name);

struct ModelConfig {
  ModelKind kind = ModelKind::lognormmix;
  std::size_t components = 64;  // K
  std::size_t layers = 2;       // M, flows only
  std::size_t degree = 3;       // R, SOS only
  std::size_t fullynn_hidden = 64;
  std::size_t mark_hidden = 64;
  enc::EncoderConfig encoder;

  void validate() const;
};

/// An encoder, a decoder for the next inter-event time and an optional mark
/// head.  Parameters are referenced by address, so a Model is neither
/// copyable nor movable; hold it through a pointer.
class Model {
 public:
  Model(ModelConfig cfg, enc::Scaling scaling, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const enc::Scaling& scaling() const { return scaling_; }
  const enc::Encoder& encoder() const { return encoder_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }
  bool has_marks() const { return cfg_.encoder.num_marks > 0; }
  std::size_t context_dim() const { return cfg_.encoder.context_dim(); }

  /// log p(tau) per row, in original time units; differentiable in both
  /// the context [N x C] and log_tau [N].
  ad::Var log_density(const ad::Var& context, const ad::Var& log_tau) const;
  ad::Var log_density(const ad::Var& context, std::span<const double> tau) const;

  /// Row-wise mark log-probabilities [N x classes].
  ad::Var mark_log_probs(const ad::Var& context) const;

  /// Reparametrized draw of log(tau) per row; mixture decoders only.
  ad::Var sample_log_tau_reparam(const ad::Var& context, Rng& rng, double temperature) const;
  bool supports_reparam() const;

  /// The conditional distribution for one context vector.
  std::unique_ptr<dist::TimeDistribution> conditional(std::span<const double> context) const;
  /// Closed-form decoder parameters for one context, for inspection.
  std::optional<dist::MixtureParams> mixture(std::span<const double> context) const;

  /// Re-estimates the fixed standardising layers of a flow decoder from the
  /// given contexts and times, one stage at a time.  No-op for other kinds.
  void fit_batchnorm(const std::vector<std::vector<double>>& contexts, std::span<const double> tau);
  void fit_batchnorm(const ad::Var& context, std::span<const double> tau);

  /// Projection applied after every optimiser step (FullyNN nonnegativity).
  void post_step();
  /// FullyNN density integrates to less than one.
  bool deficient() const { return cfg_.kind == ModelKind::fullynn; }

  nlohmann::json state_json() const;
  static std::unique_ptr<Model> from_state_json(const nlohmann::json& j);

 private:
  struct Uninitialised {};
  Model(Uninitialised, ModelConfig cfg, enc::Scaling scaling);
  void attach_heads();
  std::size_t flow_layers() const;
  flows::MapVars flow_chain(const ad::Var& context, const ad::Var& log_tau, std::size_t stop_stage) const;
  flows::FlowStack flow_stack(std::span<const double> context) const;
  ad::Var sos_a0(const ad::Var& context, std::size_t m) const;

  ModelConfig cfg_;
  enc::Scaling scaling_;
  mutable ad::ParameterStore params_;  // bound to tapes from const methods
  enc::Encoder encoder_;
  enc::MixtureHead mixture_;
  std::vector<enc::MixtureHead> dsf_;
  std::vector<enc::Affine> sos_a_, sos_a0_;
  enc::Affine scalar_head_;  // FullyNN input (V h + b0), log alpha or log rate
  std::optional<enc::MarkHead> marks_;
  // standardisation after every flow layer; [0] follows log(tau)
  std::vector<flows::BatchNormFlowParams> bn_;
};

}  // namespace iftpp::train
