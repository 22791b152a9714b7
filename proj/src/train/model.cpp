#include "iftpp/train/model.hpp"

#include <cmath>
#include <random>

#include "iftpp/ad/ops.hpp"
#include "iftpp/dist/gompertz.hpp"
#include "iftpp/errors.hpp"

namespace iftpp::train {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using nlohmann::json;

namespace {

constexpr int kStateVersion = 1;

/// tau -> a * tau applied to a distribution of tau / a.
class Rescaled final : public dist::TimeDistribution {
 public:
  Rescaled(std::unique_ptr<dist::TimeDistribution> inner, double a) : inner_(std::move(inner)), a_(a) {}
  double log_pdf(double tau) const override { return inner_->log_pdf(tau / a_) - std::log(a_); }
  double cdf(double tau) const override { return inner_->cdf(tau / a_); }
  double sample(Rng& rng) const override { return a_ * inner_->sample(rng); }
  std::optional<double> mean() const override {
    const auto m = inner_->mean();
    return m ? std::optional<double>(a_ * *m) : std::nullopt;
  }

 private:
  std::unique_ptr<dist::TimeDistribution> inner_;
  double a_;
};

Var row_constant(Tape& tape, std::span<const double> context) {
  return tape.constant(Tensor::matrix(1, context.size(), std::vector<double>(context.begin(), context.end())));
}

std::vector<double> to_vector(const Var& v) { return {v.value().values().begin(), v.value().values().end()}; }

json tensor_json(const Tensor& t) { return {{"shape", t.shape()}, {"values", t.values()}}; }

Tensor tensor_from_json(const json& j) {
  Shape shape = j.at("shape").get<Shape>();
  std::vector<double> values = j.at("values").get<std::vector<double>>();
  if (values.size() != ad::element_count(shape)) throw InputError("parameter value count does not match its shape");
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace

std::string_view model_name(ModelKind k) {
  switch (k) {
    case ModelKind::lognormmix: return "lognormmix";
    case ModelKind::lognormal: return "lognormal";
    case ModelKind::dsflow: return "dsflow";
    case ModelKind::sosflow: return "sosflow";
    case ModelKind::fullynn: return "fullynn";
    case ModelKind::gompertz: return "gompertz";
    case ModelKind::exponential: return "exponential";
  }
  return "?";
}

ModelKind parse_model(std::string_view name) {
  for (ModelKind k : {ModelKind::lognormmix, ModelKind::lognormal, ModelKind::dsflow, ModelKind::sosflow,
                      ModelKind::fullynn, ModelKind::gompertz, ModelKind::exponential})
    if (model_name(k) == name) return k;
  throw InputError("unknown model '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  encoder.validate();
  if (components == 0) throw InputError("components must be positive");
  if ((kind == ModelKind::dsflow || kind == ModelKind::sosflow) && layers == 0)
    throw InputError("flow models need at least one layer");
  if (kind == ModelKind::fullynn && fullynn_hidden == 0) throw InputError("fullynn_hidden must be positive");
}

Model::Model(Uninitialised, ModelConfig cfg, enc::Scaling scaling) : cfg_(std::move(cfg)), scaling_(scaling) {
  if (cfg_.kind == ModelKind::lognormal) cfg_.components = 1;
  cfg_.validate();
  scaling_.validate();
}

Model::Model(ModelConfig cfg, enc::Scaling scaling, std::uint64_t seed)
    : Model(Uninitialised{}, std::move(cfg), scaling) {
  Rng rng = derive_rng(seed, 0x5eed);
  encoder_ = enc::Encoder(cfg_.encoder, params_, rng);
  const std::size_t c = context_dim(), k = cfg_.components;
  switch (cfg_.kind) {
    case ModelKind::lognormmix:
    case ModelKind::lognormal:
      mixture_ = enc::MixtureHead(params_, "decoder.mixture", c, k, rng);
      break;
    case ModelKind::dsflow:
      for (std::size_t m = 0; m < cfg_.layers; ++m)
        dsf_.emplace_back(params_, "decoder.dsf" + std::to_string(m), c, k, rng);
      break;
    case ModelKind::sosflow: {
      const std::size_t r1 = cfg_.degree + 1;
      for (std::size_t m = 0; m < cfg_.layers; ++m) {
        const std::string name = "decoder.sos" + std::to_string(m);
        sos_a_.emplace_back(params_, name + ".a", c, r1 * k, rng, 0.1);
        sos_a0_.emplace_back(params_, name + ".a0", c, 1, rng, 0.1);
        // start close to the identity: sum_k a(0,k)^2 = 1, higher orders 0
        Tensor& b = sos_a_.back().bias().value;
        b.fill(0.0);
        for (std::size_t j = 0; j < k; ++j) b[j] = 1.0 / std::sqrt(static_cast<double>(k));
        sos_a0_.back().bias().value.fill(0.0);
      }
      break;
    }
    case ModelKind::fullynn: {
      const std::size_t d = cfg_.fullynn_hidden;
      scalar_head_ = enc::Affine(params_, "decoder.input", c, d, rng);
      const double bound = 1.0 / std::sqrt(static_cast<double>(d));
      auto pos = [&](Shape s, double hi) {
        Tensor t(std::move(s));
        std::uniform_real_distribution<double> u(0.0, hi);
        for (double& v : t.values()) v = u(rng);
        return t;
      };
      auto sym = [&](Shape s) {
        Tensor t(std::move(s));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (double& v : t.values()) v = u(rng);
        return t;
      };
      params_.add("decoder.fullynn.w1", pos({d}, 1.0));
      params_.add("decoder.fullynn.w2", pos({d, d}, bound));
      params_.add("decoder.fullynn.w3", pos({d}, bound));
      params_.add("decoder.fullynn.b2", sym({d}));
      params_.add("decoder.fullynn.b3", Tensor::scalar(0.0));
      break;
    }
    case ModelKind::gompertz:
      scalar_head_ = enc::Affine(params_, "decoder.log_alpha", c, 1, rng);
      params_.add("decoder.log_beta", Tensor::scalar(0.0));
      break;
    case ModelKind::exponential:
      scalar_head_ = enc::Affine(params_, "decoder.log_rate", c, 1, rng);
      break;
  }
  if (cfg_.encoder.num_marks) marks_ = enc::MarkHead(params_, "marks", c, cfg_.encoder.num_marks, rng, cfg_.mark_hidden);
  bn_.assign(flow_layers() ? flow_layers() + 1 : 0, flows::BatchNormFlowParams{});
  if (!bn_.empty()) bn_[0] = {scaling_.log_mean, scaling_.log_std};
}

void Model::attach_heads() {
  encoder_ = enc::Encoder::attach(cfg_.encoder, params_);
  switch (cfg_.kind) {
    case ModelKind::lognormmix:
    case ModelKind::lognormal:
      mixture_ = enc::MixtureHead::attach(params_, "decoder.mixture");
      break;
    case ModelKind::dsflow:
      for (std::size_t m = 0; m < cfg_.layers; ++m)
        dsf_.push_back(enc::MixtureHead::attach(params_, "decoder.dsf" + std::to_string(m)));
      break;
    case ModelKind::sosflow:
      for (std::size_t m = 0; m < cfg_.layers; ++m) {
        sos_a_.push_back(enc::Affine::attach(params_, "decoder.sos" + std::to_string(m) + ".a"));
        sos_a0_.push_back(enc::Affine::attach(params_, "decoder.sos" + std::to_string(m) + ".a0"));
      }
      break;
    case ModelKind::fullynn:
      scalar_head_ = enc::Affine::attach(params_, "decoder.input");
      for (const char* n : {"w1", "w2", "w3", "b2", "b3"})
        if (!params_.contains(std::string("decoder.fullynn.") + n))
          throw InputError(std::string("missing parameter 'decoder.fullynn.") + n + "'");
      break;
    case ModelKind::gompertz:
      scalar_head_ = enc::Affine::attach(params_, "decoder.log_alpha");
      if (!params_.contains("decoder.log_beta")) throw InputError("missing parameter 'decoder.log_beta'");
      break;
    case ModelKind::exponential:
      scalar_head_ = enc::Affine::attach(params_, "decoder.log_rate");
      break;
  }
  if (cfg_.encoder.num_marks) marks_ = enc::MarkHead::attach(params_, "marks");
}

std::size_t Model::flow_layers() const {
  return (cfg_.kind == ModelKind::dsflow || cfg_.kind == ModelKind::sosflow) ? cfg_.layers : 0;
}

Var Model::sos_a0(const Var& context, std::size_t m) const {
  return ad::reshape(sos_a0_[m].apply(context), Shape{context.shape()[0]});
}

flows::MapVars Model::flow_chain(const Var& context, const Var& log_tau, std::size_t stop_stage) const {
  flows::MapVars acc{log_tau, ad::neg(log_tau)};
  auto push = [&acc](const flows::MapVars& step) {
    acc.value = step.value;
    acc.log_derivative = acc.log_derivative + step.log_derivative;
  };
  push(flows::batchnorm_inverse(acc.value, bn_[0]));
  for (std::size_t m = 0; m < cfg_.layers; ++m) {
    if (cfg_.kind == ModelKind::dsflow) {
      const dist::MixtureVars mv = dsf_[m].apply(context);
      push(flows::dsf_inverse(acc.value, {mv.log_weights, mv.means, mv.log_scales}));
    } else {
      push(flows::sos_inverse(acc.value, {cfg_.degree, sos_a_[m].apply(context), sos_a0(context, m)}));
    }
    if (m + 1 == stop_stage) return acc;
    push(flows::batchnorm_inverse(acc.value, bn_[m + 1]));
  }
  return acc;
}

Var Model::log_density(const Var& context, const Var& log_tau) const {
  Tape& tape = context.tape();
  const std::size_t n = context.shape()[0];
  if (log_tau.shape() != Shape{n})
    throw ad::ShapeError("log_density: expected " + std::to_string(n) + " times, got " + ad::to_string(log_tau.shape()));
  const double log_a = std::log(scaling_.tau_mean);
  switch (cfg_.kind) {
    case ModelKind::lognormmix:
    case ModelKind::lognormal: {
      const Var x = (log_tau - scaling_.log_mean) * (1.0 / scaling_.log_std);
      return dist::gaussian_mixture_logpdf(mixture_.apply(context), x) - log_tau - std::log(scaling_.log_std);
    }
    case ModelKind::dsflow:
    case ModelKind::sosflow:
      return flows::sigmoid_base_logpdf(flow_chain(context, log_tau, 0));
    case ModelKind::fullynn: {
      const Var tau = ad::exp(log_tau - log_a);
      const flows::FullyNnVars v{tape.parameter(params_.get("decoder.fullynn.w1")),
                                 tape.parameter(params_.get("decoder.fullynn.w2")),
                                 tape.parameter(params_.get("decoder.fullynn.w3")),
                                 tape.parameter(params_.get("decoder.fullynn.b2")),
                                 tape.parameter(params_.get("decoder.fullynn.b3"))};
      return flows::fullynn_logpdf(tau, scalar_head_.apply(context), v).log_pdf - log_a;
    }
    case ModelKind::gompertz: {
      const Var tau = ad::exp(log_tau - log_a);
      const Var log_alpha = ad::reshape(scalar_head_.apply(context), Shape{n});
      const Var beta = ad::exp(tape.parameter(params_.get("decoder.log_beta")));
      return dist::gompertz_logpdf(tau, log_alpha, beta) - log_a;
    }
    case ModelKind::exponential: {
      const Var tau = ad::exp(log_tau - log_a);
      return dist::exponential_logpdf(tau, ad::reshape(scalar_head_.apply(context), Shape{n})) - log_a;
    }
  }
  throw std::logic_error("unreachable");
}

Var Model::log_density(const Var& context, std::span<const double> tau) const {
  Tensor lt(Shape{tau.size()});
  for (std::size_t i = 0; i < tau.size(); ++i) {
    if (!(tau[i] > 0.0)) throw DomainError("inter-event times must be positive");
    lt[i] = std::log(tau[i]);
  }
  return log_density(context, context.tape().constant(std::move(lt)));
}

Var Model::mark_log_probs(const Var& context) const {
  if (!marks_) throw InputError("model has no mark head");
  return marks_->log_probs(context);
}

bool Model::supports_reparam() const {
  return cfg_.kind == ModelKind::lognormmix || cfg_.kind == ModelKind::lognormal;
}

Var Model::sample_log_tau_reparam(const Var& context, Rng& rng, double temperature) const {
  if (!supports_reparam()) throw InputError("reparametrized sampling needs a log-normal mixture decoder");
  const dist::MixtureVars mv = mixture_.apply(context);
  const auto noise = dist::ReparamNoise::draw(context.shape()[0], cfg_.components, rng);
  const Var x = dist::lognormmix_sample_reparam_log(mv, noise, temperature);
  return x * scaling_.log_std + scaling_.log_mean;
}

std::optional<dist::MixtureParams> Model::mixture(std::span<const double> context) const {
  if (!supports_reparam()) return std::nullopt;
  dist::MixtureParams p = enc::heads_mixture(context, mixture_);
  for (std::size_t k = 0; k < p.components(); ++k) {
    p.means[k] = scaling_.log_std * p.means[k] + scaling_.log_mean;
    p.scales[k] *= scaling_.log_std;
  }
  return p;
}

flows::FlowStack Model::flow_stack(std::span<const double> context) const {
  Tape tape;
  const Var c = row_constant(tape, context);
  flows::FlowStack stack;
  stack.layers.push_back(bn_[0]);
  for (std::size_t m = 0; m < cfg_.layers; ++m) {
    if (cfg_.kind == ModelKind::dsflow) {
      const dist::MixtureVars mv = dsf_[m].apply(c);
      flows::DsfLayerParams p;
      for (double lw : to_vector(mv.log_weights)) p.weights.push_back(std::exp(lw));
      p.means = to_vector(mv.means);
      for (double ls : to_vector(mv.log_scales)) p.scales.push_back(std::exp(ls));
      stack.layers.push_back(std::move(p));
    } else {
      flows::SosLayerParams p;
      p.degree = cfg_.degree;
      p.components = cfg_.components;
      p.a = to_vector(sos_a_[m].apply(c));
      p.a0 = sos_a0(c, m).value()[0];
      stack.layers.push_back(std::move(p));
    }
    stack.layers.push_back(bn_[m + 1]);
  }
  return stack;
}

std::unique_ptr<dist::TimeDistribution> Model::conditional(std::span<const double> context) const {
  if (context.size() != context_dim())
    throw InputError("context has " + std::to_string(context.size()) + " entries, model expects " +
                     std::to_string(context_dim()));
  const double a = scaling_.tau_mean;
  switch (cfg_.kind) {
    case ModelKind::lognormmix:
    case ModelKind::lognormal:
      return std::make_unique<dist::LogNormalMixture>(*mixture(context));
    case ModelKind::dsflow:
    case ModelKind::sosflow:
      return std::make_unique<flows::FlowDistribution>(flow_stack(context));
    case ModelKind::fullynn: {
      Tape tape;
      const std::size_t d = cfg_.fullynn_hidden;
      flows::FullyNnParams p;
      p.hidden = d;
      p.context = d;
      auto vals = [&](const char* n) {
        const auto v = params_.get(std::string("decoder.fullynn.") + n).value.values();
        return std::vector<double>(v.begin(), v.end());
      };
      p.w1 = vals("w1");
      p.w2 = vals("w2");
      p.w3 = vals("w3");
      p.b2 = vals("b2");
      p.b3 = params_.get("decoder.fullynn.b3").value[0];
      p.v.assign(d * d, 0.0);
      for (std::size_t i = 0; i < d; ++i) p.v[i * d + i] = 1.0;
      p.b0.assign(d, 0.0);
      std::vector<double> pre = to_vector(scalar_head_.apply(row_constant(tape, context)));
      return std::make_unique<Rescaled>(std::make_unique<flows::FullyNnDistribution>(p, std::move(pre)), a);
    }
    case ModelKind::gompertz: {
      Tape tape;
      const double log_alpha = scalar_head_.apply(row_constant(tape, context)).value()[0];
      const double beta = std::exp(params_.get("decoder.log_beta").value[0]);
      return std::make_unique<Rescaled>(
          std::make_unique<dist::Gompertz>(dist::GompertzParams{std::exp(log_alpha), beta}), a);
    }
    case ModelKind::exponential: {
      Tape tape;
      const double log_rate = scalar_head_.apply(row_constant(tape, context)).value()[0];
      return std::make_unique<Rescaled>(std::make_unique<dist::Exponential>(dist::ExponentialParams{std::exp(log_rate)}),
                                        a);
    }
  }
  throw std::logic_error("unreachable");
}

void Model::fit_batchnorm(const Var& context, std::span<const double> tau) {
  if (flow_layers() == 0 || tau.empty()) return;
  Tensor lt(Shape{tau.size()});
  for (std::size_t i = 0; i < tau.size(); ++i) lt[i] = std::log(tau[i]);
  Tape& tape = context.tape();
  const Var log_tau = tape.constant(lt);
  for (std::size_t s = 1; s <= cfg_.layers; ++s) {
    const Tensor& v = flow_chain(context, log_tau, s).value.value();
    double mean = 0.0, sq = 0.0;
    for (double x : v.values()) mean += x;
    mean /= static_cast<double>(v.size());
    for (double x : v.values()) sq += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(sq / static_cast<double>(v.size() - 1)) : 0.0;
    bn_[s] = {mean, sd > 1e-8 ? sd : 1.0};
  }
}

void Model::fit_batchnorm(const std::vector<std::vector<double>>& contexts, std::span<const double> tau) {
  if (flow_layers() == 0 || contexts.empty()) return;
  Tape tape;
  Tensor c(Shape{contexts.size(), context_dim()});
  for (std::size_t i = 0; i < contexts.size(); ++i)
    std::copy(contexts[i].begin(), contexts[i].end(), c.data() + i * context_dim());
  fit_batchnorm(tape.constant(std::move(c)), tau);
}

void Model::post_step() {
  if (cfg_.kind != ModelKind::fullynn) return;
  for (const char* n : {"decoder.fullynn.w1", "decoder.fullynn.w2", "decoder.fullynn.w3"})
    for (double& v : params_.get(n).value.values()) v = std::max(v, 0.0);
}

json Model::state_json() const {
  json j;
  j["version"] = kStateVersion;
  j["model"] = std::string(model_name(cfg_.kind));
  j["components"] = cfg_.components;
  j["layers"] = cfg_.layers;
  j["degree"] = cfg_.degree;
  j["fullynn_hidden"] = cfg_.fullynn_hidden;
  j["mark_hidden"] = cfg_.mark_hidden;
  const auto& e = cfg_.encoder;
  j["encoder"] = {{"hidden", e.hidden},           {"use_history", e.use_history},
                  {"num_marks", e.num_marks},     {"mark_embed", e.mark_embed},
                  {"metadata_classes", e.metadata_classes}, {"metadata_embed", e.metadata_embed},
                  {"num_sequences", e.num_sequences}, {"seq_embed", e.seq_embed}};
  j["scaling"] = {{"log_mean", scaling_.log_mean}, {"log_std", scaling_.log_std}, {"tau_mean", scaling_.tau_mean}};
  json bn = json::array();
  for (const auto& b : bn_) bn.push_back({b.shift, b.scale});
  j["batchnorm"] = bn;
  json ps = json::object();
  for (const auto& [name, p] : params_) ps[name] = tensor_json(p.value);
  j["parameters"] = ps;
  return j;
}

std::unique_ptr<Model> Model::from_state_json(const json& j) {
  try {
    if (j.at("version").get<int>() != kStateVersion)
      throw InputError("unsupported model state version " + j.at("version").dump());
    ModelConfig cfg;
    cfg.kind = parse_model(j.at("model").get<std::string>());
    cfg.components = j.at("components").get<std::size_t>();
    cfg.layers = j.at("layers").get<std::size_t>();
    cfg.degree = j.at("degree").get<std::size_t>();
    cfg.fullynn_hidden = j.at("fullynn_hidden").get<std::size_t>();
    cfg.mark_hidden = j.at("mark_hidden").get<std::size_t>();
    const json& e = j.at("encoder");
    cfg.encoder.hidden = e.at("hidden").get<std::size_t>();
    cfg.encoder.use_history = e.at("use_history").get<bool>();
    cfg.encoder.num_marks = e.at("num_marks").get<std::size_t>();
    cfg.encoder.mark_embed = e.at("mark_embed").get<std::size_t>();
    cfg.encoder.metadata_classes = e.at("metadata_classes").get<std::size_t>();
    cfg.encoder.metadata_embed = e.at("metadata_embed").get<std::size_t>();
    cfg.encoder.num_sequences = e.at("num_sequences").get<std::size_t>();
    cfg.encoder.seq_embed = e.at("seq_embed").get<std::size_t>();
    const json& s = j.at("scaling");
    const enc::Scaling scaling{s.at("log_mean").get<double>(), s.at("log_std").get<double>(),
                               s.at("tau_mean").get<double>()};
    std::unique_ptr<Model> m(new Model(Uninitialised{}, cfg, scaling));
    for (const auto& [name, t] : j.at("parameters").items()) m->params_.add(name, tensor_from_json(t));
    m->attach_heads();
    for (const auto& b : j.at("batchnorm")) m->bn_.push_back({b.at(0).get<double>(), b.at(1).get<double>()});
    if (m->bn_.size() != (m->flow_layers() ? m->flow_layers() + 1 : 0))
      throw InputError("batchnorm entries do not match the number of flow layers");
    for (const auto& b : m->bn_) b.validate();
    return m;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed model state: ") + e.what());
  } catch (const DomainError& e) {
    throw InputError(std::string("malformed model state: ") + e.what());
  }
}

}  // namespace iftpp::train
