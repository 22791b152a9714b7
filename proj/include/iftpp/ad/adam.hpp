#pragma once

#include <map>
#include <string>

#include "iftpp/ad/tape.hpp"

namespace iftpp::ad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates per parameter, created lazily as zeros.
struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  long step = 0;
};

/// One bias-corrected Adam update of every parameter from its .grad.
void adam_step(ParameterStore& params, AdamState& state, const AdamOptions& opts);

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(ParameterStore& params, double max_norm);

}  // namespace iftpp::ad
