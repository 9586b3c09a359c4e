// SPDX-License-Identifier: Apache-2.0
// Finite-difference check of the full training objective against every
// named parameter tensor.
#pragma once

#include <cmath>
#include <map>
#include <string>

#include "pkt/loss.hpp"
#include "pkt/model.hpp"

namespace pkt::testing {

struct ParamCheck {
  double max_violation = 0.0;
  double max_abs_diff = 0.0;
  std::size_t checked = 0;
};

inline double objective_value(const PKTParams& params, const PKTConfig& config,
                              const EncodedBatch& batch, const LossConfig& loss) {
  Tape tape(false);
  const BoundParams bound = bind(tape, params);
  const BatchForward fw = forward_batch(tape, bound, batch, config);
  return tape.value(pkt_objective(tape, fw, batch, loss).total).item();
}

/// Per named tensor: max over its elements of |a - n| / (rtol * max(|a|,|n|) + atol).
inline std::map<std::string, ParamCheck> objective_grad_check(PKTParams params,
                                                              const PKTConfig& config,
                                                              const EncodedBatch& batch,
                                                              const LossConfig& loss,
                                                              double h = 1e-5, double rtol = 1e-4,
                                                              double atol = 1e-9) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    const BoundParams bound = bind(tape, params);
    const BatchForward fw = forward_batch(tape, bound, batch, config);
    const Objective obj = pkt_objective(tape, fw, batch, loss);
    tape.backward(obj.total);
    for (Var v : bound.leaves) analytic.push_back(tape.grad(v));
  }
  std::map<std::string, ParamCheck> out;
  auto named = params.named();
  for (std::size_t k = 0; k < named.size(); ++k) {
    auto& [name, tensor] = named[k];
    ParamCheck& pc = out[name];
    for (std::size_t i = 0; i < tensor->size(); ++i) {
      const double x0 = (*tensor)[i];
      (*tensor)[i] = x0 + h;
      const double up = objective_value(params, config, batch, loss);
      (*tensor)[i] = x0 - h;
      const double down = objective_value(params, config, batch, loss);
      (*tensor)[i] = x0;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double diff = std::abs(a - numeric);
      pc.max_abs_diff = std::max(pc.max_abs_diff, diff);
      pc.max_violation =
          std::max(pc.max_violation, diff / (rtol * std::max(std::abs(a), std::abs(numeric)) + atol));
      ++pc.checked;
    }
  }
  return out;
}

}  // namespace pkt::testing
