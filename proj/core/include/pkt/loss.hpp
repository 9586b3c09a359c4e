// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "pkt/model.hpp"
#include "pkt/tape.hpp"

namespace pkt {

struct LossConfig {
  double lambda_rr = 1.0;
  double lambda_ci = 1.0;
  /// Weight applied to minority-class steps in the focal term; set from the
  /// training split's imbalance ratio.
  double alpha_ci = 1.0;
  double gamma = 2.0;
  int minority_class = 0;
  double clamp_eps = 1e-7;

  void validate() const;
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

// Every loss takes per-step probabilities, {0,1} labels and a 0/1 mask of the
// same shape and returns the mean over unmasked steps. Probabilities are
// clamped to [eps, 1-eps] before the log; `clamp_events`, when given, is
// incremented by the number of unmasked steps that hit the clamp.

/// Negative log-likelihood of next-step responses.
Var kt_loss(Tape& tape, Var p, const Tensor& labels, const Tensor& mask, double eps = 1e-7,
            std::size_t* clamp_events = nullptr);

/// Same cross-entropy form applied to the reconstruction similarity.
Var rr_loss(Tape& tape, Var sim, const Tensor& labels, const Tensor& mask, double eps = 1e-7,
            std::size_t* clamp_events = nullptr);

/// Focal loss: -w (1 - p*)^gamma log p*, where p* is the probability given to
/// the true label and w = alpha_ci on minority-class steps, 1 otherwise.
Var ci_focal_loss(Tape& tape, Var p, const Tensor& labels, const Tensor& mask, double alpha_ci,
                  double gamma, int minority_class, double eps = 1e-7,
                  std::size_t* clamp_events = nullptr);

/// L_KT + lambda_rr L_RR + lambda_ci L_CI. Terms whose weight is zero are left
/// out of the graph entirely, so they contribute neither value nor gradient.
Var total_loss(Tape& tape, Var kt, Var rr, Var ci, double lambda_rr, double lambda_ci);
double total_loss(double kt, double rr, double ci, double lambda_rr, double lambda_ci);

/// Next-step labels: prediction at step t is scored against the response at t+1.
struct NextStepTargets {
  Tensor labels;  // [B, T-1]
  Tensor mask;    // [B, T-1]
};
NextStepTargets next_step_targets(const EncodedBatch& batch);

struct Objective {
  Var total;
  Var kt;
  Var rr;
  Var ci;
  std::size_t clamp_events = 0;
  std::size_t num_targets = 0;
};

/// Full training objective for one forward pass.
Objective pkt_objective(Tape& tape, const BatchForward& forward, const EncodedBatch& batch,
                        const LossConfig& config);

}  // namespace pkt
