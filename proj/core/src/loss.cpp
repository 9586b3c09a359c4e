// SPDX-License-Identifier: Apache-2.0
#include "pkt/loss.hpp"

#include <string>

#include "pkt/error.hpp"

namespace pkt {

void LossConfig::validate() const {
  if (lambda_rr < 0.0 || lambda_ci < 0.0) throw Error("LossConfig: loss weights must be >= 0");
  if (gamma < 0.0) throw Error("LossConfig: gamma must be >= 0");
  if (alpha_ci < 1.0) throw Error("LossConfig: alpha_ci must be >= 1");
  if (minority_class != 0 && minority_class != 1) {
    throw Error("LossConfig: minority_class must be 0 or 1");
  }
  if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) throw Error("LossConfig: clamp_eps must be in (0, 0.5)");
}

namespace {

void check_inputs(const Tape& tape, Var p, const Tensor& labels, const Tensor& mask,
                  const char* who) {
  const Shape& s = tape.value(p).shape();
  if (labels.shape() != s || mask.shape() != s) {
    throw ShapeError(std::string(who) + ": predictions " + to_string(s) + ", labels " +
                     to_string(labels.shape()) + " and mask " + to_string(mask.shape()) +
                     " must agree");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (mask[i] != 0.0 && labels[i] != 0.0 && labels[i] != 1.0) {
      throw DomainError(std::string(who) + ": labels must be 0 or 1");
    }
  }
}

// Probability assigned to the true label, p* = (1 - a) + (2a - 1) p, clamped.
Var true_class_prob(Tape& tape, Var p, const Tensor& labels, const Tensor& mask, double eps,
                    std::size_t* clamp_events) {
  Tensor sign(labels.shape());
  Tensor offset(labels.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double a = mask[i] != 0.0 ? labels[i] : 0.0;
    sign[i] = 2.0 * a - 1.0;
    offset[i] = 1.0 - a;
  }
  const Var p_true = tape.add(tape.mul(p, tape.constant(std::move(sign))), tape.constant(std::move(offset)));
  if (clamp_events) {
    const Tensor& v = tape.value(p_true);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (mask[i] != 0.0 && (v[i] < eps || v[i] > 1.0 - eps)) ++*clamp_events;
    }
  }
  return tape.clamp(p_true, eps, 1.0 - eps);
}

Var masked_mean(Tape& tape, Var terms, const Tensor& mask) {
  const std::size_t n = mask.size();
  return tape.reduce(tape.reshape(terms, {n}), ReduceOp::mean, 0, Tensor({n}, mask.values()));
}

}  // namespace

Var kt_loss(Tape& tape, Var p, const Tensor& labels, const Tensor& mask, double eps,
            std::size_t* clamp_events) {
  check_inputs(tape, p, labels, mask, "kt_loss");
  const Var p_true = true_class_prob(tape, p, labels, mask, eps, clamp_events);
  return masked_mean(tape, tape.negate(tape.log(p_true)), mask);
}

Var rr_loss(Tape& tape, Var sim, const Tensor& labels, const Tensor& mask, double eps,
            std::size_t* clamp_events) {
  check_inputs(tape, sim, labels, mask, "rr_loss");
  const Var s_true = true_class_prob(tape, sim, labels, mask, eps, clamp_events);
  return masked_mean(tape, tape.negate(tape.log(s_true)), mask);
}

Var ci_focal_loss(Tape& tape, Var p, const Tensor& labels, const Tensor& mask, double alpha_ci,
                  double gamma, int minority_class, double eps, std::size_t* clamp_events) {
  check_inputs(tape, p, labels, mask, "ci_focal_loss");
  if (alpha_ci < 1.0) throw DomainError("ci_focal_loss: alpha_ci must be >= 1");
  if (gamma < 0.0) throw DomainError("ci_focal_loss: gamma must be >= 0");
  Tensor weight(labels.shape(), 1.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (mask[i] != 0.0 && static_cast<int>(labels[i]) == minority_class) weight[i] = alpha_ci;
  }
  const Var p_true = true_class_prob(tape, p, labels, mask, eps, clamp_events);
  const Var modulator = tape.pow(tape.add_scalar(tape.negate(p_true), 1.0), gamma);
  const Var weighted = tape.mul(tape.mul(modulator, tape.constant(std::move(weight))), tape.log(p_true));
  return masked_mean(tape, tape.negate(weighted), mask);
}

Var total_loss(Tape& tape, Var kt, Var rr, Var ci, double lambda_rr, double lambda_ci) {
  Var total = kt;
  if (lambda_rr != 0.0) total = tape.add(total, tape.scale(rr, lambda_rr));
  if (lambda_ci != 0.0) total = tape.add(total, tape.scale(ci, lambda_ci));
  return total;
}

double total_loss(double kt, double rr, double ci, double lambda_rr, double lambda_ci) {
  double total = kt;
  if (lambda_rr != 0.0) total += lambda_rr * rr;
  if (lambda_ci != 0.0) total += lambda_ci * ci;
  return total;
}

NextStepTargets next_step_targets(const EncodedBatch& batch) {
  const std::size_t B = batch.batch;
  const std::size_t T = batch.steps;
  NextStepTargets t{Tensor({B, T - 1}), Tensor({B, T - 1})};
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t s = 0; s + 1 < T; ++s) {
      t.labels[b * (T - 1) + s] = batch.responses[b * T + s + 1];
      t.mask[b * (T - 1) + s] = batch.valid[b * T + s + 1];
    }
  }
  return t;
}

Objective pkt_objective(Tape& tape, const BatchForward& forward, const EncodedBatch& batch,
                        const LossConfig& config) {
  const std::size_t T = batch.steps;
  const NextStepTargets targets = next_step_targets(batch);
  Objective obj;
  for (double m : targets.mask.data()) obj.num_targets += m != 0.0 ? 1 : 0;
  if (obj.num_targets == 0) throw DataError("pkt_objective: batch has no prediction targets");

  const Var p = tape.slice(forward.prediction, 1, 0, T - 1);
  const Var sim = tape.slice(forward.similarity, 1, 0, T - 1);
  std::size_t clamps = 0;
  obj.kt = kt_loss(tape, p, targets.labels, targets.mask, config.clamp_eps, &clamps);
  obj.rr = rr_loss(tape, sim, targets.labels, targets.mask, config.clamp_eps, &clamps);
  obj.ci = ci_focal_loss(tape, p, targets.labels, targets.mask, config.alpha_ci, config.gamma,
                         config.minority_class, config.clamp_eps, &clamps);
  obj.total = total_loss(tape, obj.kt, obj.rr, obj.ci, config.lambda_rr, config.lambda_ci);
  obj.clamp_events = clamps;
  return obj;
}

}  // namespace pkt
