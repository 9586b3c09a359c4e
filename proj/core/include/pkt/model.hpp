// SPDX-License-Identifier: Apache-2.0
//
// The PKT network: interaction embedding, GRU student encoder, causal
// attention capsule blocks, per-step prediction head, reconstruction and
// reconstruction/student similarity.
//
// Every readout quantity is computed per step over the causal prefix, so the
// prediction at step t depends only on interactions 1..t.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pkt/dataio.hpp"
#include "pkt/tape.hpp"
#include "pkt/tensor.hpp"

namespace pkt {

struct PKTConfig {
  std::size_t num_skills = 0;    // E
  std::size_t hidden = 64;       // embedding and hidden width d
  std::size_t num_capsules = 4;  // N_c
  std::size_t maxlen = 0;        // T
  std::uint64_t seed = 0;
  /// Concatenate an embedding of the next step's skill to the head input.
  bool include_next_skill = false;
  /// Student representation as the causal prefix mean (default) or as the
  /// mean over the whole valid sequence.
  bool causal_student_mean = true;

  /// Throws Error unless d >= 1, N_c >= 2, T >= 3 and E >= 1.
  void validate() const;
  friend bool operator==(const PKTConfig&, const PKTConfig&) = default;
};

struct GruWeights {
  Tensor w_z, b_z;  // [d, 2d], [d]
  Tensor w_r, b_r;
  Tensor w_h, b_h;
};

struct CapsuleWeights {
  Tensor w_a;  // [d, 1]
  Tensor w_p;  // [1, d] ([1, 2d] with include_next_skill)
  Tensor b_p;  // [1]
};

struct PKTParams {
  Tensor embedding;  // [2E+1, d]; row 2E is the padding code
  GruWeights gru;
  std::vector<CapsuleWeights> capsules;
  Tensor next_skill_embedding;  // [E+1, d] when include_next_skill, else empty

  /// Uniform in [-1/sqrt(d), 1/sqrt(d)] for matrices, zero biases, seeded by config.seed.
  static PKTParams initialize(const PKTConfig& config);

  /// Stable enumeration of every trainable tensor.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  std::size_t parameter_count() const;
};

/// (2E+1)d + 3(2d*d + d) + N_c(d + d + 1), plus the optional next-skill terms.
std::size_t expected_parameter_count(const PKTConfig& config);

// ---------------------------------------------------------------------------
// Tape-level building blocks

struct GruVars {
  Var w_z_t, b_z;  // transposed weights [2d, d]
  Var w_r_t, b_r;
  Var w_h_t, b_h;
};

struct CapsuleVars {
  Var w_a;    // [d, 1]
  Var w_p_t;  // [d, 1]
  Var b_p;    // [1]
};

/// Parameters placed on a tape as leaves, in PKTParams::named() order.
struct BoundParams {
  std::vector<Var> leaves;
  Var embedding;
  Var next_skill_embedding;
  GruVars gru;
  std::vector<CapsuleVars> capsules;
};

BoundParams bind(Tape& tape, const PKTParams& params);

/// One GRU update. h_prev and e are [d] or [B, d].
Var gru_step(Tape& tape, const GruVars& gru, Var h_prev, Var e);

struct CapsuleAttention {
  Var alpha;    // [B, T, T]; row t is the distribution over positions i <= t
  Var capsule;  // [B, T, d]
};

/// Attention pooling of hidden states H [B, T, d] for one capsule block.
/// `mask` is [B, T, T] with 1 where position i may be attended from step t.
CapsuleAttention capsule_attention(Tape& tape, Var hidden, Var w_a, const Tensor& mask);

struct StepReadout {
  Var prediction;                // [B, T]
  std::vector<Var> block_probs;  // N_c x [B, T]
  Var reconstruction;            // [B, T, d]
  Var similarity;                // [B, T]
};

/// Prediction head, reconstruction and similarity for every step.
/// `head_extra` is an optional [B, T, d] tensor concatenated to each capsule
/// representation before the head.
StepReadout readout(Tape& tape, std::span<const CapsuleVars> capsules,
                    std::span<const Var> capsule_reprs, Var student, Var head_extra = {});

// ---------------------------------------------------------------------------
// Batched forward pass

struct EncodedBatch {
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::vector<std::size_t> codes;       // [B*T] interaction codes
  std::vector<std::size_t> next_skill;  // [B*T] skill at t+1, or E when absent
  std::vector<std::size_t> lengths;     // valid length per row
  Tensor valid;                         // [B, T]
  Tensor responses;                     // [B, T], 0 at padded positions
};

EncodedBatch encode_batch(std::span<const InteractionSequence> sequences,
                          std::span<const std::size_t> rows, std::size_t num_skills);
EncodedBatch encode_batch(std::span<const InteractionSequence> sequences, std::size_t num_skills);

struct BatchForward {
  Var hidden;          // [B, T, d]
  Var student;         // [B, T, d]
  std::vector<Var> alpha;    // N_c x [B, T, T]
  std::vector<Var> capsule;  // N_c x [B, T, d]
  std::vector<Var> block_probs;
  Var prediction;      // [B, T]
  Var reconstruction;  // [B, T, d]
  Var similarity;      // [B, T]
};

BatchForward forward_batch(Tape& tape, const BoundParams& params, const EncodedBatch& batch,
                           const PKTConfig& config);

/// Per-sequence record of every intermediate quantity, restricted to the L
/// valid steps. prediction[t] estimates the response at step t+1.
struct ForwardTrace {
  Tensor hidden;          // [L, d]
  Tensor student;         // [L, d]
  Tensor capsule;         // [N_c, L, d]
  Tensor attention;       // [N_c, L, L]; lower triangular
  Tensor prediction;      // [L]
  Tensor block_probs;     // [N_c, L]
  Tensor reconstruction;  // [L, d]
  Tensor similarity;      // [L]
};

/// Throws DataError if the sequence has fewer than two valid steps.
ForwardTrace forward_sequence(const InteractionSequence& seq, const PKTParams& params,
                              const PKTConfig& config);

// ---------------------------------------------------------------------------
// Checkpoints: JSON document of named tensors plus the config; doubles are
// written with round-trip precision so save/load is bit-exact.

void save_checkpoint(const std::filesystem::path& path, const PKTParams& params,
                     const PKTConfig& config);
std::pair<PKTParams, PKTConfig> load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_to_string(const PKTParams& params, const PKTConfig& config);
std::pair<PKTParams, PKTConfig> checkpoint_from_string(std::string_view text);

}  // namespace pkt
