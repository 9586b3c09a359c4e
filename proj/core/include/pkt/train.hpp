// SPDX-License-Identifier: Apache-2.0
//
// Training harness: per-fold Adam training with AUC early stopping, split
// evaluation, k-fold cross-validation and the loss-ablation runner.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pkt/adam.hpp"
#include "pkt/dataio.hpp"
#include "pkt/loss.hpp"
#include "pkt/metrics.hpp"
#include "pkt/model.hpp"

namespace pkt {

/// Loss ablations: drop the reconstruction term, the focal term, or both.
enum class Variant { full, no_rr, no_ci, no_rr_ci };

inline constexpr Variant kAllVariants[] = {Variant::full, Variant::no_rr, Variant::no_ci,
                                           Variant::no_rr_ci};

std::string_view to_string(Variant v) noexcept;
/// Accepts "full", "no-rr", "no-ci", "no-rr-ci". Throws Error otherwise.
Variant parse_variant(std::string_view text);
LossConfig apply_variant(LossConfig loss, Variant v);

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t patience = 10;
  std::size_t batch_size = 64;
  AdamConfig adam;
  std::size_t k = 5;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  LossConfig loss;
  PKTConfig model;
  Variant variant = Variant::full;
  /// Set alpha_ci and the minority class from each fold's training split.
  bool alpha_from_data = true;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean total loss over batches
  double loss_kt = 0.0;   // mean L_KT
  double loss_rr = 0.0;   // mean lambda_rr * L_RR
  double loss_ci = 0.0;   // mean lambda_ci * L_CI
  double val_auc = 0.0;
  double val_acc = 0.0;
  double val_aucprc = 0.0;
  std::size_t clamp_events = 0;
  bool improved = false;
  double seconds = 0.0;  // wall clock; not part of the deterministic log
};

/// Patience counter on strictly improving AUC.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Record the AUC of the next epoch; returns true if it is a new best.
  bool update(double auc);
  bool should_stop() const noexcept { return since_best_ >= patience_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best_auc() const noexcept { return best_auc_; }
  std::size_t epochs_seen() const noexcept { return epoch_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_auc_ = 0.0;
};

struct FoldResult {
  PKTParams best_params;
  std::vector<EpochLog> logs;
  std::size_t best_epoch = 0;
  double best_auc = 0.0;
  LossConfig loss;  // as used, with alpha_ci resolved
};

using EpochCallback = std::function<void(int fold, const EpochLog&)>;

/// Train on `train`, early-stop on validation AUC, return the best-epoch
/// parameters. Deterministic given config.seed and fold_id. Throws
/// DivergenceError on a non-finite loss.
FoldResult train_fold(std::span<const InteractionSequence> train,
                      std::span<const InteractionSequence> validation, const TrainConfig& config,
                      int fold_id = 0, const EpochCallback& on_epoch = {});

/// Flattened next-step predictions over every valid step of every sequence,
/// computed without gradient recording.
ScoredPredictions predict(const PKTParams& params, const PKTConfig& config,
                          std::span<const InteractionSequence> sequences,
                          std::size_t batch_size = 64);

/// Throws DataError on an empty list or when the sequences do not match the
/// model's skill count or maxlen.
MetricsReport evaluate_split(const PKTParams& params, const PKTConfig& config,
                             std::span<const InteractionSequence> sequences,
                             std::size_t batch_size = 64, std::optional<int> fold_id = std::nullopt);

/// Mean AUC over users whose targets contain both classes.
double per_user_auc(const PKTParams& params, const PKTConfig& config,
                    std::span<const InteractionSequence> sequences);

struct FoldOutcome {
  int fold = 0;
  FoldResult result;
  MetricsReport test;
};

struct CrossValidationResult {
  FoldAssignment assignment;
  std::vector<FoldOutcome> folds;
  MetricsReport mean_test;
};

std::vector<InteractionSequence> select(std::span<const InteractionSequence> all,
                                        std::span<const std::size_t> indices);

/// Model config resolved against a dataset (skill count and maxlen).
PKTConfig resolve_model(const PKTConfig& model, const ProcessedDataset& data);

/// Run `max_folds` (default: all k) fold rotations; each trains on k-1 folds,
/// validates on one and is scored on the shared test set. Folds run on up to
/// `threads` threads; results do not depend on the thread count.
CrossValidationResult cross_validate(const ProcessedDataset& data, const TrainConfig& config,
                                     std::optional<std::size_t> max_folds = std::nullopt,
                                     std::size_t threads = 1, const EpochCallback& on_epoch = {});

struct AblationEntry {
  Variant variant;
  CrossValidationResult result;
};

/// Every variant with identical seeds, folds and initialization.
std::vector<AblationEntry> run_ablation(const ProcessedDataset& data, const TrainConfig& base,
                                        std::optional<std::size_t> max_folds = std::nullopt,
                                        std::size_t threads = 1,
                                        const EpochCallback& on_epoch = {});

// Run-directory output.
std::string epochs_to_csv(std::span<const EpochLog> logs);
std::string timings_to_csv(std::span<const EpochLog> logs);
std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(std::string_view text, const TrainConfig& defaults = {});
std::string cv_report_to_json(const CrossValidationResult& cv, Variant variant);
std::string ablation_report_to_json(std::span<const AblationEntry> entries);
/// Writes fold_<i>/epochs.csv, fold_<i>/timing.csv and fold_<i>/checkpoint.
void write_fold(const std::filesystem::path& run_dir, const FoldOutcome& fold,
                const PKTConfig& model);

/// Deterministic 64-bit seed derivation.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace pkt
