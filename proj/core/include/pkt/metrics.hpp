// SPDX-License-Identifier: Apache-2.0
//
// Exact ranking metrics for binary next-step prediction.
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pkt {

/// Flattened predictions over unmasked steps. Labels are 0 or 1.
struct ScoredPredictions {
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t size() const noexcept { return scores.size(); }
  std::size_t positives() const noexcept;
  void append(double score, int label);
};

/// Mann-Whitney statistic; each tied positive/negative pair counts 1/2.
/// Throws DataError when either class is absent.
double auc_roc(const ScoredPredictions& preds);

/// Fraction of predictions with (score >= threshold) == label.
double accuracy(const ScoredPredictions& preds, double threshold = 0.5);

/// Step-wise area under the precision-recall curve:
///   sum_k (R_k - R_{k-1}) P_k
/// over descending distinct score thresholds, ties grouped. Throws DataError
/// without positives.
double average_precision(const ScoredPredictions& preds);

struct MetricsReport {
  double auc = 0.0;
  double acc = 0.0;
  double aucprc = 0.0;
  std::size_t n_predictions = 0;
  std::size_t n_positive = 0;
  double threshold = 0.5;
  std::optional<int> fold_id;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

MetricsReport make_report(const ScoredPredictions& preds, double threshold = 0.5,
                          std::optional<int> fold_id = std::nullopt);

/// Element-wise mean of auc, acc and aucprc; counts are summed.
MetricsReport mean_report(std::span<const MetricsReport> reports);

std::string report_to_json(const MetricsReport& report);

}  // namespace pkt
