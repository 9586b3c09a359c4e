// SPDX-License-Identifier: Apache-2.0
#include "pkt/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "json_io.hpp"
#include "pkt/error.hpp"

namespace pkt {

namespace {

void check_sizes(const ScoredPredictions& p, const char* who) {
  if (p.scores.size() != p.labels.size()) {
    throw DataError(std::string(who) + ": " + std::to_string(p.scores.size()) + " scores but " +
                    std::to_string(p.labels.size()) + " labels");
  }
  for (int l : p.labels) {
    if (l != 0 && l != 1) throw DataError(std::string(who) + ": labels must be 0 or 1");
  }
}

std::vector<std::size_t> order_by_score_desc(const ScoredPredictions& p) {
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p.scores[a] > p.scores[b]; });
  return order;
}

}  // namespace

std::size_t ScoredPredictions::positives() const noexcept {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

void ScoredPredictions::append(double score, int label) {
  scores.push_back(score);
  labels.push_back(label);
}

double auc_roc(const ScoredPredictions& preds) {
  check_sizes(preds, "auc_roc");
  const std::size_t pos = preds.positives();
  const std::size_t neg = preds.size() - pos;
  if (pos == 0) throw DataError("auc_roc: no positive labels (every label is 0)");
  if (neg == 0) throw DataError("auc_roc: no negative labels (every label is 1)");

  // Walk tie groups in ascending score order; positives in a group beat every
  // negative seen before it and tie with the negatives inside it.
  std::vector<std::size_t> order = order_by_score_desc(preds);
  std::reverse(order.begin(), order.end());
  double wins = 0.0;
  double neg_below = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double gp = 0.0;
    double gn = 0.0;
    while (j < order.size() && preds.scores[order[j]] == preds.scores[order[i]]) {
      (preds.labels[order[j]] == 1 ? gp : gn) += 1.0;
      ++j;
    }
    wins += gp * neg_below + 0.5 * gp * gn;
    neg_below += gn;
    i = j;
  }
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

double accuracy(const ScoredPredictions& preds, double threshold) {
  check_sizes(preds, "accuracy");
  if (preds.size() == 0) throw DataError("accuracy: no predictions");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int predicted = preds.scores[i] >= threshold ? 1 : 0;
    hits += predicted == preds.labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double average_precision(const ScoredPredictions& preds) {
  check_sizes(preds, "average_precision");
  const std::size_t pos = preds.positives();
  if (pos == 0) throw DataError("average_precision: no positive labels");
  const std::vector<std::size_t> order = order_by_score_desc(preds);
  double tp = 0.0;
  double fp = 0.0;
  double prev_recall = 0.0;
  double ap = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && preds.scores[order[j]] == preds.scores[order[i]]) {
      (preds.labels[order[j]] == 1 ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / static_cast<double>(pos);
    const double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

MetricsReport make_report(const ScoredPredictions& preds, double threshold,
                          std::optional<int> fold_id) {
  MetricsReport r;
  r.auc = auc_roc(preds);
  r.acc = accuracy(preds, threshold);
  r.aucprc = average_precision(preds);
  r.n_predictions = preds.size();
  r.n_positive = preds.positives();
  r.threshold = threshold;
  r.fold_id = fold_id;
  return r;
}

MetricsReport mean_report(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw DataError("mean_report: no reports");
  MetricsReport m;
  m.threshold = reports.front().threshold;
  for (const auto& r : reports) {
    m.auc += r.auc;
    m.acc += r.acc;
    m.aucprc += r.aucprc;
    m.n_predictions += r.n_predictions;
    m.n_positive += r.n_positive;
  }
  const double n = static_cast<double>(reports.size());
  m.auc /= n;
  m.acc /= n;
  m.aucprc /= n;
  return m;
}

std::string report_to_json(const MetricsReport& report) {
  return detail::to_json(report).dump(2);
}

}  // namespace pkt
