// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "json.hpp"
#include "pkt/error.hpp"
#include "pkt/metrics.hpp"
#include "testing.hpp"

using namespace pkt;
using pkt::testing::Gen;

namespace {

ScoredPredictions make(std::vector<double> s, std::vector<int> y) { return {std::move(s), std::move(y)}; }

// Scores drawn from a small grid so that ties are common.
ScoredPredictions random_preds(Gen& g, std::size_t n, bool ties) {
  ScoredPredictions p;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = ties ? static_cast<double>(g.index(8)) / 8.0 : g.uniform();
    p.append(s, g.bit(0.4));
  }
  p.labels[0] = 1;
  p.labels[n - 1] = 0;
  return p;
}

}  // namespace

TEST_CASE("auc examples") {
  CHECK(auc_roc(make({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1})) == 1.0);
  CHECK(auc_roc(make({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1})) == 0.75);
  CHECK(auc_roc(make({0.3, 0.3, 0.3}, {0, 1, 1})) == 0.5);
  CHECK_THROWS_AS(auc_roc(make({0.1, 0.2}, {1, 1})), DataError);
  try {
    auc_roc(make({0.1, 0.2}, {0, 0}));
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("positive") != std::string::npos);
  }
}

TEST_CASE("accuracy examples") {
  CHECK(accuracy(make({0.9, 0.1}, {1, 0})) == 1.0);
  CHECK(accuracy(make({0.9, 0.1}, {0, 1})) == 0.0);
  CHECK(accuracy(make({0.5}, {1})) == 1.0);
  CHECK(accuracy(make({0.5}, {0})) == 0.0);
  CHECK(accuracy(make({0.4, 0.6}, {1, 1}), 0.3) == 1.0);
  CHECK_THROWS_AS(accuracy(make({}, {})), DataError);
}

TEST_CASE("average precision examples") {
  CHECK(average_precision(make({0.9, 0.1}, {1, 0})) == 1.0);
  CHECK(average_precision(make({0.9, 0.1}, {0, 1})) == 0.5);
  CHECK_THROWS_AS(average_precision(make({0.9, 0.1}, {0, 0})), DataError);
}

TEST_CASE("auc and average precision match brute-force oracles") {
  Gen g(2718);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = random_preds(g, 2 + g.index(199), trial % 2 == 0);
    CHECK(std::abs(auc_roc(p) - pkt::testing::brute_auc(p.scores, p.labels)) <= 1e-12);
    CHECK(std::abs(average_precision(p) - pkt::testing::brute_average_precision(p.scores, p.labels)) <= 1e-12);
  }
}

TEST_CASE("auc is invariant under increasing transforms") {
  Gen g(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = random_preds(g, 5 + g.index(100), trial % 3 == 0);
    const double base = auc_roc(p);
    auto q = p;
    for (double& s : q.scores) s = std::exp(3.0 * s);
    CHECK(auc_roc(q) == base);
    for (double& s : q.scores) s = 2.5 * s - 7.0;
    CHECK(auc_roc(q) == base);
  }
}

TEST_CASE("auc of flipped labels is the complement") {
  Gen g(6);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = random_preds(g, 5 + g.index(100), false);
    auto flipped = p;
    for (int& y : flipped.labels) y = 1 - y;
    CHECK(std::abs(auc_roc(p) + auc_roc(flipped) - 1.0) <= 1e-12);
  }
}

TEST_CASE("metrics are permutation invariant") {
  Gen g(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_preds(g, 5 + g.index(100), trial % 2 == 0);
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), g.engine());
    ScoredPredictions q;
    for (std::size_t i : order) q.append(p.scores[i], p.labels[i]);
    CHECK(std::abs(auc_roc(p) - auc_roc(q)) <= 1e-15);
    CHECK(std::abs(average_precision(p) - average_precision(q)) <= 1e-15);
    CHECK(accuracy(p) == accuracy(q));
  }
}

TEST_CASE("reports") {
  const auto r = make_report(make({0.9, 0.2, 0.6, 0.4}, {1, 0, 0, 1}), 0.5, 3);
  CHECK(r.n_predictions == 4);
  CHECK(r.n_positive == 2);
  CHECK(r.auc == 0.75);
  CHECK(r.acc == 0.5);
  CHECK(r.fold_id == 3);
  const auto j = nlohmann::json::parse(report_to_json(r));
  CHECK(j["auc"] == 0.75);
  CHECK(j["fold_id"] == 3);
  MetricsReport a, b;
  a.auc = 0.6;
  b.auc = 0.8;
  a.n_predictions = 10;
  b.n_predictions = 5;
  const std::vector<MetricsReport> both{a, b};
  const auto m = mean_report(both);
  CHECK(m.auc == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(m.n_predictions == 15);
  CHECK_FALSE(m.fold_id.has_value());
}
