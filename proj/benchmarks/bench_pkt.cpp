// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "pkt/loss.hpp"
#include "pkt/metrics.hpp"
#include "pkt/model.hpp"

namespace {

std::vector<pkt::InteractionSequence> make_batch(std::size_t n, std::size_t T, std::size_t E) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> skill(0, static_cast<int>(E) - 1), bit(0, 1);
  std::vector<pkt::InteractionSequence> out(n);
  for (std::size_t b = 0; b < n; ++b) {
    auto& s = out[b];
    s.user_id = "u" + std::to_string(b);
    s.original_length = T;
    for (std::size_t t = 0; t < T; ++t) {
      s.skills.push_back(skill(rng));
      s.responses.push_back(bit(rng));
      s.mask.push_back(1);
    }
  }
  return out;
}

pkt::PKTConfig config(std::size_t d, std::size_t T) {
  pkt::PKTConfig c;
  c.num_skills = 20;
  c.hidden = d;
  c.num_capsules = 4;
  c.maxlen = T;
  c.seed = 3;
  return c;
}

}  // namespace

// args: hidden width, sequence length; batch of 32
static void BM_Forward(benchmark::State& state) {
  const auto c = config(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  const auto params = pkt::PKTParams::initialize(c);
  const auto seqs = make_batch(32, c.maxlen, c.num_skills);
  const auto batch = pkt::encode_batch(seqs, c.num_skills);
  for (auto _ : state) {
    pkt::Tape tape(false);
    const auto fw = pkt::forward_batch(tape, pkt::bind(tape, params), batch, c);
    benchmark::DoNotOptimize(tape.value(fw.prediction).data().data());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_Forward)->Args({16, 30})->Args({32, 30})->Args({64, 30})->Args({32, 100});

static void BM_ForwardBackward(benchmark::State& state) {
  const auto c = config(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  const auto params = pkt::PKTParams::initialize(c);
  const auto seqs = make_batch(32, c.maxlen, c.num_skills);
  const auto batch = pkt::encode_batch(seqs, c.num_skills);
  const pkt::LossConfig loss;
  for (auto _ : state) {
    pkt::Tape tape;
    const auto bound = pkt::bind(tape, params);
    const auto obj = pkt::pkt_objective(tape, pkt::forward_batch(tape, bound, batch, c), batch, loss);
    tape.backward(obj.total);
    benchmark::DoNotOptimize(tape.grad(bound.leaves[0]).data().data());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ForwardBackward)->Args({16, 30})->Args({32, 30})->Args({64, 30})->Args({32, 100});

static void BM_Auc(benchmark::State& state) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  pkt::ScoredPredictions p;
  for (std::int64_t i = 0; i < state.range(0); ++i) p.append(u(rng), u(rng) < 0.6 ? 1 : 0);
  for (auto _ : state) benchmark::DoNotOptimize(pkt::auc_roc(p));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Auc)->RangeMultiplier(10)->Range(1000, 1000000)->Complexity(benchmark::oNLogN);

static void BM_AveragePrecision(benchmark::State& state) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  pkt::ScoredPredictions p;
  for (std::int64_t i = 0; i < state.range(0); ++i) p.append(u(rng), u(rng) < 0.6 ? 1 : 0);
  for (auto _ : state) benchmark::DoNotOptimize(pkt::average_precision(p));
}
BENCHMARK(BM_AveragePrecision)->RangeMultiplier(10)->Range(1000, 1000000);

BENCHMARK_MAIN();
