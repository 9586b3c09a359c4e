// SPDX-License-Identifier: Apache-2.0
//
// Acceptance runner. One line per criterion:
//   C<n> PASS|FAIL|SKIP <title> :: <detail>
// Usage: pkt_acceptance [c1 ... c11]   (no arguments runs all)
// Exit status: 0 all pass, 1 any failure, 77 everything requested skipped.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "model_check.hpp"
#include "pkt/dataio.hpp"
#include "pkt/loss.hpp"
#include "pkt/metrics.hpp"
#include "pkt/model.hpp"
#include "pkt/synth.hpp"
#include "pkt/train.hpp"
#include "pkt_cli/cli.hpp"
#include "testing.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pkt;
using pkt::testing::Gen;

namespace {

// Tolerances and protocol constants.
constexpr double kFdStep = 1e-5;
constexpr double kFdRtol = 1e-4;
constexpr double kFdAtol = 1e-9;  // absolute floor for gradients that are zero up to rounding
constexpr double kExactTol = 1e-12;
constexpr double kOverfitAuc = 0.95;
constexpr int kOverfitMinSeeds = 8;
constexpr double kSignalAuc = 0.60;
constexpr double kNullLo = 0.40;
constexpr double kNullHi = 0.60;
constexpr int kAblationMinWins = 7;
constexpr double kAssist09Reference = 0.80328;
constexpr double kAssist09Band = 0.02;

enum class Status { pass, fail, skip };

struct Outcome {
  Status status;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::pass : Status::fail, std::move(detail)}; }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("pkt_accept_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

int cli(std::vector<std::string> args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = pkt::cli::dispatch(args, o, e);
  if (out) *out = o.str();
  if (code != 0) std::cerr << e.str();
  return code;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  Gen g(101);
  PKTConfig c;
  c.num_skills = 5;
  c.hidden = 6;
  c.num_capsules = 3;
  c.maxlen = 8;
  c.seed = 11;
  const auto params = PKTParams::initialize(c);
  // Perturb the zero-initialized biases so every tensor is exercised away from zero.
  PKTParams p = params;
  for (auto& [name, t] : p.named()) {
    for (double& v : t->data()) v += g.uniform(-0.1, 0.1);
  }
  const auto seqs = pkt::testing::random_sequences(g, 4, 8, 5);
  const auto batch = encode_batch(seqs, 5);
  LossConfig loss;
  loss.lambda_rr = 0.5;
  loss.lambda_ci = 0.5;
  loss.alpha_ci = 2.0;
  loss.gamma = 2.0;
  const auto report = pkt::testing::objective_grad_check(p, c, batch, loss, kFdStep, kFdRtol, kFdAtol);
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  for (const auto& [name, r] : report) {
    checked += r.checked;
    if (r.max_violation >= worst) {
      worst = r.max_violation;
      worst_name = name;
    }
  }
  return verdict(worst <= 1.0, std::to_string(report.size()) + " tensors, " + std::to_string(checked) +
                                   " entries, worst " + worst_name + " at " + fmt(worst, 3) +
                                   " of tolerance (h " + sci(kFdStep) + ", rtol " + sci(kFdRtol) + ")");
}

Outcome focal_reduction() {
  Gen g(202);
  double worst = 0.0;
  const std::size_t n = 1000;
  Tensor p(Shape{n}), y(Shape{n});
  const Tensor m(Shape{n}, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = g.uniform();
    y[i] = g.bit();
    Tape tape(false);
    const Var pv = tape.constant(Tensor::vector({p[i]}));
    const Tensor yi = Tensor::vector({y[i]}), mi = Tensor::vector({1.0});
    const double a = tape.value(ci_focal_loss(tape, pv, yi, mi, 1.0, 0.0, 0)).item();
    const double b = tape.value(kt_loss(tape, pv, yi, mi)).item();
    worst = std::max(worst, std::abs(a - b));
  }
  Tape tape(false);
  const Var pv = tape.constant(p);
  worst = std::max(worst, std::abs(tape.value(ci_focal_loss(tape, pv, y, m, 1.0, 0.0, 1)).item() -
                                   tape.value(kt_loss(tape, pv, y, m)).item()));
  return verdict(worst <= kExactTol, "1000 pairs, max |focal - kt| " + sci(worst));
}

Outcome metric_oracles() {
  Gen g(303);
  double worst_auc = 0.0, worst_ap = 0.0;
  int tied = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + g.index(199);
    const bool ties = trial % 2 == 0;
    ScoredPredictions pr;
    for (std::size_t i = 0; i < n; ++i) {
      pr.append(ties ? static_cast<double>(g.index(6)) / 6.0 : g.uniform(), g.bit(0.35));
    }
    pr.labels[0] = 1;
    pr.labels[n - 1] = 0;
    tied += ties ? 1 : 0;
    worst_auc = std::max(worst_auc, std::abs(auc_roc(pr) - pkt::testing::brute_auc(pr.scores, pr.labels)));
    worst_ap = std::max(worst_ap, std::abs(average_precision(pr) -
                                           pkt::testing::brute_average_precision(pr.scores, pr.labels)));
  }
  return verdict(worst_auc <= kExactTol && worst_ap <= kExactTol,
                 "100 instances (" + std::to_string(tied) + " with ties), max AUC diff " + sci(worst_auc) +
                     ", max AP diff " + sci(worst_ap));
}

Outcome causality() {
  std::size_t compared = 0, mismatches = 0;
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    Gen g(4000 + trial);
    PKTConfig c;
    c.num_skills = 6;
    c.hidden = 8;
    c.num_capsules = 2 + g.index(3);
    c.maxlen = 12;
    c.seed = 900 + trial;
    const auto p = PKTParams::initialize(c);
    const auto base = pkt::testing::random_sequence(g, 12, 3 + g.index(10), 6);
    const std::size_t valid = base.valid_length();
    for (std::size_t t = 0; t + 1 < valid; ++t) {
      for (std::size_t pos = t + 1; pos < valid; ++pos) {
        auto mutated = base;
        mutated.skills[pos] = static_cast<int>((static_cast<std::size_t>(base.skills[pos]) + 1 + g.index(5)) % 6);
        mutated.responses[pos] = 1 - base.responses[pos];
        const auto a = forward_sequence(base, p, c);
        const auto b = forward_sequence(mutated, p, c);
        for (std::size_t s = 0; s <= t; ++s) {
          ++compared;
          if (a.prediction[s] != b.prediction[s]) ++mismatches;
        }
      }
    }
  }
  return verdict(mismatches == 0, std::to_string(compared) + " prefix predictions compared, " +
                                      std::to_string(mismatches) + " changed");
}

// ---------------------------------------------------------------------------
// Training criteria

Outcome overfit() {
  int hits = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SynthConfig sc;
    sc.num_students = 20;
    sc.num_skills = 2;
    sc.mean_length = 10;
    sc.length_spread = 3;
    sc.seed = seed;
    const auto data = preprocess(generate_dataset(sc));
    TrainConfig tc;
    tc.epochs = 200;
    tc.patience = 199;
    tc.batch_size = 4;
    tc.adam.learning_rate = 0.01;
    tc.seed = seed;
    tc.model.hidden = 32;
    tc.model.num_capsules = 8;
    tc.model.seed = seed;
    tc.model = resolve_model(tc.model, data);
    // Validation is the training set itself, so the best epoch tracks training AUC.
    const auto r = train_fold(data.sequences, data.sequences, tc, 0);
    hits += r.best_auc >= kOverfitAuc ? 1 : 0;
    detail << (seed > 1 ? " " : "") << fmt(r.best_auc, 3);
  }
  return verdict(hits >= kOverfitMinSeeds, std::to_string(hits) + "/10 seeds reach train AUC >= " +
                                               fmt(kOverfitAuc, 2) + " [" + detail.str() + "]");
}

SynthConfig signal_data_config() {
  SynthConfig sc;
  sc.num_students = 500;
  sc.num_skills = 10;
  sc.mean_length = 30;
  sc.target_ratio = 1.0;
  sc.seed = 2024;
  return sc;
}

TrainConfig signal_train_config(const ProcessedDataset& data, std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = 30;
  tc.patience = 5;
  tc.batch_size = 32;
  tc.k = 5;
  tc.adam.learning_rate = 0.01;
  tc.seed = seed;
  tc.model.hidden = 32;
  tc.model.num_capsules = 4;
  tc.model.seed = seed;
  tc.model = resolve_model(tc.model, data);
  return tc;
}

Outcome learnable_signal() {
  const auto data = preprocess(generate_dataset(signal_data_config()));
  const auto tc = signal_train_config(data, 7);
  const auto cv = cross_validate(data, tc, 1, 1);
  const double auc = cv.folds[0].test.auc;
  return verdict(auc >= kSignalAuc, "test AUC " + fmt(auc) + " (best epoch " +
                                        std::to_string(cv.folds[0].result.best_epoch) + ", " +
                                        std::to_string(data.sequences.size()) + " sequences)");
}

Outcome null_band() {
  const auto data = preprocess(generate_dataset(signal_data_config()));
  const auto tc = signal_train_config(data, 7);
  const auto split = split_folds(data.sequences.size(), tc.k, tc.test_fraction, tc.seed);
  const auto test = select(data.sequences, split.test);
  double lo = 1.0, hi = 0.0;
  int inside = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    PKTConfig model = tc.model;
    model.seed = seed;
    const double auc = evaluate_split(PKTParams::initialize(model), model, test).auc;
    lo = std::min(lo, auc);
    hi = std::max(hi, auc);
    inside += auc >= kNullLo && auc <= kNullHi ? 1 : 0;
  }
  return verdict(inside == 20, std::to_string(inside) + "/20 untrained seeds in [" + fmt(kNullLo, 2) + ", " +
                                   fmt(kNullHi, 2) + "], range [" + fmt(lo) + ", " + fmt(hi) + "]");
}

Outcome ablation_direction() {
  int wins = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SynthConfig sc;
    sc.num_students = 300;
    sc.num_skills = 10;
    sc.mean_length = 30;
    sc.target_ratio = 2.7;
    sc.majority_class = 1;
    sc.seed = 100 + seed;
    const auto data = preprocess(generate_dataset(sc));
    auto tc = signal_train_config(data, seed);
    tc.epochs = 20;
    tc.variant = Variant::full;
    const double full = cross_validate(data, tc, 1, 1).folds[0].test.aucprc;
    tc.variant = Variant::no_ci;
    const double no_ci = cross_validate(data, tc, 1, 1).folds[0].test.aucprc;
    wins += full >= no_ci ? 1 : 0;
    detail << (seed > 1 ? " " : "") << fmt(full - no_ci, 4);
  }
  return verdict(wins >= kAblationMinWins, "Full >= NoCI AUCPRC in " + std::to_string(wins) +
                                               "/10 seeds, differences [" + detail.str() + "]");
}

// ---------------------------------------------------------------------------
// CLI criteria

Outcome preprocessing_fixture() {
  const fs::path fixtures = PKT_FIXTURE_DIR;
  TempDir tmp;
  const fs::path out = tmp.path / "data";
  if (cli({"preprocess", "--in", (fixtures / "fixture.csv").string(), "--out", out.string()}) != 0) {
    return {Status::fail, "pkt preprocess failed"};
  }
  std::string printed;
  if (cli({"stats", "--data", out.string()}, &printed) != 0) return {Status::fail, "pkt stats failed"};
  const json expected = json::parse(slurp(fixtures / "fixture_stats.json"));
  const bool stats_ok = json::parse(printed) == expected && json::parse(slurp(out / "stats.json")) == expected;

  const json ref = json::parse(slurp(fixtures / "fixture_sequences.json"));
  const json got = json::parse(slurp(out / "sequences.json"));
  bool seq_ok = got["skill_ids"] == ref["skill_ids"] && got["sequences"].size() == ref["sequences"].size();
  std::size_t padded = 0;
  for (std::size_t i = 0; seq_ok && i < ref["sequences"].size(); ++i) {
    const auto& a = got["sequences"][i];
    const auto& b = ref["sequences"][i];
    seq_ok = a["user_id"] == b["user_id"] && a["skills"] == b["skills"] && a["responses"] == b["responses"];
    for (int v : a["skills"]) padded += v == kPadValue ? 1 : 0;
  }
  return verdict(stats_ok && seq_ok, std::string("stats ") + (stats_ok ? "match" : "differ") + ", " +
                                         std::to_string(ref["sequences"].size()) + " sequences " +
                                         (seq_ok ? "match" : "differ") + " (" + std::to_string(padded) +
                                         " padded steps)");
}

Outcome determinism() {
  TempDir tmp;
  const std::string csv = (tmp.path / "s.csv").string();
  const std::string data = (tmp.path / "data").string();
  if (cli({"synth", "--out", csv, "--seed", "17", "--students", "80", "--skills", "5", "--mean-length", "15"}) != 0 ||
      cli({"preprocess", "--in", csv, "--out", data}) != 0) {
    return {Status::fail, "data preparation failed"};
  }
  const std::string bin = PKT_BINARY;
  for (const char* run : {"run_a", "run_b"}) {
    const std::string cmd = bin + " train --data " + data + " --out " + (tmp.path / run).string() +
                            " --seed 42 --epochs 4 --patience 2 --hidden 16 --nc 3 --k 3 --folds 2"
                            " --batch-size 16 --threads 2 --quiet >/dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) return {Status::fail, std::string("pkt train failed for ") + run};
  }
  std::size_t files = 0, identical = 0;
  for (int f = 0; f < 2; ++f) {
    for (const char* name : {"epochs.csv", "checkpoint"}) {
      const fs::path rel = fs::path("fold_" + std::to_string(f)) / name;
      ++files;
      const std::string a = slurp(tmp.path / "run_a" / rel);
      identical += !a.empty() && a == slurp(tmp.path / "run_b" / rel) ? 1 : 0;
    }
  }
  return verdict(identical == files, std::to_string(identical) + "/" + std::to_string(files) +
                                         " epochs.csv and checkpoint files byte-identical across two runs");
}

Outcome assist09() {
  const char* path = std::getenv("PKT_ASSIST09_CSV");
  if (!path || !*path) return {Status::skip, "set PKT_ASSIST09_CSV to a canonical ASSIST09 CSV to run"};
  TempDir tmp;
  const std::string data = (tmp.path / "data").string();
  const std::string run = (tmp.path / "run").string();
  if (cli({"preprocess", "--in", path, "--out", data}) != 0) return {Status::fail, "preprocess failed"};
  if (cli({"train", "--data", data, "--out", run, "--seed", "0", "--threads", "1", "--quiet"}) != 0) {
    return {Status::fail, "train failed"};
  }
  std::string printed;
  if (cli({"evaluate", "--run", run, "--split", "test"}, &printed) != 0) return {Status::fail, "evaluate failed"};
  const double auc = json::parse(printed)["mean"]["auc"];
  const bool near = std::abs(auc - kAssist09Reference) <= kAssist09Band;
  // Pipeline completion is the gate; the reference AUC is informational.
  return {Status::pass, "test AUC " + fmt(auc) + ", reference " + fmt(kAssist09Reference, 5) + " +/- " +
                            fmt(kAssist09Band, 2) + (near ? " (within band)" : " (outside band, not gating)")};
}

struct Criterion {
  std::string id;
  std::string title;
  std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {"c1", "gradient correctness", gradient_correctness},
      {"c2", "focal-loss reduction", focal_reduction},
      {"c3", "metric oracles", metric_oracles},
      {"c4", "causality", causality},
      {"c5", "overfit capability", overfit},
      {"c6", "learnable signal", learnable_signal},
      {"c7", "null band", null_band},
      {"c8", "imbalance ablation direction", ablation_direction},
      {"c9", "preprocessing fixture", preprocessing_fixture},
      {"c10", "determinism", determinism},
      {"c11", "ASSIST09 pipeline (optional)", assist09},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> wanted(argv + 1, argv + argc);
  for (auto& w : wanted) std::transform(w.begin(), w.end(), w.begin(), ::tolower);
  int failed = 0, ran = 0, skipped = 0;
  for (const auto& c : criteria()) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Status::fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
    std::string id = c.id;
    id[0] = 'C';
    std::cout << id << ' ' << tag << ' ' << c.title << " :: " << o.detail << " [" << fmt(secs, 1) << "s]"
              << std::endl;
    failed += o.status == Status::fail ? 1 : 0;
    skipped += o.status == Status::skip ? 1 : 0;
  }
  if (ran == 0) {
    std::cerr << "no such criterion\n";
    return 2;
  }
  if (failed) return 1;
  return skipped == ran ? 77 : 0;
}
