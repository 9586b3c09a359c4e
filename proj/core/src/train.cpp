// SPDX-License-Identifier: Apache-2.0
#include "pkt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <optional>
#include <sstream>

#include "json_io.hpp"
#include "pkt/error.hpp"

namespace pkt {

using detail::json;

std::string_view to_string(Variant v) noexcept {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_rr: return "no-rr";
    case Variant::no_ci: return "no-ci";
    case Variant::no_rr_ci: return "no-rr-ci";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == text) return v;
  }
  throw Error("unknown variant '" + std::string(text) + "' (expected full|no-rr|no-ci|no-rr-ci)");
}

LossConfig apply_variant(LossConfig loss, Variant v) {
  if (v == Variant::no_rr || v == Variant::no_rr_ci) loss.lambda_rr = 0.0;
  if (v == Variant::no_ci || v == Variant::no_rr_ci) loss.lambda_ci = 0.0;
  return loss;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw Error("TrainConfig: epochs must be positive");
  if (patience >= epochs) throw Error("TrainConfig: patience must be smaller than epochs");
  if (batch_size == 0) throw Error("TrainConfig: batch_size must be at least 1");
  if (k < 2) throw Error("TrainConfig: k must be at least 2");
  if (!(adam.learning_rate > 0.0)) throw Error("TrainConfig: learning rate must be positive");
  loss.validate();
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a simple combination.
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (a + 1) + 0xBF58476D1CE4E5B9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

bool EarlyStopping::update(double auc) {
  ++epoch_;
  if (best_epoch_ == 0 || auc > best_auc_) {
    best_auc_ = auc;
    best_epoch_ = epoch_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

// ---------------------------------------------------------------------------

namespace {

void check_compatible(const PKTConfig& config, std::span<const InteractionSequence> seqs) {
  for (const auto& s : seqs) {
    if (s.length() != config.maxlen) {
      throw DataError("user " + s.user_id + " has length " + std::to_string(s.length()) +
                      " but the model expects maxlen " + std::to_string(config.maxlen));
    }
    for (std::size_t t = 0; t < s.length(); ++t) {
      if (s.mask[t] && (s.skills[t] < 0 || static_cast<std::size_t>(s.skills[t]) >= config.num_skills)) {
        throw DataError("user " + s.user_id + " uses skill " + std::to_string(s.skills[t]) +
                        " but the model has " + std::to_string(config.num_skills) + " skills");
      }
    }
  }
}

std::vector<Tensor*> param_ptrs(PKTParams& params) {
  std::vector<Tensor*> out;
  for (auto& [name, t] : params.named()) out.push_back(t);
  return out;
}

}  // namespace

ScoredPredictions predict(const PKTParams& params, const PKTConfig& config,
                          std::span<const InteractionSequence> sequences, std::size_t batch_size) {
  check_compatible(config, sequences);
  ScoredPredictions preds;
  const std::size_t T = config.maxlen;
  for (std::size_t start = 0; start < sequences.size(); start += batch_size) {
    const std::size_t end = std::min(sequences.size(), start + batch_size);
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < end; ++i) rows.push_back(i);
    const EncodedBatch batch = encode_batch(sequences, rows, config.num_skills);
    Tape tape(false);
    const BoundParams bound = bind(tape, params);
    const BatchForward fw = forward_batch(tape, bound, batch, config);
    const Tensor& p = tape.value(fw.prediction);
    for (std::size_t b = 0; b < batch.batch; ++b) {
      for (std::size_t t = 0; t + 1 < T; ++t) {
        if (batch.valid[b * T + t + 1] == 0.0) continue;
        preds.append(p[b * T + t], static_cast<int>(batch.responses[b * T + t + 1]));
      }
    }
  }
  return preds;
}

MetricsReport evaluate_split(const PKTParams& params, const PKTConfig& config,
                             std::span<const InteractionSequence> sequences, std::size_t batch_size,
                             std::optional<int> fold_id) {
  if (sequences.empty()) throw DataError("evaluate_split: no sequences");
  return make_report(predict(params, config, sequences, batch_size), 0.5, fold_id);
}

double per_user_auc(const PKTParams& params, const PKTConfig& config,
                    std::span<const InteractionSequence> sequences) {
  double total = 0.0;
  std::size_t users = 0;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const ScoredPredictions p = predict(params, config, sequences.subspan(i, 1));
    const std::size_t pos = p.positives();
    if (pos == 0 || pos == p.size()) continue;
    total += auc_roc(p);
    ++users;
  }
  if (users == 0) throw DataError("per_user_auc: no user has both response classes");
  return total / static_cast<double>(users);
}

FoldResult train_fold(std::span<const InteractionSequence> train,
                      std::span<const InteractionSequence> validation, const TrainConfig& config,
                      int fold_id, const EpochCallback& on_epoch) {
  config.validate();
  config.model.validate();
  if (train.empty()) throw DataError("train_fold: empty training set");
  if (validation.empty()) throw DataError("train_fold: empty validation set");
  check_compatible(config.model, train);
  check_compatible(config.model, validation);

  FoldResult result;
  result.loss = apply_variant(config.loss, config.variant);
  if (config.alpha_from_data) {
    const DatasetStats st = compute_stats(train);
    result.loss.alpha_ci = st.imbalance_ratio;
    result.loss.minority_class = 1 - st.majority_class;
  }
  result.loss.validate();

  PKTConfig model = config.model;
  model.seed = derive_seed(config.model.seed, static_cast<std::uint64_t>(fold_id));
  PKTParams params = PKTParams::initialize(model);
  const std::vector<Tensor*> ptrs = param_ptrs(params);
  AdamState adam(config.adam, ptrs);
  EarlyStopping stopper(config.patience);
  result.best_params = params;

  std::vector<std::size_t> all(train.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    const auto batches = make_batches(
        all, config.batch_size, derive_seed(config.seed, static_cast<std::uint64_t>(fold_id), epoch));
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const EncodedBatch batch = encode_batch(train, batches[bi], model.num_skills);
      Tape tape;
      const BoundParams bound = bind(tape, params);
      auto diverged = [&](const std::string& detail) {
        return DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(bi + 1) + detail,
                               static_cast<int>(epoch), static_cast<int>(bi + 1));
      };
      // Non-finite parameters surface as domain errors inside the forward pass.
      std::optional<Objective> objective;
      try {
        const BatchForward fw = forward_batch(tape, bound, batch, model);
        objective = pkt_objective(tape, fw, batch, result.loss);
      } catch (const DomainError& e) {
        throw diverged(std::string(" (") + e.what() + ")");
      }
      const Objective& obj = *objective;
      const double total = tape.value(obj.total).item();
      if (!std::isfinite(total)) throw diverged("");
      tape.backward(obj.total);
      std::vector<Tensor> grads;
      grads.reserve(bound.leaves.size());
      for (Var leaf : bound.leaves) grads.push_back(tape.grad(leaf));
      adam_step(ptrs, grads, adam);

      log.loss += total;
      log.loss_kt += tape.value(obj.kt).item();
      log.loss_rr += result.loss.lambda_rr * tape.value(obj.rr).item();
      log.loss_ci += result.loss.lambda_ci * tape.value(obj.ci).item();
      log.clamp_events += obj.clamp_events;
    }
    const double nb = static_cast<double>(batches.size());
    log.loss /= nb;
    log.loss_kt /= nb;
    log.loss_rr /= nb;
    log.loss_ci /= nb;

    const MetricsReport val = evaluate_split(params, model, validation, config.batch_size);
    log.val_auc = val.auc;
    log.val_acc = val.acc;
    log.val_aucprc = val.aucprc;
    log.improved = stopper.update(val.auc);
    if (log.improved) result.best_params = params;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.logs.push_back(log);
    if (on_epoch) on_epoch(fold_id, log);
    if (stopper.should_stop()) break;
  }
  result.best_epoch = stopper.best_epoch();
  result.best_auc = stopper.best_auc();
  return result;
}

// ---------------------------------------------------------------------------

std::vector<InteractionSequence> select(std::span<const InteractionSequence> all,
                                        std::span<const std::size_t> indices) {
  std::vector<InteractionSequence> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(all[i]);
  return out;
}

PKTConfig resolve_model(const PKTConfig& model, const ProcessedDataset& data) {
  PKTConfig m = model;
  m.num_skills = data.num_skills();
  m.maxlen = data.maxlen();
  return m;
}

CrossValidationResult cross_validate(const ProcessedDataset& data, const TrainConfig& config,
                                     std::optional<std::size_t> max_folds, std::size_t threads,
                                     const EpochCallback& on_epoch) {
  TrainConfig cfg = config;
  cfg.model = resolve_model(config.model, data);
  cfg.validate();
  CrossValidationResult cv;
  cv.assignment = split_folds(data.sequences.size(), cfg.k, cfg.test_fraction, cfg.seed);
  const std::size_t n_folds = std::min(cfg.k, max_folds.value_or(cfg.k));
  if (n_folds == 0) throw Error("cross_validate: no folds to run");
  const auto test = select(data.sequences, cv.assignment.test);

  auto run_fold = [&](std::size_t f) {
    const auto train = select(data.sequences, cv.assignment.train_indices(f));
    const auto val = select(data.sequences, cv.assignment.validation_indices(f));
    FoldOutcome out;
    out.fold = static_cast<int>(f);
    out.result = train_fold(train, val, cfg, out.fold, on_epoch);
    out.test = evaluate_split(out.result.best_params, [&] {
      PKTConfig m = cfg.model;
      m.seed = derive_seed(cfg.model.seed, f);
      return m;
    }(), test, cfg.batch_size, out.fold);
    return out;
  };

  cv.folds.resize(n_folds);
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n_folds));
  for (std::size_t first = 0; first < n_folds; first += workers) {
    std::vector<std::future<FoldOutcome>> running;
    for (std::size_t f = first; f < std::min(n_folds, first + workers); ++f) {
      running.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred,
                                   run_fold, f));
    }
    for (std::size_t i = 0; i < running.size(); ++i) cv.folds[first + i] = running[i].get();
  }

  std::vector<MetricsReport> reports;
  for (const auto& f : cv.folds) reports.push_back(f.test);
  cv.mean_test = mean_report(reports);
  return cv;
}

std::vector<AblationEntry> run_ablation(const ProcessedDataset& data, const TrainConfig& base,
                                        std::optional<std::size_t> max_folds, std::size_t threads,
                                        const EpochCallback& on_epoch) {
  std::vector<AblationEntry> out;
  for (Variant v : kAllVariants) {
    TrainConfig cfg = base;
    cfg.variant = v;
    out.push_back({v, cross_validate(data, cfg, max_folds, threads, on_epoch)});
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string epochs_to_csv(std::span<const EpochLog> logs) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "epoch,loss,loss_kt,loss_rr,loss_ci,val_auc,val_acc,val_aucprc,clamp_events,improved\n";
  for (const auto& l : logs) {
    out << l.epoch << ',' << l.loss << ',' << l.loss_kt << ',' << l.loss_rr << ',' << l.loss_ci
        << ',' << l.val_auc << ',' << l.val_acc << ',' << l.val_aucprc << ',' << l.clamp_events
        << ',' << (l.improved ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string timings_to_csv(std::span<const EpochLog> logs) {
  std::ostringstream out;
  out << "epoch,seconds\n";
  for (const auto& l : logs) out << l.epoch << ',' << l.seconds << '\n';
  return out.str();
}

std::string train_config_to_json(const TrainConfig& c) {
  const json j{{"epochs", c.epochs},
               {"patience", c.patience},
               {"batch_size", c.batch_size},
               {"adam", detail::to_json(c.adam)},
               {"k", c.k},
               {"test_fraction", c.test_fraction},
               {"seed", c.seed},
               {"loss", detail::to_json(c.loss)},
               {"model", detail::to_json(c.model)},
               {"variant", std::string(to_string(c.variant))},
               {"alpha_from_data", c.alpha_from_data}};
  return j.dump(2);
}

TrainConfig train_config_from_json(std::string_view text, const TrainConfig& defaults) {
  TrainConfig c = defaults;
  try {
    const json j = json::parse(text);
    detail::read_opt(j, "epochs", c.epochs);
    detail::read_opt(j, "patience", c.patience);
    detail::read_opt(j, "batch_size", c.batch_size);
    detail::read_opt(j, "k", c.k);
    detail::read_opt(j, "test_fraction", c.test_fraction);
    detail::read_opt(j, "seed", c.seed);
    detail::read_opt(j, "alpha_from_data", c.alpha_from_data);
    if (j.contains("adam")) c.adam = detail::adam_config_from_json(j["adam"], c.adam);
    if (j.contains("loss")) c.loss = detail::loss_config_from_json(j["loss"], c.loss);
    if (j.contains("model")) c.model = detail::model_config_from_json(j["model"], c.model);
    if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
  } catch (const json::exception& e) {
    throw DataError(std::string("train config: ") + e.what());
  }
  return c;
}

namespace {

json cv_json(const CrossValidationResult& cv) {
  json folds = json::array();
  for (const auto& f : cv.folds) {
    folds.push_back({{"fold", f.fold},
                     {"best_epoch", f.result.best_epoch},
                     {"best_val_auc", f.result.best_auc},
                     {"epochs_run", f.result.logs.size()},
                     {"alpha_ci", f.result.loss.alpha_ci},
                     {"test", detail::to_json(f.test)}});
  }
  return json{{"folds", std::move(folds)},
              {"mean_test", detail::to_json(cv.mean_test)},
              {"test_users", cv.assignment.test.size()}};
}

}  // namespace

std::string cv_report_to_json(const CrossValidationResult& cv, Variant variant) {
  json j = cv_json(cv);
  j["variant"] = std::string(to_string(variant));
  return j.dump(2);
}

std::string ablation_report_to_json(std::span<const AblationEntry> entries) {
  json variants = json::array();
  for (const auto& e : entries) {
    json j = cv_json(e.result);
    j["variant"] = std::string(to_string(e.variant));
    variants.push_back(std::move(j));
  }
  return json{{"variants", std::move(variants)}}.dump(2);
}

void write_fold(const std::filesystem::path& run_dir, const FoldOutcome& fold,
                const PKTConfig& model) {
  const auto dir = run_dir / ("fold_" + std::to_string(fold.fold));
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "epochs.csv") << epochs_to_csv(fold.result.logs);
  std::ofstream(dir / "timing.csv") << timings_to_csv(fold.result.logs);
  PKTConfig m = model;
  m.seed = derive_seed(model.seed, static_cast<std::uint64_t>(fold.fold));
  save_checkpoint(dir / "checkpoint", fold.result.best_params, m);
}

}  // namespace pkt
