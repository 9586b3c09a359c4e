// SPDX-License-Identifier: Apache-2.0
#include "pkt_cli/cli.hpp"

#include <cctype>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pkt/dataio.hpp"
#include "pkt/error.hpp"
#include "pkt/synth.hpp"
#include "pkt/train.hpp"
#include "pkt_cli/plot.hpp"

#ifndef PKT_VERSION
#define PKT_VERSION "0.0.0"
#endif

namespace pkt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string version() { return PKT_VERSION; }

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (text.empty() || text.back() != '\n') out << '\n';
}

std::string abs_string(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

json manifest(const std::string& command, json config, json inputs, json outputs,
              std::optional<std::uint64_t> seed) {
  json m{{"subcommand", command},
         {"version", version()},
         {"config", std::move(config)},
         {"inputs", std::move(inputs)},
         {"outputs", std::move(outputs)}};
  m["seed"] = seed ? json(*seed) : json(nullptr);
  return m;
}

// Training flags shared by `train` and `ablate`. Unset values leave the
// config-file (or built-in) value untouched.
struct TrainFlags {
  fs::path data;
  fs::path out;
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::size_t> nc;
  std::optional<std::size_t> hidden;
  std::optional<double> gamma;
  std::optional<double> lambda_rr;
  std::optional<double> lambda_ci;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> patience;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<std::size_t> k;
  std::optional<double> test_fraction;
  std::optional<std::size_t> folds;
  std::size_t threads = 1;
  bool quiet = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_variant, bool seed_required) {
  cmd->add_option("--data", f.data, "Processed data directory (from `pkt preprocess`)")->required();
  cmd->add_option("--out", f.out, "Run directory to create")->required();
  auto* seed = cmd->add_option("--seed", f.seed, "Seed for splits, shuffling and initialization");
  if (seed_required) seed->required();
  cmd->add_option("--config", f.config, "JSON training config; flags override it");
  if (with_variant) {
    cmd->add_option("--variant", f.variant, "Loss variant")
        ->check(CLI::IsMember({"full", "no-rr", "no-ci", "no-rr-ci"}));
  }
  cmd->add_option("--nc", f.nc, "Number of capsule blocks");
  cmd->add_option("--hidden", f.hidden, "Embedding and hidden width");
  cmd->add_option("--gamma", f.gamma, "Focal-loss focusing parameter");
  cmd->add_option("--lambda-rr", f.lambda_rr, "Weight of the reconstruction loss");
  cmd->add_option("--lambda-ci", f.lambda_ci, "Weight of the focal loss");
  cmd->add_option("--epochs", f.epochs, "Maximum epochs per fold");
  cmd->add_option("--patience", f.patience, "Early-stopping patience in epochs");
  cmd->add_option("--batch-size", f.batch_size, "Sequences per batch");
  cmd->add_option("--lr", f.lr, "Adam learning rate");
  cmd->add_option("--k", f.k, "Number of cross-validation folds");
  cmd->add_option("--test-fraction", f.test_fraction, "Fraction of users held out for testing");
  cmd->add_option("--folds", f.folds, "Run only the first N folds");
  cmd->add_option("--threads", f.threads, "Folds trained concurrently")->check(CLI::PositiveNumber);
  cmd->add_flag("--quiet", f.quiet, "Suppress per-epoch progress");
}

TrainConfig resolve_train_config(const TrainFlags& f) {
  TrainConfig c;
  if (f.config) c = train_config_from_json(read_file(*f.config), c);
  if (f.seed) {
    c.seed = *f.seed;
    c.model.seed = *f.seed;
  }
  if (f.variant) c.variant = parse_variant(*f.variant);
  if (f.nc) c.model.num_capsules = *f.nc;
  if (f.hidden) c.model.hidden = *f.hidden;
  if (f.gamma) c.loss.gamma = *f.gamma;
  if (f.lambda_rr) c.loss.lambda_rr = *f.lambda_rr;
  if (f.lambda_ci) c.loss.lambda_ci = *f.lambda_ci;
  if (f.epochs) c.epochs = *f.epochs;
  if (f.patience) c.patience = *f.patience;
  if (f.batch_size) c.batch_size = *f.batch_size;
  if (f.lr) c.adam.learning_rate = *f.lr;
  if (f.k) c.k = *f.k;
  if (f.test_fraction) c.test_fraction = *f.test_fraction;
  return c;
}

EpochCallback progress(std::ostream& err, bool quiet, std::string prefix = {}) {
  if (quiet) return {};
  auto mutex = std::make_shared<std::mutex>();
  return [&err, mutex, prefix](int fold, const EpochLog& log) {
    std::lock_guard lock(*mutex);
    err << prefix << "fold " << fold << " epoch " << log.epoch << " loss " << log.loss
        << " val_auc " << log.val_auc << (log.improved ? " *" : "") << '\n';
  };
}

json run_manifest(const std::string& command, const TrainConfig& config, const TrainFlags& f,
                  std::size_t folds) {
  json cfg = json::parse(train_config_to_json(config));
  cfg["folds"] = folds;
  cfg["threads"] = f.threads;
  return manifest(command, std::move(cfg), json{{"data", abs_string(f.data)}},
                  json{{"run_dir", abs_string(f.out)}}, config.seed);
}

// ---------------------------------------------------------------------------

int run_preprocess(const fs::path& in, const fs::path& out, std::optional<std::size_t> maxlen,
                   std::size_t min_records, std::ostream& os) {
  PreprocessConfig pc;
  pc.maxlen = maxlen;
  pc.min_records = min_records;
  json cfg{{"min_records", min_records}};
  cfg["maxlen"] = maxlen ? json(*maxlen) : json("average");
  fs::create_directories(out);
  write_file(out / "manifest.json",
             manifest("preprocess", cfg, json{{"csv", abs_string(in)}},
                      json{{"dir", abs_string(out)}}, std::nullopt)
                 .dump(2));
  const auto records = load_interactions(in);
  const ProcessedDataset data = preprocess(records, pc);
  save_processed(data, out);
  os << stats_to_json(data.stats) << '\n';
  return kExitOk;
}

int run_stats(const std::optional<fs::path>& data_dir, const std::optional<fs::path>& csv,
              std::optional<std::size_t> maxlen, std::size_t min_records, std::ostream& os) {
  if (data_dir.has_value() == csv.has_value()) {
    throw CLI::ValidationError("stats: give exactly one of --data or --in");
  }
  if (data_dir) {
    os << stats_to_json(load_processed(*data_dir).stats) << '\n';
    return kExitOk;
  }
  PreprocessConfig pc;
  pc.maxlen = maxlen;
  pc.min_records = min_records;
  os << stats_to_json(preprocess(load_interactions(*csv), pc).stats) << '\n';
  return kExitOk;
}

struct SynthFlags {
  std::optional<fs::path> config;
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> students;
  std::optional<std::size_t> skills;
  std::optional<double> mean_length;
  std::optional<double> ratio;
};

int run_synth(const SynthFlags& f, std::ostream& os) {
  SynthConfig sc;
  if (f.config) sc = synth_config_from_json(read_file(*f.config));
  if (f.seed) sc.seed = *f.seed;
  if (f.students) sc.num_students = *f.students;
  if (f.skills) sc.num_skills = *f.skills;
  if (f.mean_length) sc.mean_length = *f.mean_length;
  if (f.ratio) sc.target_ratio = *f.ratio;
  sc.validate();
  fs::path manifest_path = f.out;
  manifest_path += ".manifest.json";
  json inputs = json::object();
  if (f.config) inputs["config"] = abs_string(*f.config);
  write_file(manifest_path, manifest("synth", json::parse(synth_config_to_json(sc)), inputs,
                                     json{{"csv", abs_string(f.out)}}, sc.seed)
                                .dump(2));
  const auto records = generate_dataset(sc);
  std::ofstream out(f.out, std::ios::binary);
  if (!out) throw Error("cannot write " + f.out.string());
  write_interactions_csv(records, out);
  os << "wrote " << records.size() << " interactions to " << f.out.string() << '\n';
  return kExitOk;
}

int run_train(const TrainFlags& f, std::ostream& os, std::ostream& err) {
  TrainConfig config = resolve_train_config(f);
  const ProcessedDataset data = load_processed(f.data);
  config.model = resolve_model(config.model, data);
  config.validate();
  config.model.validate();
  const std::size_t folds = std::min(config.k, f.folds.value_or(config.k));
  fs::create_directories(f.out);
  write_file(f.out / "run.json", run_manifest("train", config, f, folds).dump(2));

  const CrossValidationResult cv =
      cross_validate(data, config, folds, f.threads, progress(err, f.quiet));
  for (const auto& fold : cv.folds) write_fold(f.out, fold, config.model);
  const std::string report = cv_report_to_json(cv, config.variant);
  write_file(f.out / "report.json", report);
  os << report << '\n';
  return kExitOk;
}

int run_ablate(const TrainFlags& f, std::ostream& os, std::ostream& err) {
  TrainConfig config = resolve_train_config(f);
  const ProcessedDataset data = load_processed(f.data);
  config.model = resolve_model(config.model, data);
  config.validate();
  config.model.validate();
  const std::size_t folds = std::min(config.k, f.folds.value_or(config.k));
  fs::create_directories(f.out);
  json m = run_manifest("ablate", config, f, folds);
  json variants = json::array();
  for (Variant v : kAllVariants) variants.push_back(std::string(to_string(v)));
  m["config"]["variants"] = variants;
  m["config"].erase("variant");
  write_file(f.out / "run.json", m.dump(2));

  std::vector<AblationEntry> entries;
  for (Variant v : kAllVariants) {
    TrainConfig vc = config;
    vc.variant = v;
    const std::string name(to_string(v));
    entries.push_back(
        {v, cross_validate(data, vc, folds, f.threads, progress(err, f.quiet, name + " "))});
    for (const auto& fold : entries.back().result.folds) write_fold(f.out / name, fold, vc.model);
  }
  const std::string report = ablation_report_to_json(entries);
  write_file(f.out / "report.json", report);
  os << report << '\n';
  return kExitOk;
}

// A finished run directory: its manifest, the resolved config and the data.
struct LoadedRun {
  json manifest;
  TrainConfig config;
  std::size_t folds = 0;
  ProcessedDataset data;
  FoldAssignment assignment;
};

LoadedRun load_run(const fs::path& run_dir) {
  const fs::path path = run_dir / "run.json";
  if (!fs::exists(path)) throw Error("not a run directory (no run.json): " + run_dir.string());
  LoadedRun run;
  try {
    run.manifest = json::parse(read_file(path));
    if (run.manifest.at("subcommand") != "train") {
      throw Error(run_dir.string() + " was produced by `pkt " +
                  run.manifest.at("subcommand").get<std::string>() +
                  "`; this command needs a `pkt train` run directory");
    }
    run.config = train_config_from_json(run.manifest.at("config").dump());
    run.folds = run.manifest.at("config").at("folds").get<std::size_t>();
    run.data = load_processed(run.manifest.at("inputs").at("data").get<std::string>());
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  run.assignment = split_folds(run.data.sequences.size(), run.config.k, run.config.test_fraction,
                               run.config.seed);
  return run;
}

std::pair<PKTParams, PKTConfig> load_fold(const fs::path& run_dir, std::size_t fold,
                                          std::size_t folds) {
  if (fold >= folds) {
    throw Error("fold " + std::to_string(fold) + " out of range; the run has " +
                std::to_string(folds) + " fold(s)");
  }
  return load_checkpoint(run_dir / ("fold_" + std::to_string(fold)) / "checkpoint");
}

int run_evaluate(const fs::path& run_dir, const std::string& split, std::ostream& os) {
  const LoadedRun run = load_run(run_dir);
  const fs::path out_path = run_dir / ("evaluate_" + split + ".json");
  write_file(run_dir / "manifest_evaluate.json",
             manifest("evaluate", json{{"split", split}}, json{{"run_dir", abs_string(run_dir)}},
                      json{{"report", abs_string(out_path)}}, run.config.seed)
                 .dump(2));
  json folds = json::array();
  std::vector<MetricsReport> reports;
  for (std::size_t f = 0; f < run.folds; ++f) {
    const auto [params, model] = load_fold(run_dir, f, run.folds);
    std::vector<std::size_t> idx;
    if (split == "test") {
      idx = run.assignment.test;
    } else if (split == "validation") {
      idx = run.assignment.validation_indices(f);
    } else {
      idx = run.assignment.train_indices(f);
    }
    const auto seqs = select(run.data.sequences, idx);
    reports.push_back(
        evaluate_split(params, model, seqs, run.config.batch_size, static_cast<int>(f)));
    folds.push_back(json::parse(report_to_json(reports.back())));
  }
  const json result{{"split", split},
                    {"folds", folds},
                    {"mean", json::parse(report_to_json(mean_report(reports)))}};
  write_file(out_path, result.dump(2));
  os << result.dump(2) << '\n';
  return kExitOk;
}

const InteractionSequence& find_user(const ProcessedDataset& data, const std::string& user) {
  for (const auto& s : data.sequences) {
    if (s.user_id == user) return s;
  }
  throw DataError("user '" + user + "' is not in the dataset");
}

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
  return out;
}

struct ExportFlags {
  fs::path run;
  std::string user;
  std::size_t fold = 0;
  std::optional<fs::path> out;
};

int run_export(const ExportFlags& f, bool attention, std::ostream& os) {
  const std::string command = attention ? "export-attention" : "export-repr";
  const LoadedRun run = load_run(f.run);
  const InteractionSequence& seq = find_user(run.data, f.user);
  const auto [params, model] = load_fold(f.run, f.fold, run.folds);
  const fs::path out_dir = f.out.value_or(f.run / "exports");
  write_file(f.run / ("manifest_" + command + ".json"),
             manifest(command, json{{"user", f.user}, {"fold", f.fold}},
                      json{{"run_dir", abs_string(f.run)}}, json{{"dir", abs_string(out_dir)}},
                      run.config.seed)
                 .dump(2));
  fs::create_directories(out_dir);
  const ForwardTrace trace = forward_sequence(seq, params, model);
  const std::size_t L = trace.prediction.size();
  const std::size_t d = model.hidden;
  const std::string user = safe_name(f.user);

  if (attention) {
    for (std::size_t j = 0; j < model.num_capsules; ++j) {
      std::ostringstream csv;
      csv << std::setprecision(17) << "step";
      for (std::size_t i = 1; i <= L; ++i) csv << ",w" << i;
      csv << '\n';
      for (std::size_t t = 0; t < L; ++t) {
        csv << t + 1;
        for (std::size_t i = 0; i < L; ++i) csv << ',' << trace.attention[(j * L + t) * L + i];
        csv << '\n';
      }
      const fs::path path = out_dir / ("attention_" + user + "_block" + std::to_string(j) + ".csv");
      write_file(path, csv.str());
      os << path.string() << '\n';
    }
    return kExitOk;
  }

  std::ostringstream csv;
  csv << std::setprecision(17) << "step";
  for (std::size_t k = 0; k < d; ++k) csv << ",us_" << k;
  for (std::size_t k = 0; k < d; ++k) csv << ",r_" << k;
  csv << ",sim\n";
  for (std::size_t t = 0; t < L; ++t) {
    csv << t + 1;
    for (std::size_t k = 0; k < d; ++k) csv << ',' << trace.student[t * d + k];
    for (std::size_t k = 0; k < d; ++k) csv << ',' << trace.reconstruction[t * d + k];
    csv << ',' << trace.similarity[t] << '\n';
  }
  const fs::path path = out_dir / ("repr_" + user + ".csv");
  write_file(path, csv.str());
  os << path.string() << '\n';
  return kExitOk;
}

int run_plot(const fs::path& in, const fs::path& out, std::ostream& os) {
  render_plot(read_numeric_csv(in), out);
  os << "wrote " << out.string() << '\n';
  return kExitOk;
}

}  // namespace

int dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"pkt: personalized knowledge tracing", "pkt"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);

  fs::path pre_in, pre_out;
  std::optional<std::size_t> pre_maxlen;
  std::size_t pre_min = 3;
  auto* pre = app.add_subcommand("preprocess", "Canonical CSV to padded sequences and stats");
  pre->add_option("--in", pre_in, "Interaction CSV")->required();
  pre->add_option("--out", pre_out, "Output directory")->required();
  pre->add_option("--maxlen", pre_maxlen, "Sequence length (default: rounded average)");
  pre->add_option("--min-records", pre_min, "Drop users with fewer interactions");

  std::optional<fs::path> st_data, st_in;
  std::optional<std::size_t> st_maxlen;
  std::size_t st_min = 3;
  auto* stats = app.add_subcommand("stats", "Print dataset statistics as JSON");
  stats->add_option("--data", st_data, "Processed data directory");
  stats->add_option("--in", st_in, "Interaction CSV (preprocessed on the fly)");
  stats->add_option("--maxlen", st_maxlen, "Sequence length when reading --in");
  stats->add_option("--min-records", st_min, "Minimum interactions per user when reading --in");

  SynthFlags sf;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic interaction CSV");
  synth->add_option("--config", sf.config, "JSON synth config");
  synth->add_option("--out", sf.out, "Output CSV")->required();
  synth->add_option("--seed", sf.seed, "Generator seed")->required();
  synth->add_option("--students", sf.students, "Number of students");
  synth->add_option("--skills", sf.skills, "Number of skills");
  synth->add_option("--mean-length", sf.mean_length, "Mean sequence length");
  synth->add_option("--ratio", sf.ratio, "Target class-imbalance ratio");

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Cross-validated training");
  add_train_flags(train, tf, true, true);

  TrainFlags af;
  auto* ablate = app.add_subcommand("ablate", "Train every loss variant");
  add_train_flags(ablate, af, false, false);

  fs::path ev_run;
  std::string ev_split = "test";
  auto* eval = app.add_subcommand("evaluate", "Score a run's checkpoints on a split");
  eval->add_option("--run", ev_run, "Run directory from `pkt train`")->required();
  eval->add_option("--split", ev_split, "Split to score")
      ->check(CLI::IsMember({"test", "validation", "train"}));

  ExportFlags xa, xr;
  auto* exp_att = app.add_subcommand("export-attention", "Per-block attention weight CSVs");
  auto* exp_rep = app.add_subcommand("export-repr", "Per-step student, reconstruction and sim CSV");
  for (auto [cmd, flags] : {std::pair{exp_att, &xa}, std::pair{exp_rep, &xr}}) {
    cmd->add_option("--run", flags->run, "Run directory from `pkt train`")->required();
    cmd->add_option("--user", flags->user, "User id")->required();
    cmd->add_option("--fold", flags->fold, "Fold checkpoint to use");
    cmd->add_option("--out", flags->out, "Output directory (default: <run>/exports)");
  }

  fs::path pl_in, pl_out;
  auto* plot = app.add_subcommand("plot", "Render an exported CSV to .svg or .ppm");
  plot->add_option("--in", pl_in, "Exported CSV")->required();
  plot->add_option("--out", pl_out, "Image path")->required();

  std::vector<const char*> argv{"pkt"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*pre) return run_preprocess(pre_in, pre_out, pre_maxlen, pre_min, out);
    if (*stats) return run_stats(st_data, st_in, st_maxlen, st_min, out);
    if (*synth) return run_synth(sf, out);
    if (*train) return run_train(tf, out, err);
    if (*ablate) return run_ablate(af, out, err);
    if (*eval) return run_evaluate(ev_run, ev_split, out);
    if (*exp_att) return run_export(xa, true, out);
    if (*exp_rep) return run_export(xr, false, out);
    if (*plot) return run_plot(pl_in, pl_out, out);
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace pkt::cli
