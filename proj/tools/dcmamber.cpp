// dcmamber: train, evaluate and inspect the forecaster from the command line.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dcm/checkpoint.hpp"
#include "dcm/config.hpp"
#include "dcm/gradcheck.hpp"
#include "dcm/presets.hpp"
#include "dcm/run.hpp"

namespace fs = std::filesystem;
using namespace dcm;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitMissingData = 2;

struct CommonFlags {
  std::string config;
  std::string data;
  std::string dataset;
  std::string out;
  std::optional<std::size_t> horizon;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key=value config file");
  cmd->add_option("--data", f.data, "CSV path, or 'synth' for the generated dataset");
  cmd->add_option("--dataset", f.dataset, "dataset name (selects presets and split table)");
  cmd->add_option("--horizon", f.horizon, "forecast horizon W");
  cmd->add_option("--seed", f.seed, "seed for init, shuffling, dropout and synthetic data");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--epochs", f.epochs, "maximum training epochs");
  cmd->add_option("--set", f.sets, "override any config key (key=value), repeatable");
}

std::vector<KeyValue> cli_layer(const CommonFlags& f) {
  std::vector<KeyValue> kv;
  if (!f.dataset.empty()) kv.emplace_back("dataset", f.dataset);
  if (!f.data.empty()) kv.emplace_back("data", f.data);
  if (!f.out.empty()) kv.emplace_back("out", f.out);
  if (f.horizon) kv.emplace_back("horizon", std::to_string(*f.horizon));
  if (f.seed) kv.emplace_back("seed", std::to_string(*f.seed));
  if (f.epochs) kv.emplace_back("epochs", std::to_string(*f.epochs));
  for (const auto& s : f.sets) kv.push_back(parse_assignment(s));
  return kv;
}

RunConfig resolve(const CommonFlags& f) {
  const std::vector<KeyValue> file =
      f.config.empty() ? std::vector<KeyValue>{} : parse_config_file(f.config);
  return resolve_config(file, cli_layer(f));
}

fs::path out_dir(const RunConfig& cfg) {
  fs::path dir(cfg.out);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string dataset_label(const RunConfig& cfg) {
  return cfg.dataset.empty() ? fs::path(cfg.data).stem().string() : cfg.dataset;
}

// Keys fixed by a checkpoint's tensor shapes or forward semantics.
const std::vector<std::string> kArchitectureKeys = {
    "lookback", "horizon", "n_vars", "d_model",  "e_layers",      "d_state", "k",       "heads",
    "d_ff",     "expand",  "d_conv", "dt_rank",  "share_ef", "share_bimamba", "norm", "variant"};

// Applies command-line overrides on top of a stored config, refusing any
// change to the architecture.
RunConfig overlay(const RunConfig& stored, const CommonFlags& f) {
  RunConfig cfg = stored;
  for (const auto& [k, v] : cli_layer(f)) set_value(cfg, k, v);
  for (const auto& k : kArchitectureKeys) {
    if (get_value(cfg, k) != get_value(stored, k)) {
      throw ConfigError("'" + k + "' = " + get_value(cfg, k) + " does not match the checkpoint (" +
                        get_value(stored, k) + ")");
    }
  }
  return cfg;
}

int cmd_train(const CommonFlags& f) {
  RunConfig cfg = resolve(f);
  const data::SeriesDataset raw = run::load_dataset(cfg);
  run::bind_to_data(cfg, raw);
  std::cout << "dataset " << raw.name << ": " << raw.rows() << " rows x " << raw.cols()
            << " variables; L=" << cfg.model.lookback << " W=" << cfg.model.horizon
            << " D=" << cfg.model.d_model << " layers=" << cfg.model.e_layers
            << " lr=" << num(cfg.train.lr) << " variant=" << to_string(cfg.model.variant) << "\n";
  const run::TrainOutcome r = run::train_model(cfg, raw, [](const train::EpochRecord& e) {
    std::cout << "epoch " << e.epoch << " train_mse " << num(e.train_mse) << " val_mse "
              << num(e.val_mse) << " val_mae " << num(e.val_mae) << " lr " << num(e.lr) << "\n"
              << std::flush;
    return true;
  });
  const fs::path dir = out_dir(cfg);
  save_checkpoint((dir / "checkpoint.dcm").string(), cfg, r.model, r.stats);
  train::write_history_csv((dir / "history.csv").string(), r.history);
  write_text(dir / "metrics.csv",
             "split,mse,mae,raw_mse,raw_mae,persistence_mse,persistence_mae\ntest," +
                 num(r.test.mse) + "," + num(r.test.mae) + "," + num(r.test.raw_mse) + "," +
                 num(r.test.raw_mae) + "," + num(r.persistence.mse) + "," +
                 num(r.persistence.mae) + "\n");
  std::cout << "best epoch " << r.history.best_epoch << " (" << r.history.steps << " steps"
            << (r.history.stopped_early ? ", stopped early" : "") << ")\n"
            << "test mse " << num(r.test.mse) << " mae " << num(r.test.mae)
            << " | persistence mse " << num(r.persistence.mse) << "\n"
            << "wrote " << (dir / "checkpoint.dcm").string() << ", history.csv, metrics.csv\n";
  return 0;
}

int cmd_eval(const CommonFlags& f, const std::string& checkpoint, const std::string& split) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  RunConfig cfg = overlay(ck.config, f);
  if (!split.empty()) set_value(cfg, "eval_split", split);
  const data::SeriesDataset raw = run::load_dataset(cfg);
  if (raw.cols() != cfg.model.n_vars) {
    throw ConfigError("data has " + std::to_string(raw.cols()) + " columns, checkpoint expects " +
                      std::to_string(cfg.model.n_vars));
  }
  const data::DataSplits parts = data::split(raw, run::choose_split(cfg, raw));
  const data::SeriesDataset view =
      data::standardize(run::pick_view(parts, cfg.eval_split), ck.stats);
  const run::ViewScores s = run::score_view(ck.model, view, ck.stats, cfg.train.eval_batch);

  std::cout << "split " << cfg.eval_split << " windows " << s.model.windows << "\n"
            << "mse " << num(s.model.mse) << " mae " << num(s.model.mae) << " (standardized)\n"
            << "raw mse " << num(s.model.raw_mse) << " raw mae " << num(s.model.raw_mae)
            << " (original units)\n"
            << "persistence mse " << num(s.persistence.mse) << " mae " << num(s.persistence.mae)
            << "\n";
  if (const auto pub = find_published(dataset_label(cfg), cfg.model.horizon)) {
    std::cout << "published: " << num(pub->mse) << "/" << num(pub->mae) << "\n";
  }
  const fs::path dir = out_dir(cfg);
  write_text(dir / ("eval_" + cfg.eval_split + ".csv"),
             "split,windows,mse,mae,raw_mse,raw_mae,persistence_mse,persistence_mae\n" +
                 cfg.eval_split + "," + std::to_string(s.model.windows) + "," + num(s.model.mse) +
                 "," + num(s.model.mae) + "," + num(s.model.raw_mse) + "," +
                 num(s.model.raw_mae) + "," + num(s.persistence.mse) + "," +
                 num(s.persistence.mae) + "\n");
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& input, const std::string& output) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const data::SeriesDataset in = data::load_csv(input);
  const data::SeriesDataset pred = run::forecast(ck.model, ck.stats, in);
  if (output.empty() || output == "-") {
    data::write_csv(std::cout, pred);
  } else {
    data::write_csv(output, pred);
  }
  return 0;
}

int cmd_gradcheck(const CommonFlags& f) {
  const RunConfig cfg = resolve(f);
  const train::GradReport ops = train::op_gradient_suite(cfg.gradcheck_op_tol);
  train::print_report(std::cout, ops, "operator suite");
  const train::GradReport model =
      train::gradient_check(train::tiny_model_config(), cfg.gradcheck_model_tol);
  train::print_report(std::cout, model, "tiny full model");
  const bool ok = ops.pass() && model.pass();
  std::cout << (ok ? "gradcheck PASS" : "gradcheck FAIL") << "\n";
  return ok ? 0 : kExitFailure;
}

int cmd_bench(const CommonFlags& f, const std::string& lengths, std::optional<std::size_t> reps) {
  RunConfig cfg = resolve(f);
  if (!lengths.empty()) cfg.bench_lengths = lengths;
  if (reps) cfg.bench_reps = *reps;
  const auto rows = run::bench_scan(run::parse_lengths(cfg.bench_lengths), cfg.bench_reps, cfg.seed);
  const std::string csv = run::bench_csv(rows);
  std::cout << csv;
  write_text(out_dir(cfg) / "bench_scan.csv", csv);
  return 0;
}

int cmd_ablate(const CommonFlags& f, const std::string& variants) {
  RunConfig cfg = resolve(f);
  if (!variants.empty()) cfg.variants = variants;
  const auto list = run::parse_variant_list(cfg.variants);
  const data::SeriesDataset raw = run::load_dataset(cfg);
  run::bind_to_data(cfg, raw);
  const auto rows = run::ablate(cfg, raw, list);
  std::printf("%-18s %7s %10s %10s %7s\n", "variant", "horizon", "mse", "mae", "steps");
  for (const auto& r : rows) {
    std::printf("%-18s %7zu %10.4f %10.4f %7zu\n", r.variant.c_str(), r.horizon, r.mse, r.mae,
                r.steps);
  }
  write_text(out_dir(cfg) / "ablation.csv", run::ablation_csv(rows));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dcmamber: dual-channel Linformer + Bi-Mamba forecaster"};
  app.require_subcommand(1);

  CommonFlags train_f, eval_f, predict_f, grad_f, bench_f, ablate_f;
  auto* train = app.add_subcommand("train", "train a model; writes checkpoint, history and metrics");
  add_common(train, train_f);

  std::string eval_ckpt, eval_split;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  add_common(eval, eval_f);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--split", eval_split, "train, val or test");

  std::string pred_ckpt, pred_in, pred_out;
  auto* predict = app.add_subcommand("predict", "forecast W rows after the last L rows of a CSV");
  add_common(predict, predict_f);
  predict->add_option("--checkpoint", pred_ckpt, "checkpoint file")->required();
  predict->add_option("--input", pred_in, "CSV with at least L rows")->required();
  predict->add_option("--output", pred_out, "output CSV ('-' for stdout)");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_common(grad, grad_f);

  std::string bench_lengths;
  std::optional<std::size_t> bench_reps;
  auto* bench = app.add_subcommand("bench-scan", "time the scans and linear attention per length");
  add_common(bench, bench_f);
  bench->add_option("--lengths", bench_lengths, "comma-separated sequence lengths");
  bench->add_option("--reps", bench_reps, "repetitions per measurement (median reported)");

  std::string ablate_variants;
  auto* ablate = app.add_subcommand("ablate", "train every listed variant with shared seed and data");
  add_common(ablate, ablate_f);
  ablate->add_option("--variants", ablate_variants, "comma-separated variant names");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(train_f);
    if (*eval) return cmd_eval(eval_f, eval_ckpt, eval_split);
    if (*predict) return cmd_predict(pred_ckpt, pred_in, pred_out);
    if (*grad) return cmd_gradcheck(grad_f);
    if (*bench) return cmd_bench(bench_f, bench_lengths, bench_reps);
    if (*ablate) return cmd_ablate(ablate_f, ablate_variants);
  } catch (const data::MissingFileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
