#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dcm/config.hpp"
#include "dcm/data.hpp"
#include "dcm/model.hpp"
#include "dcm/training.hpp"

// Workflows shared by the command-line tool and the acceptance tests.
namespace dcm::run {

/// The raw series named by cfg.data: a CSV path, or "synth" for the
/// generated lag-coupled sinusoids.
data::SeriesDataset load_dataset(const RunConfig& cfg);

/// Fills n_vars from the data (or checks it) and validates the result.
void bind_to_data(RunConfig& cfg, const data::SeriesDataset& raw);

/// Standardized views plus the training-split statistics.
struct Prepared {
  data::DataSplits views;
  data::NormStats stats;
};
data::SplitSpec choose_split(const RunConfig& cfg, const data::SeriesDataset& raw);
Prepared prepare(const RunConfig& cfg, const data::SeriesDataset& raw);

DcMamber<float> build_model(const RunConfig& cfg);

struct TrainOutcome {
  DcMamber<float> model;
  train::History history;
  train::EvalResult test;
  train::EvalResult persistence;
  data::NormStats stats;
};
TrainOutcome train_model(const RunConfig& cfg, const data::SeriesDataset& raw,
                         const train::EpochCallback& on_epoch = {});

/// Metrics of `model` and of the persistence forecast on one view.
struct ViewScores {
  train::EvalResult model;
  train::EvalResult persistence;
};
ViewScores score_view(const DcMamber<float>& model, const data::SeriesDataset& view,
                      const data::NormStats& stats, std::size_t batch);
const data::SeriesDataset& pick_view(const data::DataSplits& views, const std::string& name);

struct AblationRow {
  std::string variant;
  std::size_t horizon = 0;
  double mse = 0;
  double mae = 0;
  std::size_t steps = 0;
};
std::vector<Variant> parse_variant_list(const std::string& csv);
std::vector<AblationRow> ablate(const RunConfig& cfg, const data::SeriesDataset& raw,
                                const std::vector<Variant>& variants);
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct BenchRow {
  std::size_t length = 0;
  double sequential_ms = 0;
  double parallel_ms = 0;
  double attention_ms = 0;
  double model_ms = 0;
  double max_abs_diff = 0;  // parallel vs sequential scan output
};
std::vector<std::size_t> parse_lengths(const std::string& csv);
/// Median-of-`reps` wall time per kernel at each length.
std::vector<BenchRow> bench_scan(const std::vector<std::size_t>& lengths, std::size_t reps,
                                 std::uint64_t seed);
std::string bench_csv(const std::vector<BenchRow>& rows);

/// Last `lookback` rows of `input` -> W forecast rows in the original units.
data::SeriesDataset forecast(const DcMamber<float>& model, const data::NormStats& stats,
                             const data::SeriesDataset& input);

}  // namespace dcm::run
