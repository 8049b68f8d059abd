#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcm/rng.hpp"
#include "dcm/tensor.hpp"

namespace dcm::data {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown by load_csv when the path cannot be opened.
class MissingFileError : public DataError {
 public:
  using DataError::DataError;
};

struct SeriesDataset {
  std::string name;
  Tensor<float> values;  // [T, V]
  std::vector<std::string> variables;
  std::string frequency;

  std::size_t rows() const { return values.dim(0); }
  std::size_t cols() const { return values.dim(1); }
  /// Rows [begin, end) as a new dataset with the same metadata.
  SeriesDataset slice(std::size_t begin, std::size_t end) const;
};

/// Header row required; a leading "date" column is skipped. Cells parse as
/// 64-bit and are stored as 32-bit. Errors name the offending row/column.
SeriesDataset load_csv(const std::string& path, const std::string& name = "");
/// Same dialect, values written in shortest round-trip form.
void write_csv(const std::string& path, const SeriesDataset& ds);
void write_csv(std::ostream& out, const SeriesDataset& ds);

/// Row ranges of the three views. Val and test begin L rows before their
/// first label row.
struct SplitSpec {
  std::size_t train_begin = 0, train_end = 0;
  std::size_t val_begin = 0, val_end = 0;
  std::size_t test_begin = 0, test_end = 0;
};

/// Published per-dataset facts used for split defaults.
struct DatasetInfo {
  std::string name;
  std::size_t variables;
  std::size_t train, val, test;  // evaluation rows at lookback 96
  bool pems_style;
};
const std::vector<DatasetInfo>& known_datasets();
/// Case-insensitive lookup, also accepting common file stems such as
/// "electricity" or "solar_AL".
std::optional<DatasetInfo> find_dataset(const std::string& name);

/// Split reproducing a known dataset's evaluation-row counts for lookback L.
SplitSpec table_split(const DatasetInfo& info, std::size_t total_rows, std::size_t lookback);
/// Ratio split (train, val, test fractions summing to 1).
SplitSpec ratio_split(std::size_t total_rows, std::size_t lookback, double train, double val,
                      double test);
/// Evaluation rows of a view: rows - L + 1.
std::size_t evaluation_rows(std::size_t view_rows, std::size_t lookback);

struct DataSplits {
  SeriesDataset train, val, test;
  SplitSpec spec;
};
DataSplits split(const SeriesDataset& ds, const SplitSpec& spec);

/// Number of stride-1 (lookback, horizon) windows; throws if the view is too short.
std::size_t window_count(std::size_t rows, std::size_t lookback, std::size_t horizon);

struct WindowBatch {
  Tensor<float> inputs;   // [bs, L, V]
  Tensor<float> targets;  // [bs, W, V]
  std::vector<std::size_t> starts;
};

/// Stride-1 windows over one view.
class Windows {
 public:
  Windows(const SeriesDataset& view, std::size_t lookback, std::size_t horizon);
  std::size_t size() const { return count_; }
  std::size_t lookback() const { return lookback_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t variables() const { return values_.dim(1); }
  WindowBatch batch(const std::vector<std::size_t>& starts) const;
  /// Windows [first, first + count) clipped at the end.
  WindowBatch range(std::size_t first, std::size_t count) const;

 private:
  Tensor<float> values_;
  std::size_t lookback_, horizon_, count_;
};

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t n_vars = 8;
  std::size_t length = 4000;
  std::vector<std::size_t> lags;  // per variable j >= 1; default 3 j
  std::vector<double> scales;     // per variable j >= 1; default alternating 1, -0.9, 0.8, ...
  double noise_sigma = 0.1;
};
/// Primary period of variable 0 in the synthetic generator.
inline constexpr double kSynthPeriod = 24.0;
/// Secondary period, an irrational multiple of the primary one.
double synth_secondary_period();
/// Noise-free variable 0 at (possibly negative) time t.
double synth_base(double t);
SeriesDataset synth(const SynthConfig& cfg);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<std::string> warnings;

  /// Per-variable statistics over every row of `train`. Zero-variance columns
  /// get std 1 and a warning.
  static NormStats fit(const SeriesDataset& train);
};
SeriesDataset standardize(const SeriesDataset& ds, const NormStats& stats);
SeriesDataset destandardize(const SeriesDataset& ds, const NormStats& stats);
/// In-place variants on any [..., V] tensor.
void standardize_inplace(Tensor<float>& x, const NormStats& stats);
void destandardize_inplace(Tensor<float>& x, const NormStats& stats);

}  // namespace dcm::data
