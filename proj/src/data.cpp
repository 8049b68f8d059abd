#include "dcm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace dcm::data {

SeriesDataset SeriesDataset::slice(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > rows()) {
    throw DataError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                    ") outside " + std::to_string(rows()) + " rows");
  }
  const std::size_t v = cols();
  std::vector<float> out(values.ptr() + begin * v, values.ptr() + end * v);
  return {name, Tensor<float>({end - begin, v}, std::move(out)), variables, frequency};
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n\"");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n\"");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

SeriesDataset load_csv(const std::string& path, const std::string& name) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open dataset file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file, header row required");
  const auto header = split_fields(line);
  const bool skip_date = !header.empty() && lower(trim(header[0])) == "date";
  const std::size_t first_col = skip_date ? 1 : 0;
  if (header.size() <= first_col) throw DataError(path + ": no numeric columns in header");
  SeriesDataset ds;
  ds.name = name.empty() ? std::filesystem::path(path).stem().string() : name;
  for (std::size_t c = first_col; c < header.size(); ++c) ds.variables.push_back(trim(header[c]));
  const std::size_t v = ds.variables.size();

  std::vector<float> values;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw DataError(path + ": row " + std::to_string(row) + " has " +
                      std::to_string(fields.size()) + " columns, header has " +
                      std::to_string(header.size()));
    }
    for (std::size_t c = first_col; c < fields.size(); ++c) {
      const std::string cell = trim(fields[c]);
      double parsed = 0;
      const char* end = cell.data() + cell.size();
      const auto [ptr, ec] = std::from_chars(cell.data(), end, parsed);
      if (cell.empty() || ec != std::errc() || ptr != end || !std::isfinite(parsed)) {
        throw DataError(path + ": row " + std::to_string(row) + ", column " +
                        std::to_string(c + 1) + " ('" + ds.variables[c - first_col] +
                        "'): cannot parse '" + cell + "' as a number");
      }
      values.push_back(static_cast<float>(parsed));
    }
  }
  if (values.empty()) throw DataError(path + ": no data rows");
  const std::size_t rows = values.size() / v;
  ds.values = Tensor<float>({rows, v}, std::move(values));
  if (auto info = find_dataset(ds.name)) ds.name = info->name;
  return ds;
}

void write_csv(std::ostream& out, const SeriesDataset& ds) {
  for (std::size_t c = 0; c < ds.variables.size(); ++c) out << (c ? "," : "") << ds.variables[c];
  out << '\n';
  char buf[64];
  const std::size_t v = ds.cols();
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (std::size_t c = 0; c < v; ++c) {
      const auto res = std::to_chars(buf, buf + sizeof buf, ds.values[r * v + c]);
      if (c) out << ',';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
}

void write_csv(const std::string& path, const SeriesDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_csv(out, ds);
  if (!out) throw DataError("write failed: " + path);
}

const std::vector<DatasetInfo>& known_datasets() {
  static const std::vector<DatasetInfo> table = {
      {"ETTm1", 7, 34465, 11521, 11521, false},
      {"Weather", 21, 36792, 5271, 10540, false},
      {"ECL", 321, 18317, 2633, 5261, false},
      {"Solar", 137, 36601, 5161, 10417, false},
      {"PEMS03", 358, 15617, 5135, 5135, true},
      {"PEMS04", 307, 10172, 3375, 3375, true},
      {"PEMS07", 883, 16911, 5622, 5622, true},
      {"PEMS08", 170, 10690, 3548, 3548, true},
  };
  return table;
}

std::optional<DatasetInfo> find_dataset(const std::string& name) {
  std::string key = lower(name);
  if (key == "electricity") key = "ecl";
  if (key == "solar_al" || key == "solar-energy") key = "solar";
  for (const auto& info : known_datasets()) {
    if (lower(info.name) == key) return info;
  }
  return std::nullopt;
}

namespace {

constexpr std::size_t kTableLookback = 96;

void check_spec(const SplitSpec& s, std::size_t total_rows) {
  if (!(s.train_begin < s.train_end && s.val_begin < s.val_end && s.test_begin < s.test_end &&
        s.train_end <= s.val_end && s.val_end <= s.test_end)) {
    throw DataError("invalid split boundaries");
  }
  if (s.test_end > total_rows) {
    throw DataError("split needs " + std::to_string(s.test_end) + " rows but the series has " +
                    std::to_string(total_rows));
  }
}

}  // namespace

std::size_t evaluation_rows(std::size_t view_rows, std::size_t lookback) {
  return view_rows + 1 > lookback ? view_rows + 1 - lookback : 0;
}

SplitSpec table_split(const DatasetInfo& info, std::size_t total_rows, std::size_t lookback) {
  // The published counts are rows - 96 + 1 per view, with val/test views
  // starting 96 rows before their boundary.
  const std::size_t train_end = info.train + kTableLookback - 1;
  const std::size_t val_end = train_end + info.val - 1;
  const std::size_t test_end = val_end + info.test - 1;
  if (lookback > train_end) throw DataError("lookback exceeds the training split");
  SplitSpec s{0, train_end, train_end - lookback, val_end, val_end - lookback, test_end};
  check_spec(s, total_rows);
  return s;
}

SplitSpec ratio_split(std::size_t total_rows, std::size_t lookback, double train, double val,
                      double test) {
  if (train <= 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-6) {
    throw DataError("split ratios must be non-negative and sum to 1");
  }
  if (val == 0) throw DataError("split ratios leave no validation rows (required for early stopping)");
  if (test == 0) throw DataError("split ratios leave no test rows");
  const auto train_end = static_cast<std::size_t>(double(total_rows) * train);
  const auto val_end = train_end + static_cast<std::size_t>(double(total_rows) * val);
  if (lookback > train_end) throw DataError("lookback exceeds the training split");
  SplitSpec s{0, train_end, train_end - lookback, val_end, val_end - lookback, total_rows};
  check_spec(s, total_rows);
  return s;
}

DataSplits split(const SeriesDataset& ds, const SplitSpec& spec) {
  check_spec(spec, ds.rows());
  return {ds.slice(spec.train_begin, spec.train_end), ds.slice(spec.val_begin, spec.val_end),
          ds.slice(spec.test_begin, spec.test_end), spec};
}

std::size_t window_count(std::size_t rows, std::size_t lookback, std::size_t horizon) {
  if (lookback == 0 || horizon == 0) throw DataError("lookback and horizon must be >= 1");
  if (rows < lookback + horizon) {
    throw DataError("view has " + std::to_string(rows) + " rows, needs at least L + W = " +
                    std::to_string(lookback + horizon));
  }
  return rows - lookback - horizon + 1;
}

Windows::Windows(const SeriesDataset& view, std::size_t lookback, std::size_t horizon)
    : values_(view.values),
      lookback_(lookback),
      horizon_(horizon),
      count_(window_count(view.rows(), lookback, horizon)) {}

WindowBatch Windows::batch(const std::vector<std::size_t>& starts) const {
  const std::size_t v = variables(), bs = starts.size();
  WindowBatch b{Tensor<float>({bs, lookback_, v}), Tensor<float>({bs, horizon_, v}), starts};
  for (std::size_t i = 0; i < bs; ++i) {
    const std::size_t s = starts[i];
    if (s >= count_) throw DataError("window index out of range");
    const float* src = values_.ptr() + s * v;
    std::copy(src, src + lookback_ * v, b.inputs.ptr() + i * lookback_ * v);
    std::copy(src + lookback_ * v, src + (lookback_ + horizon_) * v,
              b.targets.ptr() + i * horizon_ * v);
  }
  return b;
}

WindowBatch Windows::range(std::size_t first, std::size_t count) const {
  std::vector<std::size_t> starts;
  for (std::size_t i = first; i < std::min(count_, first + count); ++i) starts.push_back(i);
  return batch(starts);
}

double synth_secondary_period() { return kSynthPeriod * 4.0 * std::numbers::e; }

double synth_base(double t) {
  const double two_pi = 2.0 * std::numbers::pi;
  return std::sin(two_pi * t / kSynthPeriod) + 0.5 * std::sin(two_pi * t / synth_secondary_period());
}

SeriesDataset synth(const SynthConfig& cfg) {
  if (cfg.n_vars < 2) throw DataError("synth: need at least 2 variables");
  if (cfg.length == 0) throw DataError("synth: length must be >= 1");
  if (cfg.noise_sigma < 0) throw DataError("synth: noise_sigma must be >= 0");
  std::vector<std::size_t> lags(cfg.n_vars, 0);
  std::vector<double> scales(cfg.n_vars, 1.0);
  for (std::size_t j = 1; j < cfg.n_vars; ++j) {
    lags[j] = j - 1 < cfg.lags.size() ? cfg.lags[j - 1] : 3 * j;
    scales[j] = j - 1 < cfg.scales.size() ? cfg.scales[j - 1]
                                          : (j % 2 ? 1.0 : -1.0) * (1.0 - 0.1 * double(j - 1));
    if (lags[j] >= cfg.length) {
      throw DataError("synth: lag " + std::to_string(lags[j]) + " >= series length " +
                      std::to_string(cfg.length));
    }
  }
  Rng rng(cfg.seed);
  SeriesDataset ds;
  ds.name = "synth";
  ds.frequency = "1";
  for (std::size_t j = 0; j < cfg.n_vars; ++j) ds.variables.push_back("x" + std::to_string(j));
  ds.values = Tensor<float>({cfg.length, cfg.n_vars});
  for (std::size_t t = 0; t < cfg.length; ++t) {
    ds.values[t * cfg.n_vars] = static_cast<float>(synth_base(double(t)));
    for (std::size_t j = 1; j < cfg.n_vars; ++j) {
      const double v = scales[j] * synth_base(double(t) - double(lags[j])) +
                       (cfg.noise_sigma > 0 ? cfg.noise_sigma * rng.normal() : 0.0);
      ds.values[t * cfg.n_vars + j] = static_cast<float>(v);
    }
  }
  return ds;
}

NormStats NormStats::fit(const SeriesDataset& train) {
  const std::size_t rows = train.rows(), v = train.cols();
  NormStats s;
  s.mean.assign(v, 0.0);
  s.std.assign(v, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < v; ++c) s.mean[c] += train.values[r * v + c];
  for (auto& m : s.mean) m /= double(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < v; ++c) {
      const double d = train.values[r * v + c] - s.mean[c];
      s.std[c] += d * d;
    }
  }
  for (std::size_t c = 0; c < v; ++c) {
    s.std[c] = std::sqrt(s.std[c] / double(rows));
    if (!(s.std[c] > 1e-12)) {
      s.std[c] = 1.0;
      const std::string var = c < train.variables.size() ? train.variables[c] : std::to_string(c);
      s.warnings.push_back("variable '" + var + "' has zero variance; using std = 1");
    }
  }
  return s;
}

void standardize_inplace(Tensor<float>& x, const NormStats& stats) {
  const std::size_t v = stats.mean.size();
  if (x.empty() || x.shape().back() != v) throw DimensionError("standardize: variable count mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = static_cast<float>((x[i] - stats.mean[i % v]) / stats.std[i % v]);
  }
}

void destandardize_inplace(Tensor<float>& x, const NormStats& stats) {
  const std::size_t v = stats.mean.size();
  if (x.empty() || x.shape().back() != v) throw DimensionError("destandardize: variable count mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = static_cast<float>(x[i] * stats.std[i % v] + stats.mean[i % v]);
  }
}

SeriesDataset standardize(const SeriesDataset& ds, const NormStats& stats) {
  SeriesDataset out = ds;
  standardize_inplace(out.values, stats);
  return out;
}

SeriesDataset destandardize(const SeriesDataset& ds, const NormStats& stats) {
  SeriesDataset out = ds;
  destandardize_inplace(out.values, stats);
  return out;
}

}  // namespace dcm::data
