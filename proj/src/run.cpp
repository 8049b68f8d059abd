#include "dcm/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "dcm/baselines.hpp"

namespace dcm::run {

namespace {

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string dataset_key(const RunConfig& cfg) {
  if (!cfg.dataset.empty()) return cfg.dataset;
  return std::filesystem::path(cfg.data).stem().string();
}

double median_ms(std::vector<double> samples) {
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  return n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
}

template <typename F>
double time_ms(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

data::SeriesDataset load_dataset(const RunConfig& cfg) {
  if (cfg.data == "synth" || (cfg.data.empty() && cfg.dataset == "synth")) {
    data::SynthConfig sc;
    sc.seed = cfg.seed;
    sc.n_vars = cfg.synth_vars;
    sc.length = cfg.synth_length;
    sc.noise_sigma = cfg.synth_noise;
    return data::synth(sc);
  }
  if (cfg.data.empty()) throw ConfigError("no data given (set data=PATH or data=synth)");
  return data::load_csv(cfg.data, dataset_key(cfg));
}

void bind_to_data(RunConfig& cfg, const data::SeriesDataset& raw) {
  if (cfg.model.n_vars == 0) {
    cfg.model.n_vars = raw.cols();
  } else if (cfg.model.n_vars != raw.cols()) {
    throw ConfigError("config has n_vars=" + std::to_string(cfg.model.n_vars) + " but the data has " +
                      std::to_string(raw.cols()) + " columns");
  }
  cfg.model.validate();
  cfg.train.validate();
}

data::SplitSpec choose_split(const RunConfig& cfg, const data::SeriesDataset& raw) {
  const auto info = data::find_dataset(dataset_key(cfg));
  const bool table = cfg.split == "table" || (cfg.split == "auto" && info.has_value());
  if (table) {
    if (!info) throw ConfigError("split=table needs a known dataset name, got '" + dataset_key(cfg) + "'");
    return data::table_split(*info, raw.rows(), cfg.model.lookback);
  }
  return data::ratio_split(raw.rows(), cfg.model.lookback, cfg.split_train, cfg.split_val,
                           cfg.split_test);
}

Prepared prepare(const RunConfig& cfg, const data::SeriesDataset& raw) {
  const data::DataSplits parts = data::split(raw, choose_split(cfg, raw));
  Prepared p;
  p.stats = data::NormStats::fit(parts.train);
  p.views = {data::standardize(parts.train, p.stats), data::standardize(parts.val, p.stats),
             data::standardize(parts.test, p.stats), parts.spec};
  return p;
}

DcMamber<float> build_model(const RunConfig& cfg) {
  return DcMamber<float>(cfg.model, DcMamberParams<float>::init(cfg.model, cfg.seed));
}

const data::SeriesDataset& pick_view(const data::DataSplits& views, const std::string& name) {
  if (name == "train") return views.train;
  if (name == "val") return views.val;
  if (name == "test") return views.test;
  throw ConfigError("unknown split '" + name + "'");
}

ViewScores score_view(const DcMamber<float>& model, const data::SeriesDataset& view,
                      const data::NormStats& stats, std::size_t batch) {
  const auto& mc = model.config();
  const data::Windows windows(view, mc.lookback, mc.horizon);
  ViewScores s;
  s.model = train::evaluate(model, windows, &stats, batch);
  s.persistence = train::evaluate(
      [&](const Tensor<float>& x) { return baseline::persistence(x, mc.horizon); }, windows,
      &stats, batch);
  return s;
}

TrainOutcome train_model(const RunConfig& cfg, const data::SeriesDataset& raw,
                         const train::EpochCallback& on_epoch) {
  const Prepared prep = prepare(cfg, raw);
  const auto& mc = cfg.model;
  const data::Windows tr(prep.views.train, mc.lookback, mc.horizon);
  const data::Windows va(prep.views.val, mc.lookback, mc.horizon);
  DcMamber<float> model = build_model(cfg);
  train::History history = train::fit(model, tr, va, cfg.train, &prep.stats, on_epoch);
  const ViewScores scores = score_view(model, prep.views.test, prep.stats, cfg.train.eval_batch);
  return {std::move(model), std::move(history), scores.model, scores.persistence, prep.stats};
}

std::vector<Variant> parse_variant_list(const std::string& csv) {
  std::vector<Variant> out;
  for (const auto& name : split_csv(csv)) {
    try {
      out.push_back(parse_variant(name));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (out.empty()) throw ConfigError("variant list is empty");
  return out;
}

std::vector<AblationRow> ablate(const RunConfig& cfg, const data::SeriesDataset& raw,
                                const std::vector<Variant>& variants) {
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    RunConfig c = cfg;
    c.model.variant = v;
    const TrainOutcome r = train_model(c, raw);
    rows.push_back({to_string(v), c.model.horizon, r.test.mse, r.test.mae, r.history.steps});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,horizon,mse,mae,steps\n";
  for (const auto& r : rows) {
    out += r.variant + "," + std::to_string(r.horizon) + "," + fmt(r.mse) + "," + fmt(r.mae) + "," +
           std::to_string(r.steps) + "\n";
  }
  return out;
}

std::vector<std::size_t> parse_lengths(const std::string& csv) {
  std::vector<std::size_t> out;
  for (const auto& item : split_csv(csv)) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || v == 0) throw ConfigError("bad length '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("length list is empty");
  return out;
}

std::vector<BenchRow> bench_scan(const std::vector<std::size_t>& lengths, std::size_t reps,
                                 std::uint64_t seed) {
  if (reps == 0) throw ConfigError("bench_reps must be >= 1");
  constexpr std::size_t kChannels = 32, kState = 16, kModel = 64, kSlots = 64, kVars = 8;
  std::vector<BenchRow> rows;
  NoGradGuard no_grad;
  for (std::size_t len : lengths) {
    Rng rng = Rng(seed).fork(len);
    Tensor<float> a_bar({1, len, kChannels, kState}), bx(a_bar.shape()), c({1, len, kState});
    for (auto& v : a_bar.data()) v = std::exp(-static_cast<float>(rng.uniform(0.01, 1.0)));
    for (auto& v : bx.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (auto& v : c.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    attn::LinformerConfig lc{kModel, len, kSlots, 0, false};
    const auto lp = attn::LinformerParams<float>::init(lc, rng);
    Tensor<float> xt({1, len, kModel});
    for (auto& v : xt.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const Var<float> x(xt);

    ModelConfig mc;
    mc.lookback = len;
    mc.horizon = 24;
    mc.n_vars = kVars;
    mc.d_model = kModel;
    mc.e_layers = 1;
    mc.k = kSlots;
    const DcMamber<float> model(mc, DcMamberParams<float>::init(mc, seed));
    Tensor<float> series({1, len, kVars});
    for (auto& v : series.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    BenchRow row;
    row.length = len;
    std::vector<double> seq, par, att, mod;
    Tensor<float> ys, yp;
    for (std::size_t r = 0; r < reps; ++r) {
      seq.push_back(time_ms([&] { ys = ssm::selective_scan_sequential(a_bar, bx, c); }));
      par.push_back(time_ms([&] { yp = ssm::selective_scan_parallel(a_bar, bx, c); }));
      att.push_back(time_ms([&] { (void)attn::linear_attention(x, lc, lp); }));
      mod.push_back(time_ms([&] { (void)model.predict(series); }));
    }
    for (std::size_t i = 0; i < ys.size(); ++i) {
      row.max_abs_diff = std::max(row.max_abs_diff, double(std::abs(ys[i] - yp[i])));
    }
    row.sequential_ms = median_ms(seq);
    row.parallel_ms = median_ms(par);
    row.attention_ms = median_ms(att);
    row.model_ms = median_ms(mod);
    rows.push_back(row);
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "length,sequential_ms,parallel_ms,attention_ms,model_ms,max_abs_diff\n";
  for (const auto& r : rows) {
    out += std::to_string(r.length) + "," + fmt(r.sequential_ms) + "," + fmt(r.parallel_ms) + "," +
           fmt(r.attention_ms) + "," + fmt(r.model_ms) + "," + fmt(r.max_abs_diff) + "\n";
  }
  return out;
}

data::SeriesDataset forecast(const DcMamber<float>& model, const data::NormStats& stats,
                             const data::SeriesDataset& input) {
  const auto& mc = model.config();
  if (input.cols() != mc.n_vars) {
    throw data::DataError("input has " + std::to_string(input.cols()) + " columns, model expects " +
                          std::to_string(mc.n_vars));
  }
  if (input.rows() < mc.lookback) {
    throw data::DataError("input has " + std::to_string(input.rows()) + " rows, needs at least " +
                          std::to_string(mc.lookback));
  }
  const data::SeriesDataset tail = input.slice(input.rows() - mc.lookback, input.rows());
  Tensor<float> x = tail.values.reshaped({1, mc.lookback, mc.n_vars});
  data::standardize_inplace(x, stats);
  Tensor<float> y = model.predict(x);
  data::destandardize_inplace(y, stats);
  data::SeriesDataset out;
  out.name = input.name;
  out.variables = input.variables;
  out.frequency = input.frequency;
  out.values = y.reshaped({mc.horizon, mc.n_vars});
  return out;
}

}  // namespace dcm::run
