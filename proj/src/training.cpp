#include "dcm/training.hpp"

#include <charconv>
#include <chrono>
#include <limits>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace dcm::train {

template <typename T>
double mse(const Tensor<T>& y, const Tensor<T>& y_hat) {
  require_same_shape(y.shape(), y_hat.shape(), "mse");
  double total = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = double(y[i]) - double(y_hat[i]);
    total += d * d;
  }
  return total / double(y.size());
}

template <typename T>
double mae(const Tensor<T>& y, const Tensor<T>& y_hat) {
  require_same_shape(y.shape(), y_hat.shape(), "mae");
  double total = 0;
  for (std::size_t i = 0; i < y.size(); ++i) total += std::abs(double(y[i]) - double(y_hat[i]));
  return total / double(y.size());
}

template <typename T>
AdamState<T> AdamState<T>::init(const ParamList<T>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.var.shape());
    s.v.emplace_back(p.var.shape());
  }
  return s;
}

template <typename T>
void adam_step(const ParamList<T>& params, AdamState<T>& state, double lr) {
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state has " +
                                std::to_string(state.m.size()) + " slots for " +
                                std::to_string(params.size()) + " parameters");
  }
  for (const auto& p : params) {
    if (!p.var.grad().all_finite()) {
      throw NumericError("adam_step: non-finite gradient in parameter '" + p.name +
                         "' at step " + std::to_string(state.step + 1));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var<T> var = params[i].var;
    Tensor<T>& w = var.value_mut();
    require_same_shape(w.shape(), state.m[i].shape(), "adam_step");
    const Tensor<T>& g = var.grad();
    T* m = state.m[i].ptr();
    T* v = state.v[i].ptr();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      w[j] = static_cast<T>(w[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + state.eps));
    }
  }
}

LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "halving") return LrSchedule::halving;
  throw std::invalid_argument("unknown lr schedule '" + s + "' (expected constant or halving)");
}

std::string to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "halving"; }

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(lr > 0) || !std::isfinite(lr)) throw std::invalid_argument("train config: lr must be > 0");
  if (epochs == 0) throw std::invalid_argument("train config: epochs must be >= 1");
  if (eval_batch == 0) throw std::invalid_argument("train config: eval_batch must be >= 1");
}

void write_history_csv(std::ostream& out, const History& h) {
  out << "epoch,train_mse,val_mse,val_mae,lr,seconds\n";
  char buf[64];
  auto num = [&](double v) {
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, r.ptr - buf);
  };
  for (const auto& e : h.epochs) {
    out << e.epoch << ',';
    num(e.train_mse);
    out << ',';
    num(e.val_mse);
    out << ',';
    num(e.val_mae);
    out << ',';
    num(e.lr);
    out << ',';
    num(e.seconds);
    out << '\n';
  }
}

void write_history_csv(const std::string& path, const History& h) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write history " + path);
  write_history_csv(out, h);
}

EvalResult evaluate(const Forecaster& f, const data::Windows& windows,
                    const data::NormStats* stats, std::size_t batch) {
  EvalResult r;
  double se = 0, ae = 0, raw_se = 0, raw_ae = 0;
  std::size_t n = 0;
  for (std::size_t first = 0; first < windows.size(); first += batch) {
    const data::WindowBatch wb = windows.range(first, batch);
    Tensor<float> pred = f(wb.inputs);
    require_same_shape(pred.shape(), wb.targets.shape(), "evaluate");
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = double(pred[i]) - double(wb.targets[i]);
      se += d * d;
      ae += std::abs(d);
    }
    if (stats) {
      Tensor<float> target = wb.targets;
      data::destandardize_inplace(pred, *stats);
      data::destandardize_inplace(target, *stats);
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = double(pred[i]) - double(target[i]);
        raw_se += d * d;
        raw_ae += std::abs(d);
      }
    }
    n += pred.size();
    r.windows += wb.starts.size();
  }
  r.mse = se / double(n);
  r.mae = ae / double(n);
  if (stats) {
    r.raw_mse = raw_se / double(n);
    r.raw_mae = raw_ae / double(n);
  }
  return r;
}

EvalResult evaluate(const DcMamber<float>& model, const data::Windows& windows,
                    const data::NormStats* stats, std::size_t batch) {
  return evaluate([&](const Tensor<float>& x) { return model.predict(x); }, windows, stats, batch);
}

namespace {

std::vector<Tensor<float>> snapshot(const ParamList<float>& params) {
  std::vector<Tensor<float>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.var.value());
  return out;
}

void restore(const ParamList<float>& params, const std::vector<Tensor<float>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var<float> v = params[i].var;
    v.value_mut() = values[i];
  }
}

Var<float> training_loss(const Var<float>& pred, const Tensor<float>& target,
                         const data::NormStats* raw) {
  if (!raw) return ops::mse_loss(pred, target);
  const std::size_t b = pred.dim(0), v = pred.dim(2);
  Tensor<float> scale({b, v}), shift({b, v});
  for (std::size_t i = 0; i < b * v; ++i) {
    scale[i] = static_cast<float>(raw->std[i % v]);
    shift[i] = static_cast<float>(raw->mean[i % v]);
  }
  Tensor<float> raw_target = target;
  data::destandardize_inplace(raw_target, *raw);
  return ops::mse_loss(ops::series_affine(pred, scale, shift), raw_target);
}

}  // namespace

History fit(DcMamber<float>& model, const data::Windows& train, const data::Windows& val,
            const TrainConfig& cfg, const data::NormStats* stats, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.size() == 0) throw std::invalid_argument("fit: empty training set");
  if (val.size() == 0) throw std::invalid_argument("fit: empty validation set");
  if (cfg.raw_scale_loss && !stats) {
    throw std::invalid_argument("fit: raw-scale loss needs normalization statistics");
  }
  const data::NormStats* loss_stats = cfg.raw_scale_loss ? stats : nullptr;
  const ParamList<float> params = model.parameters();
  AdamState<float> adam = AdamState<float>::init(params);
  History hist;
  std::vector<Tensor<float>> best = snapshot(params);
  EarlyStopping stopper(cfg.patience);
  const Rng root(cfg.seed);
  Rng dropout_rng = Rng(cfg.seed).fork(0xD809);
  std::vector<std::size_t> order(train.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = cfg.schedule == LrSchedule::halving
                          ? cfg.lr * std::pow(0.5, double(epoch - 1))
                          : cfg.lr;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = Rng(root.state()).fork(epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle.below(i)]);
    }
    double epoch_loss = 0;
    std::size_t epoch_batches = 0;
    bool capped = false;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      if (cfg.max_steps && hist.steps >= cfg.max_steps) {
        capped = true;
        break;
      }
      const std::vector<std::size_t> idx(
          order.begin() + first, order.begin() + std::min(order.size(), first + cfg.batch_size));
      const data::WindowBatch wb = train.batch(idx);
      for (const auto& p : params) {
        Var<float> v = p.var;
        v.zero_grad();
      }
      double loss_value = 0;
      try {
        const Var<float> pred = model.forward(Var<float>(wb.inputs), Mode::train, dropout_rng);
        const Var<float> loss = training_loss(pred, wb.targets, loss_stats);
        loss_value = loss.value()[0];
        backward(loss);
        adam_step(params, adam, lr);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(hist.steps + 1) + ": " + e.what());
      }
      ++hist.steps;
      hist.step_losses.push_back(loss_value);
      epoch_loss += loss_value;
      ++epoch_batches;
    }
    if (epoch_batches == 0) break;

    const EvalResult v = evaluate(model, val, nullptr, cfg.eval_batch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = epoch_loss / double(epoch_batches);
    rec.val_mse = v.mse;
    rec.val_mae = v.mae;
    rec.lr = lr;
    if (cfg.record_time) {
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    hist.epochs.push_back(rec);
    if (stopper.update(v.mse)) {
      hist.best_epoch = epoch;
      best = snapshot(params);
    }
    hist.stopped_early = stopper.should_stop();
    if (on_epoch && !on_epoch(rec)) break;
    if (hist.stopped_early || capped) break;
    if (cfg.max_steps && hist.steps >= cfg.max_steps) break;
  }
  hist.best_val_mse = stopper.best();
  restore(params, best);
  return hist;
}

template double mse(const Tensor<float>&, const Tensor<float>&);
template double mse(const Tensor<double>&, const Tensor<double>&);
template double mae(const Tensor<float>&, const Tensor<float>&);
template double mae(const Tensor<double>&, const Tensor<double>&);
template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(const ParamList<float>&, AdamState<float>&, double);
template void adam_step(const ParamList<double>&, AdamState<double>&, double);

}  // namespace dcm::train
