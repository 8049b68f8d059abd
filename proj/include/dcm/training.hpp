#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "dcm/data.hpp"
#include "dcm/model.hpp"

namespace dcm::train {

/// Mean squared error accumulated in double. Shapes must match.
template <typename T>
double mse(const Tensor<T>& y, const Tensor<T>& y_hat);
/// Mean absolute error accumulated in double. Shapes must match.
template <typename T>
double mae(const Tensor<T>& y, const Tensor<T>& y_hat);

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  static AdamState init(const ParamList<T>& params);
};

/// One bias-corrected Adam update using each parameter's accumulated gradient.
/// A non-finite gradient aborts before any parameter changes and names the tensor.
template <typename T>
void adam_step(const ParamList<T>& params, AdamState<T>& state, double lr);

enum class LrSchedule { constant, halving };
LrSchedule parse_lr_schedule(const std::string& s);
std::string to_string(LrSchedule s);

struct TrainConfig {
  std::size_t batch_size = 32;
  double lr = 1e-4;
  std::size_t epochs = 10;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  LrSchedule schedule = LrSchedule::constant;
  std::size_t max_steps = 0;      // 0 = no cap
  bool raw_scale_loss = false;    // needs NormStats passed to fit
  bool record_time = false;       // fill the history "seconds" column
  std::size_t eval_batch = 128;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mse = 0;
  double val_mse = 0;
  double val_mae = 0;
  double lr = 0;
  double seconds = 0;
};

struct History {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  std::size_t best_epoch = 0;
  double best_val_mse = 0;
  std::size_t steps = 0;
  bool stopped_early = false;
};

void write_history_csv(std::ostream& out, const History& h);
void write_history_csv(const std::string& path, const History& h);

struct EvalResult {
  double mse = 0;
  double mae = 0;
  double raw_mse = 0;  // de-standardized scale, when stats were supplied
  double raw_mae = 0;
  std::size_t windows = 0;
};

/// Forecast function over a batch of inputs [B, L, V] -> [B, W, V].
using Forecaster = std::function<Tensor<float>(const Tensor<float>&)>;

/// Metrics over every window of `windows`, in order.
EvalResult evaluate(const Forecaster& f, const data::Windows& windows,
                    const data::NormStats* stats = nullptr, std::size_t batch = 128);
EvalResult evaluate(const DcMamber<float>& model, const data::Windows& windows,
                    const data::NormStats* stats = nullptr, std::size_t batch = 128);

/// Patience counter over validation losses. patience 0 never stops.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  /// Records one epoch's loss and returns true if it is a new best.
  bool update(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      bad_ = 0;
      return true;
    }
    ++bad_;
    return false;
  }
  bool should_stop() const { return patience_ > 0 && bad_ >= patience_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t bad_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

/// Called after every epoch; returning false stops training.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Adam on shuffled mini-batches with per-epoch validation and early stopping.
/// On return the model holds the parameters of the best validation epoch.
History fit(DcMamber<float>& model, const data::Windows& train, const data::Windows& val,
            const TrainConfig& cfg, const data::NormStats* stats = nullptr,
            const EpochCallback& on_epoch = {});

}  // namespace dcm::train
