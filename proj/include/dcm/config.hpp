#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dcm/model.hpp"
#include "dcm/training.hpp"

namespace dcm {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a command needs: model, optimizer, data and command options.
struct RunConfig {
  std::string dataset;            // name used for presets, split defaults and references
  std::string data;               // CSV path; "synth" generates the synthetic set
  std::string out = "runs";
  std::uint64_t seed = 0;
  std::string split = "auto";     // auto | table | ratio
  double split_train = 0.7, split_val = 0.1, split_test = 0.2;
  std::string eval_split = "test";
  std::string variants = "full,no_v_encoder,no_t_encoder,swapped,both_independent,both_mixing";
  std::string bench_lengths = "256,512,1024,2048";
  std::size_t bench_reps = 5;
  std::size_t synth_vars = 8;
  std::size_t synth_length = 4000;
  double synth_noise = 0.1;
  double gradcheck_op_tol = 1e-6;
  double gradcheck_model_tol = 1e-3;
  ModelConfig model;
  train::TrainConfig train;
};

using KeyValue = std::pair<std::string, std::string>;

/// Ordered list of every accepted key.
const std::vector<std::string>& config_keys();
/// Throws ConfigError for unknown keys or unparsable values.
void set_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_value(const RunConfig& cfg, const std::string& key);
/// Every key with its current value, in schema order.
std::vector<KeyValue> to_key_values(const RunConfig& cfg);
std::string to_text(const RunConfig& cfg);

/// Parses `key=value` lines; '#' starts a comment. Errors carry the line number.
std::vector<KeyValue> parse_config_text(const std::string& text, const std::string& origin);
std::vector<KeyValue> parse_config_file(const std::string& path);
/// Splits "key=value".
KeyValue parse_assignment(const std::string& text);

/// Builds a config by layering defaults < dataset preset < file < command line.
/// The dataset and horizon that select the preset come from the same layering.
RunConfig resolve_config(const std::vector<KeyValue>& file, const std::vector<KeyValue>& cli);
/// Applies only the preset matching cfg.dataset / cfg.model.horizon, if any.
bool apply_preset(RunConfig& cfg);

}  // namespace dcm
