#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace dcm {

/// One column of a per-dataset hyperparameter table.
struct HyperPreset {
  std::string dataset;
  std::size_t horizon;
  std::size_t e_layers;
  std::size_t batch_size;
  double lr;
  std::size_t d_model;
  double dropout;
  std::size_t d_state;
};

const std::vector<HyperPreset>& hyperparameter_presets();
/// Case-insensitive on the dataset name.
std::optional<HyperPreset> find_preset(const std::string& dataset, std::size_t horizon);
/// key=value lines for a preset, in the config-file dialect.
std::string preset_config_text(const HyperPreset& p);

/// Published reference accuracy (standardized MSE / MAE) for a dataset and horizon.
struct PublishedResult {
  std::string dataset;
  std::size_t horizon;
  double mse;
  double mae;
};

const std::vector<PublishedResult>& published_results();
std::optional<PublishedResult> find_published(const std::string& dataset, std::size_t horizon);

}  // namespace dcm
