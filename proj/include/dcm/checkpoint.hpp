#pragma once

#include <stdexcept>
#include <string>

#include "dcm/config.hpp"
#include "dcm/data.hpp"
#include "dcm/model.hpp"

namespace dcm {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layout:
///   DCMCKPT 1
///   [config]    key=value lines
///   [tensors]   "name d0xd1x... offset nbytes" lines
///   [data]      little-endian float32 payload, offsets relative to its start
struct Checkpoint {
  RunConfig config;
  DcMamber<float> model;
  data::NormStats stats;
};

std::string serialize_checkpoint(const RunConfig& cfg, const DcMamber<float>& model,
                                 const data::NormStats& stats);
void save_checkpoint(const std::string& path, const RunConfig& cfg, const DcMamber<float>& model,
                     const data::NormStats& stats);
/// Rebuilds the model from the stored config and validates every tensor shape.
Checkpoint parse_checkpoint(const std::string& bytes);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dcm
