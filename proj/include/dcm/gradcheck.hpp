#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "dcm/model.hpp"

namespace dcm::train {

struct GroupError {
  std::string name;
  std::size_t count = 0;   // scalars checked
  double rel_error = 0;    // max |analytic - numeric| / max(|analytic|_inf, |numeric|_inf, 1e-12)
  bool pass = false;
};

struct GradReport {
  std::vector<GroupError> groups;
  double tolerance = 0;

  bool pass() const;
  double max_error() const;
  void append(const GradReport& other, const std::string& prefix = "");
};

void print_report(std::ostream& out, const GradReport& r, const std::string& title);

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// with step h, one group per named parameter. `loss_fn` must be a pure
/// function of the parameter values.
GradReport check_gradients(const std::function<Var<double>()>& loss_fn,
                           const ParamList<double>& params, double tolerance, double h = 1e-5);

/// Every differentiable primitive and composite block on random small inputs.
GradReport op_gradient_suite(double tolerance, std::uint64_t seed = 7);

/// Smallest config exercising the full model.
ModelConfig tiny_model_config();

/// Full-model check on `cfg` (train mode, fixed dropout stream).
GradReport gradient_check(const ModelConfig& cfg, double tolerance, std::uint64_t seed = 11);

}  // namespace dcm::train
