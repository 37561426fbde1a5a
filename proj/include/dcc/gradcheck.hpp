#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dcc/tape.hpp"
#include "dcc/topology.hpp"

// Central finite-difference verification of tape gradients. Always F64.
namespace dcc {

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kLayerTolerance = 1e-4;
inline constexpr double kNetworkTolerance = 1e-3;

// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero
// up to rounding from producing huge ratios.
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Scalar function of several tensors, recorded on the given tape.
using ScalarFn = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct InputCheck {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
};

// Checks d f / d inputs[i] for every input and every element. `f` must be
// deterministic across calls.
std::vector<InputCheck> check_function(const ScalarFn& f, const std::vector<Tensor<double>>& inputs,
                                       double step = kGradcheckStep);

struct GradcheckOptions {
  double step = kGradcheckStep;
  double tolerance = kNetworkTolerance;
  // Elements probed per parameter tensor; 0 probes all of them.
  std::size_t max_elements_per_group = 0;
  std::uint64_t seed = 0;
  GradientFault inject_fault = GradientFault::kNone;
};

struct GroupResult {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<GroupResult> groups;  // one per trainable parameter tensor, registry order
  double max_rel_error = 0.0;
  bool passed = true;
};

// Checks the loss gradient of every trainable parameter of `model` on (x,
// labels) in train mode. Dropout masks are redrawn from the same seed on
// every evaluation, so the loss is a fixed function of the parameters.
// Parameter values and BN running statistics are restored afterwards.
GradcheckReport gradcheck_model(Model<double>& model, const Tensor<double>& x, std::span<const int> labels,
                                const GradcheckOptions& opt = {});

}  // namespace dcc
