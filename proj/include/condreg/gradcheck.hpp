#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "condreg/tape.hpp"

namespace condreg {

struct GradCheckEntry {
  std::string input;
  std::size_t probes = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::string op;
  double tolerance = 0.0;
  std::vector<GradCheckEntry> inputs;

  bool passed() const;
  double max_rel_error() const;
};

struct GradCheckOptions {
  double tolerance = 1e-3;
  double step = 1e-3;
  // Coordinates probed per input; 0 probes every coordinate.
  std::size_t max_probes = 0;
  std::uint64_t seed = 0;
  // Richardson-extrapolate the central difference from steps h and h/2,
  // cancelling the h^2 term. For smooth f32 losses where rounding rules out
  // small steps.
  bool extrapolate = false;
};

/// Builds the operator under test on a fresh tape from parameter leaves.
using TapeFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares reverse-mode gradients of a scalar reduction of fn's output
/// against central finite differences. Non-scalar outputs are reduced with
/// fixed pseudo-random weights. The relative error of an input is
/// max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-6) over its
/// probed coordinates.
GradCheckReport grad_check(const std::string& op, const TapeFunction& fn, const std::vector<Tensor>& inputs,
                           const std::vector<std::string>& input_names, const GradCheckOptions& options = {});

}  // namespace condreg
