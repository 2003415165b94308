#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "condreg/gradcheck.hpp"

namespace condreg {

/// Names of every operator and loss with a randomized finite-difference case.
const std::vector<std::string>& gradsuite_ops();

/// One randomized case (extents <= 5 per axis) of the named operator.
/// step 0 uses the case default. Throws ValidationError for unknown names.
GradCheckReport check_op(const std::string& name, std::uint64_t seed, double tolerance = 1e-3, double step = 0.0);

}  // namespace condreg
