#pragma once

#include <span>
#include <vector>

#include "condreg/tape.hpp"

// Differentiable operators over rank-4 feature maps (C, D, W, H) and small
// vectors. Every operator records its gradient rule on the inputs' tape.
namespace condreg::ops {

/// Cross-correlation with zero "same" padding. w has shape
/// (Cout, Cin, k, k, k) with k odd, b has shape (Cout). Output dims are
/// ceil(dim / stride).
Var conv3d(Var x, Var w, Var b, int stride = 1);

/// y = x for x > 0, slope * x otherwise (the slope branch is taken at 0).
Var leaky_relu(Var x, float slope);

Var add(Var a, Var b);
Var scale(Var a, double factor);

/// Trilinear read of src at x + u(x), coordinates clamped to the grid. The
/// field is (3, D, W, H) in voxel units with components ordered (d, w, h).
Var trilinear_sample(Var src, Var field);

/// Trilinear upsampling where output index j reads input coordinate j / 2,
/// clamped to the last sample.
Var upsample_to(Var x, Dims target);
Var upsample2(Var x);

/// Concatenation along the leading axis; trailing extents must agree.
Var concat_channels(std::span<const Var> xs);

/// Per-channel mean over all voxels, returned as a length-C vector.
Var global_mean_pool(Var x);

/// weight (M, N) * x (N) + bias (M).
Var affine(Var weight, Var bias, Var x);

/// Contiguous flat range of x, reshaped.
Var slice(Var x, std::size_t offset, std::vector<int> shape);

}  // namespace condreg::ops
