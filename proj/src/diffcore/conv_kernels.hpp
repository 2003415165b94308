#pragma once

#include <cstddef>

#include "condreg/volume.hpp"

namespace condreg::detail {

struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  Dims in;
  Dims out;

  static ConvGeometry make(int in_channels, int out_channels, int kernel, int stride, Dims in);
  int pad() const { return kernel / 2; }
  std::size_t kernel_volume() const { return static_cast<std::size_t>(kernel) * kernel * kernel; }
};

// y = conv(x, w) + b with zero "same" padding. Per output voxel the sum runs
// over (ci, kd, kw, kh) in that order, accumulated in double.
void conv_forward(const ConvGeometry& g, const float* x, const float* w, const float* b, float* y);

// dx += d(loss)/dx given dy.
void conv_backward_input(const ConvGeometry& g, const float* dy, const float* w, float* dx);

// dw += d(loss)/dw and db += d(loss)/db given dy and the forward input.
void conv_backward_params(const ConvGeometry& g, const float* dy, const float* x, float* dw, float* db);

}  // namespace condreg::detail
