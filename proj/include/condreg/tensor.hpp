#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "condreg/volume.hpp"

namespace condreg {

/// Dense row-major float tensor. Rank-4 tensors are feature maps laid out
/// exactly like Volume data: (C, D, W, H) with h fastest.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, float fill = 0.0f);
  Tensor(std::vector<int> shape, std::vector<float> values);

  static Tensor scalar(float v) { return Tensor({}, std::vector<float>{v}); }
  static Tensor feature_map(int channels, Dims dims, float fill = 0.0f) {
    return Tensor({channels, dims.d, dims.w, dims.h}, fill);
  }
  static Tensor from_volume(const Volume& v);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Rank-4 accessors.
  int channels() const { return shape_.at(0); }
  Dims dims() const { return {shape_.at(1), shape_.at(2), shape_.at(3)}; }
  std::size_t voxels() const { return dims().voxels(); }
  float item() const { return data_.at(0); }

  Volume to_volume(Spacing spacing = {1.0, 1.0, 1.0}) const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool operator==(const Tensor& o) const = default;

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

std::size_t shape_size(const std::vector<int>& shape);

}  // namespace condreg
