#include "condreg/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "condreg/error.hpp"

namespace condreg {

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    if (e < 0) throw ValidationError("negative tensor extent");
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape, float fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_)) throw ValidationError("tensor data length does not match its shape");
}

Tensor Tensor::from_volume(const Volume& v) {
  const Dims d = v.dims();
  return Tensor({v.channels(), d.d, d.w, d.h}, std::vector<float>(v.data().begin(), v.data().end()));
}

Volume Tensor::to_volume(Spacing spacing) const {
  if (rank() != 4) throw ValidationError("only rank-4 tensors convert to volumes");
  return Volume(channels(), dims(), spacing, data_);
}

}  // namespace condreg
