#include "condreg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "condreg/error.hpp"

namespace condreg {

std::string to_string(const Dims& dims) {
  std::ostringstream os;
  os << dims.d << "x" << dims.w << "x" << dims.h;
  return os.str();
}

namespace {

void check_geometry(Dims dims, const Spacing& spacing) {
  if (dims.d <= 0 || dims.w <= 0 || dims.h <= 0) {
    throw ValidationError("volume dims must be positive, got " + to_string(dims));
  }
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("volume spacing must be positive and finite");
  }
}

}  // namespace

Volume::Volume(int channels, Dims dims, Spacing spacing, std::vector<float> data)
    : channels_(channels), dims_(dims), spacing_(spacing), data_(std::move(data)) {
  if (channels <= 0) throw ValidationError("volume channel count must be positive");
  check_geometry(dims, spacing);
  if (data_.size() != static_cast<std::size_t>(channels) * dims.voxels()) {
    throw ValidationError("volume data length " + std::to_string(data_.size()) + " does not match " +
                          std::to_string(channels) + "x" + to_string(dims));
  }
  if (!std::all_of(data_.begin(), data_.end(), [](float x) { return std::isfinite(x); })) {
    throw ValidationError("volume contains non-finite samples");
  }
}

Volume Volume::zeros(int channels, Dims dims, Spacing spacing) {
  return Volume(channels, dims, spacing,
                std::vector<float>(static_cast<std::size_t>(std::max(channels, 0)) * dims.voxels(), 0.0f));
}

std::span<const float> Volume::channel(int c) const {
  return std::span<const float>(data_).subspan(static_cast<std::size_t>(c) * dims_.voxels(), dims_.voxels());
}

LabelMap::LabelMap(Dims dims, Spacing spacing, std::vector<std::uint16_t> labels, int num_classes)
    : dims_(dims), spacing_(spacing), labels_(std::move(labels)), num_classes_(num_classes) {
  check_geometry(dims, spacing);
  if (num_classes <= 0) throw ValidationError("label map needs at least one class");
  if (labels_.size() != dims.voxels()) throw ValidationError("label data length does not match dims");
  for (auto l : labels_) {
    if (l >= num_classes) {
      throw ValidationError("label " + std::to_string(l) + " out of range for " + std::to_string(num_classes) +
                            " classes");
    }
  }
}

DisplacementField::DisplacementField(Volume components) : components_(std::move(components)) {
  if (components_.channels() != 3) throw ValidationError("displacement field must have exactly 3 channels");
}

DisplacementField DisplacementField::zeros(Dims dims, Spacing spacing) {
  return DisplacementField(Volume::zeros(3, dims, spacing));
}

Volume normalize_intensities(const Volume& v, double lo, double hi) {
  if (!(lo < hi)) throw ValidationError("normalize_intensities requires lo < hi");
  std::vector<float> out(v.data().size());
  const double scale = 2.0 / (hi - lo);
  std::transform(v.data().begin(), v.data().end(), out.begin(), [&](float x) {
    const double c = std::clamp(static_cast<double>(x), lo, hi);
    return static_cast<float>((c - lo) * scale - 1.0);
  });
  return Volume(v.channels(), v.dims(), v.spacing(), std::move(out));
}

namespace {

// Offset of the source index for target index 0 along one axis. Positive
// means crop, negative means pad.
int source_offset(int from, int to) { return from >= to ? (from - to) / 2 : -((to - from) / 2); }

template <typename T, typename Get>
std::vector<T> resample_box(Dims from, Dims to, int channels, Get get) {
  std::vector<T> out(static_cast<std::size_t>(channels) * to.voxels(), T{});
  const int od = source_offset(from.d, to.d);
  const int ow = source_offset(from.w, to.w);
  const int oh = source_offset(from.h, to.h);
  for (int c = 0; c < channels; ++c) {
    for (int d = 0; d < to.d; ++d) {
      const int sd = d + od;
      if (sd < 0 || sd >= from.d) continue;
      for (int w = 0; w < to.w; ++w) {
        const int sw = w + ow;
        if (sw < 0 || sw >= from.w) continue;
        for (int h = 0; h < to.h; ++h) {
          const int sh = h + oh;
          if (sh < 0 || sh >= from.h) continue;
          out[static_cast<std::size_t>(c) * to.voxels() + to.index(d, w, h)] = get(c, sd, sw, sh);
        }
      }
    }
  }
  return out;
}

}  // namespace

Volume pad_or_crop(const Volume& v, Dims target) {
  check_geometry(target, v.spacing());
  auto data = resample_box<float>(v.dims(), target, v.channels(),
                                  [&](int c, int d, int w, int h) { return v.at(c, d, w, h); });
  return Volume(v.channels(), target, v.spacing(), std::move(data));
}

LabelMap pad_or_crop(const LabelMap& v, Dims target) {
  check_geometry(target, v.spacing());
  auto data = resample_box<std::uint16_t>(v.dims(), target, 1, [&](int, int d, int w, int h) { return v.at(d, w, h); });
  return LabelMap(target, v.spacing(), std::move(data), v.num_classes());
}

}  // namespace condreg
