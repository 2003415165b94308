#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace condreg {

struct Dims {
  int d = 0;
  int w = 0;
  int h = 0;

  std::size_t voxels() const {
    return static_cast<std::size_t>(d) * static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  }
  bool operator==(const Dims&) const = default;
  std::size_t index(int id, int iw, int ih) const {
    return (static_cast<std::size_t>(id) * static_cast<std::size_t>(w) + static_cast<std::size_t>(iw)) *
               static_cast<std::size_t>(h) +
           static_cast<std::size_t>(ih);
  }
};

std::string to_string(const Dims& dims);

using Spacing = std::array<double, 3>;

/// C-channel 3-D scalar grid. Samples are finite 32-bit floats stored
/// channel-major, then d, then w, with h fastest. Immutable once built.
class Volume {
 public:
  Volume() = default;
  Volume(int channels, Dims dims, Spacing spacing, std::vector<float> data);

  static Volume zeros(int channels, Dims dims, Spacing spacing = {1.0, 1.0, 1.0});

  int channels() const { return channels_; }
  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::span<const float> data() const { return data_; }
  std::span<const float> channel(int c) const;
  float at(int c, int d, int w, int h) const { return data_[index(c, d, w, h)]; }
  std::size_t index(int c, int d, int w, int h) const {
    return static_cast<std::size_t>(c) * dims_.voxels() + dims_.index(d, w, h);
  }
  bool operator==(const Volume&) const = default;

 private:
  int channels_ = 0;
  Dims dims_;
  Spacing spacing_{1.0, 1.0, 1.0};
  std::vector<float> data_;
};

/// Integer segmentation grid; 0 is background.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(Dims dims, Spacing spacing, std::vector<std::uint16_t> labels, int num_classes);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  int num_classes() const { return num_classes_; }
  std::span<const std::uint16_t> labels() const { return labels_; }
  std::uint16_t at(int d, int w, int h) const { return labels_[dims_.index(d, w, h)]; }
  bool operator==(const LabelMap&) const = default;

 private:
  Dims dims_;
  Spacing spacing_{1.0, 1.0, 1.0};
  std::vector<std::uint16_t> labels_;
  int num_classes_ = 1;
};

/// Displacement field in voxel units, channels ordered (d, w, h).
class DisplacementField {
 public:
  DisplacementField() = default;
  explicit DisplacementField(Volume components);

  static DisplacementField zeros(Dims dims, Spacing spacing = {1.0, 1.0, 1.0});

  const Dims& dims() const { return components_.dims(); }
  const Spacing& spacing() const { return components_.spacing(); }
  const Volume& components() const { return components_; }
  std::span<const float> data() const { return components_.data(); }
  float at(int axis, int d, int w, int h) const { return components_.at(axis, d, w, h); }
  bool operator==(const DisplacementField&) const = default;

 private:
  Volume components_;
};

/// Clamp to [lo, hi] and map affinely onto [-1, 1].
Volume normalize_intensities(const Volume& v, double lo, double hi);

/// Center crop along axes that are too large, symmetric zero pad along axes
/// that are too small.
Volume pad_or_crop(const Volume& v, Dims target);
LabelMap pad_or_crop(const LabelMap& v, Dims target);

// ---------------------------------------------------------------------------
// Two-file volume format: <name>.json header plus <name>.bin raw payload.

enum class VolumeKind { image, labels, field };

std::string to_string(VolumeKind kind);

struct VolumeHeader {
  Dims dims;
  Spacing spacing{1.0, 1.0, 1.0};
  int channels = 1;
  std::string dtype;  // "f32" or "u16"
  VolumeKind kind = VolumeKind::image;
  int num_classes = 0;  // labels only; 0 when absent from the header
};

/// Strips a trailing .json or .bin so either file (or the bare stem) names
/// the pair.
std::filesystem::path volume_stem(const std::filesystem::path& path);

void save_volume(const Volume& v, const std::filesystem::path& path, VolumeKind kind = VolumeKind::image);
void save_volume(const LabelMap& v, const std::filesystem::path& path);
void save_volume(const DisplacementField& v, const std::filesystem::path& path);

VolumeHeader read_header(const std::filesystem::path& path);

using LoadedVolume = std::variant<Volume, LabelMap>;
LoadedVolume load_volume(const std::filesystem::path& path);

Volume load_image(const std::filesystem::path& path);
LabelMap load_labels(const std::filesystem::path& path);
DisplacementField load_field(const std::filesystem::path& path);

}  // namespace condreg
