#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "condreg/error.hpp"
#include "condreg/volume.hpp"
#include "json.hpp"

namespace condreg {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::image: return "image";
    case VolumeKind::labels: return "labels";
    case VolumeKind::field: return "field";
  }
  return "image";
}

namespace {

VolumeKind parse_kind(const std::string& s) {
  if (s == "image") return VolumeKind::image;
  if (s == "labels") return VolumeKind::labels;
  if (s == "field") return VolumeKind::field;
  throw ValidationError("unsupported volume kind \"" + s + "\"");
}

fs::path header_path(const fs::path& stem) { return fs::path(stem.string() + ".json"); }
fs::path payload_path(const fs::path& stem) { return fs::path(stem.string() + ".bin"); }

template <typename T>
void write_le(std::ostream& os, std::span<const T> values) {
  static_assert(sizeof(T) == 2 || sizeof(T) == 4);
  using Bits = std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint32_t>;
  std::vector<unsigned char> bytes(values.size() * sizeof(T));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Bits bits = std::bit_cast<Bits>(values[i]);
    for (std::size_t b = 0; b < sizeof(T); ++b) bytes[i * sizeof(T) + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
std::vector<T> read_le(const std::vector<unsigned char>& bytes) {
  using Bits = std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint32_t>;
  std::vector<T> out(bytes.size() / sizeof(T));
  for (std::size_t i = 0; i < out.size(); ++i) {
    Bits bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) bits |= static_cast<Bits>(static_cast<Bits>(bytes[i * sizeof(T) + b]) << (8 * b));
    out[i] = std::bit_cast<T>(bits);
  }
  return out;
}

void write_pair(const fs::path& path, const VolumeHeader& header, const auto& writer) {
  const fs::path stem = volume_stem(path);
  if (stem.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(stem.parent_path(), ec);
  }
  json j;
  j["dims"] = {header.dims.d, header.dims.w, header.dims.h};
  j["spacing"] = {header.spacing[0], header.spacing[1], header.spacing[2]};
  j["channels"] = header.channels;
  j["dtype"] = header.dtype;
  j["kind"] = to_string(header.kind);
  if (header.kind == VolumeKind::labels) j["num_classes"] = header.num_classes;
  {
    std::ofstream hs(header_path(stem));
    if (!hs) throw IoError("cannot write " + header_path(stem).string());
    hs << j.dump() << '\n';
    if (!hs) throw IoError("write failed for " + header_path(stem).string());
  }
  std::ofstream ps(payload_path(stem), std::ios::binary);
  if (!ps) throw IoError("cannot write " + payload_path(stem).string());
  writer(ps);
  if (!ps) throw IoError("write failed for " + payload_path(stem).string());
}

std::vector<unsigned char> read_payload(const fs::path& stem, std::size_t expected) {
  const fs::path p = payload_path(stem);
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("missing payload file " + p.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() != expected) {
    throw IoError("payload size mismatch for " + p.string() + ": expected " + std::to_string(expected) +
                  " bytes, found " + std::to_string(bytes.size()));
  }
  return bytes;
}

}  // namespace

fs::path volume_stem(const fs::path& path) {
  const auto ext = path.extension();
  if (ext == ".json" || ext == ".bin") {
    fs::path stem = path;
    stem.replace_extension();
    return stem;
  }
  return path;
}

void save_volume(const Volume& v, const fs::path& path, VolumeKind kind) {
  if (kind == VolumeKind::labels) throw ValidationError("label maps must be saved from a LabelMap");
  if (kind == VolumeKind::field && v.channels() != 3) throw ValidationError("field volumes need 3 channels");
  VolumeHeader header{v.dims(), v.spacing(), v.channels(), "f32", kind, 0};
  write_pair(path, header, [&](std::ostream& os) { write_le<float>(os, v.data()); });
}

void save_volume(const LabelMap& v, const fs::path& path) {
  VolumeHeader header{v.dims(), v.spacing(), 1, "u16", VolumeKind::labels, v.num_classes()};
  write_pair(path, header, [&](std::ostream& os) { write_le<std::uint16_t>(os, v.labels()); });
}

void save_volume(const DisplacementField& v, const fs::path& path) {
  save_volume(v.components(), path, VolumeKind::field);
}

VolumeHeader read_header(const fs::path& path) {
  const fs::path hp = header_path(volume_stem(path));
  std::ifstream is(hp);
  if (!is) throw IoError("missing header file " + hp.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ValidationError("malformed header " + hp.string() + ": " + e.what());
  }
  VolumeHeader h;
  try {
    const auto dims = j.at("dims").get<std::vector<int>>();
    const auto spacing = j.at("spacing").get<std::vector<double>>();
    if (dims.size() != 3 || spacing.size() != 3) throw ValidationError("header dims/spacing must have 3 entries");
    h.dims = {dims[0], dims[1], dims[2]};
    h.spacing = {spacing[0], spacing[1], spacing[2]};
    h.channels = j.at("channels").get<int>();
    h.dtype = j.at("dtype").get<std::string>();
    h.kind = parse_kind(j.at("kind").get<std::string>());
    h.num_classes = j.value("num_classes", 0);
  } catch (const json::exception& e) {
    throw ValidationError("malformed header " + hp.string() + ": " + e.what());
  }
  if (h.dtype != "f32" && h.dtype != "u16") throw ValidationError("unsupported dtype \"" + h.dtype + "\"");
  if (h.dims.d <= 0 || h.dims.w <= 0 || h.dims.h <= 0 || h.channels <= 0) {
    throw ValidationError("header dims and channels must be positive in " + hp.string());
  }
  return h;
}

LoadedVolume load_volume(const fs::path& path) {
  const fs::path stem = volume_stem(path);
  const VolumeHeader h = read_header(stem);
  const std::size_t count = static_cast<std::size_t>(h.channels) * h.dims.voxels();
  if (h.dtype == "u16") {
    if (h.channels != 1) throw ValidationError("u16 payloads must be single-channel label maps");
    auto labels = read_le<std::uint16_t>(read_payload(stem, count * 2));
    int num_classes = h.num_classes;
    if (num_classes <= 0) {
      std::uint16_t max_label = 0;
      for (auto l : labels) max_label = std::max(max_label, l);
      num_classes = max_label + 1;
    }
    return LabelMap(h.dims, h.spacing, std::move(labels), num_classes);
  }
  if (h.kind == VolumeKind::labels) throw ValidationError("label maps must use dtype u16");
  auto values = read_le<float>(read_payload(stem, count * 4));
  for (float x : values) {
    if (!std::isfinite(x)) throw ValidationError("non-finite sample in payload " + payload_path(stem).string());
  }
  return Volume(h.channels, h.dims, h.spacing, std::move(values));
}

Volume load_image(const fs::path& path) {
  auto loaded = load_volume(path);
  if (auto* v = std::get_if<Volume>(&loaded)) return std::move(*v);
  throw ValidationError(path.string() + " holds labels, expected an f32 volume");
}

LabelMap load_labels(const fs::path& path) {
  auto loaded = load_volume(path);
  if (auto* v = std::get_if<LabelMap>(&loaded)) return std::move(*v);
  throw ValidationError(path.string() + " holds an f32 volume, expected labels");
}

DisplacementField load_field(const fs::path& path) {
  if (read_header(path).kind != VolumeKind::field) throw ValidationError(path.string() + " is not of kind \"field\"");
  return DisplacementField(load_image(path));
}

}  // namespace condreg
