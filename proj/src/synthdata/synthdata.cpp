#include "condreg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "condreg/error.hpp"
#include "condreg/metrics.hpp"
#include "condreg/ops.hpp"
#include "json.hpp"

namespace condreg::synth {

using nlohmann::json;

std::string to_string(Family f) {
  switch (f) {
    case Family::blob: return "blob";
    case Family::ring: return "ring";
    case Family::slab: return "slab";
  }
  return "?";
}

Family parse_family(const std::string& s) {
  if (s == "blob") return Family::blob;
  if (s == "ring") return Family::ring;
  if (s == "slab") return Family::slab;
  throw ValidationError("unknown structure family '" + s + "' (blob, ring, slab)");
}

void TaskSpec::validate() const {
  if (name.empty()) throw ValidationError("task spec needs a name");
  if (dims.d < 8 || dims.w < 8 || dims.h < 8) throw ValidationError("task '" + name + "': dims must be >= 8 per axis");
  if (num_structures < 1 || num_structures > 8) throw ValidationError("task '" + name + "': num_structures must be in [1, 8]");
  if (reg_type == RegType::intra && !(sigma > 0.0)) throw ValidationError("task '" + name + "': sigma must be > 0");
  if (reg_type == RegType::intra && !(amplitude >= 0.0)) throw ValidationError("task '" + name + "': amplitude must be >= 0");
  if (!(jitter >= 0.0) || !(noise >= 0.0)) throw ValidationError("task '" + name + "': jitter and noise must be >= 0");
  if (task_index < 0) throw ValidationError("task '" + name + "': index must be >= 0");
  if (!(lambda >= 0.0) || !(dice_weight >= 0.0)) throw ValidationError("task '" + name + "': lambda and dice_weight must be >= 0");
}

// splitmix64
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t pair_key(std::uint64_t seed, int task, int split, int index) {
  std::uint64_t k = mix(seed);
  k = mix(k ^ static_cast<std::uint64_t>(task));
  k = mix(k ^ (static_cast<std::uint64_t>(split) << 32));
  return mix(k ^ static_cast<std::uint64_t>(index) * 0xd1b54a32d192ed03ULL);
}

std::uint64_t Rng::next() {
  state_ += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (spare_) {
    const double s = *spare_;
    spare_.reset();
    return s;
  }
  double u = 0.0;
  while (u <= 0.0) u = uniform();
  const double v = uniform();
  const double r = std::sqrt(-2.0 * std::log(u));
  spare_ = r * std::sin(2.0 * std::numbers::pi * v);
  return r * std::cos(2.0 * std::numbers::pi * v);
}

namespace {

void box_pass(std::vector<float>& g, Dims dims, int axis, int radius) {
  const int n[3] = {dims.d, dims.w, dims.h};
  const std::size_t stride[3] = {static_cast<std::size_t>(dims.w) * dims.h, static_cast<std::size_t>(dims.h), 1};
  const int len = n[axis];
  std::vector<double> line(len), prefix(len + 1);
  const int o1 = (axis + 1) % 3, o2 = (axis + 2) % 3;
  for (int a = 0; a < n[o1]; ++a)
    for (int b = 0; b < n[o2]; ++b) {
      const std::size_t base = a * stride[o1] + b * stride[o2];
      prefix[0] = 0.0;
      for (int i = 0; i < len; ++i) prefix[i + 1] = prefix[i] + g[base + i * stride[axis]];
      // Clamped border: samples beyond the edge repeat the edge value.
      for (int i = 0; i < len; ++i) {
        const int lo = i - radius, hi = i + radius;
        double s = prefix[std::min(hi, len - 1) + 1] - prefix[std::max(lo, 0)];
        if (lo < 0) s += -lo * static_cast<double>(g[base]);
        if (hi > len - 1) s += (hi - len + 1) * static_cast<double>(g[base + (len - 1) * stride[axis]]);
        line[i] = s / (2 * radius + 1);
      }
      for (int i = 0; i < len; ++i) g[base + i * stride[axis]] = static_cast<float>(line[i]);
    }
}

}  // namespace

void smooth(std::vector<float>& grid, Dims dims, double sigma) {
  if (grid.size() != dims.voxels()) throw ValidationError("smooth: grid size does not match dims");
  if (!(sigma > 0.0)) return;
  // Three boxes of width w have variance 3 (w^2 - 1) / 12.
  const int radius = std::max(1, static_cast<int>(std::lround((std::sqrt(4.0 * sigma * sigma + 1.0) - 1.0) / 2.0)));
  for (int pass = 0; pass < 3; ++pass)
    for (int axis = 0; axis < 3; ++axis) box_pass(grid, dims, axis, radius);
}

namespace {

constexpr double kAirHu = -650.0;
constexpr double kWindowLo = -800.0, kWindowHi = 400.0;
const double kInside = std::exp(-0.5);
constexpr double kTextureHu = 90.0, kTextureSigma = 2.0, kEdge = 0.06;

std::vector<float> noise_field(Dims dims, double sigma, Rng& rng) {
  std::vector<float> g(dims.voxels());
  for (float& v : g) v = static_cast<float>(rng.normal());
  smooth(g, dims, sigma);
  float peak = 0.0f;
  for (float v : g) peak = std::max(peak, std::abs(v));
  if (peak > 0.0f)
    for (float& v : g) v /= peak;
  return g;
}

struct Structure {
  std::array<double, 3> center{}, radii{}, normal{};
  double contrast = 0.0;
  std::vector<float> shape;  // smooth unit-peak noise modulating the boundary
};

// Soft fields, one per structure, plus a background texture. Masks threshold
// the soft fields; images are rendered from them.
struct Anatomy {
  Dims dims;
  std::vector<std::vector<float>> soft;
  std::vector<float> texture;
};

std::vector<float> soft_field(const Structure& s, Family family, Dims dims) {
  std::vector<float> out(dims.voxels());
  for (int d = 0; d < dims.d; ++d)
    for (int w = 0; w < dims.w; ++w)
      for (int h = 0; h < dims.h; ++h) {
        const std::size_t i = dims.index(d, w, h);
        const double x[3] = {d - s.center[0], w - s.center[1], h - s.center[2]};
        double rho2 = 0.0;
        for (int a = 0; a < 3; ++a) rho2 += (x[a] / s.radii[a]) * (x[a] / s.radii[a]);
        const double scale = 1.0 + 0.25 * s.shape[i];
        const double rho = std::sqrt(rho2) / scale;
        double v = 0.0;
        switch (family) {
          case Family::blob: v = std::exp(-0.5 * rho * rho); break;
          case Family::ring: {
            const double t = (rho - 1.0) / 0.4;
            v = std::exp(-0.5 * t * t);
            break;
          }
          case Family::slab: {
            const double along = (x[0] * s.normal[0] + x[1] * s.normal[1] + x[2] * s.normal[2]) /
                                 (0.45 * std::min({s.radii[0], s.radii[1], s.radii[2]}) * scale);
            const double env = rho / 1.6;
            v = std::min(std::exp(-0.5 * along * along), std::exp(-0.5 * env * env * env * env));
            break;
          }
        }
        out[i] = static_cast<float>(v);
      }
  return out;
}

std::vector<Structure> draw_template(const TaskSpec& spec, Rng& rng) {
  const double scale = std::min({spec.dims.d, spec.dims.w, spec.dims.h}) / 32.0;
  const int n[3] = {spec.dims.d, spec.dims.w, spec.dims.h};
  std::vector<Structure> out(spec.num_structures);
  for (Structure& s : out) {
    for (int a = 0; a < 3; ++a) {
      s.center[a] = rng.uniform(0.3, 0.7) * (n[a] - 1);
      s.radii[a] = rng.uniform(3.5, 6.5) * scale;
    }
    double norm = 0.0;
    for (double& v : s.normal) v = rng.normal(), norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : s.normal) v /= norm;
    const double magnitude = rng.uniform(300.0, 650.0);
    s.contrast = rng.uniform() < 0.75 ? magnitude : -0.3 * magnitude;
  }
  return out;
}

Structure perturb(const Structure& s, const TaskSpec& spec, Rng& rng) {
  Structure p = s;
  for (int a = 0; a < 3; ++a) {
    p.center[a] += std::clamp(rng.normal() * spec.jitter, -2.5 * spec.jitter, 2.5 * spec.jitter);
    p.radii[a] *= rng.uniform(0.8, 1.2);
  }
  p.contrast *= rng.uniform(0.85, 1.15);
  return p;
}

Anatomy build(const TaskSpec& spec, std::vector<Structure>& structs, Rng& rng) {
  Anatomy a{spec.dims, {}, noise_field(spec.dims, kTextureSigma, rng)};
  for (Structure& s : structs) {
    s.shape = noise_field(spec.dims, 2.5, rng);
    a.soft.push_back(soft_field(s, spec.family, spec.dims));
  }
  return a;
}

LabelMap labels_of(const Anatomy& a, int classes) {
  std::vector<std::uint16_t> l(a.dims.voxels(), 0);
  for (std::size_t i = 0; i < l.size(); ++i) {
    float best = static_cast<float>(kInside);
    for (std::size_t k = 0; k < a.soft.size(); ++k)
      if (a.soft[k][i] > best) best = a.soft[k][i], l[i] = static_cast<std::uint16_t>(k + 1);
  }
  return LabelMap(a.dims, {1, 1, 1}, std::move(l), classes);
}

Volume render(const Anatomy& a, const std::vector<double>& contrasts, double noise, Rng& rng) {
  std::vector<float> hu(a.dims.voxels());
  const double noise_hu = noise * (kWindowHi - kWindowLo) / 2.0;
  for (std::size_t i = 0; i < hu.size(); ++i) {
    double v = kAirHu + kTextureHu * a.texture[i];
    for (std::size_t k = 0; k < a.soft.size(); ++k) {
      const double t = 1.0 / (1.0 + std::exp(-(a.soft[k][i] - kInside) / kEdge));
      v += contrasts[k] * t;
    }
    hu[i] = static_cast<float>(v + noise_hu * rng.normal());
  }
  return normalize_intensities(Volume(1, a.dims, {1, 1, 1}, std::move(hu)), kWindowLo, kWindowHi);
}

std::vector<float> warp_scalar(const std::vector<float>& g, Dims dims, const DisplacementField& field) {
  Tape tape;
  const Var src = tape.constant(Tensor({1, dims.d, dims.w, dims.h}, g));
  const Var u = tape.constant(Tensor::from_volume(field.components()));
  const Tensor out = ops::trilinear_sample(src, u).value();
  return {out.values().begin(), out.values().end()};
}

DisplacementField draw_field(const TaskSpec& spec, Rng& rng) {
  const Dims dims = spec.dims;
  std::vector<float> u(3 * dims.voxels(), 0.0f);
  if (spec.amplitude == 0.0) return DisplacementField::zeros(dims);
  for (int c = 0; c < 3; ++c) {
    std::vector<float> g(dims.voxels());
    for (float& v : g) v = static_cast<float>(rng.normal());
    smooth(g, dims, spec.sigma);
    std::copy(g.begin(), g.end(), u.begin() + c * dims.voxels());
  }
  // RMS norm set to about half the amplitude, then per-voxel norms clipped to it.
  const std::size_t n = dims.voxels();
  double sq = 0.0;
  for (float v : u) sq += double(v) * v;
  const double rms = std::sqrt(sq / n);
  const double gain = rms > 0.0 ? spec.amplitude * rng.uniform(0.45, 0.6) / rms : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double n2 = 0.0;
    for (int c = 0; c < 3; ++c) n2 += double(u[c * n + i]) * u[c * n + i];
    const double norm = std::sqrt(n2) * gain;
    const double g = norm > spec.amplitude ? gain * spec.amplitude / norm : gain;
    for (int c = 0; c < 3; ++c) u[c * n + i] = static_cast<float>(u[c * n + i] * g);
  }
  return DisplacementField(Volume(3, dims, {1, 1, 1}, std::move(u)));
}

std::vector<double> contrasts_of(const std::vector<Structure>& s) {
  std::vector<double> c;
  for (const auto& x : s) c.push_back(x.contrast);
  return c;
}

}  // namespace

double min_interior_det(const DisplacementField& field) {
  const Volume det = metrics::jacobian_det(field);
  const Dims d = field.dims();
  double m = std::numeric_limits<double>::infinity();
  for (int i = 1; i < d.d - 1; ++i)
    for (int j = 1; j < d.w - 1; ++j)
      for (int k = 1; k < d.h - 1; ++k) m = std::min(m, static_cast<double>(det.at(0, i, j, k)));
  return m;
}

PairSample gen_intra_pair(const TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.reg_type != RegType::intra) throw ValidationError("gen_intra_pair needs an intra task");
  Rng rng(seed);
  std::vector<Structure> structs = draw_template(spec, rng);
  const Anatomy base = build(spec, structs, rng);

  std::optional<DisplacementField> field;
  for (int attempt = 0; attempt < 100 && !field; ++attempt) {
    DisplacementField f = draw_field(spec, rng);
    if (min_interior_det(f) > 0.1) field = std::move(f);
  }
  if (!field)
    throw ValidationError("task '" + spec.name + "': no fold-free field in 100 draws (amplitude too large for sigma)");

  Anatomy warped{spec.dims, {}, warp_scalar(base.texture, spec.dims, *field)};
  for (const auto& s : base.soft) warped.soft.push_back(warp_scalar(s, spec.dims, *field));

  // Second phase: structure contrasts shift between the two acquisitions.
  std::vector<double> moving_c = contrasts_of(structs), fixed_c = moving_c;
  for (double& c : fixed_c) c = c * rng.uniform(0.75, 1.25) + rng.uniform(-40.0, 40.0);

  const int classes = spec.num_structures + 1;
  PairSample p{render(warped, fixed_c, spec.noise, rng), render(base, moving_c, spec.noise, rng),
               labels_of(warped, classes), labels_of(base, classes), std::move(field), spec.task_index};
  return p;
}

PairSample gen_inter_pair(const TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.reg_type != RegType::inter) throw ValidationError("gen_inter_pair needs an inter task");
  Rng rng(seed);
  const std::vector<Structure> tmpl = draw_template(spec, rng);
  std::vector<Structure> a, b;
  for (const auto& s : tmpl) a.push_back(perturb(s, spec, rng));
  for (const auto& s : tmpl) b.push_back(perturb(s, spec, rng));
  const Anatomy fa = build(spec, a, rng), fb = build(spec, b, rng);
  const int classes = spec.num_structures + 1;
  return PairSample{render(fa, contrasts_of(a), spec.noise, rng), render(fb, contrasts_of(b), spec.noise, rng),
                    labels_of(fa, classes), labels_of(fb, classes), std::nullopt, spec.task_index};
}

PairSample gen_pair(const TaskSpec& spec, std::uint64_t seed) {
  return spec.reg_type == RegType::intra ? gen_intra_pair(spec, seed) : gen_inter_pair(spec, seed);
}

// ---- benchmark spec and manifest ----

namespace {

json spec_json(const TaskSpec& t) {
  return {{"name", t.name},
          {"reg_type", to_string(t.reg_type)},
          {"dims", {t.dims.d, t.dims.w, t.dims.h}},
          {"num_structures", t.num_structures},
          {"family", to_string(t.family)},
          {"sigma", t.sigma},
          {"amplitude", t.amplitude},
          {"jitter", t.jitter},
          {"noise", t.noise},
          {"index", t.task_index},
          {"lambda", t.lambda},
          {"dice_weight", t.dice_weight},
          {"held_out", t.held_out}};
}

TaskSpec spec_from(const json& j) {
  if (!j.is_object()) throw ValidationError("task spec must be an object");
  TaskSpec t;
  t.name = j.at("name").get<std::string>();
  t.reg_type = parse_reg_type(j.value("reg_type", std::string("inter")));
  if (j.contains("dims")) {
    const auto d = j.at("dims").get<std::vector<int>>();
    if (d.size() != 3) throw ValidationError("task '" + t.name + "': dims needs 3 entries");
    t.dims = {d[0], d[1], d[2]};
  }
  t.num_structures = j.value("num_structures", t.num_structures);
  t.family = parse_family(j.value("family", std::string("blob")));
  t.sigma = j.value("sigma", t.sigma);
  t.amplitude = j.value("amplitude", t.amplitude);
  t.jitter = j.value("jitter", t.jitter);
  t.noise = j.value("noise", t.noise);
  t.task_index = j.value("index", t.task_index);
  t.lambda = j.value("lambda", t.lambda);
  t.dice_weight = j.value("dice_weight", t.dice_weight);
  t.held_out = j.value("held_out", t.held_out);
  t.validate();
  return t;
}

json split_json(const SplitCounts& c) { return {{"train", c.train}, {"val", c.val}, {"test", c.test}}; }

int split_count(const SplitCounts& c, const std::string& split) {
  return split == "train" ? c.train : split == "val" ? c.val : c.test;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed: " + p.string());
}

}  // namespace

void BenchmarkSpec::validate() const {
  if (tasks.empty()) throw ValidationError("benchmark spec has no tasks");
  for (const auto& t : tasks) t.validate();
  for (std::size_t i = 0; i < tasks.size(); ++i)
    for (std::size_t j = i + 1; j < tasks.size(); ++j)
      if (tasks[i].name == tasks[j].name) throw ValidationError("duplicate task name '" + tasks[i].name + "'");
  if (counts.train < 1 || counts.val < 1 || counts.test < 1)
    throw ValidationError("every split needs at least one pair (train, val, test)");
}

BenchmarkSpec default_benchmark() {
  TaskSpec abdomen;
  abdomen.name = "abdomen";
  abdomen.reg_type = RegType::inter;
  abdomen.family = Family::blob;
  abdomen.num_structures = 3;
  abdomen.jitter = 2.0;
  abdomen.task_index = 0;
  abdomen.lambda = 0.1;
  abdomen.dice_weight = 1.0;

  TaskSpec liver;
  liver.name = "liver";
  liver.reg_type = RegType::intra;
  liver.family = Family::blob;
  liver.num_structures = 2;
  liver.sigma = 16.0;
  liver.amplitude = 6.0;
  liver.task_index = 1;
  liver.lambda = 10.0;
  liver.dice_weight = 0.0;
  return {{abdomen, liver}, {}};
}

TaskSpec unseen_task() {
  TaskSpec lung;
  lung.name = "lung";
  lung.reg_type = RegType::intra;
  lung.family = Family::ring;
  lung.num_structures = 2;
  lung.sigma = 6.0;
  lung.amplitude = 6.0;
  lung.task_index = 1;  // routed through the intra task ID
  lung.lambda = 1.0;
  lung.dice_weight = 0.0;
  lung.held_out = true;
  return lung;
}

BenchmarkSpec unseen_benchmark() {
  BenchmarkSpec spec = default_benchmark();
  spec.tasks.push_back(unseen_task());
  return spec;
}

BenchmarkSpec parse_benchmark_spec(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("benchmark spec is not valid JSON: ") + e.what());
  }
  try {
    BenchmarkSpec s;
    for (const auto& t : j.at("tasks")) s.tasks.push_back(spec_from(t));
    if (j.contains("counts")) {
      const auto& c = j.at("counts");
      s.counts = {c.value("train", s.counts.train), c.value("val", s.counts.val), c.value("test", s.counts.test)};
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad benchmark spec: ") + e.what());
  }
}

BenchmarkSpec load_benchmark_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_benchmark_spec(text);
}

std::string to_json_text(const BenchmarkSpec& spec) {
  json tasks = json::array();
  for (const auto& t : spec.tasks) tasks.push_back(spec_json(t));
  return json{{"tasks", tasks}, {"counts", split_json(spec.counts)}}.dump(2) + "\n";
}

std::vector<const PairEntry*> Manifest::select(const std::string& task, const std::string& split) const {
  std::vector<const PairEntry*> out;
  for (const auto& p : pairs)
    if (p.task == task && p.split == split) out.push_back(&p);
  return out;
}

TaskRegistry Manifest::registry() const {
  int n = 0;
  for (const auto& t : spec.tasks) n = std::max(n, t.task_index + 1);
  std::vector<TaskDescriptor> entries;
  for (const auto& t : spec.tasks) entries.push_back({t.name, t.task_index, n, t.reg_type, t.lambda, t.dice_weight});
  return TaskRegistry(std::move(entries));
}

Manifest make_benchmark(const BenchmarkSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  Manifest m{out_dir, spec, {}};
  json pairs = json::array();
  for (std::size_t t = 0; t < spec.tasks.size(); ++t) {
    const TaskSpec& task = spec.tasks[t];
    for (std::size_t s = 0; s < kSplits.size(); ++s) {
      const std::string& split = kSplits[s];
      const std::filesystem::path rel = std::filesystem::path(task.name) / split;
      std::filesystem::create_directories(out_dir / rel, ec);
      if (ec) throw IoError("cannot create " + (out_dir / rel).string());
      const int count = task.held_out && split == "train" ? 0 : split_count(spec.counts, split);
      for (int i = 0; i < count; ++i) {
        const PairSample p = gen_pair(task, pair_key(seed, static_cast<int>(t), static_cast<int>(s), i));
        const std::string stem = (i < 10 ? "00" : i < 100 ? "0" : "") + std::to_string(i);
        PairEntry e{task.name, split, i, rel / (stem + "_fixed"), rel / (stem + "_moving"), rel / (stem + "_fixed_mask"),
                    rel / (stem + "_moving_mask"), std::nullopt};
        save_volume(p.fixed, out_dir / e.fixed);
        save_volume(p.moving, out_dir / e.moving);
        save_volume(p.fixed_mask, out_dir / e.fixed_mask);
        save_volume(p.moving_mask, out_dir / e.moving_mask);
        json pj{{"task", e.task}, {"split", e.split}, {"index", i}, {"fixed", e.fixed.generic_string()},
                {"moving", e.moving.generic_string()}, {"fixed_mask", e.fixed_mask.generic_string()},
                {"moving_mask", e.moving_mask.generic_string()}};
        if (p.gt_field) {
          e.gt_field = rel / (stem + "_gt_field");
          save_volume(*p.gt_field, out_dir / *e.gt_field);
          pj["gt_field"] = e.gt_field->generic_string();
        }
        pairs.push_back(pj);
        m.pairs.push_back(std::move(e));
      }
    }
  }
  json tasks = json::array();
  for (const auto& t : spec.tasks) tasks.push_back(spec_json(t));
  write_text(out_dir / "manifest.json",
             json{{"seed", seed}, {"counts", split_json(spec.counts)}, {"tasks", tasks}, {"pairs", pairs}}.dump(2) + "\n");
  m.registry().save(out_dir / "registry.json");
  return m;
}

Manifest load_manifest(const std::filesystem::path& path_or_dir) {
  const std::filesystem::path path =
      std::filesystem::is_directory(path_or_dir) ? path_or_dir / "manifest.json" : path_or_dir;
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    Manifest m;
    m.root = path.parent_path();
    for (const auto& t : j.at("tasks")) m.spec.tasks.push_back(spec_from(t));
    if (j.contains("counts")) {
      const auto& c = j.at("counts");
      m.spec.counts = {c.at("train").get<int>(), c.at("val").get<int>(), c.at("test").get<int>()};
    }
    for (const auto& p : j.at("pairs")) {
      PairEntry e{p.at("task").get<std::string>(), p.at("split").get<std::string>(), p.value("index", 0),
                  p.at("fixed").get<std::string>(), p.at("moving").get<std::string>(),
                  p.value("fixed_mask", std::string()), p.value("moving_mask", std::string()), std::nullopt};
      if (p.contains("gt_field")) e.gt_field = p.at("gt_field").get<std::string>();
      m.pairs.push_back(std::move(e));
    }
    return m;
  } catch (const json::exception& e) {
    throw ValidationError("bad manifest " + path.string() + ": " + e.what());
  }
}

LoadedPair load_pair(const Manifest& m, const PairEntry& e) {
  auto exists = [&](const std::filesystem::path& rel) {
    return !rel.empty() && std::filesystem::exists(m.root / (rel.string() + ".json"));
  };
  LoadedPair p{load_image(m.root / e.fixed), load_image(m.root / e.moving), std::nullopt, std::nullopt, std::nullopt};
  if (exists(e.fixed_mask)) p.fixed_mask = load_labels(m.root / e.fixed_mask);
  if (exists(e.moving_mask)) p.moving_mask = load_labels(m.root / e.moving_mask);
  if (e.gt_field) p.gt_field = load_field(m.root / *e.gt_field);
  return p;
}

}  // namespace condreg::synth
