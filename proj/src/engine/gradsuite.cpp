#include "condreg/gradsuite.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <random>

#include "condreg/error.hpp"
#include "condreg/objectives.hpp"
#include "condreg/ops.hpp"

namespace condreg {
namespace {

struct Case {
  TapeFunction fn;
  std::vector<Tensor> inputs;
  std::vector<std::string> names;
  double step = 1e-3;
  bool extrapolate = false;
};

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  int extent(int lo = 2, int hi = 5) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  Dims dims() { return {extent(), extent(), extent()}; }

  Tensor uniform(std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(u(rng_));
    return t;
  }

  // Magnitudes kept off zero so central differences never straddle the kink.
  Tensor off_zero(std::vector<int> shape) {
    Tensor t = uniform(std::move(shape), 0.05, 1.0);
    std::bernoulli_distribution flip(0.5);
    for (std::size_t i = 0; i < t.size(); ++i)
      if (flip(rng_)) t[i] = -t[i];
    return t;
  }

  // Displacements whose targets stay away from grid knots.
  Tensor off_knot_field(Dims d, double margin = 0.06) {
    Tensor f = Tensor::feature_map(3, d);
    std::uniform_real_distribution<double> u(-1.2, 1.2);
    for (std::size_t i = 0; i < f.size(); ++i) {
      double v = u(rng_);
      while (v - std::floor(v) < margin || v - std::floor(v) > 1 - margin) v = u(rng_);
      f[i] = static_cast<float>(v);
    }
    return f;
  }

  LabelMap labels(Dims d, int classes) {
    std::vector<std::uint16_t> v(d.voxels());
    std::uniform_int_distribution<int> u(0, classes - 1);
    for (auto& x : v) x = static_cast<std::uint16_t>(u(rng_));
    return LabelMap(d, {1.0, 1.0, 1.0}, std::move(v), classes);
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

std::vector<int> fmap(int c, Dims d) { return {c, d.d, d.w, d.h}; }

using Builder = std::function<Case(Gen&)>;

const std::map<std::string, Builder>& builders() {
  static const std::map<std::string, Builder> table = {
      // conv3d and affine are linear in each input, so a wide step is exact up
      // to rounding.
      {"conv3d",
       [](Gen& g) {
         const int cin = g.extent(1, 3), cout = g.extent(1, 3), k = g.extent(0, 1) * 2 + 1;
         return Case{[](Tape&, std::span<const Var> in) { return ops::conv3d(in[0], in[1], in[2], 1); },
                     {g.uniform(fmap(cin, g.dims())), g.uniform({cout, cin, k, k, k}), g.uniform({cout})},
                     {"x", "w", "b"},
                     1e-2};
       }},
      {"conv3d_stride2",
       [](Gen& g) {
         const int cin = g.extent(1, 3), cout = g.extent(1, 3);
         return Case{[](Tape&, std::span<const Var> in) { return ops::conv3d(in[0], in[1], in[2], 2); },
                     {g.uniform(fmap(cin, g.dims())), g.uniform({cout, cin, 3, 3, 3}), g.uniform({cout})},
                     {"x", "w", "b"},
                     1e-2};
       }},
      {"leaky_relu",
       [](Gen& g) {
         return Case{[](Tape&, std::span<const Var> in) { return ops::leaky_relu(in[0], 0.2f); },
                     {g.off_zero(fmap(g.extent(1, 3), g.dims()))},
                     {"x"}};
       }},
      {"add",
       [](Gen& g) {
         const auto shape = fmap(g.extent(1, 3), g.dims());
         return Case{[](Tape&, std::span<const Var> in) { return ops::add(in[0], in[1]); },
                     {g.uniform(shape), g.uniform(shape)},
                     {"a", "b"}};
       }},
      {"scale",
       [](Gen& g) {
         return Case{[](Tape&, std::span<const Var> in) { return ops::scale(in[0], -1.7); },
                     {g.uniform(fmap(g.extent(1, 3), g.dims()))},
                     {"x"}};
       }},
      {"trilinear_sample",
       [](Gen& g) {
         const Dims d = g.dims();
         return Case{[](Tape&, std::span<const Var> in) { return ops::trilinear_sample(in[0], in[1]); },
                     {g.uniform(fmap(g.extent(1, 2), d)), g.off_knot_field(d)},
                     {"src", "field"}};
       }},
      {"upsample2",
       [](Gen& g) {
         return Case{[](Tape&, std::span<const Var> in) { return ops::upsample2(in[0]); },
                     {g.uniform(fmap(g.extent(1, 2), {g.extent(1, 3), g.extent(1, 3), g.extent(1, 3)}))},
                     {"x"}};
       }},
      {"upsample_to",
       [](Gen& g) {
         const Dims src{g.extent(1, 3), g.extent(1, 3), g.extent(1, 3)};
         const Dims dst{2 * src.d - g.extent(0, 1), 2 * src.w - g.extent(0, 1), 2 * src.h - g.extent(0, 1)};
         return Case{[dst](Tape&, std::span<const Var> in) { return ops::upsample_to(in[0], dst); },
                     {g.uniform(fmap(g.extent(1, 2), src))},
                     {"x"}};
       }},
      {"concat_channels",
       [](Gen& g) {
         const Dims d = g.dims();
         return Case{[](Tape&, std::span<const Var> in) {
                       const Var parts[2] = {in[0], in[1]};
                       return ops::concat_channels(parts);
                     },
                     {g.uniform(fmap(g.extent(1, 3), d)), g.uniform(fmap(g.extent(1, 3), d))},
                     {"a", "b"}};
       }},
      {"global_mean_pool",
       [](Gen& g) {
         return Case{[](Tape&, std::span<const Var> in) { return ops::global_mean_pool(in[0]); },
                     {g.uniform(fmap(g.extent(1, 4), g.dims()))},
                     {"x"}};
       }},
      {"affine",
       [](Gen& g) {
         const int out = g.extent(1, 5), in = g.extent(1, 5);
         return Case{[](Tape&, std::span<const Var> v) { return ops::affine(v[0], v[1], v[2]); },
                     {g.uniform({out, in}), g.uniform({out}), g.uniform({in})},
                     {"W", "b", "x"},
                     1e-2};
       }},
      {"slice",
       [](Gen& g) {
         const int n = g.extent(3, 5) * 5;
         const std::size_t off = g.extent(0, 5);
         return Case{[off](Tape&, std::span<const Var> in) { return ops::slice(in[0], off, {2, 4}); },
                     {g.uniform({n})},
                     {"x"}};
       }},
      // Scalar losses are stored in f32; a wide extrapolated step keeps rounding
      // out of the difference quotient.
      {"ncc_loss",
       [](Gen& g) {
         const Dims d = g.dims();
         const int window = g.extent(1, 2) * 2 + 1;
         return Case{[window](Tape&, std::span<const Var> in) { return objectives::ncc_loss(in[0], in[1], window); },
                     {g.uniform(fmap(1, d)), g.uniform(fmap(1, d))},
                     {"a", "b"},
                     4e-2, true};
       }},
      {"diffusion_reg",
       [](Gen& g) {
         return Case{[](Tape&, std::span<const Var> in) { return objectives::diffusion_reg(in[0]); },
                     {g.uniform(fmap(3, g.dims()))},
                     {"field"},
                     1e-2};
       }},
      {"normalized_diffusion_reg",
       [](Gen& g) {
         return Case{[](Tape&, std::span<const Var> in) {
                       return objectives::diffusion_reg(objectives::normalized_field(in[0]));
                     },
                     {g.uniform(fmap(3, g.dims()))},
                     {"field"},
                     1e-2};
       }},
      {"dice_loss",
       [](Gen& g) {
         const Dims d = g.dims();
         const int classes = g.extent(2, 4);
         const LabelMap fixed = g.labels(d, classes);
         return Case{[fixed](Tape&, std::span<const Var> in) { return objectives::dice_loss(in[0], fixed); },
                     {g.uniform(fmap(classes, d), 0.0, 1.0)},
                     {"warped_mask"},
                     1e-2};
       }},
      {"total_loss",
       [](Gen& g) {
         const Dims d = g.dims();
         const LabelMap fm = g.labels(d, 3), mm = g.labels(d, 3);
         const Tensor fixed = g.uniform(fmap(1, d)), moving = g.uniform(fmap(1, d));
         const TaskDescriptor task{"t", 0, 1, RegType::inter, 0.5, 1.0};
         return Case{[=](Tape& tape, std::span<const Var> in) {
                       return objectives::total_loss(tape.constant(fixed), tape.constant(moving), &fm, &mm, in[0],
                                                     task, 3)
                           .total;
                     },
                     {g.off_knot_field(d, 0.1)},
                     {"field"},
                     4e-2, true};
       }},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& gradsuite_ops() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [name, b] : builders()) v.push_back(name);
    return v;
  }();
  return names;
}

GradCheckReport check_op(const std::string& name, std::uint64_t seed, double tolerance, double step) {
  const auto it = builders().find(name);
  if (it == builders().end()) {
    std::string known;
    for (const auto& n : gradsuite_ops()) known += (known.empty() ? "" : ", ") + n;
    throw ValidationError("unknown op '" + name + "' (known: " + known + ")");
  }
  Gen g(seed * 0x9e3779b97f4a7c15ULL + 1);
  const Case c = it->second(g);
  return grad_check(name, c.fn, c.inputs, c.names, {tolerance, step > 0.0 ? step : c.step, 0, seed, c.extrapolate});
}

}  // namespace condreg
