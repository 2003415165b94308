#include "condreg/backbone.hpp"

#include <cmath>
#include <random>

#include "condreg/error.hpp"
#include "condreg/ops.hpp"

namespace condreg {

void BackboneConfig::validate() const {
  if (levels < 2 || levels > 6) throw ValidationError("backbone levels must be in [2, 6]");
  if (base_channels < 1 || base_channels > 64) throw ValidationError("base_channels must be in [1, 64]");
  if (blocks_per_level < 0) throw ValidationError("blocks_per_level must be >= 0");
  if (!(slope > 0.0 && slope < 1.0)) throw ValidationError("activation slope must be in (0, 1)");
}

namespace backbone {
namespace {

constexpr double kRangeTolerance = 1e-4;

void add_conv(ParamSlice& p, const std::string& name, int cout, int cin, int k, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / (cin * k * k * k));  // He uniform, stdev sqrt(2 / fan_in)
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor w({cout, cin, k, k, k});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(u(rng));
  p.add(name + ".w", std::move(w));
  p.add(name + ".b", Tensor({cout}));
}

Var conv(Var x, const VarMap& v, const std::string& name, int stride = 1) {
  return ops::conv3d(x, lookup(v, name + ".w"), lookup(v, name + ".b"), stride);
}

std::string block_name(int level, int block) { return "res" + std::to_string(level) + "." + std::to_string(block); }

}  // namespace

// Pyramid:
//   enc0 : 3^3 conv 2 -> c0 at full resolution
//   downL: stride-2 3^3 conv c(L-1) -> cL, then residual blocks
//   upL  : 3^3 conv cL -> c(L-1) at the coarse level
//   decL : upsample, concat skip, 1^3 conv 2c(L-1) -> c(L-1)
//   proj : 1^3 conv c0 -> 8
ParamSlice init(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ParamSlice p;
  add_conv(p, "enc0", config.channels(0), 2, 3, rng);
  for (int l = 1; l < config.levels; ++l) {
    add_conv(p, "down" + std::to_string(l), config.channels(l), config.channels(l - 1), 3, rng);
    for (int b = 0; b < config.blocks_per_level; ++b) {
      add_conv(p, block_name(l, b) + ".conv1", config.channels(l), config.channels(l), 3, rng);
      add_conv(p, block_name(l, b) + ".conv2", config.channels(l), config.channels(l), 3, rng);
    }
  }
  for (int l = config.levels - 1; l >= 1; --l) {
    add_conv(p, "up" + std::to_string(l), config.channels(l - 1), config.channels(l), 3, rng);
    add_conv(p, "dec" + std::to_string(l), config.channels(l - 1), 2 * config.channels(l - 1), 1, rng);
  }
  add_conv(p, "proj", kFeatureChannels, config.channels(0), 1, rng);
  return p;
}

Var residual_block(Var x, const VarMap& vars, const std::string& prefix, float slope) {
  Var h = ops::leaky_relu(conv(x, vars, prefix + ".conv1"), slope);
  return ops::add(x, conv(h, vars, prefix + ".conv2"));
}

Var extract(Var pair, const BackboneConfig& config, const VarMap& vars) {
  config.validate();
  if (pair.value().rank() != 4 || pair.value().channels() != 2)
    throw ValidationError("backbone input must be a (2, D, W, H) tensor");
  const auto slope = static_cast<float>(config.slope);

  std::vector<Var> skips;
  Var x = ops::leaky_relu(conv(pair, vars, "enc0"), slope);
  for (int l = 1; l < config.levels; ++l) {
    skips.push_back(x);
    x = ops::leaky_relu(conv(x, vars, "down" + std::to_string(l), 2), slope);
    for (int b = 0; b < config.blocks_per_level; ++b) x = residual_block(x, vars, block_name(l, b), slope);
  }
  for (int l = config.levels - 1; l >= 1; --l) {
    const Var skip = skips[l - 1];
    x = ops::leaky_relu(conv(x, vars, "up" + std::to_string(l)), slope);
    const Var parts[2] = {ops::upsample_to(x, skip.value().dims()), skip};
    x = ops::leaky_relu(conv(ops::concat_channels(parts), vars, "dec" + std::to_string(l)), slope);
  }
  return conv(x, vars, "proj");
}

Tensor pair_input(const Volume& fixed, const Volume& moving) {
  if (fixed.channels() != 1 || moving.channels() != 1) throw ValidationError("backbone inputs must be single-channel");
  if (!(fixed.dims() == moving.dims()))
    throw ValidationError("fixed dims " + to_string(fixed.dims()) + " != moving dims " + to_string(moving.dims()));
  const Dims dims = fixed.dims();
  std::vector<float> values;
  values.reserve(2 * dims.voxels());
  for (const Volume* v : {&fixed, &moving}) {
    for (float s : v->data()) {
      if (!(std::abs(s) <= 1.0 + kRangeTolerance))
        throw ValidationError("backbone input not normalized to [-1, 1] (sample " + std::to_string(s) + ")");
      values.push_back(s);
    }
  }
  return Tensor({2, dims.d, dims.w, dims.h}, std::move(values));
}

Tensor extract_features(const Volume& fixed, const Volume& moving, const BackboneConfig& config,
                        const ParamSlice& params) {
  Tape tape;
  const VarMap vars = bind(tape, params, false);
  return extract(tape.constant(pair_input(fixed, moving)), config, vars).value();
}

}  // namespace backbone
}  // namespace condreg
