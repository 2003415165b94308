#include <cmath>

#include "condreg/backbone.hpp"
#include "condreg/error.hpp"
#include "condreg/gradcheck.hpp"
#include "condreg/ops.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace condreg;
using testutil::random_tensor;

namespace {

Volume random_image(Dims dims, std::uint64_t seed) { return random_tensor({1, dims.d, dims.w, dims.h}, seed).to_volume(); }

}  // namespace

TEST_CASE("extract_features shape and determinism") {
  const BackboneConfig config;
  const ParamSlice params = backbone::init(config, 1);
  const Volume f = random_image({16, 16, 16}, 2), m = random_image({16, 16, 16}, 3);
  const Tensor e = backbone::extract_features(f, m, config, params);
  CHECK(e.shape() == std::vector<int>{8, 16, 16, 16});
  CHECK(e == backbone::extract_features(f, m, config, params));

  // Odd sizes round-trip through the ceil-halving encoder.
  const Tensor odd = backbone::extract_features(random_image({9, 7, 11}, 4), random_image({9, 7, 11}, 5), config, params);
  CHECK(odd.shape() == std::vector<int>{8, 9, 7, 11});
}

TEST_CASE("extract_features with zero parameters is zero") {
  const BackboneConfig config{2, 4, 1, 0.01};
  ParamSlice params = backbone::init(config, 1);
  for (auto& [_, t] : params.entries()) t = Tensor(t.shape());
  const Tensor e = backbone::extract_features(random_image({6, 6, 6}, 1), random_image({6, 6, 6}, 2), config, params);
  CHECK(std::all_of(e.values().begin(), e.values().end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("extract_features rejects bad inputs") {
  const BackboneConfig config;
  const ParamSlice params = backbone::init(config, 1);
  CHECK_THROWS_AS(backbone::extract_features(random_image({8, 8, 8}, 1), random_image({8, 8, 6}, 2), config, params),
                  ValidationError);
  std::vector<float> loud(512, 0.0f);
  loud[17] = 1.5f;
  CHECK_THROWS_AS(backbone::extract_features(random_image({8, 8, 8}, 1), Volume(1, {8, 8, 8}, {1, 1, 1}, loud), config, params),
                  ValidationError);
  loud[17] = std::nanf("");
  CHECK_THROWS_AS(backbone::extract_features(random_image({8, 8, 8}, 1), Volume(1, {8, 8, 8}, {1, 1, 1}, loud), config, params),
                  ValidationError);
  CHECK_THROWS_AS((BackboneConfig{1, 8, 1, 0.01}).validate(), ValidationError);
}

TEST_CASE("init is seeded and fan-in scaled") {
  const BackboneConfig config{3, 4, 1, 0.01};
  CHECK(backbone::init(config, 7) == backbone::init(config, 7));
  CHECK_FALSE(backbone::init(config, 7) == backbone::init(config, 8));
  const ParamSlice seven = backbone::init(config, 7);
  for (const auto& [name, t] : seven.entries())
    if (name.ends_with(".b")) CHECK(std::all_of(t.values().begin(), t.values().end(), [](float v) { return v == 0.0f; }));

  // res1.0.conv1 is an 8 -> 8, 3^3 kernel at base 4.
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor w = backbone::init(config, seed).at("res1.0.conv1.w");
    REQUIRE(w.shape() == std::vector<int>{8, 8, 3, 3, 3});
    for (float v : w.values()) sum += v, sq += double(v) * v, ++n;
  }
  const double mean = sum / n;
  const double stdev = std::sqrt(sq / n - mean * mean);
  CHECK(stdev == doctest::Approx(1.0 / std::sqrt(8.0 * 27.0)).epsilon(0.2));
}

TEST_CASE("residual blocks reduce to the skip path with zero weights") {
  const BackboneConfig config{3, 4, 2, 0.01};
  ParamSlice params = backbone::init(config, 3);
  for (int level = 1; level < config.levels; ++level) {
    for (int block = 0; block < config.blocks_per_level; ++block) {
      const std::string prefix = "res" + std::to_string(level) + "." + std::to_string(block);
      ParamSlice p = params;
      for (auto& [name, t] : p.entries())
        if (name.starts_with(prefix + ".")) t = Tensor(t.shape());
      Tape tape;
      const VarMap vars = bind(tape, p, false);
      const Tensor x = random_tensor({config.channels(level), 5, 4, 3}, level * 10 + block);
      CHECK(backbone::residual_block(tape.constant(x), vars, prefix, 0.01f).value() == x);
    }
  }
}

TEST_CASE("backbone gradient of a scalar loss passes finite differences on 8^3") {
  // Positive inputs, weights and biases >= 0.1 keep every leaky unit on its
  // linear branch, so the loss is affine in each coordinate and a wide step
  // is exact up to f32 rounding. The slope branch is covered per op.
  const BackboneConfig config{3, 4, 1, 0.01};
  const ParamSlice params = backbone::init(config, 11);
  std::vector<Tensor> inputs{random_tensor({2, 8, 8, 8}, 12, 0.0f, 1.0f)};
  std::vector<std::string> names{"pair"};
  for (const auto& [name, t] : params.entries()) {
    names.push_back(name);
    const float fan_in = static_cast<float>(t.size() / t.shape()[0]);
    inputs.push_back(name.ends_with(".b") ? random_tensor(t.shape(), names.size(), 0.1f, 0.2f)
                                          : random_tensor(t.shape(), names.size(), 0.0f, 2.0f / fan_in));
  }
  const Tensor readout = random_tensor({1, 8}, 99, 0.5f, 1.0f);
  const auto report = grad_check(
      "backbone",
      [&](Tape& tape, std::span<const Var> in) {
        VarMap vars;
        for (std::size_t i = 1; i < in.size(); ++i) vars[names[i]] = in[i];
        const Var pooled = ops::global_mean_pool(backbone::extract(in[0], config, vars));
        return ops::affine(tape.constant(readout), tape.constant(Tensor({1})), pooled);
      },
      inputs, names, GradCheckOptions{1e-3, 0.2, 12, 5});
  for (const auto& e : report.inputs) CHECK_MESSAGE(e.passed, e.input << " " << e.max_rel_error);
}
