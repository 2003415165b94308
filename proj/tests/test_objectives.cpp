#include <cmath>
#include <random>

#include "condreg/error.hpp"
#include "condreg/gradcheck.hpp"
#include "condreg/objectives.hpp"
#include "condreg/ops.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace condreg;
using testutil::random_tensor;

namespace {

Volume random_image(Dims dims, std::uint64_t seed) { return random_tensor({1, dims.d, dims.w, dims.h}, seed).to_volume(); }

LabelMap cube_mask(Dims dims, int d0, int w0, int h0, int size, int classes = 2) {
  std::vector<std::uint16_t> l(dims.voxels(), 0);
  for (int d = d0; d < d0 + size; ++d)
    for (int w = w0; w < w0 + size; ++w)
      for (int h = h0; h < h0 + size; ++h) l[dims.index(d, w, h)] = 1;
  return LabelMap(dims, {1, 1, 1}, l, classes);
}

double loss_value(Var v) { return v.value().item(); }

}  // namespace

TEST_CASE("ncc_loss examples") {
  const Dims dims{9, 9, 9};
  const Volume a = random_image(dims, 1);
  CHECK(objectives::ncc_loss(a, a, 5) < 1e-3);

  std::vector<float> mapped(a.data().begin(), a.data().end());
  for (float& x : mapped) x = 2.0f * x + 1.0f;
  CHECK(objectives::ncc_loss(a, Volume(1, dims, {1, 1, 1}, mapped), 5) < 1e-3);

  // Independent noise: the squared correlation over ~125-sample windows is
  // small, so the loss stays near 1.
  double worst = 1.0;
  for (int seed = 0; seed < 20; ++seed) {
    worst = std::min(worst, objectives::ncc_loss(random_image(dims, 100 + seed), random_image(dims, 200 + seed), 5));
  }
  CHECK(worst > 0.8);

  CHECK_THROWS_AS(objectives::ncc_loss(a, random_image({9, 9, 8}, 2), 5), ValidationError);
  CHECK_THROWS_AS(objectives::ncc_loss(a, a, 4), ValidationError);
}

TEST_CASE("ncc_loss is symmetric and bounded") {
  for (int seed = 0; seed < 5; ++seed) {
    const Volume a = random_image({6, 7, 5}, seed);
    const Volume b = random_image({6, 7, 5}, 50 + seed);
    const double ab = objectives::ncc_loss(a, b, 3);
    CHECK(ab == doctest::Approx(objectives::ncc_loss(b, a, 3)).epsilon(1e-6));
    CHECK(ab >= -1e-6);
    CHECK(ab <= 1.0 + 1e-6);
  }
  // Constant windows contribute zero correlation through the epsilon guard.
  const Volume flat(1, {4, 4, 4}, {1, 1, 1}, std::vector<float>(64, 0.25f));
  CHECK(objectives::ncc_loss(flat, random_image({4, 4, 4}, 3), 3) == doctest::Approx(1.0));
}

TEST_CASE("diffusion_reg examples") {
  const Dims dims{3, 3, 3};
  CHECK(objectives::diffusion_reg(DisplacementField(Volume(3, dims, {1, 1, 1}, std::vector<float>(81, 0.7f)))) == 0.0);

  std::vector<float> ramp(81, 0.0f);
  for (int d = 0; d < 3; ++d)
    for (int w = 0; w < 3; ++w)
      for (int h = 0; h < 3; ++h) ramp[dims.index(d, w, h)] = static_cast<float>(d);
  const DisplacementField f(Volume(3, dims, {1, 1, 1}, ramp));
  // Axis d: 18 unit steps among 3 components x 18 positions; other axes 0.
  CHECK(objectives::diffusion_reg(f) == doctest::Approx(1.0 / 3.0));

  const Tensor t = random_tensor({3, 4, 5, 3}, 4);
  Tensor twice(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) twice[i] = 2.0f * t[i];
  const double base = objectives::diffusion_reg(DisplacementField(t.to_volume()));
  CHECK(objectives::diffusion_reg(DisplacementField(twice.to_volume())) == doctest::Approx(4.0 * base));
}

TEST_CASE("diffusion_reg is exactly translation invariant") {
  // Dyadic samples keep u + c exact in float.
  std::mt19937 rng(3);
  std::uniform_int_distribution<int> q(-64, 64);
  Tensor t({3, 4, 4, 4});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = q(rng) / 32.0f;
  Tensor shifted(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) shifted[i] = t[i] + (i < 64 ? 3.0f : i < 128 ? -1.5f : 0.25f);
  CHECK(objectives::diffusion_reg(DisplacementField(t.to_volume())) ==
        objectives::diffusion_reg(DisplacementField(shifted.to_volume())));
}

TEST_CASE("dice_loss examples") {
  const Dims dims{6, 6, 6};
  Tape tape;
  const LabelMap a = cube_mask(dims, 1, 1, 1, 2);
  CHECK(loss_value(objectives::dice_loss(tape.constant(objectives::one_hot(a)), a)) == doctest::Approx(0.0).epsilon(1e-6));
  const LabelMap far = cube_mask(dims, 4, 4, 4, 2);
  CHECK(loss_value(objectives::dice_loss(tape.constant(objectives::one_hot(far)), a)) == doctest::Approx(1.0).epsilon(1e-5));
  // Two 2x2x2 cubes offset by one voxel along h share 4 voxels.
  const LabelMap half = cube_mask(dims, 1, 1, 2, 2);
  std::size_t overlap = 0;
  for (std::size_t i = 0; i < dims.voxels(); ++i) overlap += a.labels()[i] == 1 && half.labels()[i] == 1;
  REQUIRE(overlap == 4);
  CHECK(loss_value(objectives::dice_loss(tape.constant(objectives::one_hot(half)), a)) == doctest::Approx(0.5).epsilon(1e-5));
  CHECK_THROWS_AS(objectives::dice_loss(tape.constant(objectives::one_hot(cube_mask(dims, 1, 1, 1, 2, 3))), a),
                  ValidationError);
}

TEST_CASE("total_loss combines terms with the task lambda") {
  const TaskRegistry registry({{"HeadNeck", 0, 1, RegType::inter, 0.05, 0.0},
                               {"Chest", 1, 1, RegType::inter, 1.0, 0.0},
                               {"Abdomen", 2, 1, RegType::inter, 0.1, 1.0},
                               {"Liver", 3, 1, RegType::intra, 10.0, 1.0}});
  const Dims dims{6, 6, 6};
  const Tensor img = random_tensor({1, 6, 6, 6}, 1);
  const Tensor field = random_tensor({3, 6, 6, 6}, 2, -0.5f, 0.5f);
  const LabelMap fm = cube_mask(dims, 1, 1, 1, 3), mm = cube_mask(dims, 2, 1, 1, 3);

  for (const char* name : {"HeadNeck", "Chest", "Abdomen", "Liver"}) {
    const TaskDescriptor& task = registry.find(name);
    Tape tape;
    const auto terms = objectives::total_loss(tape.constant(img), tape.constant(img), &fm, &mm, tape.constant(field), task);
    CHECK(terms.report.lambda_used == task.lambda_prior);
    const auto& r = terms.report;
    CHECK(std::abs(r.total - (r.sim + r.lambda_used * r.reg + r.dice_weight * r.dice)) < 1e-6);
    CHECK(terms.total.value().item() == doctest::Approx(r.total).epsilon(1e-5));
  }
  CHECK(registry.find("Liver").lambda_prior == 10.0);
  CHECK(registry.find("HeadNeck").lambda_prior == 0.05);

  Tape tape;
  const auto zero = objectives::total_loss(tape.constant(img), tape.constant(img), nullptr, nullptr,
                                           tape.constant(Tensor::feature_map(3, dims)), registry.find("Chest"));
  CHECK(zero.report.total < 1e-3);
  CHECK_THROWS_AS(objectives::total_loss(tape.constant(img), tape.constant(img), nullptr, nullptr, tape.constant(field),
                                         registry.find("Liver")),
                  ValidationError);
}

TEST_CASE("total_loss takes the regularizer in grid coordinates") {
  // u_d = d on a (5, 9, 3) grid: the voxel-unit value is 1/3, and the d
  // component scales by 2 / (5 - 1) = 1/2, so the reported reg is 1/12.
  const Dims dims{5, 9, 3};
  auto ramp_on = [&](int component) {
    Tensor t({3, 5, 9, 3});
    for (int d = 0; d < 5; ++d)
      for (std::size_t i = 0; i < 9 * 3; ++i) t[component * dims.voxels() + d * 27 + i] = static_cast<float>(d);
    return t;
  };
  const Tensor img = random_tensor({1, 5, 9, 3}, 7);
  const TaskDescriptor task{"t", 0, 1, RegType::intra, 1.0, 0.0};
  auto reported = [&](const Tensor& field) {
    Tape tape;
    return objectives::total_loss(tape.constant(img), tape.constant(img), nullptr, nullptr, tape.constant(field), task)
        .report.reg;
  };
  const Tensor ud = ramp_on(0);
  CHECK(objectives::diffusion_reg(DisplacementField(ud.to_volume())) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  CHECK(reported(ud) == doctest::Approx(1.0 / 12.0).epsilon(1e-6));
  // the h component: 2 / (3 - 1) = 1, value unchanged
  CHECK(reported(ramp_on(2)) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("total_loss is monotone in lambda when reg > 0") {
  const Tensor img = random_tensor({1, 5, 5, 5}, 3);
  const Tensor field = random_tensor({3, 5, 5, 5}, 4, -0.5f, 0.5f);
  double prev = -1.0;
  for (double lambda : {0.0, 0.05, 0.1, 1.0, 10.0}) {
    Tape tape;
    TaskDescriptor t{"t", 0, 1, RegType::intra, lambda, 0.0};
    const double total =
        objectives::total_loss(tape.constant(img), tape.constant(img), nullptr, nullptr, tape.constant(field), t).report.total;
    CHECK(total > prev);
    prev = total;
  }
}

TEST_CASE("loss gradients pass finite-difference checks") {
  // Scalar losses are stored in f32; a wider step keeps rounding out of the
  // difference quotient.
  const GradCheckOptions opt{1e-3, 1e-2, 0, 7};
  const auto ncc = grad_check(
      "ncc_loss", [](Tape&, std::span<const Var> in) { return objectives::ncc_loss(in[0], in[1], 3); },
      {random_tensor({1, 5, 5, 5}, 1), random_tensor({1, 5, 5, 5}, 2)}, {"a", "b"}, opt);
  CHECK_MESSAGE(ncc.passed(), ncc.max_rel_error());
  const auto reg = grad_check(
      "diffusion_reg", [](Tape&, std::span<const Var> in) { return objectives::diffusion_reg(in[0]); },
      {random_tensor({3, 5, 5, 5}, 3)}, {"field"}, opt);
  CHECK_MESSAGE(reg.passed(), reg.max_rel_error());
  const auto nreg = grad_check(
      "normalized reg",
      [](Tape&, std::span<const Var> in) { return objectives::diffusion_reg(objectives::normalized_field(in[0])); },
      {random_tensor({3, 5, 4, 3}, 5)}, {"field"}, opt);
  CHECK_MESSAGE(nreg.passed(), nreg.max_rel_error());
  const LabelMap fixed = cube_mask({5, 5, 5}, 1, 1, 1, 3, 3);
  const auto dice = grad_check(
      "dice_loss", [&](Tape&, std::span<const Var> in) { return objectives::dice_loss(in[0], fixed); },
      {random_tensor({3, 5, 5, 5}, 4, 0.0f, 1.0f)}, {"warped_mask"}, opt);
  CHECK_MESSAGE(dice.passed(), dice.max_rel_error());
}
