#include <cmath>
#include <random>

#include "condreg/error.hpp"
#include "condreg/metrics.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace condreg;
using namespace condreg::metrics;

namespace {

DisplacementField make_field(Dims dims, const std::function<std::array<double, 3>(int, int, int)>& fn) {
  std::vector<float> u(3 * dims.voxels());
  for (int d = 0; d < dims.d; ++d)
    for (int w = 0; w < dims.w; ++w)
      for (int h = 0; h < dims.h; ++h) {
        const auto v = fn(d, w, h);
        for (int c = 0; c < 3; ++c) u[c * dims.voxels() + dims.index(d, w, h)] = static_cast<float>(v[c]);
      }
  return DisplacementField(Volume(3, dims, {1, 1, 1}, std::move(u)));
}

LabelMap mask_from(Dims dims, const std::function<int(int, int, int)>& fn, int classes = 2) {
  std::vector<std::uint16_t> l(dims.voxels());
  for (int d = 0; d < dims.d; ++d)
    for (int w = 0; w < dims.w; ++w)
      for (int h = 0; h < dims.h; ++h) l[dims.index(d, w, h)] = static_cast<std::uint16_t>(fn(d, w, h));
  return LabelMap(dims, {1, 1, 1}, std::move(l), classes);
}

}  // namespace

TEST_CASE("dice_score examples") {
  const Dims dims{4, 4, 4};
  const auto a = mask_from(dims, [](int d, int w, int h) { return d < 2 && w < 2 && h < 2; });
  CHECK(dice_score(a, a, 1) == 1.0);
  const auto far = mask_from(dims, [](int d, int w, int h) { return d >= 2 && w >= 2 && h >= 2; });
  CHECK(dice_score(a, far, 1) == 0.0);
  const auto shifted = mask_from(dims, [](int d, int w, int h) { return d < 2 && w < 2 && h >= 1 && h < 3; });
  CHECK(dice_score(a, shifted, 1) == 0.5);
  const auto empty = mask_from(dims, [](int, int, int) { return 0; });
  CHECK(dice_score(empty, empty, 1) == 1.0);
  CHECK(dice_score(a, empty, 1) == 0.0);
  CHECK_THROWS_AS(dice_score(a, mask_from({4, 4, 3}, [](int, int, int) { return 0; }), 1), ValidationError);
}

TEST_CASE("jacobian_det analytic cases") {
  const Dims dims{6, 5, 7};
  const Volume identity = jacobian_det(DisplacementField::zeros(dims));
  CHECK(std::all_of(identity.data().begin(), identity.data().end(), [](float v) { return v == 1.0f; }));

  const auto dilation = make_field(dims, [](int d, int w, int h) { return std::array<double, 3>{0.1 * d, 0.1 * w, 0.1 * h}; });
  const Volume jd = jacobian_det(dilation);
  for (int d = 1; d < dims.d - 1; ++d)
    for (int w = 1; w < dims.w - 1; ++w)
      for (int h = 1; h < dims.h - 1; ++h) CHECK(jd.at(0, d, w, h) == doctest::Approx(1.331).epsilon(1e-5));

  const auto reflect = make_field(dims, [](int d, int, int) { return std::array<double, 3>{-2.0 * d, 0, 0}; });
  const Volume jr = jacobian_det(reflect);
  CHECK(jr.at(0, 2, 2, 2) == doctest::Approx(-1.0));
  CHECK(folding_fraction(reflect) == 100.0);
  CHECK_THROWS_AS(jacobian_det(DisplacementField::zeros({2, 5, 5})), ValidationError);
}

TEST_CASE("sdlogj examples") {
  const Dims dims{6, 6, 6};
  CHECK(sdlogj(DisplacementField::zeros(dims)) == 0.0);
  CHECK(folding_fraction(DisplacementField::zeros(dims)) == 0.0);
  const auto dilation = make_field(dims, [](int d, int w, int h) { return std::array<double, 3>{0.1 * d, 0.1 * w, 0.1 * h}; });
  CHECK(sdlogj(dilation) == doctest::Approx(0.0).scale(1.0).epsilon(1e-6));

  // u_h = s(d) * h gives det = 1 + s(d): interior d in {1,2} at det 1 and
  // d in {3,4} at det e.
  const double s = std::exp(1.0) - 1.0;
  const auto split = make_field(dims, [&](int d, int, int h) { return std::array<double, 3>{0, 0, d >= 3 ? s * h : 0.0}; });
  const Volume det = jacobian_det(split);
  std::vector<double> logs;
  for (int d = 1; d < 5; ++d)
    for (int w = 1; w < 5; ++w)
      for (int h = 1; h < 5; ++h) logs.push_back(std::log(det.at(0, d, w, h)));
  double mean = 0, var = 0;
  for (double v : logs) mean += v;
  mean /= logs.size();
  for (double v : logs) var += (v - mean) * (v - mean);
  const double oracle = std::sqrt(var / logs.size());
  CHECK(oracle == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(sdlogj(split) == doctest::Approx(oracle).epsilon(1e-6));
}

TEST_CASE("folding fraction of a folded octant") {
  // Interior 9^3 of an 11^3 grid. u_h = m(d, w) * g(h) with g(h) = -2h up to
  // h = 4 and flat after, so det = 1 + m * g'(h) is <= 0 exactly inside the
  // octant d, w, h in [1, 4].
  const Dims dims{11, 11, 11};
  auto g = [](int h) { return h <= 4 ? -2.0 * h : -8.0; };
  const auto field = make_field(dims, [&](int d, int w, int h) {
    return std::array<double, 3>{0, 0, (d <= 4 && w <= 4) ? g(h) : 0.0};
  });
  const Volume det = jacobian_det(field);
  std::size_t folded = 0;
  for (int d = 1; d < 10; ++d)
    for (int w = 1; w < 10; ++w)
      for (int h = 1; h < 10; ++h) folded += det.at(0, d, w, h) <= 0.0f;
  CHECK(folded == 64);
  CHECK(folding_fraction(field) == doctest::Approx(100.0 * 64.0 / 729.0));
}

TEST_CASE("metric invariants") {
  std::mt19937 rng(9);
  std::uniform_int_distribution<int> q(-40, 40);
  const Dims dims{5, 6, 5};
  const auto field = make_field(dims, [&](int, int, int) { return std::array<double, 3>{q(rng) / 64.0, q(rng) / 64.0, q(rng) / 64.0}; });
  std::vector<float> shifted(field.data().begin(), field.data().end());
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += (i < dims.voxels() ? 2.0f : -1.0f);
  const DisplacementField translated(Volume(3, dims, {1, 1, 1}, shifted));
  CHECK(jacobian_det(field) == jacobian_det(translated));
  CHECK(sdlogj(field) >= 0.0);

  const auto labels = mask_from(dims, [](int d, int w, int h) { return (d + w + h) % 3; }, 3);
  CHECK(warp_labels(labels, DisplacementField::zeros(dims)) == labels);
}

TEST_CASE("field_error examples") {
  const Dims dims{4, 4, 4};
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(-2, 2);
  const auto a = make_field(dims, [&](int, int, int) { return std::array<double, 3>{u(rng), u(rng), u(rng)}; });
  const auto b = make_field(dims, [&](int, int, int) { return std::array<double, 3>{u(rng), u(rng), u(rng)}; });
  CHECK(field_error(a, a) == 0.0);
  std::vector<float> plus(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < dims.voxels(); ++i) plus[i] += 1.0f;
  CHECK(field_error(DisplacementField(Volume(3, dims, {1, 1, 1}, plus)), a) == doctest::Approx(1.0).epsilon(1e-6));

  double sum = 0.0;
  for (int d = 0; d < 4; ++d)
    for (int w = 0; w < 4; ++w)
      for (int h = 0; h < 4; ++h) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c) s += std::pow(double(a.at(c, d, w, h)) - b.at(c, d, w, h), 2);
        sum += std::sqrt(s);
      }
  CHECK(field_error(a, b) == doctest::Approx(sum / 64.0).epsilon(1e-12));
  CHECK_THROWS_AS(field_error(a, DisplacementField::zeros({4, 4, 5})), ValidationError);
}

TEST_CASE("evaluate fills an EvalReport") {
  const Dims dims{6, 6, 6};
  const auto fixed = mask_from(dims, [](int d, int w, int h) { return (d < 3 && w < 3 && h < 3) ? 1 : (d > 3 ? 2 : 0); }, 3);
  const auto report = evaluate(DisplacementField::zeros(dims), &fixed, &fixed);
  CHECK(report.dice.size() == 2);
  CHECK(report.mean_dice == 1.0);
  CHECK(report.sdlogj == 0.0);
  CHECK(report.folding_pct == 0.0);
  CHECK(report.interior_voxels == 64);
  const auto j = to_json(report);
  CHECK(j["mean_dice"] == 1.0);
  CHECK(j["tre"].is_null());
}
