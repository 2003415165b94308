#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "condreg/error.hpp"
#include "condreg/metrics.hpp"
#include "condreg/synthdata.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace condreg;
using namespace condreg::synth;

namespace {

TaskSpec intra_spec(double sigma, double amplitude) {
  TaskSpec s = default_benchmark().tasks[1];
  s.sigma = sigma;
  s.amplitude = amplitude;
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::set<std::uint16_t> classes(const LabelMap& m) { return {m.labels().begin(), m.labels().end()}; }

}  // namespace

TEST_CASE("Rng is reproducible and roughly uniform") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 10; ++i) CHECK(a.next() == b.next());
  CHECK(Rng(42).next() != c.next());
  Rng r(1);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z, sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.05));
  CHECK(pair_key(1, 0, 0, 0) != pair_key(1, 0, 1, 0));
  CHECK(pair_key(1, 0, 0, 1) != pair_key(1, 1, 0, 0));
}

TEST_CASE("smooth approximates a gaussian of the requested sigma") {
  const Dims dims{41, 41, 41};
  for (double sigma : {2.0, 4.0}) {
    std::vector<float> g(dims.voxels(), 0.0f);
    g[dims.index(20, 20, 20)] = 1.0f;
    smooth(g, dims, sigma);
    // Impulse response along d through the center, normalized.
    double mass = 0.0, var = 0.0;
    for (int d = 0; d < 41; ++d) {
      double m = 0.0;
      for (int w = 0; w < 41; ++w)
        for (int h = 0; h < 41; ++h) m += g[dims.index(d, w, h)];
      mass += m;
      var += m * (d - 20) * (d - 20);
    }
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(std::sqrt(var / mass) == doctest::Approx(sigma).epsilon(0.15));
  }
  std::vector<float> flat(dims.voxels(), 0.3f);
  smooth(flat, dims, 3.0);
  CHECK(std::all_of(flat.begin(), flat.end(), [](float v) { return std::abs(v - 0.3f) < 1e-6f; }));
}

TEST_CASE("intra pair with zero amplitude") {
  TaskSpec spec = intra_spec(4.0, 0.0);
  const PairSample p = gen_intra_pair(spec, 3);
  REQUIRE(p.gt_field);
  CHECK(std::all_of(p.gt_field->data().begin(), p.gt_field->data().end(), [](float v) { return v == 0.0f; }));
  CHECK(p.fixed_mask == p.moving_mask);
  // Outside the structures only noise separates the two sides.
  double worst = 0.0;
  for (std::size_t i = 0; i < p.fixed.data().size(); ++i)
    if (p.fixed_mask.labels()[i] == 0) worst = std::max(worst, double(std::abs(p.fixed.data()[i] - p.moving.data()[i])));
  CHECK(worst < 6.0 * std::sqrt(2.0) * spec.noise + 0.05);
}

TEST_CASE("intra fields are fold-free") {
  for (const TaskSpec& spec : {intra_spec(4.0, 3.0), default_benchmark().tasks[1], unseen_task()}) {
    for (int seed = 0; seed < 4; ++seed) {
      const PairSample p = gen_intra_pair(spec, seed);
      CHECK(metrics::folding_fraction(*p.gt_field) == 0.0);
      CHECK(min_interior_det(*p.gt_field) > 0.1);
      CHECK(classes(p.fixed_mask) == classes(p.moving_mask));
    }
  }
  TaskSpec wild = intra_spec(1.0, 40.0);
  CHECK_THROWS_AS(gen_intra_pair(wild, 1), ValidationError);
}

TEST_CASE("ground-truth warp reproduces the fixed mask") {
  const TaskSpec spec = intra_spec(4.0, 3.0);
  double total = 0.0;
  for (int seed = 0; seed < 10; ++seed) {
    const PairSample p = gen_intra_pair(spec, 100 + seed);
    total += metrics::evaluate(*p.gt_field, &p.fixed_mask, &p.moving_mask).mean_dice;
  }
  CHECK(total / 10 > 0.9);
}

TEST_CASE("inter pairs overlap partially") {
  const TaskSpec spec = default_benchmark().tasks[0];
  for (int seed = 0; seed < 20; ++seed) {
    const PairSample p = gen_inter_pair(spec, seed);
    CHECK_FALSE(p.gt_field);
    const double dsc = metrics::evaluate(DisplacementField::zeros(spec.dims), &p.fixed_mask, &p.moving_mask).mean_dice;
    CHECK(dsc > 0.0);
    CHECK(dsc < 1.0);
    CHECK(classes(p.fixed_mask) == classes(p.moving_mask));
    for (float v : p.fixed.data()) REQUIRE(std::abs(v) <= 1.0f);
  }
  const PairSample a = gen_inter_pair(spec, 7), b = gen_inter_pair(spec, 7);
  CHECK(a.fixed == b.fixed);
  CHECK(a.moving_mask == b.moving_mask);
  CHECK_THROWS_AS(gen_inter_pair(default_benchmark().tasks[1], 1), ValidationError);
}

TEST_CASE("benchmark spec parsing") {
  const BenchmarkSpec def = default_benchmark();
  const BenchmarkSpec round = parse_benchmark_spec(to_json_text(def));
  REQUIRE(round.tasks.size() == 2);
  CHECK(round.tasks[0].reg_type == RegType::inter);
  CHECK(round.tasks[1].reg_type == RegType::intra);
  CHECK(round.tasks[1].lambda == 10.0);
  CHECK(round.tasks[0].lambda == 0.1);
  CHECK_THROWS_AS(parse_benchmark_spec(R"({"tasks":[{"name":"a"}],"counts":{"train":0}})"), ValidationError);
  CHECK_THROWS_AS(parse_benchmark_spec(R"({"tasks":[{"name":"a","family":"cube"}]})"), ValidationError);
  CHECK_THROWS_AS(parse_benchmark_spec("{"), ValidationError);
}

TEST_CASE("make_benchmark writes a reproducible manifest") {
  BenchmarkSpec spec = default_benchmark();
  for (auto& t : spec.tasks) t.dims = {12, 12, 12};
  spec.counts = {3, 1, 2};
  testutil::TempDir a("bench_a"), b("bench_b");
  const Manifest m = make_benchmark(spec, 5, a.path());
  make_benchmark(spec, 5, b.path());
  CHECK(m.pairs.size() == 2 * (3 + 1 + 2));

  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    CHECK_MESSAGE(slurp(entry.path()) == slurp(b.path() / rel), rel.string());
  }

  // Disjoint streams: no fixed volume repeats across splits.
  std::set<std::string> seen;
  for (const auto& p : m.pairs) CHECK(seen.insert(slurp(a.path() / (p.fixed.string() + ".bin"))).second);

  const Manifest loaded = load_manifest(a.path());
  CHECK(loaded.pairs.size() == m.pairs.size());
  CHECK(loaded.select("liver", "train").size() == 3);
  const LoadedPair lp = load_pair(loaded, *loaded.select("liver", "test")[0]);
  CHECK(lp.gt_field);
  CHECK(lp.fixed_mask);
  CHECK_FALSE(load_pair(loaded, *loaded.select("abdomen", "val")[0]).gt_field);

  const TaskRegistry reg = TaskRegistry::load(a.path() / "registry.json");
  CHECK(reg.n_tasks() == 2);
  CHECK(reg.find("liver").lambda_prior == 10.0);
  CHECK(reg.find("abdomen").dice_weight == 1.0);
}

TEST_CASE("held-out task gets no training pairs and leaves the others unchanged") {
  BenchmarkSpec base = default_benchmark(), with = unseen_benchmark();
  for (auto* s : {&base, &with}) {
    for (auto& t : s->tasks) t.dims = {10, 10, 10};
    s->counts = {2, 1, 2};
  }
  testutil::TempDir a("held_a"), b("held_b");
  make_benchmark(base, 3, a.path());
  const Manifest m = make_benchmark(with, 3, b.path());
  CHECK(m.select("lung", "train").empty());
  CHECK(m.select("lung", "test").size() == 2);
  CHECK(m.select("abdomen", "train").size() == 2);
  for (const auto& p : m.pairs)
    if (p.task != "lung") CHECK(slurp(a.path() / (p.moving.string() + ".bin")) == slurp(b.path() / (p.moving.string() + ".bin")));
  const TaskRegistry reg = m.registry();
  CHECK(reg.n_tasks() == 2);
  CHECK(reg.find("lung").task_index == reg.find("liver").task_index);
  CHECK(parse_benchmark_spec(to_json_text(with)).tasks[2].held_out);
}
