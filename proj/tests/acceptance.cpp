// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--iterations N] [--snapshot N] [--keep DIR]
//
// Defaults are the pinned settings; the flags only exist for exploring.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "condreg/engine.hpp"
#include "condreg/evaluation.hpp"
#include "condreg/gradsuite.hpp"
#include "condreg/metrics.hpp"
#include "condreg/objectives.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace condreg;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned settings.
constexpr std::uint64_t kDataSeed = 1;
constexpr std::uint64_t kTrainSeed = 0;
constexpr int kIterations = 5000;
constexpr int kSnapshot = 1000;
constexpr double kTrainLr = 5e-5;
constexpr double kTrainMomentum = 0.99;
constexpr int kGradSeeds = 20;
constexpr double kGradTol = 1e-3;
constexpr double kGradBudgetSeconds = 120.0;
constexpr double kA2DetTol = 1e-4;
constexpr double kA4Margin = 0.02;
constexpr double kA4BudgetSeconds = 30 * 60.0;
constexpr int kIoSteps = 50;
constexpr double kA6Gain = 0.01;
constexpr double kA6MaxFolding = 1.0;  // percent
constexpr double kA9IntraGain = 0.10;
constexpr double kA9InterGain = 0.05;
constexpr int kA8Iterations = 100;

int failures = 0;

void report(const char* id, bool pass, const std::string& detail) {
  std::printf("%s %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void info(const std::string& s) {
  std::printf("  %s\n", s.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::map<std::string, std::string> tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).generic_string()] = slurp(e.path());
  return out;
}

std::string checkpoint_bytes(const std::filesystem::path& stem) {
  return slurp(stem.string() + ".json") + "|" + slurp(stem.string() + ".bin");
}

TrainConfig pinned_config(int iterations) {
  TrainConfig c;
  c.iterations = iterations;
  c.optimizer = Optimizer::sgd;
  c.lr = kTrainLr;
  c.momentum = kTrainMomentum;
  c.seed = kTrainSeed;
  c.log_interval = 0;
  return c;
}

void a1() {
  const auto t0 = Clock::now();
  int cases = 0, failed = 0;
  double worst = 0.0;
  std::string worst_op, failed_ops;
  for (const auto& op : gradsuite_ops()) {
    for (int s = 0; s < kGradSeeds; ++s) {
      const GradCheckReport r = check_op(op, s, kGradTol);
      ++cases;
      if (r.max_rel_error() > worst) {
        worst = r.max_rel_error();
        worst_op = op;
      }
      if (!r.passed()) {
        ++failed;
        failed_ops += " " + op + "/" + std::to_string(s);
      }
    }
  }
  const double secs = seconds_since(t0);
  report("A1", failed == 0 && secs < kGradBudgetSeconds,
         fmt("%zu ops x %d seeds, %d failed%s, worst rel err %.2e (%s), tol %.0e, %.1f s (budget %.0f s)",
             gradsuite_ops().size(), kGradSeeds, failed, failed_ops.c_str(), worst, worst_op.c_str(), kGradTol, secs,
             kGradBudgetSeconds));
}

void a2() {
  const Dims dims{9, 8, 7};
  const DisplacementField zero = DisplacementField::zeros(dims);
  const double s0 = metrics::sdlogj(zero), f0 = metrics::folding_fraction(zero);

  std::vector<float> dil(3 * dims.voxels()), refl(3 * dims.voxels());
  for (int d = 0; d < dims.d; ++d)
    for (int w = 0; w < dims.w; ++w)
      for (int h = 0; h < dims.h; ++h) {
        const std::size_t i = dims.index(d, w, h), n = dims.voxels();
        const double x[3] = {double(d), double(w), double(h)};
        for (int c = 0; c < 3; ++c) dil[c * n + i] = static_cast<float>(0.1 * x[c]);
        // d -> (D - 1) - d
        refl[i] = static_cast<float>((dims.d - 1) - 2.0 * d);
      }
  const DisplacementField dilation(Volume(3, dims, {1, 1, 1}, dil)), reflected(Volume(3, dims, {1, 1, 1}, refl));
  const Volume det = metrics::jacobian_det(dilation);
  double worst = 0.0;
  for (int d = 1; d < dims.d - 1; ++d)
    for (int w = 1; w < dims.w - 1; ++w)
      for (int h = 1; h < dims.h - 1; ++h) worst = std::max(worst, std::abs(det.at(0, d, w, h) - 1.331));
  const double fr = metrics::folding_fraction(reflected);
  report("A2", s0 == 0.0 && f0 == 0.0 && worst <= kA2DetTol && fr == 100.0,
         fmt("zero field sdlogj %g folding %g; dilation max |det - 1.331| %.2e (tol %.0e); reflection folding %g%%", s0,
             f0, worst, kA2DetTol, fr));
}

void a3(const std::filesystem::path& dir) {
  bool ok = true;
  std::string detail;
  for (int n = 1; n <= 8; ++n) {
    const Model m = init_model(BackboneConfig{2, 4, 1, 0.01}, n, HeadMode::dynamic, n);
    const auto& w = m.params.at("controller.w");
    ok &= w.shape()[0] == 171 && w.shape()[1] == condition_length(n);
    Tape tape;
    const Var omega = generate_kernels(tape.constant(Tensor({condition_length(n)})), tape.constant(w),
                                       tape.constant(m.params.at("controller.b")));
    ok &= omega.value().size() == 171;
    const DynamicKernels k = DynamicKernels::split(omega);
    std::size_t total = 0;
    for (const Var* v : {&k.w1, &k.b1, &k.w2, &k.b2, &k.w3, &k.b3}) total += v->value().size();
    ok &= total == 171;

    save_checkpoint(ModelState{m}, dir / ("a3_" + std::to_string(n)));
    const auto header = nlohmann::json::parse(slurp(dir / ("a3_" + std::to_string(n) + ".json")));
    const std::size_t count = header.at("parameter_count");
    const std::size_t bb = backbone::init(m.backbone, 0).scalar_count();
    ok &= count == bb + 171 * static_cast<std::size_t>(8 + n + 2) + 171;
    ok &= count == parameter_count(m.backbone, n, HeadMode::dynamic);
    ok &= load_checkpoint(dir / ("a3_" + std::to_string(n))).model.params.scalar_count() == count;
  }
  const Model s = init_model(BackboneConfig{}, 2, HeadMode::fixed, 1);
  ok &= s.params.at("head.omega").size() == 171;
  report("A3", ok, fmt("n_tasks 1..8: controller rows, split size and checkpoint count 171*(8+n+2)+171 + backbone; "
                       "static head holds %zu", s.params.at("head.omega").size()));
}

const AblationRun& run_of(const std::vector<AblationRun>& runs, HeadMode m) {
  for (const auto& r : runs)
    if (r.head == m) return r;
  throw std::logic_error("missing run");
}

double tail_mean(const std::vector<TrainRecord>& h, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (std::size_t i = from; i < to; ++i) s += h[i].loss.total;
  return s / static_cast<double>(to - from);
}

}  // namespace

int main(int argc, char** argv) {
  int iterations = kIterations, snapshot = kSnapshot;
  std::filesystem::path keep;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--iterations") && i + 1 < argc) iterations = std::atoi(argv[++i]);
    else if (!std::strcmp(argv[i], "--snapshot") && i + 1 < argc) snapshot = std::atoi(argv[++i]);
    else if (!std::strcmp(argv[i], "--keep") && i + 1 < argc) keep = argv[++i];
    else {
      std::fprintf(stderr, "usage: acceptance [--iterations N] [--snapshot N] [--keep DIR]\n");
      return 2;
    }
  }
  if (iterations != kIterations || snapshot != kSnapshot)
    std::printf("note: non-pinned run (iterations %d, snapshot %d)\n", iterations, snapshot);

  testutil::TempDir tmp("acceptance");
  const std::filesystem::path dir = keep.empty() ? tmp.path() : keep;
  std::filesystem::create_directories(dir);

  a1();
  a2();
  a3(dir);

  // Shared benchmark: the default two tasks plus the held-out family.
  const synth::Manifest man = synth::make_benchmark(synth::unseen_benchmark(), kDataSeed, dir / "bench");
  const TaskRegistry reg = man.registry();
  EvalOptions eval;
  eval.tasks = {"abdomen", "liver"};
  eval.threads = threads_from_env();

  const auto t4 = Clock::now();
  const std::vector<AblationRun> runs =
      run_ablation(pinned_config(iterations), man, reg, {HeadMode::dynamic, HeadMode::fixed}, snapshot, eval);
  const double secs4 = seconds_since(t4);
  const AblationRun& dyn = run_of(runs, HeadMode::dynamic);
  const AblationRun& sta = run_of(runs, HeadMode::fixed);
  if (!keep.empty()) {
    save_checkpoint(dyn.state, dir / "dynamic");
    save_checkpoint(sta.state, dir / "static");
    std::ofstream(dir / "ablation.json") << to_json(runs).dump(2) << "\n";
  }
  for (const AblationRun* r : {&dyn, &sta})
    for (const auto& t : r->final.tasks)
      info(fmt("%-7s %-7s dsc %.4f (baseline %.4f, at snapshot %.4f) folding %.3f%% sdlogj %.4f",
               r == &dyn ? "dynamic" : "static", t.task.c_str(), t.mean_dice, t.baseline_dice,
               r->snapshot ? r->snapshot->task(t.task).mean_dice : NAN, t.folding_pct, t.sdlogj));
  {
    const double gap = dyn.final.mean_dice - sta.final.mean_dice;
    const bool have = dyn.snapshot && sta.snapshot;
    const double dyn_gain = have ? dyn.final.mean_dice - dyn.snapshot->mean_dice : NAN;
    const double sta_gain = have ? sta.final.mean_dice - sta.snapshot->mean_dice : NAN;
    report("A4", have && gap >= kA4Margin && sta_gain <= dyn_gain && secs4 < kA4BudgetSeconds,
           fmt("mean DSC dynamic %.4f vs static %.4f (gap %+.4f, need >= %.2f); gain %d->%d: static %+.4f, dynamic "
               "%+.4f (static must not exceed dynamic); %.1f min (budget %.0f)",
               dyn.final.mean_dice, sta.final.mean_dice, gap, kA4Margin, snapshot, iterations, sta_gain, dyn_gain,
               secs4 / 60, kA4BudgetSeconds / 60));
  }
  {
    const auto& h = dyn.history;
    if (h.size() >= 150) {
      const double early = tail_mean(h, 0, 50), late = tail_mean(h, h.size() - 100, h.size());
      info(fmt("dynamic training loss: mean of first 50 iterations %.4f, last 100 %.4f", early, late));
    }
  }

  // A5: swap the task ID of each task for the other's.
  {
    bool ok = true;
    std::string detail;
    const std::map<std::string, std::string> swap = {{"abdomen", "liver"}, {"liver", "abdomen"}};
    for (const auto& [task, other] : swap) {
      EvalOptions o = eval;
      o.tasks = {task};
      o.task_override = other;
      const double swapped = evaluate_split(dyn.state.model, man, reg, o).task(task).mean_dice;
      const double matched = dyn.final.task(task).mean_dice;
      ok &= matched >= swapped;
      detail += fmt("%s matched %.4f vs %s ID %.4f; ", task.c_str(), matched, other.c_str(), swapped);
    }
    report("A5", ok, detail + "matched must be >= swapped per task");
  }

  // A6: held-out family, plain inference vs instance optimization.
  {
    EvalOptions o = eval;
    o.tasks = {"lung"};
    const EvalSummary plain = evaluate_split(dyn.state.model, man, reg, o);
    o.io_steps = kIoSteps;
    const EvalSummary io = evaluate_split(dyn.state.model, man, reg, o);
    const TaskSummary &p = plain.task("lung"), &q = io.task("lung");
    int non_increasing = 0;
    for (const auto& r : io.pairs) non_increasing += *r.io_final_loss <= *r.io_initial_loss;
    info(fmt("lung IO: final loss <= initial on %d/%zu pairs", non_increasing, io.pairs.size()));
    report("A6", q.mean_dice - p.mean_dice >= kA6Gain && q.folding_pct < kA6MaxFolding,
           fmt("lung DSC baseline %.4f, infer %.4f, infer+IO(%d) %.4f (gain %+.4f, need >= %.2f); IO folding %.3f%% "
               "(need < %.0f%%)",
               p.baseline_dice, p.mean_dice, kIoSteps, q.mean_dice, q.mean_dice - p.mean_dice, kA6Gain, q.folding_pct,
               kA6MaxFolding));
  }

  // A7: one fixed pair, IO under each lambda.
  {
    const synth::LoadedPair pair = synth::load_pair(man, *man.select("lung", "test")[0]);
    TaskDescriptor task = reg.find("lung");
    bool ok = true;
    double prev = INFINITY;
    std::string detail;
    for (double lambda : {0.05, 0.1, 1.0, 10.0}) {
      task.lambda_prior = lambda;
      IoOptions io;
      io.steps = kIoSteps;
      const IoResult r = instance_optimize(dyn.state.model, task, pair.fixed, pair.moving, io);
      Tape tape;
      const double reg_value =
          objectives::diffusion_reg(objectives::normalized_field(tape.constant(Tensor::from_volume(r.field.components()))))
              .value()[0];
      ok &= reg_value <= prev;
      prev = reg_value;
      detail += fmt("lambda %g reg %.4e; ", lambda, reg_value);
    }
    report("A7", ok, detail + "must be non-increasing");
  }

  // A8: determinism and persistence.
  {
    const TrainConfig c = pinned_config(kA8Iterations);
    const TrainResult r1 = train(c, man, reg), r2 = train(c, man, reg);
    save_checkpoint(r1.state, dir / "a8_one");
    save_checkpoint(r2.state, dir / "a8_two");
    const bool same_train = checkpoint_bytes(dir / "a8_one") == checkpoint_bytes(dir / "a8_two");
    save_checkpoint(load_checkpoint(dir / "a8_one"), dir / "a8_back");
    const bool round = checkpoint_bytes(dir / "a8_one") == checkpoint_bytes(dir / "a8_back");
    synth::make_benchmark(synth::unseen_benchmark(), kDataSeed, dir / "bench_again");
    const bool regen = tree(dir / "bench") == tree(dir / "bench_again");
    std::filesystem::remove_all(dir / "bench_again");
    report("A8", same_train && round && regen,
           fmt("two %d-iteration runs bitwise equal: %s; save/load/save bitwise equal: %s; benchmark regenerates "
               "byte-identically: %s",
               kA8Iterations, same_train ? "yes" : "no", round ? "yes" : "no", regen ? "yes" : "no"));
  }

  // A9: learning sanity on the dynamic model.
  {
    const TaskSummary &intra = dyn.final.task("liver"), &inter = dyn.final.task("abdomen");
    const double gi = intra.mean_dice - intra.baseline_dice, ge = inter.mean_dice - inter.baseline_dice;
    report("A9", gi >= kA9IntraGain && ge >= kA9InterGain,
           fmt("intra (liver) %.4f -> %.4f (%+.4f, need >= %.2f); inter (abdomen) %.4f -> %.4f (%+.4f, need >= %.2f)",
               intra.baseline_dice, intra.mean_dice, gi, kA9IntraGain, inter.baseline_dice, inter.mean_dice, ge,
               kA9InterGain));
  }

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
