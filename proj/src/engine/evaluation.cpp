#include "condreg/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "condreg/error.hpp"
#include "condreg/log.hpp"

namespace condreg {

using nlohmann::json;

const TaskSummary& EvalSummary::task(const std::string& name) const {
  for (const auto& t : tasks)
    if (t.task == name) return t;
  throw ValidationError("no summary for task '" + name + "'");
}

int threads_from_env() {
  const char* v = std::getenv("CONDREG_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) {
    warn("ignoring CONDREG_THREADS='" + std::string(v) + "' (expected a positive integer)");
    return 1;
  }
  return static_cast<int>(std::min<long>(n, 256));
}

namespace {

PairResult evaluate_pair(const Model& model, const synth::Manifest& manifest, const synth::PairEntry& e,
                         const TaskDescriptor& task, const EvalOptions& options) {
  const synth::LoadedPair p = synth::load_pair(manifest, e);
  PairResult r;
  r.task = e.task;
  r.index = e.index;
  r.task_index_used = task.task_index;
  DisplacementField field;
  if (options.io_steps > 0) {
    IoOptions io = options.io;
    io.steps = options.io_steps;
    IoResult res = instance_optimize(model, task, p.fixed, p.moving, io);
    r.io_initial_loss = res.initial_loss;
    r.io_final_loss = res.final_loss;
    r.io_warning = res.warning;
    field = std::move(res.field);
  } else {
    field = register_pair(p.fixed, p.moving, task, model).field;
  }
  const bool masks = p.fixed_mask && p.moving_mask;
  const DisplacementField* truth = p.gt_field ? &*p.gt_field : nullptr;
  r.report = metrics::evaluate(field, masks ? &*p.fixed_mask : nullptr, masks ? &*p.moving_mask : nullptr, truth);
  r.has_dice = masks && !r.report.dice.empty();
  if (r.has_dice) {
    const auto base = metrics::evaluate(DisplacementField::zeros(field.dims(), field.spacing()), &*p.fixed_mask,
                                        &*p.moving_mask);
    r.baseline_dice = base.mean_dice;
  }
  return r;
}

}  // namespace

EvalSummary evaluate_split(const Model& model, const synth::Manifest& manifest, const TaskRegistry& registry,
                           const EvalOptions& options) {
  if (options.io_steps < 0) throw ValidationError("io steps must be >= 0");
  if (std::find(synth::kSplits.begin(), synth::kSplits.end(), options.split) == synth::kSplits.end())
    throw ValidationError("unknown split '" + options.split + "' (expected train, val or test)");
  std::vector<std::string> names = options.tasks;
  if (names.empty())
    for (const auto& t : manifest.spec.tasks) names.push_back(t.name);
  const TaskDescriptor* override_task = options.task_override.empty() ? nullptr : &registry.find(options.task_override);

  struct Job {
    const synth::PairEntry* entry;
    TaskDescriptor task;
  };
  std::vector<Job> jobs;
  for (const auto& name : names) {
    TaskDescriptor task = registry.find(name);
    if (override_task) task.task_index = override_task->task_index;
    check_task(model, task);
    for (const auto* e : manifest.select(name, options.split)) jobs.push_back({e, task});
  }
  if (jobs.empty()) throw ValidationError("no pairs in split '" + options.split + "'");

  EvalSummary out;
  out.pairs.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        out.pairs[i] = evaluate_pair(model, manifest, *jobs[i].entry, jobs[i].task, options);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const int threads = std::clamp<int>(options.threads, 1, static_cast<int>(jobs.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  double dice_sum = 0.0;
  int dice_tasks = 0;
  for (const auto& name : names) {
    TaskSummary s;
    s.task = name;
    int with_dice = 0, with_tre = 0;
    double tre = 0.0;
    for (const auto& r : out.pairs) {
      if (r.task != name) continue;
      ++s.pairs;
      s.sdlogj += r.report.sdlogj;
      s.folding_pct += r.report.folding_pct;
      if (r.has_dice) {
        ++with_dice;
        s.mean_dice += r.report.mean_dice;
        s.baseline_dice += r.baseline_dice;
      }
      if (r.report.tre) {
        ++with_tre;
        tre += *r.report.tre;
      }
    }
    if (s.pairs == 0) continue;
    s.sdlogj /= s.pairs;
    s.folding_pct /= s.pairs;
    if (with_dice < s.pairs && with_dice > 0)
      warn("task '" + name + "': " + std::to_string(s.pairs - with_dice) + " pairs without masks left out of dice");
    if (with_dice == 0) warn("task '" + name + "': no masks, dice fields skipped");
    if (with_dice > 0) {
      s.has_dice = true;
      s.mean_dice /= with_dice;
      s.baseline_dice /= with_dice;
      dice_sum += s.mean_dice;
      ++dice_tasks;
    }
    if (with_tre > 0) s.tre = tre / with_tre;
    out.tasks.push_back(s);
  }
  out.mean_dice = dice_tasks > 0 ? dice_sum / dice_tasks : 0.0;
  return out;
}

json to_json(const EvalSummary& s) {
  json pairs = json::array();
  for (const auto& r : s.pairs) {
    json j = metrics::to_json(r.report);
    j["task"] = r.task;
    j["index"] = r.index;
    j["task_index_used"] = r.task_index_used;
    if (r.has_dice) {
      j["baseline_dice"] = r.baseline_dice;
    } else {
      j.erase("dice");
      j.erase("mean_dice");
    }
    if (r.io_initial_loss) {
      j["io_initial_loss"] = *r.io_initial_loss;
      j["io_final_loss"] = *r.io_final_loss;
      j["io_warning"] = r.io_warning;
    }
    pairs.push_back(std::move(j));
  }
  json tasks = json::object();
  for (const auto& t : s.tasks) {
    json j{{"pairs", t.pairs}, {"sdlogj", t.sdlogj}, {"folding_pct", t.folding_pct}};
    if (t.has_dice) {
      j["mean_dice"] = t.mean_dice;
      j["baseline_dice"] = t.baseline_dice;
    }
    if (t.tre) j["tre"] = *t.tre;
    tasks[t.task] = std::move(j);
  }
  return {{"pairs", pairs}, {"aggregate", {{"tasks", tasks}, {"mean_dice", s.mean_dice}}}};
}

std::vector<AblationRun> run_ablation(const TrainConfig& config, const synth::Manifest& manifest,
                                      const TaskRegistry& registry, const std::vector<HeadMode>& modes, int snapshot,
                                      const EvalOptions& eval, std::ostream* log) {
  if (modes.empty()) throw ValidationError("ablation needs at least one head mode");
  if (snapshot < 0) throw ValidationError("snapshot iteration must be >= 0");
  std::vector<AblationRun> runs;
  for (HeadMode mode : modes) {
    TrainConfig c = config;
    c.head = mode;
    c.checkpoint_interval = snapshot;
    AblationRun run;
    run.head = mode;
    TrainHooks hooks;
    hooks.log = log;
    hooks.on_checkpoint = [&](const ModelState& s) {
      if (s.iteration != snapshot) return;
      run.snapshot_iteration = snapshot;
      run.snapshot = evaluate_split(s.model, manifest, registry, eval);
    };
    TrainResult r = train(c, manifest, registry, hooks);
    run.final = evaluate_split(r.state.model, manifest, registry, eval);
    run.state = std::move(r.state);
    run.history = std::move(r.history);
    runs.push_back(std::move(run));
  }
  return runs;
}

json to_json(const std::vector<AblationRun>& runs) {
  auto per_task = [](const EvalSummary& s) {
    json j = json::object();
    for (const auto& t : s.tasks)
      if (t.has_dice) j[t.task] = {{"mean_dice", t.mean_dice}, {"folding_pct", t.folding_pct}, {"sdlogj", t.sdlogj}};
    return j;
  };
  json modes = json::object();
  for (const auto& r : runs) {
    json j{{"iterations", r.state.iteration},
           {"parameters", r.state.model.params.scalar_count()},
           {"final", {{"mean_dice", r.final.mean_dice}, {"tasks", per_task(r.final)}}}};
    if (r.snapshot)
      j["snapshot"] = {{"iteration", r.snapshot_iteration},
                       {"mean_dice", r.snapshot->mean_dice},
                       {"tasks", per_task(*r.snapshot)}};
    modes[r.head == HeadMode::fixed ? "static" : "dynamic"] = std::move(j);
  }
  return {{"modes", modes}};
}

}  // namespace condreg
