#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "condreg/engine.hpp"
#include "condreg/error.hpp"
#include "condreg/evaluation.hpp"
#include "condreg/gradsuite.hpp"
#include "condreg/volume.hpp"
#include "json.hpp"

using namespace condreg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kUsage = 2, kIo = 3, kNumeric = 4 };

// Sibling artifact of a stem-style --out: <stem><suffix>.
fs::path sibling(const fs::path& out, const std::string& suffix) { return volume_stem(out).string() + suffix; }

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed: " + p.string());
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw IoError(what + " not found: " + p.string());
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

fs::path manifest_dir(const fs::path& p) { return fs::is_directory(p) ? p : p.parent_path(); }

// ---- synth ----

struct SynthArgs {
  std::string spec, preset = "default", out;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  synth::BenchmarkSpec spec;
  if (!a.spec.empty()) {
    require_file(a.spec, "spec");
    spec = synth::load_benchmark_spec(a.spec);
  } else {
    spec = a.preset == "unseen" ? synth::unseen_benchmark() : synth::default_benchmark();
  }
  const synth::Manifest m = synth::make_benchmark(spec, a.seed, a.out);
  json summary{{"out", a.out}, {"pairs", m.pairs.size()}, {"tasks", json::array()}};
  for (const auto& t : spec.tasks) summary["tasks"].push_back({{"name", t.name}, {"reg_type", to_string(t.reg_type)}});
  std::cout << summary.dump() << "\n";
  return kOk;
}

// ---- train ----

struct TrainArgs {
  std::string config, data, out, registry, optimizer;
  int iterations = 0;
  double lr = 0.0;
  std::int64_t seed = -1;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig c;
  if (!a.config.empty()) {
    require_file(a.config, "config");
    c = load_train_config(a.config);
  }
  if (a.iterations > 0) c.iterations = a.iterations;
  if (a.lr > 0.0) c.lr = a.lr;
  if (a.seed >= 0) c.seed = static_cast<std::uint64_t>(a.seed);
  if (!a.optimizer.empty()) c.optimizer = parse_optimizer(a.optimizer);
  if (!a.registry.empty()) c.registry = a.registry;
  c.validate();

  const fs::path data = a.data;
  const fs::path manifest_path = c.manifest.empty() ? data / "manifest.json" : c.manifest;
  const fs::path registry_path = c.registry.empty() ? data / "registry.json" : c.registry;
  require_file(manifest_path, "manifest");
  require_file(registry_path, "task registry");
  const synth::Manifest man = synth::load_manifest(manifest_path);
  const TaskRegistry reg = TaskRegistry::load(registry_path);
  for (const auto& t : man.spec.tasks)
    if (!reg.contains(t.name)) throw ValidationError("manifest task '" + t.name + "' is not in the task registry");

  const fs::path stem = volume_stem(a.out);
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  std::ofstream log(sibling(stem, ".log.jsonl"), std::ios::binary);
  if (!log) throw IoError("cannot write " + sibling(stem, ".log.jsonl").string());
  TrainHooks hooks;
  hooks.log = &log;
  hooks.on_checkpoint = [&](const ModelState& s) {
    char tag[32];
    std::snprintf(tag, sizeof tag, "_iter%06d", s.iteration);
    save_checkpoint(s, sibling(stem, tag));
  };
  const TrainResult r = train(c, man, reg, hooks);
  save_checkpoint(r.state, stem);
  reg.save(sibling(stem, ".registry.json"));
  const auto& last = r.history.back();
  std::cout << json{{"checkpoint", stem.string()},
                    {"iterations", r.state.iteration},
                    {"parameters", r.state.model.params.scalar_count()},
                    {"last", {{"task", last.task}, {"total", last.loss.total}}}}
                   .dump()
            << "\n";
  return kOk;
}

// ---- register ----

struct RegisterArgs {
  std::string ckpt, fixed, moving, task, out, registry;
  int io = -1;
  double io_lr = IoOptions{}.lr;
};

TaskRegistry registry_for_checkpoint(const std::string& explicit_path, const fs::path& ckpt) {
  const fs::path p = explicit_path.empty() ? sibling(ckpt, ".registry.json") : fs::path(explicit_path);
  require_file(p, "task registry");
  return TaskRegistry::load(p);
}

int cmd_register(const RegisterArgs& a) {
  if (a.io == 0) throw ValidationError("--io needs at least 1 step");
  if (!(a.io_lr > 0.0)) throw ValidationError("--io-lr must be > 0");
  const TaskRegistry reg = registry_for_checkpoint(a.registry, a.ckpt);
  const TaskDescriptor& task = reg.find(a.task);
  const ModelState state = load_checkpoint(a.ckpt);
  check_task(state.model, task);
  const Volume fixed = load_image(a.fixed), moving = load_image(a.moving);
  if (!(fixed.dims() == moving.dims()))
    throw ValidationError("fixed dims " + to_string(fixed.dims()) + " != moving dims " + to_string(moving.dims()));

  json summary{{"task", task.name}, {"field", volume_stem(a.out).string()}};
  DisplacementField field;
  Volume warped;
  if (a.io > 0) {
    IoOptions o;
    o.steps = a.io;
    o.lr = a.io_lr;
    IoResult r = instance_optimize(state.model, task, fixed, moving, o);
    summary["io"] = {{"steps", a.io},     {"accepted", r.accepted},     {"initial_loss", r.initial_loss},
                     {"final_loss", r.final_loss}, {"warning", r.warning}};
    field = std::move(r.field);
    warped = std::move(r.warped);
  } else {
    Registration r = register_pair(fixed, moving, task, state.model);
    field = std::move(r.field);
    warped = std::move(r.warped);
  }
  save_volume(field, a.out);
  save_volume(warped, sibling(a.out, "_warped"));
  summary["warped"] = sibling(a.out, "_warped").string();
  std::cout << summary.dump() << "\n";
  return kOk;
}

// ---- eval ----

struct EvalArgs {
  std::string pairs, ckpt, out, task_override, split = "test", tasks, registry;
  int io = 0;
};

int cmd_eval(const EvalArgs& a) {
  if (a.io < 0) throw ValidationError("--io must be >= 0");
  const fs::path pairs = a.pairs;
  require_file(pairs, "manifest");
  const synth::Manifest man = synth::load_manifest(pairs);
  const fs::path reg_path = a.registry.empty() ? manifest_dir(pairs) / "registry.json" : fs::path(a.registry);
  require_file(reg_path, "task registry");
  const TaskRegistry reg = TaskRegistry::load(reg_path);
  const ModelState state = load_checkpoint(a.ckpt);

  EvalOptions o;
  o.split = a.split;
  o.tasks = split_list(a.tasks);
  o.task_override = a.task_override;
  o.io_steps = a.io;
  o.threads = threads_from_env();
  const EvalSummary s = evaluate_split(state.model, man, reg, o);
  json j = to_json(s);
  j["split"] = a.split;
  j["checkpoint"] = volume_stem(a.ckpt).string();
  if (!a.task_override.empty()) j["task_override"] = a.task_override;
  if (a.io > 0) j["io_steps"] = a.io;
  write_text(a.out, j.dump(2) + "\n");
  std::cout << j["aggregate"].dump() << "\n";
  return kOk;
}

// ---- gradcheck ----

struct GradArgs {
  std::string ops = "all";
  double tol = 1e-3;
  int seeds = 20;
};

int cmd_gradcheck(const GradArgs& a) {
  if (!(a.tol > 0.0)) throw ValidationError("--tol must be > 0");
  if (a.seeds < 1) throw ValidationError("--seeds must be >= 1");
  std::vector<std::string> ops = a.ops == "all" ? gradsuite_ops() : split_list(a.ops);
  if (ops.empty()) throw ValidationError("--ops is empty");
  for (const auto& op : ops)
    if (std::find(gradsuite_ops().begin(), gradsuite_ops().end(), op) == gradsuite_ops().end())
      check_op(op, 0);  // throws with the known names
  bool all = true;
  std::printf("%-26s %6s %12s %s\n", "op", "seeds", "max_rel_err", "status");
  for (const auto& op : ops) {
    double worst = 0.0;
    int failed = 0;
    for (int s = 0; s < a.seeds; ++s) {
      const GradCheckReport r = check_op(op, s, a.tol);
      worst = std::max(worst, r.max_rel_error());
      failed += !r.passed();
    }
    all &= failed == 0;
    std::printf("%-26s %6d %12.3e %s\n", op.c_str(), a.seeds, worst,
                failed == 0 ? "ok" : ("FAIL (" + std::to_string(failed) + " seeds)").c_str());
  }
  return all ? kOk : kCheckFailed;
}

// ---- ablate ----

struct AblateArgs {
  std::string data, out, mode = "both", config, optimizer;
  int iterations = 0, snapshot = 1000;
  double lr = 0.0;
  std::int64_t seed = -1;
};

int cmd_ablate(const AblateArgs& a) {
  TrainConfig c;
  if (!a.config.empty()) {
    require_file(a.config, "config");
    c = load_train_config(a.config);
  }
  if (a.iterations > 0) c.iterations = a.iterations;
  if (a.lr > 0.0) c.lr = a.lr;
  if (a.seed >= 0) c.seed = static_cast<std::uint64_t>(a.seed);
  if (!a.optimizer.empty()) c.optimizer = parse_optimizer(a.optimizer);
  c.log_interval = 0;
  c.validate();
  if (a.snapshot < 0) throw ValidationError("--snapshot must be >= 0");
  std::vector<HeadMode> modes;
  if (a.mode == "both" || a.mode == "dynamic") modes.push_back(HeadMode::dynamic);
  if (a.mode == "both" || a.mode == "static") modes.push_back(HeadMode::fixed);

  const fs::path data = a.data;
  require_file(data / "manifest.json", "manifest");
  require_file(data / "registry.json", "task registry");
  const synth::Manifest man = synth::load_manifest(data);
  const TaskRegistry reg = TaskRegistry::load(data / "registry.json");
  EvalOptions eval;
  eval.threads = threads_from_env();
  // Held-out families have no training pairs; the ablation scores trained tasks only.
  for (const auto& t : man.spec.tasks)
    if (!t.held_out) eval.tasks.push_back(t.name);

  const std::vector<AblationRun> runs = run_ablation(c, man, reg, modes, a.snapshot, eval);
  json report = to_json(runs);
  report["config"] = json::parse(to_json_text(c));
  write_text(a.out, report.dump(2) + "\n");
  for (const auto& r : runs) save_checkpoint(r.state, sibling(a.out, r.head == HeadMode::fixed ? "_static" : "_dynamic"));
  std::cout << report["modes"].dump() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"condreg: conditional deformable registration on synthetic multi-task volumes"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic benchmark");
  auto* spec_opt = synth->add_option("--spec", sa.spec, "benchmark spec JSON (default: built-in preset)");
  synth->add_option("--preset", sa.preset, "built-in spec: default, or unseen (adds a held-out family)")
      ->check(CLI::IsMember({"default", "unseen"}))
      ->excludes(spec_opt);
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_option("--seed", sa.seed, "generator seed");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", ta.config, "train config JSON");
  train_cmd->add_option("--data", ta.data, "benchmark directory")->required();
  train_cmd->add_option("--out", ta.out, "checkpoint stem")->required();
  train_cmd->add_option("--registry", ta.registry, "task registry (default: <data>/registry.json)");
  train_cmd->add_option("--iterations", ta.iterations, "override iterations")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", ta.lr, "override learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", ta.seed, "override seed")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--optimizer", ta.optimizer, "override optimizer")->check(CLI::IsMember({"sgd", "adam"}));

  RegisterArgs ra;
  auto* reg_cmd = app.add_subcommand("register", "register one pair");
  reg_cmd->add_option("--ckpt", ra.ckpt, "checkpoint stem")->required();
  reg_cmd->add_option("--fixed", ra.fixed, "fixed image")->required();
  reg_cmd->add_option("--moving", ra.moving, "moving image")->required();
  reg_cmd->add_option("--task", ra.task, "task name")->required();
  reg_cmd->add_option("--out", ra.out, "output field; the warped image goes to <out>_warped")->required();
  reg_cmd->add_option("--registry", ra.registry, "task registry (default: <ckpt>.registry.json)");
  reg_cmd->add_option("--io", ra.io, "instance-optimization steps");
  reg_cmd->add_option("--io-lr", ra.io_lr, "instance-optimization step size");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a benchmark split");
  eval_cmd->add_option("--pairs", ea.pairs, "manifest file or benchmark directory")->required();
  eval_cmd->add_option("--ckpt", ea.ckpt, "checkpoint stem")->required();
  eval_cmd->add_option("--out", ea.out, "report JSON")->required();
  eval_cmd->add_option("--task-override", ea.task_override, "evaluate every pair with this task's ID");
  eval_cmd->add_option("--split", ea.split, "split")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--tasks", ea.tasks, "comma-separated task subset");
  eval_cmd->add_option("--registry", ea.registry, "task registry (default: next to the manifest)");
  eval_cmd->add_option("--io", ea.io, "instance-optimization steps per pair (0: plain inference)");

  GradArgs ga;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference checks of every operator and loss");
  grad_cmd->add_option("--ops", ga.ops, "all, or comma-separated op names");
  grad_cmd->add_option("--tol", ga.tol, "relative tolerance");
  grad_cmd->add_option("--seeds", ga.seeds, "randomized cases per op");

  AblateArgs aa;
  auto* abl_cmd = app.add_subcommand("ablate", "dynamic vs static head under the same budget");
  abl_cmd->add_option("--data", aa.data, "benchmark directory")->required();
  abl_cmd->add_option("--out", aa.out, "report JSON; checkpoints go to <out>_dynamic and <out>_static")->required();
  abl_cmd->add_option("--mode", aa.mode, "which heads to train")->check(CLI::IsMember({"both", "static", "dynamic"}));
  abl_cmd->add_option("--config", aa.config, "train config JSON");
  abl_cmd->add_option("--iterations", aa.iterations, "override iterations")->check(CLI::PositiveNumber);
  abl_cmd->add_option("--snapshot", aa.snapshot, "also score at this iteration");
  abl_cmd->add_option("--lr", aa.lr, "override learning rate")->check(CLI::PositiveNumber);
  abl_cmd->add_option("--seed", aa.seed, "override seed")->check(CLI::NonNegativeNumber);
  abl_cmd->add_option("--optimizer", aa.optimizer, "override optimizer")->check(CLI::IsMember({"sgd", "adam"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*train_cmd) return cmd_train(ta);
    if (*reg_cmd) return cmd_register(ra);
    if (*eval_cmd) return cmd_eval(ea);
    if (*grad_cmd) return cmd_gradcheck(ga);
    if (*abl_cmd) return cmd_ablate(aa);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
