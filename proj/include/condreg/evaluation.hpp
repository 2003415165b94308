#pragma once

#include <optional>
#include <string>
#include <vector>

#include "condreg/engine.hpp"
#include "json.hpp"

namespace condreg {

struct EvalOptions {
  std::string split = "test";
  std::vector<std::string> tasks;  // empty: every manifest task
  // Routes every pair through this registry entry's task index; the pair's
  // own reg type and lambda are kept.
  std::string task_override;
  int io_steps = 0;  // > 0 runs instance optimization instead of plain inference
  IoOptions io;
  int threads = 1;
};

struct PairResult {
  std::string task;
  int index = 0;
  int task_index_used = 0;
  metrics::EvalReport report;
  bool has_dice = false;
  double baseline_dice = 0.0;  // zero-field overlap
  std::optional<double> io_initial_loss, io_final_loss;
  bool io_warning = false;
};

struct TaskSummary {
  std::string task;
  int pairs = 0;
  bool has_dice = false;
  double mean_dice = 0.0;
  double baseline_dice = 0.0;
  double sdlogj = 0.0;
  double folding_pct = 0.0;
  std::optional<double> tre;
};

struct EvalSummary {
  std::vector<PairResult> pairs;  // manifest order
  std::vector<TaskSummary> tasks;
  double mean_dice = 0.0;  // mean over tasks with masks

  const TaskSummary& task(const std::string& name) const;
};

/// CONDREG_THREADS when set to a positive integer, else 1.
int threads_from_env();

/// Registers every selected pair of one split and aggregates per task.
/// Pairs without masks get field statistics only (with a warning).
EvalSummary evaluate_split(const Model& model, const synth::Manifest& manifest, const TaskRegistry& registry,
                           const EvalOptions& options = {});

nlohmann::json to_json(const EvalSummary& summary);

struct AblationRun {
  HeadMode head = HeadMode::dynamic;
  ModelState state;
  std::vector<TrainRecord> history;
  int snapshot_iteration = 0;  // 0 when the budget ended before the snapshot
  std::optional<EvalSummary> snapshot;
  EvalSummary final;
};

/// Trains one model per head mode under the same config and seed and scores
/// each on the eval split at `snapshot` iterations and at the end.
std::vector<AblationRun> run_ablation(const TrainConfig& config, const synth::Manifest& manifest,
                                      const TaskRegistry& registry, const std::vector<HeadMode>& modes,
                                      int snapshot = 1000, const EvalOptions& eval = {},
                                      std::ostream* log = nullptr);

nlohmann::json to_json(const std::vector<AblationRun>& runs);

}  // namespace condreg
