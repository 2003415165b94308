#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "condreg/conditioning.hpp"
#include "condreg/metrics.hpp"
#include "condreg/objectives.hpp"
#include "condreg/synthdata.hpp"

namespace condreg {

inline constexpr int kCheckpointVersion = 1;

enum class Optimizer { sgd, adam };

std::string to_string(Optimizer o);
Optimizer parse_optimizer(const std::string& name);

/// Trainable model plus optimizer state (empty when not saved) and the
/// iteration it was taken at. velocity is the SGD momentum or the Adam first
/// moment; second_moment is only used by Adam.
struct ModelState {
  Model model;
  Optimizer optimizer = Optimizer::sgd;
  ParamSlice velocity;
  ParamSlice second_moment;
  int iteration = 0;
};

struct TrainConfig {
  int iterations = 5000;
  double lr = 5e-5;
  double momentum = 0.99;
  Optimizer optimizer = Optimizer::sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::filesystem::path registry;  // empty: <data>/registry.json
  std::filesystem::path manifest;  // empty: <data>/manifest.json
  int checkpoint_interval = 0;
  int log_interval = 50;
  int ncc_window = objectives::kDefaultNccWindow;
  BackboneConfig backbone;
  HeadMode head = HeadMode::dynamic;

  void validate() const;
};

TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string to_json_text(const TrainConfig& config);

struct TrainRecord {
  int iter = 0;
  std::string task;
  LossReport loss;
};

struct TrainResult {
  ModelState state;
  std::vector<TrainRecord> history;  // every iteration
};

struct TrainHooks {
  std::ostream* log = nullptr;  // JSON lines
  std::function<void(const ModelState&)> on_checkpoint;
};

/// Draws task indices uniformly, then pairs within a task uniformly, with
/// replacement, from one seeded stream.
class TaskSampler {
 public:
  TaskSampler(std::uint64_t seed, std::vector<std::size_t> pairs_per_task);
  std::pair<std::size_t, std::size_t> next();

 private:
  synth::Rng rng_;
  std::vector<std::size_t> sizes_;
};

/// v <- mu v + g, p <- p - lr v over every named parameter.
void sgd_step(ParamSlice& params, ParamSlice& velocity, const VarMap& vars, double lr, double momentum);

/// Bias-corrected Adam; step counts from 1.
void adam_step(ParamSlice& params, ParamSlice& first, ParamSlice& second, const VarMap& vars, double lr, double beta1,
               double beta2, double eps, int step);

TrainResult train(const TrainConfig& config, const synth::Manifest& manifest, const TaskRegistry& registry,
                  const TrainHooks& hooks = {});

void save_checkpoint(const ModelState& state, const std::filesystem::path& path, bool with_optimizer = true);
ModelState load_checkpoint(const std::filesystem::path& path);

struct Inference {
  DisplacementField field;
  Volume warped;
  std::optional<metrics::EvalReport> report;
};

/// Single forward pass; evaluates when both masks are given.
Inference infer(const Model& model, const TaskDescriptor& task, const Volume& fixed, const Volume& moving,
                const LabelMap* fixed_mask = nullptr, const LabelMap* moving_mask = nullptr,
                const DisplacementField* truth = nullptr);

struct IoOptions {
  int steps = 50;
  double lr = 0.05;
  int window = objectives::kDefaultNccWindow;
  int max_halvings = 6;
};

struct IoResult {
  DisplacementField field;
  Volume warped;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int accepted = 0;
  bool warning = false;  // stopped early on a non-finite loss
  std::vector<double> losses;
};

/// Gradient descent on the head's 171 kernel values only, minimizing
/// sim + lambda * reg for one pair. Backbone and controller stay frozen; a
/// step that raises the loss is retried with half the step size.
IoResult instance_optimize(const Model& model, const TaskDescriptor& task, const Volume& fixed, const Volume& moving,
                           const IoOptions& options = {});

}  // namespace condreg
