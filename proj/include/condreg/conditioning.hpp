#pragma once

#include <cstdint>
#include <string>

#include "condreg/backbone.hpp"
#include "condreg/task.hpp"

namespace condreg {

// Head layout: two 8 -> 8 layers and an 8 -> 3 output layer, all 1x1x1.
inline constexpr int kHeadHidden = kFeatureChannels;
inline constexpr int kHeadParameterCount =
    kHeadHidden * kFeatureChannels + kHeadHidden + kHeadHidden * kHeadHidden + kHeadHidden + 3 * kHeadHidden + 3;
static_assert(kHeadParameterCount == 171);

inline constexpr int condition_length(int n_tasks) { return kFeatureChannels + n_tasks + 2; }

/// Views into a flat omega vector, slot order w1, b1, w2, b2, w3, b3 with
/// row-major (out, in) weights.
struct DynamicKernels {
  Var w1, b1, w2, b2, w3, b3;

  static DynamicKernels split(Var omega);
};

/// pooled E (8) ++ one_hot(task) ++ reg-type code.
Var build_condition_vector(Var features, const TaskDescriptor& task);

/// omega = weight * c + bias, weight (171, L).
Var generate_kernels(Var condition, Var weight, Var bias);

/// Three 1x1x1 convs with leaky activations after the first two.
Var apply_dynamic_head(Var features, const DynamicKernels& k, float slope);

enum class HeadMode { dynamic, fixed };  // fixed: one learned omega for every input and task

std::string to_string(HeadMode m);
HeadMode parse_head_mode(const std::string& s);

/// Backbone + controller (or the fixed omega) as one named parameter set.
struct Model {
  BackboneConfig backbone;
  int n_tasks = 1;
  HeadMode head = HeadMode::dynamic;
  ParamSlice params;

  void validate() const;
};

/// Expected parameter count for the config, from layout arithmetic alone.
std::size_t parameter_count(const BackboneConfig& config, int n_tasks, HeadMode head);

Model init_model(const BackboneConfig& config, int n_tasks, HeadMode head, std::uint64_t seed);

/// Same layout with every value zero.
Model zero_model(const BackboneConfig& config, int n_tasks, HeadMode head);

struct Forward {
  Var features;
  Var omega;
  Var field;
  Var warped;
};

Var head_omega(const Model& model, const VarMap& vars, Var features, const TaskDescriptor& task);

/// Full graph on `vars`' tape: features, omega, field and (when warp is set)
/// the warped moving image.
Forward forward(const Model& model, const VarMap& vars, Var fixed, Var moving, const TaskDescriptor& task,
                bool warp = true);

struct Registration {
  DisplacementField field;
  Volume warped;
};

void check_task(const Model& model, const TaskDescriptor& task);

Registration register_pair(const Volume& fixed, const Volume& moving, const TaskDescriptor& task, const Model& model);

}  // namespace condreg
