#include "condreg/conditioning.hpp"

#include <random>

#include "condreg/error.hpp"
#include "condreg/ops.hpp"

namespace condreg {

DynamicKernels DynamicKernels::split(Var omega) {
  if (omega.value().size() != static_cast<std::size_t>(kHeadParameterCount))
    throw ValidationError("dynamic head needs " + std::to_string(kHeadParameterCount) + " values, got " +
                          std::to_string(omega.value().size()));
  constexpr int c = kFeatureChannels, m = kHeadHidden;
  std::size_t at = 0;
  auto take = [&](std::vector<int> shape) {
    Var v = ops::slice(omega, at, shape);
    at += shape_size(shape);
    return v;
  };
  DynamicKernels k;
  k.w1 = take({m, c, 1, 1, 1});
  k.b1 = take({m});
  k.w2 = take({m, m, 1, 1, 1});
  k.b2 = take({m});
  k.w3 = take({3, m, 1, 1, 1});
  k.b3 = take({3});
  if (at != static_cast<std::size_t>(kHeadParameterCount)) throw NumericError("dynamic head layout mismatch");
  return k;
}

Var build_condition_vector(Var features, const TaskDescriptor& task) {
  const Tensor& e = features.value();
  if (e.rank() != 4 || e.channels() != kFeatureChannels)
    throw ValidationError("condition features must have " + std::to_string(kFeatureChannels) + " channels");
  task.validate();
  Tape& tape = *features.tape();
  const auto code = reg_type_encoding(task.reg_type);
  std::vector<float> suffix = one_hot(task.task_index, task.n_tasks);
  suffix.insert(suffix.end(), code.begin(), code.end());
  const int n = static_cast<int>(suffix.size());
  const Var parts[2] = {ops::global_mean_pool(features), tape.constant(Tensor({n}, std::move(suffix)))};
  return ops::concat_channels(parts);
}

Var generate_kernels(Var condition, Var weight, Var bias) {
  const auto& ws = weight.value().shape();
  if (ws.size() != 2 || ws[0] != kHeadParameterCount)
    throw ValidationError("controller weight must have " + std::to_string(kHeadParameterCount) + " rows");
  if (condition.value().rank() != 1 || condition.value().size() != static_cast<std::size_t>(ws[1]))
    throw ValidationError("condition length " + std::to_string(condition.value().size()) +
                          " does not match controller width " + std::to_string(ws[1]));
  return ops::affine(weight, bias, condition);
}

Var apply_dynamic_head(Var features, const DynamicKernels& k, float slope) {
  if (features.value().rank() != 4 || features.value().channels() != kFeatureChannels)
    throw ValidationError("dynamic head expects " + std::to_string(kFeatureChannels) + " feature channels");
  Var h = ops::leaky_relu(ops::conv3d(features, k.w1, k.b1), slope);
  h = ops::leaky_relu(ops::conv3d(h, k.w2, k.b2), slope);
  return ops::conv3d(h, k.w3, k.b3);
}

std::string to_string(HeadMode m) { return m == HeadMode::dynamic ? "dynamic" : "static"; }

HeadMode parse_head_mode(const std::string& s) {
  if (s == "dynamic") return HeadMode::dynamic;
  if (s == "static") return HeadMode::fixed;
  throw ValidationError("head mode must be 'dynamic' or 'static', got '" + s + "'");
}

namespace {

ParamSlice head_params(int n_tasks, HeadMode head, std::mt19937_64* rng) {
  ParamSlice p;
  Tensor omega({kHeadParameterCount});
  if (rng) {
    // He scale on the leaky hidden layers, plain fan-in scale on the output.
    const double hidden = std::sqrt(6.0 / kFeatureChannels);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto fill = [&](std::size_t from, std::size_t count, double bound) {
      for (std::size_t i = 0; i < count; ++i) omega[from + i] = static_cast<float>(bound * u(*rng));
    };
    constexpr std::size_t m = kHeadHidden, c = kFeatureChannels;
    fill(0, m * c, hidden);
    fill(m * c + m, m * m, hidden);
    fill(m * c + m + m * m + m, 3 * m, std::sqrt(3.0 / m));
  }
  if (head == HeadMode::fixed) {
    p.add("head.omega", std::move(omega));
    return p;
  }
  const int width = condition_length(n_tasks);
  Tensor w({kHeadParameterCount, width});
  if (rng) {
    std::uniform_real_distribution<double> u(-0.01, 0.01);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(u(*rng));
  }
  p.add("controller.w", std::move(w));
  p.add("controller.b", std::move(omega));
  return p;
}

Model assemble(const BackboneConfig& config, int n_tasks, HeadMode head, ParamSlice backbone, std::mt19937_64* rng) {
  if (n_tasks < 1) throw ValidationError("n_tasks must be >= 1");
  Model m{config, n_tasks, head, std::move(backbone)};
  ParamSlice head_slice = head_params(n_tasks, head, rng);
  for (auto& [name, t] : head_slice.entries()) m.params.add(name, std::move(t));
  return m;
}

}  // namespace

std::size_t parameter_count(const BackboneConfig& config, int n_tasks, HeadMode head) {
  config.validate();
  auto conv = [](std::size_t cout, std::size_t cin, std::size_t k) { return cout * cin * k * k * k + cout; };
  std::size_t n = conv(config.channels(0), 2, 3);
  for (int l = 1; l < config.levels; ++l) {
    n += conv(config.channels(l), config.channels(l - 1), 3);
    n += 2 * config.blocks_per_level * conv(config.channels(l), config.channels(l), 3);
    n += conv(config.channels(l - 1), config.channels(l), 3);
    n += conv(config.channels(l - 1), 2 * config.channels(l - 1), 1);
  }
  n += conv(kFeatureChannels, config.channels(0), 1);
  const std::size_t h = kHeadParameterCount;
  return n + (head == HeadMode::dynamic ? h * condition_length(n_tasks) + h : h);
}

void Model::validate() const {
  backbone.validate();
  const Model reference = zero_model(backbone, n_tasks, head);
  if (!same_layout(reference.params, params)) throw ValidationError("model parameters do not match the configured layout");
}

Model init_model(const BackboneConfig& config, int n_tasks, HeadMode head, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return assemble(config, n_tasks, head, backbone::init(config, seed), &rng);
}

Model zero_model(const BackboneConfig& config, int n_tasks, HeadMode head) {
  ParamSlice bb = backbone::init(config, 0);
  for (auto& [_, t] : bb.entries()) t = Tensor(t.shape());
  return assemble(config, n_tasks, head, std::move(bb), nullptr);
}

void check_task(const Model& model, const TaskDescriptor& task) {
  task.validate();
  if (task.n_tasks != model.n_tasks)
    throw ValidationError("task '" + task.name + "' belongs to a " + std::to_string(task.n_tasks) +
                          "-task registry but the model was trained with " + std::to_string(model.n_tasks));
}

Var head_omega(const Model& model, const VarMap& vars, Var features, const TaskDescriptor& task) {
  if (model.head == HeadMode::fixed) return lookup(vars, "head.omega");
  return generate_kernels(build_condition_vector(features, task), lookup(vars, "controller.w"),
                          lookup(vars, "controller.b"));
}

Forward forward(const Model& model, const VarMap& vars, Var fixed, Var moving, const TaskDescriptor& task,
                bool warp) {
  check_task(model, task);
  const Var pair_parts[2] = {fixed, moving};
  Forward f;
  f.features = backbone::extract(ops::concat_channels(pair_parts), model.backbone, vars);
  f.omega = head_omega(model, vars, f.features, task);
  f.field = apply_dynamic_head(f.features, DynamicKernels::split(f.omega), static_cast<float>(model.backbone.slope));
  if (warp) f.warped = ops::trilinear_sample(moving, f.field);
  return f;
}

Registration register_pair(const Volume& fixed, const Volume& moving, const TaskDescriptor& task, const Model& model) {
  backbone::pair_input(fixed, moving);  // dims and range checks
  Tape tape;
  const VarMap vars = bind(tape, model.params, false);
  const Forward f = forward(model, vars, tape.constant(Tensor::from_volume(fixed)),
                            tape.constant(Tensor::from_volume(moving)), task);
  return {DisplacementField(f.field.value().to_volume(fixed.spacing())), f.warped.value().to_volume(moving.spacing())};
}

}  // namespace condreg
