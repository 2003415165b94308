#include "condreg/engine.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <ostream>

#include "condreg/error.hpp"
#include "condreg/log.hpp"
#include "condreg/ops.hpp"
#include "json.hpp"

namespace condreg {

using nlohmann::json;

std::string to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }

Optimizer parse_optimizer(const std::string& name) {
  if (name == "sgd") return Optimizer::sgd;
  if (name == "adam") return Optimizer::adam;
  throw ValidationError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

void TrainConfig::validate() const {
  if (iterations < 1) throw ValidationError("iterations must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must be in [0, 1)");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ValidationError("adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ValidationError("adam_eps must be > 0");
  if (checkpoint_interval < 0 || log_interval < 0) throw ValidationError("intervals must be >= 0");
  if (ncc_window < 3 || ncc_window % 2 == 0) throw ValidationError("ncc_window must be odd and >= 3");
  backbone.validate();
}

namespace {

json backbone_json(const BackboneConfig& b) {
  return {{"levels", b.levels}, {"base_channels", b.base_channels}, {"blocks_per_level", b.blocks_per_level},
          {"slope", b.slope}};
}

BackboneConfig backbone_from(const json& j) {
  BackboneConfig b;
  b.levels = j.value("levels", b.levels);
  b.base_channels = j.value("base_channels", b.base_channels);
  b.blocks_per_level = j.value("blocks_per_level", b.blocks_per_level);
  b.slope = j.value("slope", b.slope);
  b.validate();
  return b;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("train config is not valid JSON: ") + e.what());
  }
  try {
    TrainConfig c;
    c.iterations = j.value("iterations", c.iterations);
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.optimizer = parse_optimizer(j.value("optimizer", std::string("sgd")));
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.seed = j.value("seed", c.seed);
    c.registry = j.value("registry", std::string());
    c.manifest = j.value("manifest", std::string());
    c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
    c.log_interval = j.value("log_interval", c.log_interval);
    c.ncc_window = j.value("ncc_window", c.ncc_window);
    if (j.contains("backbone")) c.backbone = backbone_from(j.at("backbone"));
    c.head = parse_head_mode(j.value("head", std::string("dynamic")));
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad train config: ") + e.what());
  }
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return parse_train_config(std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
}

std::string to_json_text(const TrainConfig& c) {
  return json{{"iterations", c.iterations},
              {"lr", c.lr},
              {"momentum", c.momentum},
              {"optimizer", to_string(c.optimizer)},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"seed", c.seed},
              {"registry", c.registry.string()},
              {"manifest", c.manifest.string()},
              {"checkpoint_interval", c.checkpoint_interval},
              {"log_interval", c.log_interval},
              {"ncc_window", c.ncc_window},
              {"backbone", backbone_json(c.backbone)},
              {"head", to_string(c.head)}}
             .dump(2) +
         "\n";
}

TaskSampler::TaskSampler(std::uint64_t seed, std::vector<std::size_t> sizes) : rng_(synth::mix(seed)), sizes_(std::move(sizes)) {
  if (sizes_.empty()) throw ValidationError("no tasks to sample");
  for (std::size_t s : sizes_)
    if (s == 0) throw ValidationError("every sampled task needs at least one training pair");
}

std::pair<std::size_t, std::size_t> TaskSampler::next() {
  // Multiply-shift keeps the draw unbiased enough for counts this small.
  auto below = [&](std::size_t n) { return static_cast<std::size_t>(rng_.uniform() * static_cast<double>(n)); };
  const std::size_t task = below(sizes_.size());
  return {task, below(sizes_[task])};
}

void sgd_step(ParamSlice& params, ParamSlice& velocity, const VarMap& vars, double lr, double momentum) {
  for (auto& [name, p] : params.entries()) {
    const Var& v = lookup(vars, name);
    Tensor& vel = velocity.at(name);
    const Tensor& g = v.grad();
    if (g.empty()) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        vel[i] = static_cast<float>(momentum * vel[i]);
        p[i] = static_cast<float>(p[i] - lr * vel[i]);
      }
      continue;
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      vel[i] = static_cast<float>(momentum * vel[i] + g[i]);
      p[i] = static_cast<float>(p[i] - lr * vel[i]);
    }
  }
}

void adam_step(ParamSlice& params, ParamSlice& first, ParamSlice& second, const VarMap& vars, double lr, double beta1,
               double beta2, double eps, int step) {
  const double c1 = 1.0 - std::pow(beta1, step), c2 = 1.0 - std::pow(beta2, step);
  for (auto& [name, p] : params.entries()) {
    const Tensor& g = lookup(vars, name).grad();
    Tensor& m = first.at(name);
    Tensor& v = second.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      const double mi = beta1 * m[i] + (1.0 - beta1) * gi;
      const double vi = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      p[i] = static_cast<float>(p[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
    }
  }
}

namespace {

struct TrainPair {
  Tensor fixed, moving;
  std::optional<LabelMap> fixed_mask, moving_mask;
};

void check_finite(const LossReport& r, int iter, const std::string& task) {
  const std::pair<const char*, double> terms[] = {{"sim", r.sim}, {"reg", r.reg}, {"dice", r.dice}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v))
      throw NumericError("non-finite " + std::string(name) + " loss at iteration " + std::to_string(iter) + " (task '" +
                         task + "')");
}

json record_json(const TrainRecord& r) {
  return {{"iter", r.iter}, {"task", r.task}, {"sim", r.loss.sim}, {"reg", r.loss.reg}, {"dice", r.loss.dice},
          {"total", r.loss.total}};
}

}  // namespace

TrainResult train(const TrainConfig& config, const synth::Manifest& manifest, const TaskRegistry& registry,
                  const TrainHooks& hooks) {
  config.validate();
  std::vector<const TaskDescriptor*> tasks;
  std::vector<std::vector<TrainPair>> data;
  for (const auto& spec : manifest.spec.tasks) {
    if (!registry.contains(spec.name)) throw ValidationError("manifest task '" + spec.name + "' is not in the task registry");
    const auto entries = manifest.select(spec.name, "train");
    if (entries.empty()) continue;
    tasks.push_back(&registry.find(spec.name));
    std::vector<TrainPair> pairs;
    for (const auto* e : entries) {
      synth::LoadedPair p = synth::load_pair(manifest, *e);
      backbone::pair_input(p.fixed, p.moving);  // dims and range checks
      if (tasks.back()->dice_weight > 0.0 && !(p.fixed_mask && p.moving_mask))
        throw ValidationError("task '" + spec.name + "' has dice_weight > 0 but pair " + e->fixed.string() +
                              " has no masks");
      pairs.push_back({Tensor::from_volume(p.fixed), Tensor::from_volume(p.moving), std::move(p.fixed_mask),
                       std::move(p.moving_mask)});
    }
    data.push_back(std::move(pairs));
  }
  if (tasks.empty()) throw ValidationError("manifest has no training pairs");

  std::vector<std::size_t> sizes;
  for (const auto& d : data) sizes.push_back(d.size());
  TaskSampler sampler(config.seed, sizes);

  TrainResult result;
  ModelState& state = result.state;
  state.model = init_model(config.backbone, registry.n_tasks(), config.head, synth::mix(config.seed ^ 0x5eed));
  state.optimizer = config.optimizer;
  for (const auto& [name, t] : state.model.params.entries()) {
    state.velocity.add(name, Tensor(t.shape()));
    if (config.optimizer == Optimizer::adam) state.second_moment.add(name, Tensor(t.shape()));
  }

  if (hooks.log) {
    json header{{"event", "config"}, {"lr", config.lr}, {"momentum", config.momentum},
                {"optimizer", to_string(config.optimizer)}, {"iterations", config.iterations},
                {"seed", config.seed}, {"head", to_string(config.head)}, {"n_tasks", registry.n_tasks()},
                {"parameters", state.model.params.scalar_count()}};
    *hooks.log << header.dump() << "\n";
  }

  result.history.reserve(config.iterations);
  for (int iter = 1; iter <= config.iterations; ++iter) {
    const auto [t, i] = sampler.next();
    const TaskDescriptor& task = *tasks[t];
    const TrainPair& pair = data[t][i];

    Tape tape;
    const VarMap vars = bind(tape, state.model.params, true);
    const Var fixed = tape.constant(pair.fixed), moving = tape.constant(pair.moving);
    const Forward f = forward(state.model, vars, fixed, moving, task, false);
    const bool supervised = task.dice_weight > 0.0;
    const objectives::LossTerms loss =
        objectives::total_loss(fixed, moving, supervised ? &*pair.fixed_mask : nullptr,
                               supervised ? &*pair.moving_mask : nullptr, f.field, task, config.ncc_window);
    check_finite(loss.report, iter, task.name);
    tape.backward(loss.total);
    if (config.optimizer == Optimizer::adam)
      adam_step(state.model.params, state.velocity, state.second_moment, vars, config.lr, config.adam_beta1,
                config.adam_beta2, config.adam_eps, iter);
    else
      sgd_step(state.model.params, state.velocity, vars, config.lr, config.momentum);
    state.iteration = iter;

    TrainRecord rec{iter, task.name, loss.report};
    if (hooks.log && config.log_interval > 0 && (iter % config.log_interval == 0 || iter == 1))
      *hooks.log << record_json(rec).dump() << "\n";
    result.history.push_back(std::move(rec));
    if (hooks.on_checkpoint && config.checkpoint_interval > 0 && iter % config.checkpoint_interval == 0)
      hooks.on_checkpoint(state);
  }
  if (hooks.log) hooks.log->flush();
  return result;
}

// ---- checkpoints ----

namespace {

std::filesystem::path with_ext(const std::filesystem::path& path, const char* ext) {
  return volume_stem(path).string() + ext;
}

void append_le(std::string& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

float read_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return std::bit_cast<float>(bits);
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& path, bool with_optimizer) {
  state.model.validate();
  json slices = json::array();
  std::string payload;
  std::size_t offset = 0;
  auto emit = [&](const std::string& group, const ParamSlice& p) {
    for (const auto& [name, t] : p.entries()) {
      slices.push_back({{"group", group}, {"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
      for (float v : t.values()) append_le(payload, v);
      offset += t.size();
    }
  };
  emit("params", state.model.params);
  const bool optimizer = with_optimizer && !state.velocity.entries().empty();
  if (optimizer) emit("velocity", state.velocity);
  if (optimizer && state.optimizer == Optimizer::adam) emit("second_moment", state.second_moment);

  const json header{{"format", "condreg-checkpoint"},
                    {"version", kCheckpointVersion},
                    {"backbone", backbone_json(state.model.backbone)},
                    {"n_tasks", state.model.n_tasks},
                    {"head", to_string(state.model.head)},
                    {"iteration", state.iteration},
                    {"parameter_count", state.model.params.scalar_count()},
                    {"optimizer", optimizer ? to_string(state.optimizer) : "none"},
                    {"payload_floats", offset},
                    {"slices", slices}};
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream js(with_ext(path, ".json"), std::ios::binary);
  std::ofstream bin(with_ext(path, ".bin"), std::ios::binary);
  if (!js || !bin) throw IoError("cannot write checkpoint " + volume_stem(path).string());
  js << header.dump(2) << "\n";
  bin.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!js || !bin) throw IoError("checkpoint write failed: " + volume_stem(path).string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  const auto jpath = with_ext(path, ".json"), bpath = with_ext(path, ".bin");
  std::ifstream js(jpath);
  if (!js) throw IoError("cannot read checkpoint header " + jpath.string());
  json h;
  try {
    h = json::parse(js);
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint header " + jpath.string() + " is not valid JSON: " + e.what());
  }
  std::ifstream bin(bpath, std::ios::binary);
  if (!bin) throw IoError("cannot read checkpoint payload " + bpath.string());
  const std::string payload((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  try {
    if (h.value("format", std::string()) != "condreg-checkpoint") throw ValidationError("not a checkpoint: " + jpath.string());
    const int version = h.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw ValidationError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    const std::size_t floats = h.at("payload_floats").get<std::size_t>();
    if (payload.size() != floats * 4)
      throw IoError("checkpoint payload " + bpath.string() + " is truncated or padded: " + std::to_string(payload.size()) +
                    " bytes, header says " + std::to_string(floats * 4));

    ModelState state;
    state.model.backbone = backbone_from(h.at("backbone"));
    state.model.n_tasks = h.at("n_tasks").get<int>();
    state.model.head = parse_head_mode(h.at("head").get<std::string>());
    state.iteration = h.value("iteration", 0);
    const std::string opt = h.value("optimizer", std::string("none"));
    if (opt != "none") state.optimizer = parse_optimizer(opt);
    const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data());
    std::size_t expect = 0;
    for (const auto& s : h.at("slices")) {
      const std::string group = s.at("group").get<std::string>();
      const std::vector<int> shape = s.at("shape").get<std::vector<int>>();
      const std::size_t offset = s.at("offset").get<std::size_t>(), count = s.at("count").get<std::size_t>();
      if (offset != expect || count != shape_size(shape) || offset + count > floats)
        throw ValidationError("checkpoint slice '" + s.at("name").get<std::string>() + "' has inconsistent offset/shape");
      std::vector<float> values(count);
      for (std::size_t i = 0; i < count; ++i) values[i] = read_le(bytes + 4 * (offset + i));
      Tensor t(shape, std::move(values));
      if (group == "params")
        state.model.params.add(s.at("name").get<std::string>(), std::move(t));
      else if (group == "velocity")
        state.velocity.add(s.at("name").get<std::string>(), std::move(t));
      else if (group == "second_moment")
        state.second_moment.add(s.at("name").get<std::string>(), std::move(t));
      else
        throw ValidationError("unknown checkpoint slice group '" + group + "'");
      expect += count;
    }
    if (expect != floats) throw ValidationError("checkpoint slices do not cover the payload");
    state.model.validate();
    if (!state.velocity.entries().empty() && !same_layout(state.velocity, state.model.params))
      throw ValidationError("checkpoint optimizer state does not match the parameters");
    if (state.optimizer == Optimizer::adam && !state.velocity.entries().empty() &&
        !same_layout(state.second_moment, state.model.params))
      throw ValidationError("checkpoint Adam second moment does not match the parameters");
    return state;
  } catch (const json::exception& e) {
    throw ValidationError("bad checkpoint header " + jpath.string() + ": " + e.what());
  }
}

// ---- inference ----

Inference infer(const Model& model, const TaskDescriptor& task, const Volume& fixed, const Volume& moving,
                const LabelMap* fixed_mask, const LabelMap* moving_mask, const DisplacementField* truth) {
  Registration r = register_pair(fixed, moving, task, model);
  Inference out{std::move(r.field), std::move(r.warped), std::nullopt};
  if (fixed_mask && moving_mask) out.report = metrics::evaluate(out.field, fixed_mask, moving_mask, truth);
  return out;
}

IoResult instance_optimize(const Model& model, const TaskDescriptor& task, const Volume& fixed, const Volume& moving,
                           const IoOptions& options) {
  if (options.steps < 1) throw ValidationError("instance optimization needs steps >= 1");
  if (!(options.lr > 0.0)) throw ValidationError("instance optimization lr must be > 0");
  check_task(model, task);
  const Tensor pair = backbone::pair_input(fixed, moving);
  (void)pair;
  const Tensor fixed_t = Tensor::from_volume(fixed), moving_t = Tensor::from_volume(moving);
  const float slope = static_cast<float>(model.backbone.slope);

  Tensor features, omega;
  {
    Tape tape;
    const VarMap vars = bind(tape, model.params, false);
    const Forward f = forward(model, vars, tape.constant(fixed_t), tape.constant(moving_t), task, false);
    features = f.features.value();
    omega = f.omega.value();
  }

  struct Eval {
    double loss;
    Tensor grad, field;
  };
  auto evaluate = [&](const Tensor& w, bool want_grad) {
    Tape tape;
    const Var wv = want_grad ? tape.parameter(w) : tape.constant(w);
    const Var field = apply_dynamic_head(tape.constant(features), DynamicKernels::split(wv), slope);
    const auto loss = objectives::total_loss(tape.constant(fixed_t), tape.constant(moving_t), nullptr, nullptr, field,
                                             TaskDescriptor{task.name, task.task_index, task.n_tasks, task.reg_type,
                                                            task.lambda_prior, 0.0},
                                             options.window);
    Eval e{loss.report.total, {}, field.value()};
    if (want_grad && std::isfinite(e.loss)) {
      tape.backward(loss.total);
      e.grad = wv.grad();
    }
    return e;
  };

  IoResult out;
  Eval cur = evaluate(omega, true);
  out.initial_loss = cur.loss;
  out.losses.push_back(cur.loss);
  if (!std::isfinite(cur.loss)) throw NumericError("instance optimization: non-finite initial loss");
  double lr = options.lr;
  for (int step = 0; step < options.steps; ++step) {
    bool accepted = false;
    for (int tries = 0; tries <= options.max_halvings && !accepted; ++tries) {
      Tensor next = omega;
      for (std::size_t i = 0; i < next.size(); ++i) next[i] = static_cast<float>(omega[i] - lr * cur.grad[i]);
      Eval cand = evaluate(next, true);
      if (!std::isfinite(cand.loss)) {
        warn("instance optimization: non-finite loss at step " + std::to_string(step + 1) + ", keeping best so far");
        out.warning = true;
        break;
      }
      if (cand.loss <= cur.loss) {
        omega = std::move(next);
        cur = std::move(cand);
        accepted = true;
        ++out.accepted;
      } else {
        lr *= 0.5;
      }
    }
    out.losses.push_back(cur.loss);
    if (out.warning || !accepted) break;
  }
  out.final_loss = cur.loss;
  out.field = DisplacementField(cur.field.to_volume(fixed.spacing()));
  Tape tape;
  out.warped = ops::trilinear_sample(tape.constant(moving_t), tape.constant(cur.field)).value().to_volume(moving.spacing());
  return out;
}

}  // namespace condreg
