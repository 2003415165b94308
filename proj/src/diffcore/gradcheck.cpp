#include "condreg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "condreg/error.hpp"

namespace condreg {

bool GradCheckReport::passed() const {
  return std::all_of(inputs.begin(), inputs.end(), [](const GradCheckEntry& e) { return e.passed; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : inputs) m = std::max(m, e.max_rel_error);
  return m;
}

namespace {

double reduce(const Tensor& y, const std::vector<double>& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += weights[i] * y[i];
  return s;
}

double evaluate(const TapeFunction& fn, const std::vector<Tensor>& inputs, const std::vector<double>& weights) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.constant(t));
  return reduce(fn(tape, leaves).value(), weights);
}

}  // namespace

GradCheckReport grad_check(const std::string& op, const TapeFunction& fn, const std::vector<Tensor>& inputs,
                           const std::vector<std::string>& input_names, const GradCheckOptions& options) {
  GradCheckReport report{op, options.tolerance, {}};
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);

  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.parameter(t));
  Var out = fn(tape, leaves);

  std::vector<double> weights(out.value().size(), 1.0);
  if (weights.size() > 1) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& w : weights) w = u(rng);
  }
  Tensor seed(out.value().shape());
  for (std::size_t i = 0; i < seed.size(); ++i) seed[i] = static_cast<float>(weights[i]);
  // Reduction weights must match the seed exactly.
  for (std::size_t i = 0; i < seed.size(); ++i) weights[i] = seed[i];
  tape.backward(out, seed);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    GradCheckEntry entry;
    entry.input = k < input_names.size() ? input_names[k] : "input" + std::to_string(k);
    const Tensor& analytic = leaves[k].grad();
    double scale = 0.0;
    std::vector<std::pair<double, double>> pairs;
    std::vector<Tensor> probe = inputs;
    {
      std::vector<std::size_t> coords(inputs[k].size());
      std::iota(coords.begin(), coords.end(), 0);
      if (options.max_probes > 0 && coords.size() > options.max_probes) {
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(options.max_probes);
        std::sort(coords.begin(), coords.end());
      }
      for (std::size_t j : coords) {
        const float x0 = inputs[k][j];
        auto central = [&](double h) {
          const float xp = static_cast<float>(x0 + h);
          const float xm = static_cast<float>(x0 - h);
          probe[k][j] = xp;
          const double fp = evaluate(fn, probe, weights);
          probe[k][j] = xm;
          const double fm = evaluate(fn, probe, weights);
          probe[k][j] = x0;
          return (fp - fm) / (static_cast<double>(xp) - static_cast<double>(xm));
        };
        const double numeric = options.extrapolate
                                   ? (4.0 * central(0.5 * options.step) - central(options.step)) / 3.0
                                   : central(options.step);
        const double a = analytic.empty() ? 0.0 : analytic[j];
        pairs.emplace_back(a, numeric);
        scale = std::max({scale, std::abs(a), std::abs(numeric)});
      }
      entry.probes = coords.size();
    }
    const double denom = std::max(scale, 1e-6);
    for (const auto& [a, n] : pairs) {
      const double err = std::abs(a - n);
      entry.max_abs_error = std::max(entry.max_abs_error, err);
      entry.max_rel_error = std::max(entry.max_rel_error, err / denom);
    }
    entry.passed = std::isfinite(entry.max_rel_error) && entry.max_rel_error <= options.tolerance;
    report.inputs.push_back(entry);
  }
  return report;
}

}  // namespace condreg
