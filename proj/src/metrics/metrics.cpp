#include "condreg/metrics.hpp"

#include <cmath>
#include <set>

#include "condreg/error.hpp"

namespace condreg::metrics {

double dice_score(const LabelMap& a, const LabelMap& b, int label) {
  if (!(a.dims() == b.dims())) throw ValidationError("dice_score: dims mismatch");
  if (label < 1) throw ValidationError("dice_score: label must be a foreground class");
  std::size_t na = 0, nb = 0, both = 0;
  const auto la = a.labels(), lb = b.labels();
  for (std::size_t i = 0; i < la.size(); ++i) {
    const bool ia = la[i] == label, ib = lb[i] == label;
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

namespace {

// Partial derivative of component c along axis ax at (d, w, h).
double partial(const DisplacementField& f, int c, int ax, int d, int w, int h) {
  const Dims dims = f.dims();
  int idx[3] = {d, w, h};
  const int n = ax == 0 ? dims.d : ax == 1 ? dims.w : dims.h;
  const int i = idx[ax];
  auto at = [&](int j) {
    idx[ax] = j;
    return static_cast<double>(f.at(c, idx[0], idx[1], idx[2]));
  };
  if (n == 1) return 0.0;
  if (i == 0) return at(1) - at(0);
  if (i == n - 1) return at(n - 1) - at(n - 2);
  return 0.5 * (at(i + 1) - at(i - 1));
}

void require_min_dims(Dims d) {
  if (d.d < 3 || d.w < 3 || d.h < 3) throw ValidationError("Jacobian metrics need at least 3 voxels per axis");
}

template <typename Fn>
void for_interior(Dims d, Fn&& fn) {
  for (int id = 1; id < d.d - 1; ++id)
    for (int iw = 1; iw < d.w - 1; ++iw)
      for (int ih = 1; ih < d.h - 1; ++ih) fn(id, iw, ih);
}

}  // namespace

Volume jacobian_det(const DisplacementField& field) {
  const Dims d = field.dims();
  require_min_dims(d);
  std::vector<float> out(d.voxels());
  for (int id = 0; id < d.d; ++id)
    for (int iw = 0; iw < d.w; ++iw)
      for (int ih = 0; ih < d.h; ++ih) {
        double j[3][3];
        for (int c = 0; c < 3; ++c)
          for (int ax = 0; ax < 3; ++ax) j[c][ax] = (c == ax ? 1.0 : 0.0) + partial(field, c, ax, id, iw, ih);
        const double det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
                           j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                           j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
        out[d.index(id, iw, ih)] = static_cast<float>(det);
      }
  return Volume(1, d, field.spacing(), std::move(out));
}

std::size_t interior_voxels(Dims d) {
  if (d.d < 3 || d.w < 3 || d.h < 3) return 0;
  return static_cast<std::size_t>(d.d - 2) * (d.w - 2) * (d.h - 2);
}

double sdlogj(const DisplacementField& field) {
  const Volume det = jacobian_det(field);
  const Dims d = field.dims();
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  // Two passes for a stable variance.
  for_interior(d, [&](int a, int b, int c) {
    sum += std::log(std::max(static_cast<double>(det.at(0, a, b, c)), 1e-6));
    ++n;
  });
  const double mean = sum / static_cast<double>(n);
  for_interior(d, [&](int a, int b, int c) {
    const double v = std::log(std::max(static_cast<double>(det.at(0, a, b, c)), 1e-6)) - mean;
    sq += v * v;
  });
  return std::sqrt(sq / static_cast<double>(n));
}

double folding_fraction(const DisplacementField& field) {
  const Volume det = jacobian_det(field);
  std::size_t folded = 0, n = 0;
  for_interior(field.dims(), [&](int a, int b, int c) {
    folded += det.at(0, a, b, c) <= 0.0f;
    ++n;
  });
  return 100.0 * static_cast<double>(folded) / static_cast<double>(n);
}

double field_error(const DisplacementField& field, const DisplacementField& truth, const LabelMap* mask) {
  if (!(field.dims() == truth.dims())) throw ValidationError("field_error: dims mismatch");
  if (mask && !(mask->dims() == field.dims())) throw ValidationError("field_error: mask dims mismatch");
  const std::size_t n = field.dims().voxels();
  const auto u = field.data(), v = truth.data();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask && mask->labels()[i] == 0) continue;
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double e = static_cast<double>(u[c * n + i]) - v[c * n + i];
      s += e * e;
    }
    sum += std::sqrt(s);
    ++count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

LabelMap warp_labels(const LabelMap& labels, const DisplacementField& field) {
  const Dims d = labels.dims();
  if (!(field.dims() == d)) throw ValidationError("warp_labels: dims mismatch");
  std::vector<std::uint16_t> out(d.voxels());
  auto nearest = [](double q, int n) { return std::clamp(static_cast<int>(std::lround(q)), 0, n - 1); };
  for (int id = 0; id < d.d; ++id)
    for (int iw = 0; iw < d.w; ++iw)
      for (int ih = 0; ih < d.h; ++ih) {
        const int sd = nearest(id + static_cast<double>(field.at(0, id, iw, ih)), d.d);
        const int sw = nearest(iw + static_cast<double>(field.at(1, id, iw, ih)), d.w);
        const int sh = nearest(ih + static_cast<double>(field.at(2, id, iw, ih)), d.h);
        out[d.index(id, iw, ih)] = labels.at(sd, sw, sh);
      }
  return LabelMap(d, labels.spacing(), std::move(out), labels.num_classes());
}

EvalReport evaluate(const DisplacementField& field, const LabelMap* fixed_mask, const LabelMap* moving_mask,
                    const DisplacementField* truth) {
  EvalReport r;
  r.sdlogj = sdlogj(field);
  r.folding_pct = folding_fraction(field);
  r.interior_voxels = interior_voxels(field.dims());
  if (fixed_mask && moving_mask) {
    const LabelMap warped = warp_labels(*moving_mask, field);
    std::set<int> present;
    for (auto l : fixed_mask->labels()) {
      if (l != 0) present.insert(l);
    }
    double sum = 0.0;
    for (int c : present) {
      r.dice[c] = dice_score(warped, *fixed_mask, c);
      sum += r.dice[c];
    }
    r.mean_dice = present.empty() ? 0.0 : sum / static_cast<double>(present.size());
  }
  if (truth) r.tre = field_error(field, *truth, fixed_mask);
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  nlohmann::json dice = nlohmann::json::object();
  for (const auto& [c, v] : r.dice) dice[std::to_string(c)] = v;
  j["dice"] = dice;
  j["mean_dice"] = r.mean_dice;
  j["sdlogj"] = r.sdlogj;
  j["folding_pct"] = r.folding_pct;
  j["interior_voxels"] = r.interior_voxels;
  j["tre"] = r.tre ? nlohmann::json(*r.tre) : nlohmann::json(nullptr);
  return j;
}

}  // namespace condreg::metrics
