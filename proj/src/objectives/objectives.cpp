#include "condreg/objectives.hpp"

#include <cmath>

#include "condreg/error.hpp"
#include "condreg/ops.hpp"

namespace condreg::objectives {

namespace {

// In-place clipped box sum of radius r along the middle axis of an
// (outer, n, inner) buffer.
void box_axis(std::vector<double>& buf, std::size_t outer, int n, std::size_t inner, int r) {
  std::vector<double> prefix(static_cast<std::size_t>(n) + 1);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      double* base = &buf[o * n * inner + i];
      prefix[0] = 0.0;
      for (int j = 0; j < n; ++j) prefix[j + 1] = prefix[j] + base[j * inner];
      for (int j = 0; j < n; ++j) {
        const int lo = std::max(0, j - r);
        const int hi = std::min(n - 1, j + r);
        base[j * inner] = prefix[hi + 1] - prefix[lo];
      }
    }
  }
}

void box_sum(std::vector<double>& buf, Dims d, int r) {
  box_axis(buf, 1, d.d, static_cast<std::size_t>(d.w) * d.h, r);
  box_axis(buf, d.d, d.w, d.h, r);
  box_axis(buf, static_cast<std::size_t>(d.d) * d.w, d.h, 1, r);
}

int clipped_count(int j, int n, int r) { return std::min(n - 1, j + r) - std::max(0, j - r) + 1; }

struct LocalStats {
  std::vector<double> sa, sb, saa, sbb, sab, count;
};

LocalStats local_stats(const float* a, const float* b, Dims d, int r) {
  const std::size_t n = d.voxels();
  LocalStats s;
  s.sa.assign(a, a + n);
  s.sb.assign(b, b + n);
  s.saa.resize(n);
  s.sbb.resize(n);
  s.sab.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.saa[i] = static_cast<double>(a[i]) * a[i];
    s.sbb[i] = static_cast<double>(b[i]) * b[i];
    s.sab[i] = static_cast<double>(a[i]) * b[i];
  }
  for (auto* v : {&s.sa, &s.sb, &s.saa, &s.sbb, &s.sab}) box_sum(*v, d, r);
  s.count.resize(n);
  for (int id = 0; id < d.d; ++id)
    for (int iw = 0; iw < d.w; ++iw)
      for (int ih = 0; ih < d.h; ++ih)
        s.count[d.index(id, iw, ih)] =
            static_cast<double>(clipped_count(id, d.d, r)) * clipped_count(iw, d.w, r) * clipped_count(ih, d.h, r);
  return s;
}

}  // namespace

Var ncc_loss(Var a, Var b, int window) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 4 || !av.same_shape(bv)) throw ValidationError("ncc_loss: images must share shape");
  if (window < 3 || window % 2 == 0) throw ValidationError("ncc_loss window must be odd and at least 3");
  const Dims d = av.dims();
  const std::size_t n = d.voxels();
  const int channels = av.channels();
  const int r = window / 2;
  double total = 0.0;
  for (int c = 0; c < channels; ++c) {
    const LocalStats s = local_stats(av.data() + c * n, bv.data() + c * n, d, r);
    for (std::size_t i = 0; i < n; ++i) {
      const double cross = s.sab[i] - s.sa[i] * s.sb[i] / s.count[i];
      const double va = s.saa[i] - s.sa[i] * s.sa[i] / s.count[i];
      const double vb = s.sbb[i] - s.sb[i] * s.sb[i] / s.count[i];
      total += cross * cross / (va * vb + kNccEpsilon);
    }
  }
  const double norm = static_cast<double>(channels) * static_cast<double>(n);
  Tensor out = Tensor::scalar(static_cast<float>(1.0 - total / norm));
  return a.tape()->record(std::move(out), {a, b}, [a, b, r, norm](Tape& tape, const Tensor& gy) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Dims d = av.dims();
    const std::size_t n = d.voxels();
    Tensor* ga = tape.grad_sink(a);
    Tensor* gb = tape.grad_sink(b);
    const double t = -static_cast<double>(gy[0]) / norm;
    for (int c = 0; c < av.channels(); ++c) {
      const float* ap = av.data() + c * n;
      const float* bp = bv.data() + c * n;
      LocalStats s = local_stats(ap, bp, d, r);
      // Reuse the stat buffers for the per-window partials.
      std::vector<double> g_a(n), g_b(n), g_aa(n), g_bb(n), g_ab(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double inv_n = 1.0 / s.count[i];
        const double cross = s.sab[i] - s.sa[i] * s.sb[i] * inv_n;
        const double va = s.saa[i] - s.sa[i] * s.sa[i] * inv_n;
        const double vb = s.sbb[i] - s.sb[i] * s.sb[i] * inv_n;
        const double den = va * vb + kNccEpsilon;
        const double dcross = t * 2.0 * cross / den;
        const double q = t * cross * cross / (den * den);
        const double dva = -q * vb;
        const double dvb = -q * va;
        g_ab[i] = dcross;
        g_aa[i] = dva;
        g_bb[i] = dvb;
        g_a[i] = -dcross * s.sb[i] * inv_n - 2.0 * dva * s.sa[i] * inv_n;
        g_b[i] = -dcross * s.sa[i] * inv_n - 2.0 * dvb * s.sb[i] * inv_n;
      }
      for (auto* v : {&g_a, &g_b, &g_aa, &g_bb, &g_ab}) box_sum(*v, d, r);
      for (std::size_t i = 0; i < n; ++i) {
        if (ga) (*ga)[c * n + i] += static_cast<float>(g_a[i] + 2.0 * ap[i] * g_aa[i] + bp[i] * g_ab[i]);
        if (gb) (*gb)[c * n + i] += static_cast<float>(g_b[i] + 2.0 * bp[i] * g_bb[i] + ap[i] * g_ab[i]);
      }
    }
  });
}

Var diffusion_reg(Var field) {
  const Tensor& u = field.value();
  if (u.rank() != 4) throw ValidationError("diffusion_reg expects a (C, D, W, H) field");
  const Dims d = u.dims();
  const std::size_t n = d.voxels();
  const int channels = u.channels();
  const std::size_t strides[3] = {static_cast<std::size_t>(d.w) * d.h, static_cast<std::size_t>(d.h), 1};
  const int extents[3] = {d.d, d.w, d.h};
  double weights[3];
  for (int ax = 0; ax < 3; ++ax) {
    const std::size_t valid = (n / extents[ax]) * static_cast<std::size_t>(extents[ax] - 1);
    weights[ax] = valid == 0 ? 0.0 : 1.0 / (static_cast<double>(channels) * static_cast<double>(valid));
  }
  auto for_each_diff = [d, extents, strides](int ax, auto&& fn) {
    for (int id = 0; id < d.d; ++id)
      for (int iw = 0; iw < d.w; ++iw)
        for (int ih = 0; ih < d.h; ++ih) {
          const int coord[3] = {id, iw, ih};
          if (coord[ax] + 1 >= extents[ax]) continue;
          const std::size_t p = d.index(id, iw, ih);
          fn(p, p + strides[ax]);
        }
  };
  double total = 0.0;
  for (int ax = 0; ax < 3; ++ax) {
    if (weights[ax] == 0.0) continue;
    double s = 0.0;
    for (int c = 0; c < channels; ++c) {
      const float* uc = u.data() + c * n;
      for_each_diff(ax, [&](std::size_t p, std::size_t q) {
        const double diff = static_cast<double>(uc[q]) - uc[p];
        s += diff * diff;
      });
    }
    total += weights[ax] * s;
  }
  return field.tape()->record(Tensor::scalar(static_cast<float>(total)), {field},
                              [field, weights, for_each_diff, n, channels](Tape& tape, const Tensor& gy) {
                                const Tensor& u = field.value();
                                Tensor* g = tape.grad_sink(field);
                                std::vector<double> acc(u.size(), 0.0);
                                for (int ax = 0; ax < 3; ++ax) {
                                  if (weights[ax] == 0.0) continue;
                                  const double k = 2.0 * weights[ax] * gy[0];
                                  for (int c = 0; c < channels; ++c) {
                                    const float* uc = u.data() + c * n;
                                    double* ac = acc.data() + c * n;
                                    for_each_diff(ax, [&](std::size_t p, std::size_t q) {
                                      const double diff = static_cast<double>(uc[q]) - uc[p];
                                      ac[q] += k * diff;
                                      ac[p] -= k * diff;
                                    });
                                  }
                                }
                                for (std::size_t i = 0; i < acc.size(); ++i) (*g)[i] += static_cast<float>(acc[i]);
                              });
}

Tensor one_hot(const LabelMap& labels) {
  Tensor t = Tensor::feature_map(labels.num_classes(), labels.dims());
  const std::size_t n = labels.dims().voxels();
  for (std::size_t i = 0; i < n; ++i) t[labels.labels()[i] * n + i] = 1.0f;
  return t;
}

Var dice_loss(Var warped_mask, const LabelMap& fixed_mask) {
  const Tensor& p = warped_mask.value();
  if (p.rank() != 4 || p.channels() != fixed_mask.num_classes()) {
    throw ValidationError("dice_loss: warped mask has " + std::to_string(p.rank() == 4 ? p.channels() : 0) +
                          " channels, fixed mask has " + std::to_string(fixed_mask.num_classes()) + " classes");
  }
  if (!(p.dims() == fixed_mask.dims())) throw ValidationError("dice_loss: dims mismatch");
  const int classes = p.channels();
  if (classes < 2) throw ValidationError("dice_loss needs at least one foreground class");
  const std::size_t n = p.voxels();
  const auto labels = fixed_mask.labels();
  std::vector<double> inter(classes, 0.0), psum(classes, 0.0), ysum(classes, 0.0);
  for (int c = 1; c < classes; ++c) {
    const float* pc = p.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) {
      psum[c] += pc[i];
      if (labels[i] == c) {
        inter[c] += pc[i];
        ysum[c] += 1.0;
      }
    }
  }
  double mean = 0.0;
  for (int c = 1; c < classes; ++c) mean += (2.0 * inter[c] + kDiceEpsilon) / (psum[c] + ysum[c] + kDiceEpsilon);
  mean /= (classes - 1);
  std::vector<std::uint16_t> lab(labels.begin(), labels.end());
  return warped_mask.tape()->record(
      Tensor::scalar(static_cast<float>(1.0 - mean)), {warped_mask},
      [warped_mask, lab = std::move(lab), inter, psum, ysum, classes, n](Tape& tape, const Tensor& gy) {
        Tensor* g = tape.grad_sink(warped_mask);
        const double scale = -static_cast<double>(gy[0]) / (classes - 1);
        for (int c = 1; c < classes; ++c) {
          const double den = psum[c] + ysum[c] + kDiceEpsilon;
          const double num = 2.0 * inter[c] + kDiceEpsilon;
          const double g_in = scale * (2.0 * den - num) / (den * den);
          const double g_out = scale * (-num) / (den * den);
          for (std::size_t i = 0; i < n; ++i) (*g)[c * n + i] += static_cast<float>(lab[i] == c ? g_in : g_out);
        }
      });
}

Var normalized_field(Var field) {
  const Tensor& u = field.value();
  if (u.rank() != 4 || u.channels() != 3) throw ValidationError("normalized_field expects a (3, D, W, H) field");
  const Dims d = u.dims();
  const int extents[3] = {d.d, d.w, d.h};
  Var parts[3];
  for (int c = 0; c < 3; ++c) {
    const double k = extents[c] > 1 ? 2.0 / (extents[c] - 1) : 1.0;
    parts[c] = ops::scale(ops::slice(field, c * d.voxels(), {1, d.d, d.w, d.h}), k);
  }
  return ops::concat_channels(parts);
}

LossTerms total_loss(Var fixed, Var moving, const LabelMap* fixed_mask, const LabelMap* moving_mask, Var field,
                     const TaskDescriptor& task, int window) {
  const bool supervised = task.dice_weight > 0.0;
  if (supervised && (fixed_mask == nullptr || moving_mask == nullptr)) {
    throw ValidationError("task \"" + task.name + "\" has dice_weight > 0 but masks are missing");
  }
  Tape& tape = *fixed.tape();
  LossTerms out;
  out.warped = ops::trilinear_sample(moving, field);
  const Var sim = ncc_loss(fixed, out.warped, window);
  const Var reg = diffusion_reg(normalized_field(field));
  Var total = ops::add(sim, ops::scale(reg, task.lambda_prior));
  out.report.sim = sim.value().item();
  out.report.reg = reg.value().item();
  out.report.lambda_used = task.lambda_prior;
  out.report.dice_weight = supervised ? task.dice_weight : 0.0;
  if (supervised) {
    if (moving_mask->num_classes() != fixed_mask->num_classes()) {
      throw ValidationError("fixed and moving masks have different class counts");
    }
    const Var warped_mask = ops::trilinear_sample(tape.constant(one_hot(*moving_mask)), field);
    const Var dice = dice_loss(warped_mask, *fixed_mask);
    out.report.dice = dice.value().item();
    total = ops::add(total, ops::scale(dice, task.dice_weight));
  }
  out.total = total;
  out.report.total = out.report.sim + out.report.lambda_used * out.report.reg + out.report.dice_weight * out.report.dice;
  return out;
}

double ncc_loss(const Volume& a, const Volume& b, int window) {
  if (!(a.dims() == b.dims()) || a.channels() != b.channels()) throw ValidationError("ncc_loss: dims mismatch");
  Tape tape;
  return ncc_loss(tape.constant(Tensor::from_volume(a)), tape.constant(Tensor::from_volume(b)), window).value().item();
}

double diffusion_reg(const DisplacementField& field) {
  Tape tape;
  return diffusion_reg(tape.constant(Tensor::from_volume(field.components()))).value().item();
}

}  // namespace condreg::objectives
