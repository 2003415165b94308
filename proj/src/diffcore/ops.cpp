#include "condreg/ops.hpp"

#include <algorithm>
#include <cmath>

#include "condreg/error.hpp"
#include "conv_kernels.hpp"

namespace condreg::ops {

namespace {

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) throw ValidationError(std::string(what) + " expects a rank-4 (C, D, W, H) tensor");
}

void accumulate(Tensor* sink, const std::vector<double>& values) {
  if (!sink) return;
  for (std::size_t i = 0; i < values.size(); ++i) (*sink)[i] += static_cast<float>(values[i]);
}

}  // namespace

Var conv3d(Var x, Var w, Var b, int stride) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require_rank4(xv, "conv3d");
  if (wv.rank() != 5) throw ValidationError("conv3d weight must have shape (Cout, Cin, k, k, k)");
  const int cout = wv.extent(0);
  const int cin = wv.extent(1);
  const int k = wv.extent(2);
  if (wv.extent(3) != k || wv.extent(4) != k) throw ValidationError("conv3d kernel must be cubic");
  if (k % 2 == 0) throw ValidationError("conv3d kernel size must be odd");
  if (xv.channels() != cin) {
    throw ValidationError("conv3d channel mismatch: input has " + std::to_string(xv.channels()) + ", kernel expects " +
                          std::to_string(cin));
  }
  if (b.value().rank() != 1 || b.value().extent(0) != cout) throw ValidationError("conv3d bias must have shape (Cout)");
  const auto g = detail::ConvGeometry::make(cin, cout, k, stride, xv.dims());
  Tensor y = Tensor::feature_map(cout, g.out);
  detail::conv_forward(g, xv.data(), wv.data(), b.value().data(), y.data());
  return x.tape()->record(std::move(y), {x, w, b}, [x, w, b, g](Tape& tape, const Tensor& gy) {
    if (Tensor* gx = tape.grad_sink(x)) detail::conv_backward_input(g, gy.data(), w.value().data(), gx->data());
    Tensor* gw = tape.grad_sink(w);
    Tensor* gb = tape.grad_sink(b);
    if (gw) {
      detail::conv_backward_params(g, gy.data(), x.value().data(), gw->data(), gb ? gb->data() : nullptr);
    } else if (gb) {
      const std::size_t n = g.out.voxels();
      for (int co = 0; co < g.out_channels; ++co) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += gy[co * n + i];
        (*gb)[co] += static_cast<float>(s);
      }
    }
  });
}

Var leaky_relu(Var x, float slope) {
  if (!(slope > 0.0f && slope < 1.0f)) throw ValidationError("leaky_relu slope must lie in (0, 1)");
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > 0.0f ? xv[i] : slope * xv[i];
  return x.tape()->record(std::move(y), {x}, [x, slope](Tape& tape, const Tensor& gy) {
    Tensor* gx = tape.grad_sink(x);
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += xv[i] > 0.0f ? gy[i] : slope * gy[i];
  });
}

Var add(Var a, Var b) {
  if (!a.value().same_shape(b.value())) throw ValidationError("add: shape mismatch");
  Tensor y(a.value().shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
  return a.tape()->record(std::move(y), {a, b}, [a, b](Tape& tape, const Tensor& gy) {
    for (Var v : {a, b}) {
      if (Tensor* g = tape.grad_sink(v)) {
        for (std::size_t i = 0; i < gy.size(); ++i) (*g)[i] += gy[i];
      }
    }
  });
}

Var scale(Var a, double factor) {
  Tensor y(a.value().shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<float>(factor * a.value()[i]);
  return a.tape()->record(std::move(y), {a}, [a, factor](Tape& tape, const Tensor& gy) {
    Tensor* g = tape.grad_sink(a);
    for (std::size_t i = 0; i < gy.size(); ++i) (*g)[i] += static_cast<float>(factor * gy[i]);
  });
}

namespace {

struct Corner {
  int i0, i1;
  double f;
  bool inside;  // coordinate was not clamped, so d/dq is nonzero
};

inline Corner locate(double q, int n) {
  if (n == 1) return {0, 0, 0.0, false};
  if (std::isnan(q)) return {0, 0, q, false};  // poisons the output instead of indexing out of range
  bool inside = true;
  if (q < 0.0) {
    q = 0.0;
    inside = false;
  } else if (q > n - 1) {
    q = n - 1;
    inside = false;
  }
  int i0 = static_cast<int>(std::floor(q));
  if (i0 > n - 2) i0 = n - 2;
  return {i0, i0 + 1, q - i0, inside};
}

}  // namespace

Var trilinear_sample(Var src, Var field) {
  const Tensor& sv = src.value();
  const Tensor& fv = field.value();
  require_rank4(sv, "trilinear_sample");
  require_rank4(fv, "trilinear_sample");
  if (fv.channels() != 3) throw ValidationError("trilinear_sample field must have 3 channels");
  if (!(fv.dims() == sv.dims())) {
    throw ValidationError("trilinear_sample dimension mismatch: source " + to_string(sv.dims()) + ", field " +
                          to_string(fv.dims()));
  }
  const Dims d = sv.dims();
  const std::size_t n = d.voxels();
  const int channels = sv.channels();
  Tensor y(sv.shape());
  for (int id = 0; id < d.d; ++id) {
    for (int iw = 0; iw < d.w; ++iw) {
      for (int ih = 0; ih < d.h; ++ih) {
        const std::size_t p = d.index(id, iw, ih);
        const Corner cd = locate(id + static_cast<double>(fv[p]), d.d);
        const Corner cw = locate(iw + static_cast<double>(fv[n + p]), d.w);
        const Corner ch = locate(ih + static_cast<double>(fv[2 * n + p]), d.h);
        for (int c = 0; c < channels; ++c) {
          const float* s = sv.data() + c * n;
          auto at = [&](int a, int b, int e) { return static_cast<double>(s[d.index(a, b, e)]); };
          const double c00 = at(cd.i0, cw.i0, ch.i0) * (1 - ch.f) + at(cd.i0, cw.i0, ch.i1) * ch.f;
          const double c01 = at(cd.i0, cw.i1, ch.i0) * (1 - ch.f) + at(cd.i0, cw.i1, ch.i1) * ch.f;
          const double c10 = at(cd.i1, cw.i0, ch.i0) * (1 - ch.f) + at(cd.i1, cw.i0, ch.i1) * ch.f;
          const double c11 = at(cd.i1, cw.i1, ch.i0) * (1 - ch.f) + at(cd.i1, cw.i1, ch.i1) * ch.f;
          const double c0 = c00 * (1 - cw.f) + c01 * cw.f;
          const double c1 = c10 * (1 - cw.f) + c11 * cw.f;
          y[c * n + p] = static_cast<float>(c0 * (1 - cd.f) + c1 * cd.f);
        }
      }
    }
  }
  return src.tape()->record(std::move(y), {src, field}, [src, field](Tape& tape, const Tensor& gy) {
    const Tensor& sv = src.value();
    const Tensor& fv = field.value();
    const Dims d = sv.dims();
    const std::size_t n = d.voxels();
    const int channels = sv.channels();
    Tensor* gs = tape.grad_sink(src);
    Tensor* gf = tape.grad_sink(field);
    std::vector<double> gsd(gs ? gs->size() : 0, 0.0);
    for (int id = 0; id < d.d; ++id) {
      for (int iw = 0; iw < d.w; ++iw) {
        for (int ih = 0; ih < d.h; ++ih) {
          const std::size_t p = d.index(id, iw, ih);
          const Corner cd = locate(id + static_cast<double>(fv[p]), d.d);
          const Corner cw = locate(iw + static_cast<double>(fv[n + p]), d.w);
          const Corner ch = locate(ih + static_cast<double>(fv[2 * n + p]), d.h);
          double dd = 0.0, dw = 0.0, dh = 0.0;
          for (int c = 0; c < channels; ++c) {
            const double g = gy[c * n + p];
            if (g == 0.0) continue;
            if (gs) {
              double* t = gsd.data() + c * n;
              const double wd[2] = {1 - cd.f, cd.f};
              const double ww[2] = {1 - cw.f, cw.f};
              const double wh[2] = {1 - ch.f, ch.f};
              const int xd[2] = {cd.i0, cd.i1};
              const int xw[2] = {cw.i0, cw.i1};
              const int xh[2] = {ch.i0, ch.i1};
              for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                  for (int e = 0; e < 2; ++e) t[d.index(xd[a], xw[b], xh[e])] += g * wd[a] * ww[b] * wh[e];
            }
            if (gf) {
              const float* s = sv.data() + c * n;
              auto at = [&](int a, int b, int e) { return static_cast<double>(s[d.index(a, b, e)]); };
              const double v000 = at(cd.i0, cw.i0, ch.i0), v001 = at(cd.i0, cw.i0, ch.i1);
              const double v010 = at(cd.i0, cw.i1, ch.i0), v011 = at(cd.i0, cw.i1, ch.i1);
              const double v100 = at(cd.i1, cw.i0, ch.i0), v101 = at(cd.i1, cw.i0, ch.i1);
              const double v110 = at(cd.i1, cw.i1, ch.i0), v111 = at(cd.i1, cw.i1, ch.i1);
              const double e00 = v000 * (1 - ch.f) + v001 * ch.f, e01 = v010 * (1 - ch.f) + v011 * ch.f;
              const double e10 = v100 * (1 - ch.f) + v101 * ch.f, e11 = v110 * (1 - ch.f) + v111 * ch.f;
              if (cd.inside) dd += g * ((e10 * (1 - cw.f) + e11 * cw.f) - (e00 * (1 - cw.f) + e01 * cw.f));
              if (cw.inside) dw += g * ((e01 - e00) * (1 - cd.f) + (e11 - e10) * cd.f);
              if (ch.inside) {
                const double h00 = v001 - v000, h01 = v011 - v010, h10 = v101 - v100, h11 = v111 - v110;
                dh += g * ((h00 * (1 - cw.f) + h01 * cw.f) * (1 - cd.f) + (h10 * (1 - cw.f) + h11 * cw.f) * cd.f);
              }
            }
          }
          if (gf) {
            (*gf)[p] += static_cast<float>(dd);
            (*gf)[n + p] += static_cast<float>(dw);
            (*gf)[2 * n + p] += static_cast<float>(dh);
          }
        }
      }
    }
    accumulate(gs, gsd);
  });
}

namespace {

// 1-D linear resampling along one axis of a (C, D, W, H) buffer, where
// output index j reads input coordinate min(j / 2, n - 1).
struct AxisResample {
  std::vector<int> i0, i1;
  std::vector<double> f;

  AxisResample(int n_in, int n_out) : i0(n_out), i1(n_out), f(n_out) {
    for (int j = 0; j < n_out; ++j) {
      const double t = std::min(j / 2.0, static_cast<double>(n_in - 1));
      int a = static_cast<int>(std::floor(t));
      if (a > n_in - 2) a = std::max(n_in - 2, 0);
      i0[j] = a;
      i1[j] = std::min(a + 1, n_in - 1);
      f[j] = t - a;
    }
  }
};

// shape is (outer, n, inner); resample the middle axis.
std::vector<double> resample_axis(const std::vector<double>& in, std::size_t outer, int n_in, std::size_t inner,
                                  const AxisResample& r) {
  const int n_out = static_cast<int>(r.f.size());
  std::vector<double> out(outer * n_out * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (int j = 0; j < n_out; ++j) {
      const double* a = &in[(o * n_in + r.i0[j]) * inner];
      const double* b = &in[(o * n_in + r.i1[j]) * inner];
      double* dst = &out[(o * n_out + j) * inner];
      const double f = r.f[j];
      for (std::size_t i = 0; i < inner; ++i) dst[i] = a[i] * (1 - f) + b[i] * f;
    }
  }
  return out;
}

std::vector<double> resample_axis_transpose(const std::vector<double>& g, std::size_t outer, int n_in,
                                            std::size_t inner, const AxisResample& r) {
  const int n_out = static_cast<int>(r.f.size());
  std::vector<double> out(outer * n_in * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (int j = 0; j < n_out; ++j) {
      double* a = &out[(o * n_in + r.i0[j]) * inner];
      double* b = &out[(o * n_in + r.i1[j]) * inner];
      const double* src = &g[(o * n_out + j) * inner];
      const double f = r.f[j];
      for (std::size_t i = 0; i < inner; ++i) {
        a[i] += src[i] * (1 - f);
        b[i] += src[i] * f;
      }
    }
  }
  return out;
}

}  // namespace

Var upsample_to(Var x, Dims target) {
  const Tensor& xv = x.value();
  require_rank4(xv, "upsample_to");
  const Dims in = xv.dims();
  const std::size_t c = static_cast<std::size_t>(xv.channels());
  const AxisResample rd(in.d, target.d), rw(in.w, target.w), rh(in.h, target.h);
  std::vector<double> buf(xv.values().begin(), xv.values().end());
  buf = resample_axis(buf, c * in.d * in.w, in.h, 1, rh);
  buf = resample_axis(buf, c * in.d, in.w, target.h, rw);
  buf = resample_axis(buf, c, in.d, static_cast<std::size_t>(target.w) * target.h, rd);
  Tensor y = Tensor::feature_map(xv.channels(), target);
  std::transform(buf.begin(), buf.end(), y.data(), [](double v) { return static_cast<float>(v); });
  return x.tape()->record(std::move(y), {x}, [x, in, target, rd, rw, rh](Tape& tape, const Tensor& gy) {
    const std::size_t c = static_cast<std::size_t>(x.value().channels());
    std::vector<double> g(gy.values().begin(), gy.values().end());
    g = resample_axis_transpose(g, c, in.d, static_cast<std::size_t>(target.w) * target.h, rd);
    g = resample_axis_transpose(g, c * in.d, in.w, target.h, rw);
    g = resample_axis_transpose(g, c * in.d * in.w, in.h, 1, rh);
    accumulate(tape.grad_sink(x), g);
  });
}

Var upsample2(Var x) {
  const Dims in = x.value().dims();
  return upsample_to(x, {2 * in.d, 2 * in.w, 2 * in.h});
}

Var concat_channels(std::span<const Var> xs) {
  if (xs.empty()) throw ValidationError("concat_channels needs at least one input");
  const auto& first = xs.front().value().shape();
  if (first.empty()) throw ValidationError("concat_channels cannot concatenate scalars");
  std::vector<int> shape = first;
  shape[0] = 0;
  for (const Var& v : xs) {
    const auto& s = v.value().shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw ValidationError("concat_channels: spatial dims differ between inputs");
    }
    shape[0] += s[0];
  }
  Tensor y(shape);
  std::size_t off = 0;
  std::vector<std::size_t> offsets;
  for (const Var& v : xs) {
    offsets.push_back(off);
    std::copy(v.value().values().begin(), v.value().values().end(), y.data() + off);
    off += v.value().size();
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return xs.front().tape()->record(std::move(y), xs, [inputs, offsets](Tape& tape, const Tensor& gy) {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (Tensor* g = tape.grad_sink(inputs[k])) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += gy[offsets[k] + i];
      }
    }
  });
}

Var global_mean_pool(Var x) {
  const Tensor& xv = x.value();
  require_rank4(xv, "global_mean_pool");
  const int c = xv.channels();
  const std::size_t n = xv.voxels();
  Tensor y({c});
  for (int k = 0; k < c; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += xv[k * n + i];
    y[k] = static_cast<float>(s / static_cast<double>(n));
  }
  return x.tape()->record(std::move(y), {x}, [x, c, n](Tape& tape, const Tensor& gy) {
    Tensor* g = tape.grad_sink(x);
    const double inv = 1.0 / static_cast<double>(n);
    for (int k = 0; k < c; ++k) {
      const float v = static_cast<float>(gy[k] * inv);
      for (std::size_t i = 0; i < n; ++i) (*g)[k * n + i] += v;
    }
  });
}

Var affine(Var weight, Var bias, Var x) {
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  const Tensor& xv = x.value();
  if (wv.rank() != 2 || bv.rank() != 1 || xv.rank() != 1) throw ValidationError("affine expects W (M, N), b (M), x (N)");
  const int m = wv.extent(0);
  const int n = wv.extent(1);
  if (bv.extent(0) != m || xv.extent(0) != n) {
    throw ValidationError("affine length mismatch: W is " + std::to_string(m) + "x" + std::to_string(n) + ", x has " +
                          std::to_string(xv.extent(0)));
  }
  Tensor y({m});
  for (int i = 0; i < m; ++i) {
    double s = bv[i];
    for (int j = 0; j < n; ++j) s += static_cast<double>(wv[static_cast<std::size_t>(i) * n + j]) * xv[j];
    y[i] = static_cast<float>(s);
  }
  return x.tape()->record(std::move(y), {weight, bias, x}, [weight, bias, x, m, n](Tape& tape, const Tensor& gy) {
    if (Tensor* gw = tape.grad_sink(weight)) {
      const Tensor& xv = x.value();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) (*gw)[static_cast<std::size_t>(i) * n + j] += gy[i] * xv[j];
    }
    if (Tensor* gb = tape.grad_sink(bias)) {
      for (int i = 0; i < m; ++i) (*gb)[i] += gy[i];
    }
    if (Tensor* gx = tape.grad_sink(x)) {
      const Tensor& wv = weight.value();
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int i = 0; i < m; ++i) s += static_cast<double>(wv[static_cast<std::size_t>(i) * n + j]) * gy[i];
        (*gx)[j] += static_cast<float>(s);
      }
    }
  });
}

Var slice(Var x, std::size_t offset, std::vector<int> shape) {
  const std::size_t len = shape_size(shape);
  if (offset + len > x.value().size()) throw ValidationError("slice out of range");
  const auto vals = x.value().values().subspan(offset, len);
  Tensor y(std::move(shape), std::vector<float>(vals.begin(), vals.end()));
  return x.tape()->record(std::move(y), {x}, [x, offset, len](Tape& tape, const Tensor& gy) {
    Tensor* g = tape.grad_sink(x);
    for (std::size_t i = 0; i < len; ++i) (*g)[offset + i] += gy[i];
  });
}

}  // namespace condreg::ops
