#include "conv_kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include "condreg/error.hpp"

namespace condreg::detail {

namespace {

typedef double v8d __attribute__((vector_size(64)));

constexpr int kLanes = 8;
constexpr int kChannelBlock = 8;

inline v8d load(const double* p) {
  v8d v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}
inline void store(double* p, v8d v) { std::memcpy(p, &v, sizeof(v)); }
inline v8d splat(double x) { return v8d{x, x, x, x, x, x, x, x}; }

int ceil_div(int a, int b) { return (a + b - 1) / b; }
int round_up(int a, int b) { return ceil_div(a, b) * b; }

// Zero-padded input split into stride phases along h, so the sample feeding
// output oh through tap kh is phase (kh % s) at index oh + kh / s.
struct PhaseBuffer {
  int channels = 0, stride = 1, dp = 0, wp = 0, qn = 0;
  std::vector<double> data;

  PhaseBuffer(const float* x, int channels_, Dims in, int pad, int stride_, int out_h_padded, int kernel)
      : channels(channels_), stride(stride_) {
    dp = in.d + 2 * pad;
    wp = in.w + 2 * pad;
    qn = out_h_padded + (kernel - 1) / stride + 1;
    data.assign(static_cast<std::size_t>(channels) * stride * dp * wp * qn, 0.0);
    const std::size_t in_vox = in.voxels();
    for (int c = 0; c < channels; ++c) {
      for (int r = 0; r < stride; ++r) {
        for (int d = 0; d < in.d; ++d) {
          for (int w = 0; w < in.w; ++w) {
            double* row = row_ptr(c, r, d + pad, w + pad);
            const float* src = x + c * in_vox + in.index(d, w, 0);
            for (int q = 0; q < qn; ++q) {
              const int ih = stride * q + r - pad;
              if (ih >= 0 && ih < in.h) row[q] = src[ih];
            }
          }
        }
      }
    }
  }

  double* row_ptr(int c, int r, int d, int w) {
    return data.data() + ((((static_cast<std::size_t>(c) * stride + r) * dp + d) * wp + w) * qn);
  }
  const double* row_ptr(int c, int r, int d, int w) const {
    return data.data() + ((((static_cast<std::size_t>(c) * stride + r) * dp + d) * wp + w) * qn);
  }
};

// Weights rearranged to (ci, kd, kw, kh, co) with co padded to a multiple of
// the channel block. `flip` produces the transposed-conv kernel (spatial flip,
// in/out swapped) used by the input gradient.
std::vector<double> pack_weights(const float* w, int cout, int cin, int k, bool flip, int& packed_out, int& packed_in) {
  const int kv = k * k * k;
  const int out_ch = flip ? cin : cout;
  const int in_ch = flip ? cout : cin;
  packed_out = round_up(out_ch, kChannelBlock);
  packed_in = in_ch;
  std::vector<double> p(static_cast<std::size_t>(in_ch) * kv * packed_out, 0.0);
  for (int co = 0; co < cout; ++co) {
    for (int ci = 0; ci < cin; ++ci) {
      for (int t = 0; t < kv; ++t) {
        const double v = w[(static_cast<std::size_t>(co) * cin + ci) * kv + t];
        if (flip) {
          p[(static_cast<std::size_t>(co) * kv + (kv - 1 - t)) * packed_out + ci] = v;
        } else {
          p[(static_cast<std::size_t>(ci) * kv + t) * packed_out + co] = v;
        }
      }
    }
  }
  return p;
}

// out(co, o) = bias(co) + sum over (ci, kd, kw, kh) of w * x. Accumulation
// order per output voxel is fixed: ci, then kd, kw, kh.
void run_forward(int cin, int cout, int k, int stride, Dims in, Dims out, const float* x, const std::vector<double>& wp,
                 int packed_out, const float* bias, double* y) {
  const int pad = k / 2;
  const int oh_pad = round_up(out.h, kLanes);
  const PhaseBuffer px(x, cin, in, pad, stride, oh_pad, k);
  const std::size_t out_vox = out.voxels();
  const int kv = k * k * k;

  double row[kChannelBlock][2 * kLanes];
  for (int cb = 0; cb < packed_out; cb += kChannelBlock) {
    double b[kChannelBlock];
    for (int j = 0; j < kChannelBlock; ++j) b[j] = (bias && cb + j < cout) ? bias[cb + j] : 0.0;
    for (int od = 0; od < out.d; ++od) {
      for (int ow = 0; ow < out.w; ++ow) {
        for (int hb = 0; hb < oh_pad; hb += 2 * kLanes) {
          const bool two = hb + kLanes < oh_pad;
          v8d acc0[kChannelBlock], acc1[kChannelBlock];
          for (int j = 0; j < kChannelBlock; ++j) acc0[j] = acc1[j] = splat(b[j]);
          for (int ci = 0; ci < cin; ++ci) {
            const double* wci = wp.data() + static_cast<std::size_t>(ci) * kv * packed_out + cb;
            for (int kd = 0; kd < k; ++kd) {
              for (int kw = 0; kw < k; ++kw) {
                for (int kh = 0; kh < k; ++kh) {
                  const double* src = px.row_ptr(ci, kh % stride, stride * od + kd, stride * ow + kw) + hb + kh / stride;
                  const double* wt = wci + ((kd * k + kw) * k + kh) * packed_out;
                  const v8d x0 = load(src);
                  if (two) {
                    const v8d x1 = load(src + kLanes);
                    for (int j = 0; j < kChannelBlock; ++j) {
                      acc0[j] += wt[j] * x0;
                      acc1[j] += wt[j] * x1;
                    }
                  } else {
                    for (int j = 0; j < kChannelBlock; ++j) acc0[j] += wt[j] * x0;
                  }
                }
              }
            }
          }
          for (int j = 0; j < kChannelBlock; ++j) {
            store(row[j], acc0[j]);
            store(row[j] + kLanes, acc1[j]);
          }
          const int n = std::min(2 * kLanes, out.h - hb);
          for (int j = 0; j < kChannelBlock && cb + j < cout; ++j) {
            std::copy_n(row[j], std::max(n, 0), y + (cb + j) * out_vox + out.index(od, ow, hb));
          }
        }
      }
    }
  }
}

template <int K>
void run_params(const ConvGeometry& g, const float* dy, const float* x, float* dw) {
  constexpr int kTaps = K * K * K;
  const int s = g.stride;
  const int pad = K / 2;
  const PhaseBuffer px(x, g.in_channels, g.in, pad, s, g.out.h, K);
  const std::size_t out_vox = g.out.voxels();

  std::vector<double> dyt(out_vox * kChannelBlock);
  for (int cb = 0; cb < g.out_channels; cb += kChannelBlock) {
    const int nb = std::min(kChannelBlock, g.out_channels - cb);
    std::fill(dyt.begin(), dyt.end(), 0.0);
    for (int j = 0; j < nb; ++j) {
      const float* src = dy + (cb + j) * out_vox;
      for (std::size_t o = 0; o < out_vox; ++o) dyt[o * kChannelBlock + j] = src[o];
    }
    for (int ci = 0; ci < g.in_channels; ++ci) {
      v8d acc[kTaps];
      for (auto& a : acc) a = splat(0.0);
      std::size_t o = 0;
      for (int od = 0; od < g.out.d; ++od) {
        for (int ow = 0; ow < g.out.w; ++ow) {
          const double* rows[K * K * 2];
          for (int kd = 0; kd < K; ++kd) {
            for (int kw = 0; kw < K; ++kw) {
              for (int r = 0; r < s; ++r) rows[(kd * K + kw) * 2 + r] = px.row_ptr(ci, r, s * od + kd, s * ow + kw);
            }
          }
          for (int oh = 0; oh < g.out.h; ++oh, ++o) {
            const v8d dv = load(&dyt[o * kChannelBlock]);
            for (int kd = 0; kd < K; ++kd) {
              for (int kw = 0; kw < K; ++kw) {
                for (int kh = 0; kh < K; ++kh) {
                  acc[(kd * K + kw) * K + kh] += rows[(kd * K + kw) * 2 + kh % s][oh + kh / s] * dv;
                }
              }
            }
          }
        }
      }
      for (int t = 0; t < kTaps; ++t) {
        double lanes[kLanes];
        store(lanes, acc[t]);
        for (int j = 0; j < nb; ++j) dw[((static_cast<std::size_t>(cb + j) * g.in_channels) + ci) * kTaps + t] += static_cast<float>(lanes[j]);
      }
    }
  }
}

// Fallback for kernel sizes without a specialised path.
void run_params_generic(const ConvGeometry& g, const float* dy, const float* x, float* dw) {
  const int k = g.kernel;
  const int p = g.pad();
  const int s = g.stride;
  const std::size_t kv = g.kernel_volume();
  for (int co = 0; co < g.out_channels; ++co) {
    for (int ci = 0; ci < g.in_channels; ++ci) {
      for (int kd = 0; kd < k; ++kd) {
        for (int kw = 0; kw < k; ++kw) {
          for (int kh = 0; kh < k; ++kh) {
            double sum = 0.0;
            for (int od = 0; od < g.out.d; ++od) {
              const int id = s * od + kd - p;
              if (id < 0 || id >= g.in.d) continue;
              for (int ow = 0; ow < g.out.w; ++ow) {
                const int iw = s * ow + kw - p;
                if (iw < 0 || iw >= g.in.w) continue;
                for (int oh = 0; oh < g.out.h; ++oh) {
                  const int ih = s * oh + kh - p;
                  if (ih < 0 || ih >= g.in.h) continue;
                  sum += static_cast<double>(dy[co * g.out.voxels() + g.out.index(od, ow, oh)]) *
                         x[ci * g.in.voxels() + g.in.index(id, iw, ih)];
                }
              }
            }
            dw[(static_cast<std::size_t>(co) * g.in_channels + ci) * kv + (kd * k + kw) * k + kh] += static_cast<float>(sum);
          }
        }
      }
    }
  }
}


// Input gradient of a strided conv, one output phase at a time. Inside a phase
// every dx sample gathers dy through the same few taps, so the inner loop is a
// dense stride-1 correlation over h.
void run_strided_input(const ConvGeometry& g, const float* dy, const float* w, double* dx) {
  const int k = g.kernel, s = g.stride, p = g.pad();
  const int kv = k * k * k;
  const int pb = p;
  const std::size_t in_vox = g.in.voxels();
  const int cin = g.in_channels, cout = g.out_channels;
  const int packed = round_up(cin, kChannelBlock);

  const int sub_h_max = ceil_div(g.in.h, s);
  const PhaseBuffer pdy(dy, cout, g.out, pb, 1, round_up(sub_h_max, kLanes), 2 * pb + 1);

  struct Tap {
    int dd, dw, dh, t;
  };
  double row[kChannelBlock][kLanes];
  for (int rd = 0; rd < s; ++rd) {
    for (int rw = 0; rw < s; ++rw) {
      for (int rh = 0; rh < s; ++rh) {
        std::vector<Tap> taps;
        for (int kd = 0; kd < k; ++kd) {
          if ((rd + p - kd) % s != 0) continue;
          for (int kw = 0; kw < k; ++kw) {
            if ((rw + p - kw) % s != 0) continue;
            for (int kh = 0; kh < k; ++kh) {
              if ((rh + p - kh) % s != 0) continue;
              taps.push_back({(rd + p - kd) / s + pb, (rw + p - kw) / s + pb, (rh + p - kh) / s + pb, (kd * k + kw) * k + kh});
            }
          }
        }
        const int nd = ceil_div(g.in.d - rd, s), nw = ceil_div(g.in.w - rw, s), nh = ceil_div(g.in.h - rh, s);
        if (taps.empty() || nd <= 0 || nw <= 0 || nh <= 0) continue;
        const int nt = static_cast<int>(taps.size());
        // (co, tap, ci) with ci padded to the channel block
        std::vector<double> wp(static_cast<std::size_t>(cout) * nt * packed, 0.0);
        for (int co = 0; co < cout; ++co) {
          for (int t = 0; t < nt; ++t) {
            for (int ci = 0; ci < cin; ++ci) {
              wp[(static_cast<std::size_t>(co) * nt + t) * packed + ci] = w[(static_cast<std::size_t>(co) * cin + ci) * kv + taps[t].t];
            }
          }
        }
        for (int cb = 0; cb < packed; cb += kChannelBlock) {
          for (int md = 0; md < nd; ++md) {
            for (int mw = 0; mw < nw; ++mw) {
              for (int hb = 0; hb < nh; hb += kLanes) {
                v8d acc[kChannelBlock];
                for (auto& a : acc) a = splat(0.0);
                for (int co = 0; co < cout; ++co) {
                  const double* wco = wp.data() + static_cast<std::size_t>(co) * nt * packed + cb;
                  for (int t = 0; t < nt; ++t) {
                    const Tap& tp = taps[t];
                    const v8d x0 = load(pdy.row_ptr(co, 0, md + tp.dd, mw + tp.dw) + hb + tp.dh);
                    const double* wt = wco + t * packed;
                    for (int j = 0; j < kChannelBlock; ++j) acc[j] += wt[j] * x0;
                  }
                }
                for (int j = 0; j < kChannelBlock; ++j) store(row[j], acc[j]);
                const int n = std::min(kLanes, nh - hb);
                for (int j = 0; j < kChannelBlock && cb + j < cin; ++j) {
                  double* dst = dx + (cb + j) * in_vox + g.in.index(s * md + rd, s * mw + rw, 0);
                  for (int i = 0; i < n; ++i) dst[s * (hb + i) + rh] += row[j][i];
                }
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

ConvGeometry ConvGeometry::make(int in_channels, int out_channels, int kernel, int stride, Dims in) {
  if (kernel % 2 == 0 || kernel < 1 || kernel > 7) throw ValidationError("conv3d kernel size must be odd and at most 7");
  if (stride != 1 && stride != 2) throw ValidationError("conv3d stride must be 1 or 2");
  if (in_channels <= 0 || out_channels <= 0) throw ValidationError("conv3d channel counts must be positive");
  ConvGeometry g;
  g.in_channels = in_channels;
  g.out_channels = out_channels;
  g.kernel = kernel;
  g.stride = stride;
  g.in = in;
  g.out = {ceil_div(in.d, stride), ceil_div(in.w, stride), ceil_div(in.h, stride)};
  return g;
}

void conv_forward(const ConvGeometry& g, const float* x, const float* w, const float* b, float* y) {
  int po = 0, pi = 0;
  const auto wp = pack_weights(w, g.out_channels, g.in_channels, g.kernel, false, po, pi);
  std::vector<double> yd(g.out_channels * g.out.voxels());
  run_forward(g.in_channels, g.out_channels, g.kernel, g.stride, g.in, g.out, x, wp, po, b, yd.data());
  std::transform(yd.begin(), yd.end(), y, [](double v) { return static_cast<float>(v); });
}

void conv_backward_input(const ConvGeometry& g, const float* dy, const float* w, float* dx) {
  const int k = g.kernel;
  std::vector<double> dxd(g.in_channels * g.in.voxels(), 0.0);

  if (g.stride == 1) {
    // Transposed convolution: a forward pass over dy with the flipped kernel.
    int po = 0, pi = 0;
    const auto wp = pack_weights(w, g.out_channels, g.in_channels, k, true, po, pi);
    run_forward(g.out_channels, g.in_channels, k, 1, g.out, g.in, dy, wp, po, nullptr, dxd.data());
  } else {
    run_strided_input(g, dy, w, dxd.data());
  }
  for (std::size_t i = 0; i < dxd.size(); ++i) dx[i] += static_cast<float>(dxd[i]);
}

void conv_backward_params(const ConvGeometry& g, const float* dy, const float* x, float* dw, float* db) {
  const std::size_t out_vox = g.out.voxels();
  if (db) {
    for (int co = 0; co < g.out_channels; ++co) {
      double sum = 0.0;
      for (std::size_t i = 0; i < out_vox; ++i) sum += dy[co * out_vox + i];
      db[co] += static_cast<float>(sum);
    }
  }
  switch (g.kernel) {
    case 1: run_params<1>(g, dy, x, dw); break;
    case 3: run_params<3>(g, dy, x, dw); break;
    default: run_params_generic(g, dy, x, dw); break;
  }
}

}  // namespace condreg::detail
