#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "errornet/autodiff.hpp"
#include "errornet/error.hpp"
#include "errornet/tensor.hpp"

namespace errornet {

enum class ActKind { kRelu, kLeakyRelu, kSigmoid, kTanh };
enum class NormMode { kInstance, kBatch };

inline const char* act_name(ActKind k) {
  switch (k) {
    case ActKind::kRelu: return "relu";
    case ActKind::kLeakyRelu: return "leaky_relu";
    case ActKind::kSigmoid: return "sigmoid";
    case ActKind::kTanh: return "tanh";
  }
  return "?";
}

constexpr double kLeakySlope = 0.01;
constexpr double kNormEps = 1e-5;
constexpr double kNormMomentum = 0.9;

namespace detail {

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.data())
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError(std::string(op) + ": non-finite value in output " +
                         shape_str(t.shape()));
}

template <typename T>
inline void expect_rank(const Tensor<T>& t, size_t rank, const char* op) {
  if (t.ndim() != rank)
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + " tensor, got " +
                     shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: 3x3 kernel, stride 1, zero padding 1 (spatial size preserved).
// input [N,Cin,H,W], weight [Cout,Cin,3,3], bias [Cout] -> [N,Cout,H,W].
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  detail::expect_rank(input, 4, "conv2d");
  detail::expect_rank(weight, 4, "conv2d");
  detail::expect_rank(bias, 1, "conv2d");
  const size_t N = input.dim(0), Ci = input.dim(1), H = input.dim(2),
               W = input.dim(3);
  const size_t Co = weight.dim(0);
  if (weight.dim(2) != 3 || weight.dim(3) != 3)
    throw ShapeError("conv2d: kernel must be 3x3, got " +
                     shape_str(weight.shape()));
  if (weight.dim(1) != Ci)
    throw ShapeError("conv2d: input channels " + std::to_string(Ci) +
                     " do not match weight " + shape_str(weight.shape()));
  if (bias.dim(0) != Co)
    throw ShapeError("conv2d: bias size " + std::to_string(bias.dim(0)) +
                     " does not match " + std::to_string(Co) + " filters");

  Tensor<T> out = Tensor<T>::zeros({N, Co, H, W});
  const T* x = input.data().data();
  const T* w = weight.data().data();
  const T* b = bias.data().data();
  T* y = out.data_mut().data();
  const size_t plane = H * W;

  for (size_t n = 0; n < N; ++n) {
    for (size_t co = 0; co < Co; ++co) {
      T* yp = y + (n * Co + co) * plane;
      std::fill(yp, yp + plane, b[co]);
      for (size_t ci = 0; ci < Ci; ++ci) {
        const T* xp = x + (n * Ci + ci) * plane;
        const T* wp = w + (co * Ci + ci) * 9;
        for (int dy = 0; dy < 3; ++dy) {
          for (int dx = 0; dx < 3; ++dx) {
            const T wv = wp[dy * 3 + dx];
            if (wv == T(0)) continue;
            const int x0 = std::max(0, 1 - dx);
            const int x1 = std::min<int>(W, static_cast<int>(W) + 1 - dx);
            for (size_t yy = 0; yy < H; ++yy) {
              const int sy = static_cast<int>(yy) + dy - 1;
              if (sy < 0 || sy >= static_cast<int>(H)) continue;
              const T* xrow = xp + static_cast<size_t>(sy) * W;
              T* yrow = yp + yy * W;
              for (int xx = x0; xx < x1; ++xx)
                yrow[xx] += wv * xrow[xx + dx - 1];
            }
          }
        }
      }
    }
  }
  detail::check_finite(out, "conv2d");

  if (detail::recording<T>({&input, &weight, &bias})) {
    Tensor<T> in = input, wt = weight, bs = bias;
    detail::record_node<T>(
        "conv2d", {input, weight, bias}, out,
        [in, wt, bs, N, Ci, Co, H, W](TensorStorage<T>& o) mutable {
          const T* go = o.grad.data();
          const size_t plane = H * W;
          const T* x = in.data().data();
          const T* w = wt.data().data();
          if (bs.requires_grad()) {
            T* gb = bs.grad_mut().data();
            for (size_t n = 0; n < N; ++n)
              for (size_t co = 0; co < Co; ++co) {
                const T* gp = go + (n * Co + co) * plane;
                T acc = T(0);
                for (size_t i = 0; i < plane; ++i) acc += gp[i];
                gb[co] += acc;
              }
          }
          if (wt.requires_grad()) {
            T* gw = wt.grad_mut().data();
            for (size_t co = 0; co < Co; ++co) {
              for (size_t ci = 0; ci < Ci; ++ci) {
                T* gwp = gw + (co * Ci + ci) * 9;
                for (int dy = 0; dy < 3; ++dy) {
                  for (int dx = 0; dx < 3; ++dx) {
                    const int x0 = std::max(0, 1 - dx);
                    const int x1 =
                        std::min<int>(W, static_cast<int>(W) + 1 - dx);
                    T acc = T(0);
                    for (size_t n = 0; n < N; ++n) {
                      const T* gp = go + (n * Co + co) * plane;
                      const T* xp = x + (n * Ci + ci) * plane;
                      for (size_t yy = 0; yy < H; ++yy) {
                        const int sy = static_cast<int>(yy) + dy - 1;
                        if (sy < 0 || sy >= static_cast<int>(H)) continue;
                        const T* xrow = xp + static_cast<size_t>(sy) * W;
                        const T* grow = gp + yy * W;
                        for (int xx = x0; xx < x1; ++xx)
                          acc += grow[xx] * xrow[xx + dx - 1];
                      }
                    }
                    gwp[dy * 3 + dx] += acc;
                  }
                }
              }
            }
          }
          if (in.requires_grad()) {
            T* gx = in.grad_mut().data();
            for (size_t n = 0; n < N; ++n) {
              for (size_t ci = 0; ci < Ci; ++ci) {
                T* gxp = gx + (n * Ci + ci) * plane;
                for (size_t co = 0; co < Co; ++co) {
                  const T* gp = go + (n * Co + co) * plane;
                  const T* wp = w + (co * Ci + ci) * 9;
                  for (int dy = 0; dy < 3; ++dy) {
                    for (int dx = 0; dx < 3; ++dx) {
                      const T wv = wp[dy * 3 + dx];
                      if (wv == T(0)) continue;
                      const int x0 = std::max(0, 1 - dx);
                      const int x1 =
                          std::min<int>(W, static_cast<int>(W) + 1 - dx);
                      for (size_t yy = 0; yy < H; ++yy) {
                        const int sy = static_cast<int>(yy) + dy - 1;
                        if (sy < 0 || sy >= static_cast<int>(H)) continue;
                        T* gxrow = gxp + static_cast<size_t>(sy) * W;
                        const T* grow = gp + yy * W;
                        for (int xx = x0; xx < x1; ++xx)
                          gxrow[xx + dx - 1] += wv * grow[xx];
                      }
                    }
                  }
                }
              }
            }
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv_transpose2d: 2x2 kernel, stride 2; the adjoint of a stride-2
// convolution, so spatial dimensions double exactly.
// input [N,Cin,H,W], weight [Cin,Cout,2,2], bias [Cout] -> [N,Cout,2H,2W].
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias) {
  detail::expect_rank(input, 4, "conv_transpose2d");
  detail::expect_rank(weight, 4, "conv_transpose2d");
  const size_t N = input.dim(0), Ci = input.dim(1), H = input.dim(2),
               W = input.dim(3);
  if (weight.dim(0) != Ci || weight.dim(2) != 2 || weight.dim(3) != 2)
    throw ShapeError("conv_transpose2d: expected weight [" +
                     std::to_string(Ci) + ",Cout,2,2], got " +
                     shape_str(weight.shape()));
  const size_t Co = weight.dim(1);
  if (bias.dim(0) != Co)
    throw ShapeError("conv_transpose2d: bias/filters mismatch");

  const size_t Ho = 2 * H, Wo = 2 * W;
  Tensor<T> out = Tensor<T>::zeros({N, Co, Ho, Wo});
  const T* x = input.data().data();
  const T* w = weight.data().data();
  const T* b = bias.data().data();
  T* y = out.data_mut().data();
  const size_t iplane = H * W, oplane = Ho * Wo;

  for (size_t n = 0; n < N; ++n) {
    for (size_t co = 0; co < Co; ++co) {
      T* yp = y + (n * Co + co) * oplane;
      std::fill(yp, yp + oplane, b[co]);
      for (size_t ci = 0; ci < Ci; ++ci) {
        const T* xp = x + (n * Ci + ci) * iplane;
        const T* wp = w + (ci * Co + co) * 4;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const T wv = wp[dy * 2 + dx];
            for (size_t yy = 0; yy < H; ++yy) {
              const T* xrow = xp + yy * W;
              T* yrow = yp + (2 * yy + dy) * Wo + dx;
              for (size_t xx = 0; xx < W; ++xx) yrow[2 * xx] += wv * xrow[xx];
            }
          }
        }
      }
    }
  }
  detail::check_finite(out, "conv_transpose2d");

  if (detail::recording<T>({&input, &weight, &bias})) {
    Tensor<T> in = input, wt = weight, bs = bias;
    detail::record_node<T>(
        "conv_transpose2d", {input, weight, bias}, out,
        [in, wt, bs, N, Ci, Co, H, W](TensorStorage<T>& o) mutable {
          const size_t Ho = 2 * H, Wo = 2 * W;
          const size_t iplane = H * W, oplane = Ho * Wo;
          const T* go = o.grad.data();
          const T* x = in.data().data();
          const T* w = wt.data().data();
          if (bs.requires_grad()) {
            T* gb = bs.grad_mut().data();
            for (size_t n = 0; n < N; ++n)
              for (size_t co = 0; co < Co; ++co) {
                const T* gp = go + (n * Co + co) * oplane;
                T acc = T(0);
                for (size_t i = 0; i < oplane; ++i) acc += gp[i];
                gb[co] += acc;
              }
          }
          if (wt.requires_grad()) {
            T* gw = wt.grad_mut().data();
            for (size_t ci = 0; ci < Ci; ++ci)
              for (size_t co = 0; co < Co; ++co)
                for (int dy = 0; dy < 2; ++dy)
                  for (int dx = 0; dx < 2; ++dx) {
                    T acc = T(0);
                    for (size_t n = 0; n < N; ++n) {
                      const T* xp = x + (n * Ci + ci) * iplane;
                      const T* gp = go + (n * Co + co) * oplane;
                      for (size_t yy = 0; yy < H; ++yy) {
                        const T* xrow = xp + yy * W;
                        const T* grow = gp + (2 * yy + dy) * Wo + dx;
                        for (size_t xx = 0; xx < W; ++xx)
                          acc += xrow[xx] * grow[2 * xx];
                      }
                    }
                    gw[(ci * Co + co) * 4 + dy * 2 + dx] += acc;
                  }
          }
          if (in.requires_grad()) {
            T* gx = in.grad_mut().data();
            for (size_t n = 0; n < N; ++n)
              for (size_t ci = 0; ci < Ci; ++ci) {
                T* gxp = gx + (n * Ci + ci) * iplane;
                for (size_t co = 0; co < Co; ++co) {
                  const T* gp = go + (n * Co + co) * oplane;
                  const T* wp = w + (ci * Co + co) * 4;
                  for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                      const T wv = wp[dy * 2 + dx];
                      for (size_t yy = 0; yy < H; ++yy) {
                        T* gxrow = gxp + yy * W;
                        const T* grow = gp + (2 * yy + dy) * Wo + dx;
                        for (size_t xx = 0; xx < W; ++xx)
                          gxrow[xx] += wv * grow[2 * xx];
                      }
                    }
                }
              }
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// maxpool2d: 2x2 windows, stride 2. Tie-break: first element of the window in
// row-major order, so the backward routing is deterministic.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input) {
  detail::expect_rank(input, 4, "maxpool2d");
  const size_t N = input.dim(0), C = input.dim(1), H = input.dim(2),
               W = input.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw ShapeError("maxpool2d: odd spatial dimension in " +
                     shape_str(input.shape()));
  const size_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out = Tensor<T>::zeros({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<uint32_t>>(out.numel());
  const T* x = input.data().data();
  T* y = out.data_mut().data();
  uint32_t* am = argmax->data();
  const size_t iplane = H * W, oplane = Ho * Wo;

  for (size_t nc = 0; nc < N * C; ++nc) {
    const T* xp = x + nc * iplane;
    T* yp = y + nc * oplane;
    uint32_t* ap = am + nc * oplane;
    for (size_t yy = 0; yy < Ho; ++yy) {
      for (size_t xx = 0; xx < Wo; ++xx) {
        const size_t base = 2 * yy * W + 2 * xx;
        const size_t cand[4] = {base, base + 1, base + W, base + W + 1};
        size_t best = cand[0];
        T bv = xp[best];
        for (int k = 1; k < 4; ++k)
          if (xp[cand[k]] > bv) {
            bv = xp[cand[k]];
            best = cand[k];
          }
        yp[yy * Wo + xx] = bv;
        ap[yy * Wo + xx] = static_cast<uint32_t>(best);
      }
    }
  }

  if (detail::recording<T>({&input})) {
    Tensor<T> in = input;
    detail::record_node<T>(
        "maxpool2d", {input}, out,
        [in, argmax, N, C, H, W](TensorStorage<T>& o) mutable {
          if (!in.requires_grad()) return;
          const size_t Ho = H / 2, Wo = W / 2;
          const size_t iplane = H * W, oplane = Ho * Wo;
          T* gx = in.grad_mut().data();
          const T* go = o.grad.data();
          const uint32_t* am = argmax->data();
          for (size_t nc = 0; nc < N * C; ++nc) {
            T* gxp = gx + nc * iplane;
            const T* gp = go + nc * oplane;
            const uint32_t* ap = am + nc * oplane;
            for (size_t i = 0; i < oplane; ++i) gxp[ap[i]] += gp[i];
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// upsample_nearest2x: each pixel replicated into a 2x2 block.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& input) {
  detail::expect_rank(input, 4, "upsample_nearest");
  const size_t N = input.dim(0), C = input.dim(1), H = input.dim(2),
               W = input.dim(3);
  Tensor<T> out = Tensor<T>::zeros({N, C, 2 * H, 2 * W});
  const T* x = input.data().data();
  T* y = out.data_mut().data();
  const size_t Wo = 2 * W;
  for (size_t nc = 0; nc < N * C; ++nc) {
    const T* xp = x + nc * H * W;
    T* yp = y + nc * 4 * H * W;
    for (size_t yy = 0; yy < H; ++yy) {
      const T* xrow = xp + yy * W;
      T* r0 = yp + (2 * yy) * Wo;
      T* r1 = yp + (2 * yy + 1) * Wo;
      for (size_t xx = 0; xx < W; ++xx) {
        const T v = xrow[xx];
        r0[2 * xx] = v;
        r0[2 * xx + 1] = v;
        r1[2 * xx] = v;
        r1[2 * xx + 1] = v;
      }
    }
  }

  if (detail::recording<T>({&input})) {
    Tensor<T> in = input;
    detail::record_node<T>(
        "upsample_nearest", {input}, out,
        [in, N, C, H, W](TensorStorage<T>& o) mutable {
          if (!in.requires_grad()) return;
          T* gx = in.grad_mut().data();
          const T* go = o.grad.data();
          const size_t Wo = 2 * W;
          for (size_t nc = 0; nc < N * C; ++nc) {
            T* gxp = gx + nc * H * W;
            const T* gp = go + nc * 4 * H * W;
            for (size_t yy = 0; yy < H; ++yy) {
              T* gxrow = gxp + yy * W;
              const T* r0 = gp + (2 * yy) * Wo;
              const T* r1 = gp + (2 * yy + 1) * Wo;
              for (size_t xx = 0; xx < W; ++xx)
                gxrow[xx] +=
                    r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1];
            }
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalize: instance mode standardizes each (n,c) plane; batch mode
// standardizes each channel over (N,H,W) and maintains running statistics
// (used verbatim when training=false). gamma/beta are per-channel.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> normalize(const Tensor<T>& input, NormMode mode,
                    const Tensor<T>& gamma, const Tensor<T>& beta,
                    Tensor<T>* running_mean = nullptr,
                    Tensor<T>* running_var = nullptr, bool training = true,
                    T momentum = T(kNormMomentum), T eps = T(kNormEps)) {
  detail::expect_rank(input, 4, "normalize");
  const size_t N = input.dim(0), C = input.dim(1), H = input.dim(2),
               W = input.dim(3);
  if (gamma.numel() != C || beta.numel() != C)
    throw ShapeError("normalize: gamma/beta must have " + std::to_string(C) +
                     " channels");
  const size_t plane = H * W;
  Tensor<T> out = Tensor<T>::zeros(input.shape());
  const T* x = input.data().data();
  const T* g = gamma.data().data();
  const T* bt = beta.data().data();
  T* y = out.data_mut().data();

  const bool batch_eval = (mode == NormMode::kBatch && !training);
  if (batch_eval && (running_mean == nullptr || running_var == nullptr))
    throw UsageError("normalize: eval-mode batch norm needs running stats");

  // Per-group normalized values and inverse stddev are kept for backward.
  auto xhat = std::make_shared<std::vector<T>>(input.numel());
  const size_t groups = (mode == NormMode::kInstance) ? N * C : C;
  auto inv_std = std::make_shared<std::vector<T>>(groups);

  if (mode == NormMode::kInstance) {
    for (size_t n = 0; n < N; ++n) {
      for (size_t c = 0; c < C; ++c) {
        const T* xp = x + (n * C + c) * plane;
        double sum = 0.0, sq = 0.0;
        for (size_t i = 0; i < plane; ++i) {
          sum += xp[i];
          sq += static_cast<double>(xp[i]) * xp[i];
        }
        const double m = sum / plane;
        const double var = std::max(0.0, sq / plane - m * m);
        const T is = static_cast<T>(1.0 / std::sqrt(var + eps));
        (*inv_std)[n * C + c] = is;
        T* xh = xhat->data() + (n * C + c) * plane;
        T* yp = y + (n * C + c) * plane;
        const T mm = static_cast<T>(m);
        for (size_t i = 0; i < plane; ++i) {
          xh[i] = (xp[i] - mm) * is;
          yp[i] = g[c] * xh[i] + bt[c];
        }
      }
    }
  } else if (!batch_eval) {
    const size_t gsz = N * plane;
    for (size_t c = 0; c < C; ++c) {
      double sum = 0.0, sq = 0.0;
      for (size_t n = 0; n < N; ++n) {
        const T* xp = x + (n * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          sum += xp[i];
          sq += static_cast<double>(xp[i]) * xp[i];
        }
      }
      const double m = sum / gsz;
      const double var = std::max(0.0, sq / gsz - m * m);
      const T is = static_cast<T>(1.0 / std::sqrt(var + eps));
      (*inv_std)[c] = is;
      const T mm = static_cast<T>(m);
      for (size_t n = 0; n < N; ++n) {
        const T* xp = x + (n * C + c) * plane;
        T* xh = xhat->data() + (n * C + c) * plane;
        T* yp = y + (n * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          xh[i] = (xp[i] - mm) * is;
          yp[i] = g[c] * xh[i] + bt[c];
        }
      }
      if (running_mean != nullptr && running_var != nullptr) {
        T* rm = running_mean->data_mut().data();
        T* rv = running_var->data_mut().data();
        rm[c] = momentum * rm[c] + (T(1) - momentum) * mm;
        rv[c] = momentum * rv[c] + (T(1) - momentum) * static_cast<T>(var);
      }
    }
  } else {
    const T* rm = running_mean->data().data();
    const T* rv = running_var->data().data();
    for (size_t c = 0; c < C; ++c) {
      const T is = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[c]) +
                                                  static_cast<double>(eps)));
      (*inv_std)[c] = is;
      for (size_t n = 0; n < N; ++n) {
        const T* xp = x + (n * C + c) * plane;
        T* xh = xhat->data() + (n * C + c) * plane;
        T* yp = y + (n * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          xh[i] = (xp[i] - rm[c]) * is;
          yp[i] = g[c] * xh[i] + bt[c];
        }
      }
    }
  }
  detail::check_finite(out, "normalize");

  if (detail::recording<T>({&input, &gamma, &beta})) {
    Tensor<T> in = input, gm = gamma, bta = beta;
    detail::record_node<T>(
        "normalize", {input, gamma, beta}, out,
        [in, gm, bta, xhat, inv_std, mode, batch_eval, N, C, H,
         W](TensorStorage<T>& o) mutable {
          const size_t plane = H * W;
          const T* go = o.grad.data();
          const T* xh = xhat->data();
          const T* g = gm.data().data();
          if (gm.requires_grad() || bta.requires_grad()) {
            T* gg = gm.requires_grad() ? gm.grad_mut().data() : nullptr;
            T* gb = bta.requires_grad() ? bta.grad_mut().data() : nullptr;
            for (size_t c = 0; c < C; ++c) {
              double dg = 0.0, db = 0.0;
              for (size_t n = 0; n < N; ++n) {
                const size_t off = (n * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                  dg += static_cast<double>(go[off + i]) * xh[off + i];
                  db += go[off + i];
                }
              }
              if (gg) gg[c] += static_cast<T>(dg);
              if (gb) gb[c] += static_cast<T>(db);
            }
          }
          if (!in.requires_grad()) return;
          T* gx = in.grad_mut().data();
          if (batch_eval) {
            // Running stats are constants here.
            for (size_t n = 0; n < N; ++n)
              for (size_t c = 0; c < C; ++c) {
                const size_t off = (n * C + c) * plane;
                const T k = g[c] * (*inv_std)[c];
                for (size_t i = 0; i < plane; ++i) gx[off + i] += k * go[off + i];
              }
            return;
          }
          if (mode == NormMode::kInstance) {
            for (size_t n = 0; n < N; ++n)
              for (size_t c = 0; c < C; ++c) {
                const size_t off = (n * C + c) * plane;
                double s1 = 0.0, s2 = 0.0;
                for (size_t i = 0; i < plane; ++i) {
                  const double dxh = static_cast<double>(go[off + i]) * g[c];
                  s1 += dxh;
                  s2 += dxh * xh[off + i];
                }
                const double m1 = s1 / plane, m2 = s2 / plane;
                const T is = (*inv_std)[n * C + c];
                for (size_t i = 0; i < plane; ++i) {
                  const double dxh = static_cast<double>(go[off + i]) * g[c];
                  gx[off + i] +=
                      static_cast<T>(is * (dxh - m1 - xh[off + i] * m2));
                }
              }
          } else {
            const size_t gsz = N * plane;
            for (size_t c = 0; c < C; ++c) {
              double s1 = 0.0, s2 = 0.0;
              for (size_t n = 0; n < N; ++n) {
                const size_t off = (n * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                  const double dxh = static_cast<double>(go[off + i]) * g[c];
                  s1 += dxh;
                  s2 += dxh * xh[off + i];
                }
              }
              const double m1 = s1 / gsz, m2 = s2 / gsz;
              const T is = (*inv_std)[c];
              for (size_t n = 0; n < N; ++n) {
                const size_t off = (n * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                  const double dxh = static_cast<double>(go[off + i]) * g[c];
                  gx[off + i] +=
                      static_cast<T>(is * (dxh - m1 - xh[off + i] * m2));
                }
              }
            }
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// activation: elementwise nonlinearity. Leaky slope fixed at 0.01.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> activation(const Tensor<T>& input, ActKind kind) {
  Tensor<T> out = Tensor<T>::zeros(input.shape());
  const T* x = input.data().data();
  T* y = out.data_mut().data();
  const size_t n = input.numel();
  switch (kind) {
    case ActKind::kRelu:
      for (size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case ActKind::kLeakyRelu:
      for (size_t i = 0; i < n; ++i)
        y[i] = x[i] > T(0) ? x[i] : static_cast<T>(kLeakySlope) * x[i];
      break;
    case ActKind::kSigmoid: {
      // Pinned to the open interval so probabilities never saturate to an
      // exact 0 or 1 under rounding.
      const T hi = std::nextafter(T(1), T(0));
      const T lo = std::numeric_limits<T>::min();
      for (size_t i = 0; i < n; ++i) {
        const T s = static_cast<T>(
            1.0 / (1.0 + std::exp(-static_cast<double>(x[i]))));
        y[i] = std::clamp(s, lo, hi);
      }
      break;
    }
    case ActKind::kTanh:
      for (size_t i = 0; i < n; ++i)
        y[i] = static_cast<T>(std::tanh(static_cast<double>(x[i])));
      break;
  }

  if (detail::recording<T>({&input})) {
    Tensor<T> in = input;
    detail::record_node<T>(
        "activation", {input}, out, [in, kind](TensorStorage<T>& o) mutable {
          if (!in.requires_grad()) return;
          T* gx = in.grad_mut().data();
          const T* go = o.grad.data();
          const T* x = in.data().data();
          const T* y = o.value.data();  // saved forward output
          const size_t n = in.numel();
          switch (kind) {
            case ActKind::kRelu:
              for (size_t i = 0; i < n; ++i)
                if (x[i] > T(0)) gx[i] += go[i];
              break;
            case ActKind::kLeakyRelu:
              for (size_t i = 0; i < n; ++i)
                gx[i] += x[i] > T(0) ? go[i]
                                     : static_cast<T>(kLeakySlope) * go[i];
              break;
            case ActKind::kSigmoid:
              for (size_t i = 0; i < n; ++i)
                gx[i] += go[i] * y[i] * (T(1) - y[i]);
              break;
            case ActKind::kTanh:
              for (size_t i = 0; i < n; ++i)
                gx[i] += go[i] * (T(1) - y[i] * y[i]);
              break;
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// dense: affine map on flattened rows. input [N, ...] is treated as [N, D];
// weight [D, K], bias [K] -> [N, K].
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight,
                const Tensor<T>& bias) {
  if (input.ndim() < 2) throw ShapeError("dense: input must have a batch dim");
  detail::expect_rank(weight, 2, "dense");
  const size_t N = input.dim(0);
  const size_t D = input.numel() / N;
  if (weight.dim(0) != D)
    throw ShapeError("dense: flattened input dim " + std::to_string(D) +
                     " does not match weight " + shape_str(weight.shape()));
  const size_t K = weight.dim(1);
  if (bias.numel() != K) throw ShapeError("dense: bias/output mismatch");

  Tensor<T> out = Tensor<T>::zeros({N, K});
  const T* x = input.data().data();
  const T* w = weight.data().data();
  const T* b = bias.data().data();
  T* y = out.data_mut().data();
  for (size_t n = 0; n < N; ++n) {
    T* yr = y + n * K;
    std::copy(b, b + K, yr);
    const T* xr = x + n * D;
    for (size_t d = 0; d < D; ++d) {
      const T xv = xr[d];
      if (xv == T(0)) continue;
      const T* wr = w + d * K;
      for (size_t k = 0; k < K; ++k) yr[k] += xv * wr[k];
    }
  }
  detail::check_finite(out, "dense");

  if (detail::recording<T>({&input, &weight, &bias})) {
    Tensor<T> in = input, wt = weight, bs = bias;
    detail::record_node<T>(
        "dense", {input, weight, bias}, out,
        [in, wt, bs, N, D, K](TensorStorage<T>& o) mutable {
          const T* go = o.grad.data();
          const T* x = in.data().data();
          const T* w = wt.data().data();
          if (bs.requires_grad()) {
            T* gb = bs.grad_mut().data();
            for (size_t n = 0; n < N; ++n)
              for (size_t k = 0; k < K; ++k) gb[k] += go[n * K + k];
          }
          if (wt.requires_grad()) {
            T* gw = wt.grad_mut().data();
            for (size_t d = 0; d < D; ++d) {
              T* gwr = gw + d * K;
              for (size_t n = 0; n < N; ++n) {
                const T xv = x[n * D + d];
                if (xv == T(0)) continue;
                const T* gr = go + n * K;
                for (size_t k = 0; k < K; ++k) gwr[k] += xv * gr[k];
              }
            }
          }
          if (in.requires_grad()) {
            T* gx = in.grad_mut().data();
            for (size_t n = 0; n < N; ++n) {
              T* gxr = gx + n * D;
              const T* gr = go + n * K;
              for (size_t d = 0; d < D; ++d) {
                const T* wr = w + d * K;
                T acc = T(0);
                for (size_t k = 0; k < K; ++k) acc += wr[k] * gr[k];
                gxr[d] += acc;
              }
            }
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// concat_channels: [N,Ca,H,W] ++ [N,Cb,H,W] -> [N,Ca+Cb,H,W].
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_rank(a, 4, "concat_channels");
  detail::expect_rank(b, 4, "concat_channels");
  const size_t N = a.dim(0), Ca = a.dim(1), H = a.dim(2), W = a.dim(3);
  const size_t Cb = b.dim(1);
  if (b.dim(0) != N || b.dim(2) != H || b.dim(3) != W)
    throw ShapeError("concat_channels: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros({N, Ca + Cb, H, W});
  const size_t plane = H * W;
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* y = out.data_mut().data();
  for (size_t n = 0; n < N; ++n) {
    std::copy(pa + n * Ca * plane, pa + (n + 1) * Ca * plane,
              y + n * (Ca + Cb) * plane);
    std::copy(pb + n * Cb * plane, pb + (n + 1) * Cb * plane,
              y + n * (Ca + Cb) * plane + Ca * plane);
  }

  if (detail::recording<T>({&a, &b})) {
    Tensor<T> ta = a, tb = b;
    detail::record_node<T>(
        "concat_channels", {a, b}, out,
        [ta, tb, N, Ca, Cb, plane](TensorStorage<T>& o) mutable {
          const T* go = o.grad.data();
          if (ta.requires_grad()) {
            T* ga = ta.grad_mut().data();
            for (size_t n = 0; n < N; ++n) {
              const T* src = go + n * (Ca + Cb) * plane;
              T* dst = ga + n * Ca * plane;
              for (size_t i = 0; i < Ca * plane; ++i) dst[i] += src[i];
            }
          }
          if (tb.requires_grad()) {
            T* gb = tb.grad_mut().data();
            for (size_t n = 0; n < N; ++n) {
              const T* src = go + n * (Ca + Cb) * plane + Ca * plane;
              T* dst = gb + n * Cb * plane;
              for (size_t i = 0; i < Cb * plane; ++i) dst[i] += src[i];
            }
          }
        });
  }
  return out;
}

// Channel slice [c0, c1) of a NCHW tensor; no gradient support (helper for
// tests and inspection).
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, size_t c0, size_t c1) {
  detail::expect_rank(x, 4, "slice_channels");
  const size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (c0 > c1 || c1 > C) throw ShapeError("slice_channels: bad range");
  Tensor<T> out = Tensor<T>::zeros({N, c1 - c0, H, W});
  const size_t plane = H * W;
  const T* px = x.data().data();
  T* y = out.data_mut().data();
  for (size_t n = 0; n < N; ++n)
    std::copy(px + (n * C + c0) * plane, px + (n * C + c1) * plane,
              y + n * (c1 - c0) * plane);
  return out;
}

// ---------------------------------------------------------------------------
// reshape: same payload, new shape (copied; gradient passes through).
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape shape) {
  if (shape_numel(shape) != input.numel())
    throw ShapeError("reshape: cannot view " + shape_str(input.shape()) +
                     " as " + shape_str(shape));
  Tensor<T> out = Tensor<T>::from(std::move(shape),
                                  {input.data().begin(), input.data().end()});
  if (detail::recording<T>({&input})) {
    Tensor<T> in = input;
    detail::record_node<T>("reshape", {input}, out,
                           [in](TensorStorage<T>& o) mutable {
                             if (!in.requires_grad()) return;
                             T* gx = in.grad_mut().data();
                             const T* go = o.grad.data();
                             for (size_t i = 0; i < in.numel(); ++i)
                               gx[i] += go[i];
                           });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic.
// ---------------------------------------------------------------------------
namespace detail {
template <typename T>
inline void expect_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                              const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}
}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_same_shape(a, b, "add");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* y = out.data_mut().data();
  for (size_t i = 0; i < out.numel(); ++i) y[i] = pa[i] + pb[i];
  if (detail::recording<T>({&a, &b})) {
    Tensor<T> ta = a, tb = b;
    detail::record_node<T>("add", {a, b}, out,
                           [ta, tb](TensorStorage<T>& o) mutable {
                             const T* go = o.grad.data();
                             if (ta.requires_grad()) {
                               T* g = ta.grad_mut().data();
                               for (size_t i = 0; i < ta.numel(); ++i)
                                 g[i] += go[i];
                             }
                             if (tb.requires_grad()) {
                               T* g = tb.grad_mut().data();
                               for (size_t i = 0; i < tb.numel(); ++i)
                                 g[i] += go[i];
                             }
                           });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_same_shape(a, b, "sub");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* y = out.data_mut().data();
  for (size_t i = 0; i < out.numel(); ++i) y[i] = pa[i] - pb[i];
  if (detail::recording<T>({&a, &b})) {
    Tensor<T> ta = a, tb = b;
    detail::record_node<T>("sub", {a, b}, out,
                           [ta, tb](TensorStorage<T>& o) mutable {
                             const T* go = o.grad.data();
                             if (ta.requires_grad()) {
                               T* g = ta.grad_mut().data();
                               for (size_t i = 0; i < ta.numel(); ++i)
                                 g[i] += go[i];
                             }
                             if (tb.requires_grad()) {
                               T* g = tb.grad_mut().data();
                               for (size_t i = 0; i < tb.numel(); ++i)
                                 g[i] -= go[i];
                             }
                           });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_same_shape(a, b, "mul");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* y = out.data_mut().data();
  for (size_t i = 0; i < out.numel(); ++i) y[i] = pa[i] * pb[i];
  if (detail::recording<T>({&a, &b})) {
    Tensor<T> ta = a, tb = b;
    detail::record_node<T>("mul", {a, b}, out,
                           [ta, tb](TensorStorage<T>& o) mutable {
                             const T* go = o.grad.data();
                             const T* pa = ta.data().data();
                             const T* pb = tb.data().data();
                             if (ta.requires_grad()) {
                               T* g = ta.grad_mut().data();
                               for (size_t i = 0; i < ta.numel(); ++i)
                                 g[i] += go[i] * pb[i];
                             }
                             if (tb.requires_grad()) {
                               T* g = tb.grad_mut().data();
                               for (size_t i = 0; i < tb.numel(); ++i)
                                 g[i] += go[i] * pa[i];
                             }
                           });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T k) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data().data();
  T* y = out.data_mut().data();
  for (size_t i = 0; i < out.numel(); ++i) y[i] = k * pa[i];
  if (detail::recording<T>({&a})) {
    Tensor<T> ta = a;
    detail::record_node<T>("scale", {a}, out,
                           [ta, k](TensorStorage<T>& o) mutable {
                             if (!ta.requires_grad()) return;
                             T* g = ta.grad_mut().data();
                             const T* go = o.grad.data();
                             for (size_t i = 0; i < ta.numel(); ++i)
                               g[i] += k * go[i];
                           });
  }
  return out;
}

template <typename T>
Tensor<T> exp_elem(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data().data();
  T* y = out.data_mut().data();
  for (size_t i = 0; i < out.numel(); ++i)
    y[i] = static_cast<T>(std::exp(static_cast<double>(pa[i])));
  detail::check_finite(out, "exp");
  if (detail::recording<T>({&a})) {
    Tensor<T> ta = a;
    detail::record_node<T>("exp", {a}, out,
                           [ta](TensorStorage<T>& o) mutable {
                             if (!ta.requires_grad()) return;
                             T* g = ta.grad_mut().data();
                             const T* go = o.grad.data();
                             const T* y = o.value.data();
                             for (size_t i = 0; i < ta.numel(); ++i)
                               g[i] += go[i] * y[i];
                           });
  }
  return out;
}

// Gradient flows only through elements strictly inside (lo, hi).
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data().data();
  T* y = out.data_mut().data();
  for (size_t i = 0; i < out.numel(); ++i) y[i] = std::clamp(pa[i], lo, hi);
  if (detail::recording<T>({&a})) {
    Tensor<T> ta = a;
    detail::record_node<T>("clamp", {a}, out,
                           [ta, lo, hi](TensorStorage<T>& o) mutable {
                             if (!ta.requires_grad()) return;
                             T* g = ta.grad_mut().data();
                             const T* go = o.grad.data();
                             const T* pa = ta.data().data();
                             for (size_t i = 0; i < ta.numel(); ++i)
                               if (pa[i] > lo && pa[i] < hi) g[i] += go[i];
                           });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  double acc = 0.0;
  for (T v : a.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  if (detail::recording<T>({&a})) {
    Tensor<T> ta = a;
    detail::record_node<T>("sum", {a}, out, [ta](TensorStorage<T>& o) mutable {
      if (!ta.requires_grad()) return;
      T* g = ta.grad_mut().data();
      const T go = o.grad[0];
      for (size_t i = 0; i < ta.numel(); ++i) g[i] += go;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  const size_t n = a.numel();
  double acc = 0.0;
  for (T v : a.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / n));
  if (detail::recording<T>({&a})) {
    Tensor<T> ta = a;
    detail::record_node<T>("mean", {a}, out,
                           [ta, n](TensorStorage<T>& o) mutable {
                             if (!ta.requires_grad()) return;
                             T* g = ta.grad_mut().data();
                             const T go = o.grad[0] / static_cast<T>(n);
                             for (size_t i = 0; i < ta.numel(); ++i) g[i] += go;
                           });
  }
  return out;
}

}  // namespace errornet
