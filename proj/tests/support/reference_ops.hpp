#pragma once

// Independent reference implementations used as test oracles. Everything
// here is a direct transcription of the operation definitions (triple loops,
// scatter-adds, window scans) and deliberately shares no code with the
// library kernels.

#include <algorithm>
#include <cmath>
#include <vector>

#include "errornet/rng.hpp"
#include "errornet/tensor.hpp"

namespace errornet::testref {

template <typename T>
Tensor<T> ref_conv2d(const Tensor<T>& x, const Tensor<T>& w,
                     const Tensor<T>& b) {
  const size_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const size_t Co = w.dim(0);
  Tensor<T> out = Tensor<T>::zeros({N, Co, H, W});
  for (size_t n = 0; n < N; ++n)
    for (size_t co = 0; co < Co; ++co)
      for (size_t y = 0; y < H; ++y)
        for (size_t xx = 0; xx < W; ++xx) {
          double acc = b.at({co});
          for (size_t ci = 0; ci < Ci; ++ci)
            for (int dy = 0; dy < 3; ++dy)
              for (int dx = 0; dx < 3; ++dx) {
                const int sy = static_cast<int>(y) + dy - 1;
                const int sx = static_cast<int>(xx) + dx - 1;
                if (sy < 0 || sy >= static_cast<int>(H) || sx < 0 ||
                    sx >= static_cast<int>(W))
                  continue;
                acc += static_cast<double>(
                           x.at({n, ci, static_cast<size_t>(sy),
                                 static_cast<size_t>(sx)})) *
                       w.at({co, ci, static_cast<size_t>(dy),
                             static_cast<size_t>(dx)});
              }
          out.data_mut()[((n * Co + co) * H + y) * W + xx] =
              static_cast<T>(acc);
        }
  return out;
}

template <typename T>
Tensor<T> ref_conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w,
                               const Tensor<T>& b) {
  const size_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const size_t Co = w.dim(1);
  Tensor<T> out = Tensor<T>::zeros({N, Co, 2 * H, 2 * W});
  auto data = out.data_mut();
  for (size_t n = 0; n < N; ++n)
    for (size_t co = 0; co < Co; ++co)
      for (size_t y = 0; y < 2 * H; ++y)
        for (size_t xx = 0; xx < 2 * W; ++xx)
          data[((n * Co + co) * 2 * H + y) * 2 * W + xx] = b.at({co});
  // Scatter-accumulate each input pixel into its 2x2 output block.
  for (size_t n = 0; n < N; ++n)
    for (size_t ci = 0; ci < Ci; ++ci)
      for (size_t y = 0; y < H; ++y)
        for (size_t xx = 0; xx < W; ++xx)
          for (size_t co = 0; co < Co; ++co)
            for (size_t dy = 0; dy < 2; ++dy)
              for (size_t dx = 0; dx < 2; ++dx)
                data[((n * Co + co) * 2 * H + (2 * y + dy)) * 2 * W +
                     (2 * xx + dx)] +=
                    x.at({n, ci, y, xx}) * w.at({ci, co, dy, dx});
  return out;
}

template <typename T>
Tensor<T> ref_maxpool2d(const Tensor<T>& x) {
  const size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out = Tensor<T>::zeros({N, C, H / 2, W / 2});
  auto data = out.data_mut();
  for (size_t n = 0; n < N; ++n)
    for (size_t c = 0; c < C; ++c)
      for (size_t y = 0; y < H / 2; ++y)
        for (size_t xx = 0; xx < W / 2; ++xx) {
          T best = x.at({n, c, 2 * y, 2 * xx});
          best = std::max(best, x.at({n, c, 2 * y, 2 * xx + 1}));
          best = std::max(best, x.at({n, c, 2 * y + 1, 2 * xx}));
          best = std::max(best, x.at({n, c, 2 * y + 1, 2 * xx + 1}));
          data[((n * C + c) * (H / 2) + y) * (W / 2) + xx] = best;
        }
  return out;
}

template <typename T>
Tensor<T> ref_dense(const Tensor<T>& x, const Tensor<T>& w,
                    const Tensor<T>& b) {
  const size_t N = x.dim(0);
  const size_t D = x.numel() / N;
  const size_t K = w.dim(1);
  Tensor<T> out = Tensor<T>::zeros({N, K});
  auto data = out.data_mut();
  for (size_t n = 0; n < N; ++n)
    for (size_t k = 0; k < K; ++k) {
      double acc = b.at({k});
      for (size_t d = 0; d < D; ++d)
        acc += static_cast<double>(x.data()[n * D + d]) * w.at({d, k});
      data[n * K + k] = static_cast<T>(acc);
    }
  return out;
}

// Per-pixel scalar-loop binary cross entropy over the fov, clamped.
template <typename T>
double ref_bce(const Tensor<T>& s, const Tensor<T>& g, const Tensor<T>& fov) {
  double acc = 0.0;
  size_t count = 0;
  for (size_t i = 0; i < s.numel(); ++i) {
    if (fov.data()[i] <= T(0.5)) continue;
    ++count;
    double c = std::clamp(static_cast<double>(s.data()[i]), 1e-7, 1.0 - 1e-7);
    acc -= g.data()[i] * std::log(c) + (1.0 - g.data()[i]) * std::log(1.0 - c);
  }
  return acc / count;
}

template <typename T>
double ref_mse(const Tensor<T>& a, const Tensor<T>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    acc += d * d;
  }
  return acc / a.numel();
}

// Closed-form KL per the diagonal-Gaussian formula, batch-averaged.
template <typename T>
double ref_kl(const Tensor<T>& mu, const Tensor<T>& lv) {
  double acc = 0.0;
  for (size_t i = 0; i < mu.numel(); ++i) {
    const double m = mu.data()[i], l = lv.data()[i];
    acc += m * m + std::exp(l) - 1.0 - l;
  }
  return 0.5 * acc / mu.dim(0);
}

// Monte-Carlo KL(q||p) with q = N(mu, exp(lv)) and p = N(0, I):
// E_q[log q(z) - log p(z)] averaged over the batch rows.
inline double mc_kl(const std::vector<double>& mu, const std::vector<double>& lv,
                    size_t samples, Rng& rng) {
  const size_t D = mu.size();
  double acc = 0.0;
  for (size_t s = 0; s < samples; ++s) {
    double term = 0.0;
    for (size_t d = 0; d < D; ++d) {
      const double sd = std::exp(0.5 * lv[d]);
      const double z = mu[d] + sd * rng.normal();
      const double logq =
          -0.5 * (z - mu[d]) * (z - mu[d]) / (sd * sd) - std::log(sd);
      const double logp = -0.5 * z * z;
      term += logq - logp;
    }
    acc += term;
  }
  return acc / samples;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0,
                        double hi = 1.0) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> random_normal_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
  return Tensor<T>::from(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> random_binary_tensor(Shape shape, Rng& rng, double p = 0.3) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform() < p ? T(1) : T(0);
  return Tensor<T>::from(std::move(shape), std::move(v));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) -
                             static_cast<double>(b.data()[i])));
  return m;
}

}  // namespace errornet::testref
