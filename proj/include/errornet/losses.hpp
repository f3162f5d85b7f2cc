#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "errornet/autodiff.hpp"
#include "errornet/ops.hpp"
#include "errornet/tensor.hpp"

namespace errornet {

constexpr double kProbClamp = 1e-7;

// Scalar objective plus named sub-terms for logging. The scalar always
// equals the sum of the components.
template <typename T>
struct LossValue {
  Tensor<T> scalar;
  std::vector<std::pair<std::string, T>> components;

  T value() const { return scalar.item(); }
  T component(const std::string& name) const {
    for (const auto& [k, v] : components)
      if (k == name) return v;
    throw UsageError("loss has no component '" + name + "'");
  }
};

namespace detail {
template <typename T>
inline void check_loss_finite(const Tensor<T>& s, const char* op) {
  if (!std::isfinite(static_cast<double>(s.item())))
    throw NumericError(std::string(op) + ": non-finite loss value");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Binary cross-entropy over field-of-view pixels only, with probability
// clamping to [1e-7, 1 - 1e-7]. Gradients flow to the prediction.
// ---------------------------------------------------------------------------
template <typename T>
LossValue<T> seg_loss(const Tensor<T>& pred, const Tensor<T>& target,
                      const Tensor<T>& fov) {
  detail::expect_same_shape(pred, target, "seg_loss");
  detail::expect_same_shape(pred, fov, "seg_loss");
  const T lo = static_cast<T>(kProbClamp);
  const T hi = static_cast<T>(1.0 - kProbClamp);
  const T* s = pred.data().data();
  const T* g = target.data().data();
  const T* f = fov.data().data();
  const size_t n = pred.numel();

  size_t count = 0;
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (f[i] <= T(0.5)) continue;
    ++count;
    const double c = std::clamp(static_cast<double>(s[i]),
                                static_cast<double>(lo),
                                static_cast<double>(hi));
    acc -= static_cast<double>(g[i]) * std::log(c) +
           (1.0 - static_cast<double>(g[i])) * std::log(1.0 - c);
  }
  if (count == 0) throw UsageError("seg_loss: empty field of view");
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / count));
  detail::check_loss_finite(out, "seg_loss");

  if (detail::recording<T>({&pred})) {
    Tensor<T> p = pred, t = target, fv = fov;
    detail::record_node<T>(
        "seg_loss", {pred}, out, [p, t, fv, count](TensorStorage<T>& o) mutable {
          if (!p.requires_grad()) return;
          const T lo = static_cast<T>(kProbClamp);
          const T hi = static_cast<T>(1.0 - kProbClamp);
          const T go = o.grad[0];
          T* gp = p.grad_mut().data();
          const T* s = p.data().data();
          const T* g = t.data().data();
          const T* f = fv.data().data();
          const T inv = go / static_cast<T>(count);
          for (size_t i = 0; i < p.numel(); ++i) {
            if (f[i] <= T(0.5)) continue;
            if (s[i] <= lo || s[i] >= hi) continue;  // clamped flat region
            gp[i] += inv * (s[i] - g[i]) / (s[i] * (T(1) - s[i]));
          }
        });
  }
  return {out, {{"bce", out.item()}}};
}

// ---------------------------------------------------------------------------
// KL(N(mu, diag(exp(log_var))) || N(0, I)), summed over dimensions and
// averaged over the batch: 0.5/N * sum(mu^2 + exp(lv) - 1 - lv).
// ---------------------------------------------------------------------------
template <typename T>
LossValue<T> kl_diag_gaussian(const Tensor<T>& mu, const Tensor<T>& log_var) {
  detail::expect_same_shape(mu, log_var, "kl_diag_gaussian");
  const size_t N = mu.dim(0);
  const T* m = mu.data().data();
  const T* lv = log_var.data().data();
  double acc = 0.0;
  for (size_t i = 0; i < mu.numel(); ++i) {
    const double mm = m[i], ll = lv[i];
    acc += mm * mm + std::exp(ll) - 1.0 - ll;
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(0.5 * acc / N));
  detail::check_loss_finite(out, "kl_diag_gaussian");

  if (detail::recording<T>({&mu, &log_var})) {
    Tensor<T> tm = mu, tl = log_var;
    detail::record_node<T>(
        "kl_diag_gaussian", {mu, log_var}, out,
        [tm, tl, N](TensorStorage<T>& o) mutable {
          const T go = o.grad[0];
          const T invn = go / static_cast<T>(N);
          if (tm.requires_grad()) {
            T* gm = tm.grad_mut().data();
            const T* m = tm.data().data();
            for (size_t i = 0; i < tm.numel(); ++i) gm[i] += invn * m[i];
          }
          if (tl.requires_grad()) {
            T* gl = tl.grad_mut().data();
            const T* lv = tl.data().data();
            for (size_t i = 0; i < tl.numel(); ++i)
              gl[i] += invn * T(0.5) *
                       (static_cast<T>(std::exp(static_cast<double>(lv[i]))) -
                        T(1));
          }
        });
  }
  return {out, {{"kl", out.item()}}};
}

// ---------------------------------------------------------------------------
// Mean squared error; gradients flow to both operands when required.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> mse_mean(const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_same_shape(a, b, "mse");
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  const size_t n = a.numel();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pa[i]) - pb[i];
    acc += d * d;
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / n));
  detail::check_loss_finite(out, "mse");

  if (detail::recording<T>({&a, &b})) {
    Tensor<T> ta = a, tb = b;
    detail::record_node<T>(
        "mse", {a, b}, out, [ta, tb, n](TensorStorage<T>& o) mutable {
          const T k = o.grad[0] * T(2) / static_cast<T>(n);
          const T* pa = ta.data().data();
          const T* pb = tb.data().data();
          if (ta.requires_grad()) {
            T* g = ta.grad_mut().data();
            for (size_t i = 0; i < n; ++i) g[i] += k * (pa[i] - pb[i]);
          }
          if (tb.requires_grad()) {
            T* g = tb.grad_mut().data();
            for (size_t i = 0; i < n; ++i) g[i] -= k * (pa[i] - pb[i]);
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// VAE objective: reconstruction MSE plus weighted KL. The recon target is
// the (detached) base-network output.
// ---------------------------------------------------------------------------
template <typename T>
LossValue<T> vae_loss(const Tensor<T>& recon, const Tensor<T>& target,
                      const Tensor<T>& mu, const Tensor<T>& log_var,
                      T kl_weight = T(1)) {
  Tensor<T> rec = mse_mean(recon, target);
  LossValue<T> kl = kl_diag_gaussian(mu, log_var);
  Tensor<T> kl_w = scale(kl.scalar, kl_weight);
  Tensor<T> total = add(rec, kl_w);
  return {total, {{"recon", rec.item()}, {"kl", kl_w.item()}}};
}

enum class ErrTargetMode { kSigned, kSquared };

// ---------------------------------------------------------------------------
// Error-prediction target. Signed mode (default): E = clamp(G - S_hat, -1, 1),
// so that S_hat + E recovers G and negative values weaken over-segmentation.
// Squared mode: E = (S_hat - G)^2. The result carries no gradient.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> err_target(const Tensor<T>& s_hat, const Tensor<T>& truth,
                     ErrTargetMode mode = ErrTargetMode::kSigned) {
  detail::expect_same_shape(s_hat, truth, "err_target");
  Tensor<T> out = Tensor<T>::zeros(s_hat.shape());
  const T* s = s_hat.data().data();
  const T* g = truth.data().data();
  T* e = out.data_mut().data();
  const size_t n = out.numel();
  if (mode == ErrTargetMode::kSigned) {
    for (size_t i = 0; i < n; ++i)
      e[i] = std::clamp(g[i] - s[i], T(-1), T(1));
  } else {
    for (size_t i = 0; i < n; ++i) {
      const T d = s[i] - g[i];
      e[i] = d * d;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Error-prediction objective: MSE between the predicted and true error maps.
// ---------------------------------------------------------------------------
template <typename T>
LossValue<T> err_pred_loss(const Tensor<T>& e_hat, const Tensor<T>& e) {
  Tensor<T> m = mse_mean(e_hat, e);
  return {m, {{"pred", m.item()}}};
}

}  // namespace errornet
