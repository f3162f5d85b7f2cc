#pragma once

// Finite-difference coverage for every differentiable operation in the
// engine, at randomized configurations. Shared between the unit tests and
// the acceptance suite.

#include <functional>
#include <string>
#include <vector>

#include "errornet/losses.hpp"
#include "errornet/ops.hpp"
#include "gradcheck.hpp"
#include "reference_ops.hpp"

namespace errornet::testref {

struct OpGradReport {
  std::string op;
  size_t configs = 0;
  double max_rel_err = 0.0;
  bool ok = true;
};

namespace graddetail {

using D = Tensor<double>;

// Scalarize a tensor-valued op with a fixed random weighting.
inline D weighted(const D& t, const D& w) { return sum_all(mul(t, w)); }

// Keep values away from the relu/leaky kink.
inline void separate_from_zero(D& t, double margin) {
  for (auto& v : t.data_mut())
    if (std::abs(v) < margin) v += v >= 0 ? margin : -margin;
}

// Ensure every 2x2 window has a clear maximum so the FD step cannot flip it.
inline void separate_windows(D& t, double gap) {
  const size_t N = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
  auto d = t.data_mut();
  for (size_t nc = 0; nc < N * C; ++nc)
    for (size_t y = 0; y < H / 2; ++y)
      for (size_t x = 0; x < W / 2; ++x) {
        double* v[4];
        v[0] = &d[nc * H * W + (2 * y) * W + 2 * x];
        v[1] = &d[nc * H * W + (2 * y) * W + 2 * x + 1];
        v[2] = &d[nc * H * W + (2 * y + 1) * W + 2 * x];
        v[3] = &d[nc * H * W + (2 * y + 1) * W + 2 * x + 1];
        for (int k = 0; k < 4; ++k) *v[k] += k * gap * 3;
      }
}

}  // namespace graddetail

inline std::vector<OpGradReport> run_gradient_suite(size_t configs_per_op,
                                                    uint64_t seed) {
  using graddetail::weighted;
  using D = Tensor<double>;
  std::vector<OpGradReport> reports;
  Rng rng(seed);

  auto run = [&](const std::string& name,
                 const std::function<GradCheckResult(Rng&)>& one) {
    OpGradReport rep;
    rep.op = name;
    for (size_t c = 0; c < configs_per_op; ++c) {
      GradCheckResult r = one(rng);
      rep.max_rel_err = std::max(rep.max_rel_err, r.max_rel_err);
      rep.ok = rep.ok && r.ok;
      ++rep.configs;
    }
    reports.push_back(rep);
  };

  run("conv2d", [](Rng& rng) {
    const size_t N = 1 + rng.uniform_int(2), Ci = 1 + rng.uniform_int(3),
                 Co = 1 + rng.uniform_int(3);
    const size_t H = 4 + 2 * rng.uniform_int(2), W = 4 + 2 * rng.uniform_int(2);
    D x = random_tensor<double>({N, Ci, H, W}, rng);
    D w = random_tensor<double>({Co, Ci, 3, 3}, rng);
    D b = random_tensor<double>({Co}, rng);
    D lw = random_tensor<double>({N, Co, H, W}, rng);
    return grad_check({&x, &w, &b},
                      [&] { return weighted(conv2d(x, w, b), lw); });
  });

  run("conv_transpose2d", [](Rng& rng) {
    const size_t N = 1 + rng.uniform_int(2), Ci = 1 + rng.uniform_int(3),
                 Co = 1 + rng.uniform_int(3);
    const size_t H = 2 + rng.uniform_int(3), W = 2 + rng.uniform_int(3);
    D x = random_tensor<double>({N, Ci, H, W}, rng);
    D w = random_tensor<double>({Ci, Co, 2, 2}, rng);
    D b = random_tensor<double>({Co}, rng);
    D lw = random_tensor<double>({N, Co, 2 * H, 2 * W}, rng);
    return grad_check({&x, &w, &b},
                      [&] { return weighted(conv_transpose2d(x, w, b), lw); });
  });

  run("maxpool2d", [](Rng& rng) {
    const size_t N = 1 + rng.uniform_int(2), C = 1 + rng.uniform_int(3);
    const size_t H = 4 + 2 * rng.uniform_int(2), W = 4;
    D x = random_tensor<double>({N, C, H, W}, rng);
    graddetail::separate_windows(x, 0.05);
    D lw = random_tensor<double>({N, C, H / 2, W / 2}, rng);
    return grad_check({&x}, [&] { return weighted(maxpool2d(x), lw); });
  });

  run("upsample_nearest", [](Rng& rng) {
    const size_t N = 1 + rng.uniform_int(2), C = 1 + rng.uniform_int(3);
    const size_t H = 2 + rng.uniform_int(3), W = 2 + rng.uniform_int(3);
    D x = random_tensor<double>({N, C, H, W}, rng);
    D lw = random_tensor<double>({N, C, 2 * H, 2 * W}, rng);
    return grad_check({&x},
                      [&] { return weighted(upsample_nearest2x(x), lw); });
  });

  run("normalize(instance)", [](Rng& rng) {
    const size_t N = 1 + rng.uniform_int(2), C = 1 + rng.uniform_int(3);
    const size_t H = 3 + rng.uniform_int(3), W = 3 + rng.uniform_int(3);
    D x = random_tensor<double>({N, C, H, W}, rng);
    D g = random_tensor<double>({C}, rng, 0.5, 1.5);
    D b = random_tensor<double>({C}, rng);
    D lw = random_tensor<double>({N, C, H, W}, rng);
    return grad_check({&x, &g, &b}, [&] {
      return weighted(normalize(x, NormMode::kInstance, g, b), lw);
    });
  });

  run("normalize(batch)", [](Rng& rng) {
    const size_t N = 2 + rng.uniform_int(2), C = 1 + rng.uniform_int(3);
    const size_t H = 3 + rng.uniform_int(2), W = 3 + rng.uniform_int(2);
    D x = random_tensor<double>({N, C, H, W}, rng);
    D g = random_tensor<double>({C}, rng, 0.5, 1.5);
    D b = random_tensor<double>({C}, rng);
    D rm = Tensor<double>::zeros({C});
    D rv = Tensor<double>::full({C}, 1.0);
    D lw = random_tensor<double>({N, C, H, W}, rng);
    return grad_check({&x, &g, &b}, [&] {
      // Running statistics are reset each call so repeated FD evaluations
      // see identical state.
      D rm2 = rm.clone(), rv2 = rv.clone();
      return weighted(
          normalize(x, NormMode::kBatch, g, b, &rm2, &rv2, true), lw);
    });
  });

  for (ActKind kind : {ActKind::kRelu, ActKind::kLeakyRelu, ActKind::kSigmoid,
                       ActKind::kTanh}) {
    run(std::string("activation(") + act_name(kind) + ")", [kind](Rng& rng) {
      const size_t N = 1 + rng.uniform_int(2), C = 1 + rng.uniform_int(3);
      const size_t H = 3 + rng.uniform_int(3), W = 3 + rng.uniform_int(3);
      D x = random_tensor<double>({N, C, H, W}, rng, -2.0, 2.0);
      if (kind == ActKind::kRelu || kind == ActKind::kLeakyRelu)
        graddetail::separate_from_zero(x, 0.01);
      D lw = random_tensor<double>({N, C, H, W}, rng);
      return grad_check({&x}, [&] { return weighted(activation(x, kind), lw); });
    });
  }

  run("dense", [](Rng& rng) {
    const size_t N = 1 + rng.uniform_int(3), Din = 2 + rng.uniform_int(5),
                 K = 2 + rng.uniform_int(4);
    D x = random_tensor<double>({N, Din}, rng);
    D w = random_tensor<double>({Din, K}, rng);
    D b = random_tensor<double>({K}, rng);
    D lw = random_tensor<double>({N, K}, rng);
    return grad_check({&x, &w, &b},
                      [&] { return weighted(dense(x, w, b), lw); });
  });

  run("concat_channels", [](Rng& rng) {
    const size_t N = 1 + rng.uniform_int(2), Ca = 1 + rng.uniform_int(3),
                 Cb = 1 + rng.uniform_int(3);
    const size_t H = 3 + rng.uniform_int(3), W = 3 + rng.uniform_int(3);
    D a = random_tensor<double>({N, Ca, H, W}, rng);
    D b = random_tensor<double>({N, Cb, H, W}, rng);
    D lw = random_tensor<double>({N, Ca + Cb, H, W}, rng);
    return grad_check({&a, &b},
                      [&] { return weighted(concat_channels(a, b), lw); });
  });

  run("seg_loss", [](Rng& rng) {
    const size_t N = 1 + rng.uniform_int(2);
    const size_t H = 4 + rng.uniform_int(3), W = 4 + rng.uniform_int(3);
    D s = random_tensor<double>({N, 1, H, W}, rng, 0.05, 0.95);
    D g = random_binary_tensor<double>({N, 1, H, W}, rng);
    D fov = random_binary_tensor<double>({N, 1, H, W}, rng, 0.8);
    fov.data_mut()[0] = 1.0;  // never empty
    return grad_check({&s}, [&] { return seg_loss(s, g, fov).scalar; });
  });

  run("kl_diag_gaussian", [](Rng& rng) {
    const size_t N = 1 + rng.uniform_int(3), Dd = 2 + rng.uniform_int(6);
    D mu = random_tensor<double>({N, Dd}, rng);
    D lv = random_tensor<double>({N, Dd}, rng);
    return grad_check({&mu, &lv},
                      [&] { return kl_diag_gaussian(mu, lv).scalar; });
  });

  run("mse(err_pred_loss)", [](Rng& rng) {
    const size_t N = 1 + rng.uniform_int(2);
    const size_t H = 4 + rng.uniform_int(3), W = 4 + rng.uniform_int(3);
    D a = random_tensor<double>({N, 1, H, W}, rng);
    D b = random_tensor<double>({N, 1, H, W}, rng);
    return grad_check({&a, &b}, [&] { return err_pred_loss(a, b).scalar; });
  });

  run("composite(conv-norm-relu-sum)", [](Rng& rng) {
    const size_t N = 1 + rng.uniform_int(2), Ci = 1 + rng.uniform_int(2),
                 Co = 1 + rng.uniform_int(3);
    const size_t H = 4, W = 6;
    D x = random_tensor<double>({N, Ci, H, W}, rng);
    D w = random_tensor<double>({Co, Ci, 3, 3}, rng);
    D b = random_tensor<double>({Co}, rng);
    D g = random_tensor<double>({Co}, rng, 0.5, 1.5);
    D bt = random_tensor<double>({Co}, rng);
    return grad_check({&x, &w, &b, &g, &bt}, [&] {
      D y = conv2d(x, w, b);
      y = normalize(y, NormMode::kInstance, g, bt);
      y = activation(y, ActKind::kLeakyRelu);
      return sum_all(y);
    });
  });

  run("sampling(reparameterization)", [](Rng& rng) {
    const size_t N = 1 + rng.uniform_int(2), Dd = 3 + rng.uniform_int(4);
    D mu = random_tensor<double>({N, Dd}, rng);
    D lv = random_tensor<double>({N, Dd}, rng);
    D eps = random_normal_tensor<double>({N, Dd}, rng);
    D lw = random_tensor<double>({N, Dd}, rng);
    return grad_check({&mu, &lv}, [&] {
      // z = mu + exp(lv/2) * eps with a fixed eps draw.
      return weighted(add(mu, mul(exp_elem(scale(lv, 0.5)), eps)), lw);
    });
  });

  return reports;
}

}  // namespace errornet::testref
