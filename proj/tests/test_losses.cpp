#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "errornet/losses.hpp"
#include "errornet/rng.hpp"
#include "support/gradcheck.hpp"
#include "support/reference_ops.hpp"

using namespace errornet;
using namespace errornet::testref;

TEST_CASE("perfect prediction drives seg_loss to the clamp floor") {
  Rng rng(1);
  auto g = random_binary_tensor<float>({1, 1, 8, 8}, rng);
  auto fov = Tensor<float>::full({1, 1, 8, 8}, 1.0f);
  auto loss = seg_loss(g, g, fov);
  CHECK(loss.value() > 0.0f);   // clamping keeps the log finite but nonzero
  CHECK(loss.value() < 1e-5f);  // per-pixel cost is at the clamp floor
}

TEST_CASE("uniform 0.5 prediction costs ln 2") {
  Rng rng(2);
  auto s = Tensor<float>::full({2, 1, 6, 6}, 0.5f);
  auto g = random_binary_tensor<float>({2, 1, 6, 6}, rng);
  auto fov = Tensor<float>::full({2, 1, 6, 6}, 1.0f);
  CHECK(seg_loss(s, g, fov).value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-5));
}

TEST_CASE("seg_loss matches the per-pixel scalar-loop oracle") {
  Rng rng(3);
  for (int i = 0; i < 5; ++i) {
    auto s = random_tensor<float>({2, 1, 7, 7}, rng, 0.001, 0.999);
    auto g = random_binary_tensor<float>({2, 1, 7, 7}, rng);
    auto fov = random_binary_tensor<float>({2, 1, 7, 7}, rng, 0.7);
    fov.data_mut()[0] = 1.0f;
    CHECK(std::abs(seg_loss(s, g, fov).value() - ref_bce(s, g, fov)) < 1e-6);
  }
}

TEST_CASE("seg_loss is fov-restricted and rejects an empty fov") {
  Rng rng(4);
  auto s = random_tensor<float>({1, 1, 4, 4}, rng, 0.1, 0.9);
  auto g = random_binary_tensor<float>({1, 1, 4, 4}, rng);
  auto fov = Tensor<float>::zeros({1, 1, 4, 4});
  CHECK_THROWS_AS(seg_loss(s, g, fov), UsageError);
  // Pixels outside the fov do not contribute.
  fov.data_mut()[5] = 1.0f;
  auto s2 = s.clone();
  s2.data_mut()[0] = 0.987f;  // outside fov
  CHECK(seg_loss(s, g, fov).value() == seg_loss(s2, g, fov).value());
}

TEST_CASE("seg_loss gradients stay finite at clamped extremes") {
  auto s = Tensor<float>::from({1, 1, 1, 2}, {0.0f, 1.0f});
  s.set_requires_grad(true);
  auto g = Tensor<float>::from({1, 1, 1, 2}, {1.0f, 0.0f});
  auto fov = Tensor<float>::full({1, 1, 1, 2}, 1.0f);
  Graph<float> graph;
  {
    Graph<float>::Scope scope(graph);
    auto loss = seg_loss(s, g, fov);
    CHECK(std::isfinite(static_cast<double>(loss.value())));
    graph.backward(loss.scalar);
  }
  for (float v : s.grad()) CHECK(std::isfinite(static_cast<double>(v)));
}

TEST_CASE("kl is zero iff the posterior matches the prior") {
  auto zero = Tensor<float>::zeros({1, 4});
  CHECK(kl_diag_gaussian(zero, zero).value() == 0.0f);
  auto mu = Tensor<float>::full({1, 1}, 1.0f);
  auto lv = Tensor<float>::zeros({1, 1});
  CHECK(kl_diag_gaussian(mu, lv).value() == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("kl matches a monte-carlo estimate within two percent") {
  Rng rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<double> mu(4), lv(4);
    for (auto& v : mu) v = rng.uniform(-1.0, 1.0);
    for (auto& v : lv) v = rng.uniform(-1.0, 1.0);
    std::vector<float> muf(mu.begin(), mu.end()), lvf(lv.begin(), lv.end());
    const double analytic =
        kl_diag_gaussian(Tensor<float>::from({1, 4}, muf),
                         Tensor<float>::from({1, 4}, lvf))
            .value();
    Rng mc_rng(1000 + trial);
    const double mc = mc_kl(mu, lv, 200000, mc_rng);
    CHECK(analytic == doctest::Approx(mc).epsilon(0.02));
  }
}

TEST_CASE("vae_loss composes reconstruction and kl") {
  Rng rng(6);
  auto s = random_tensor<float>({1, 1, 5, 5}, rng, 0.0, 1.0);
  auto mu = Tensor<float>::zeros({1, 8});
  auto lv = Tensor<float>::zeros({1, 8});
  CHECK(vae_loss(s, s, mu, lv).value() == 0.0f);

  auto shifted = s.clone();
  for (auto& v : shifted.data_mut()) v += 0.1f;
  auto loss = vae_loss(shifted, s, mu, lv);
  CHECK(loss.value() == doctest::Approx(0.01).epsilon(1e-4));
  CHECK(loss.component("recon") == doctest::Approx(0.01).epsilon(1e-4));
  CHECK(loss.component("kl") == 0.0f);
}

TEST_CASE("vae_loss matches loop oracles and sums its components") {
  Rng rng(7);
  auto a = random_tensor<float>({2, 1, 6, 6}, rng, 0.0, 1.0);
  auto b = random_tensor<float>({2, 1, 6, 6}, rng, 0.0, 1.0);
  auto mu = random_tensor<float>({2, 5}, rng);
  auto lv = random_tensor<float>({2, 5}, rng);
  const float w = 0.7f;
  auto loss = vae_loss(a, b, mu, lv, w);
  const double expect = ref_mse(a, b) + w * ref_kl(mu, lv);
  CHECK(loss.value() == doctest::Approx(expect).epsilon(1e-6));
  CHECK(loss.value() ==
        doctest::Approx(loss.component("recon") + loss.component("kl"))
            .epsilon(1e-6));
}

TEST_CASE("signed error target undoes the degradation exactly") {
  Rng rng(8);
  auto s_hat = random_tensor<float>({1, 1, 8, 8}, rng, 0.0, 1.0);
  auto g = random_binary_tensor<float>({1, 1, 8, 8}, rng);
  auto e = err_target(s_hat, g);
  // S_hat + E == G bitwise in IEEE float for binary G.
  for (size_t i = 0; i < e.numel(); ++i)
    CHECK(s_hat.data()[i] + e.data()[i] == g.data()[i]);
  // Pointwise definitions from both modes.
  auto s2 = Tensor<float>::full({1, 1, 1, 1}, 0.2f);
  auto g2 = Tensor<float>::full({1, 1, 1, 1}, 1.0f);
  CHECK(err_target(s2, g2, ErrTargetMode::kSigned).item() ==
        doctest::Approx(0.8f));
  CHECK(err_target(s2, g2, ErrTargetMode::kSquared).item() ==
        doctest::Approx(0.64f));
  CHECK(err_target(g2, g2).item() == 0.0f);
}

TEST_CASE("err_pred_loss is an mse with the expected closed forms") {
  Rng rng(9);
  auto e = random_tensor<float>({1, 1, 6, 6}, rng, -1.0, 1.0);
  CHECK(err_pred_loss(e, e).value() == 0.0f);
  auto shifted = e.clone();
  for (auto& v : shifted.data_mut()) v += 0.5f;
  CHECK(err_pred_loss(shifted, e).value() ==
        doctest::Approx(0.25).epsilon(1e-5));
  auto b = random_tensor<float>({1, 1, 6, 6}, rng, -1.0, 1.0);
  CHECK(err_pred_loss(e, b).value() ==
        doctest::Approx(ref_mse(e, b)).epsilon(1e-6));
}

TEST_CASE("err_pred_loss gradient matches finite differences") {
  Rng rng(10);
  auto a = random_tensor<double>({1, 1, 5, 5}, rng, -0.9, 0.9);
  auto b = random_tensor<double>({1, 1, 5, 5}, rng, -0.9, 0.9);
  auto res = grad_check({&a}, [&] { return err_pred_loss(a, b).scalar; });
  CHECK(res.ok);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("losses are non-negative over random draws") {
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    auto s = random_tensor<float>({1, 1, 5, 5}, rng, 0.0, 1.0);
    auto g = random_binary_tensor<float>({1, 1, 5, 5}, rng);
    auto fov = Tensor<float>::full({1, 1, 5, 5}, 1.0f);
    CHECK(seg_loss(s, g, fov).value() >= 0.0f);
    auto mu = random_tensor<float>({1, 6}, rng, -2.0, 2.0);
    auto lv = random_tensor<float>({1, 6}, rng, -2.0, 2.0);
    CHECK(kl_diag_gaussian(mu, lv).value() >= 0.0f);
    auto e1 = random_tensor<float>({1, 1, 5, 5}, rng, -1.0, 1.0);
    auto e2 = random_tensor<float>({1, 1, 5, 5}, rng, -1.0, 1.0);
    CHECK(err_pred_loss(e1, e2).value() >= 0.0f);
    CHECK(vae_loss(s, s, mu, lv).value() >= 0.0f);
  }
}

TEST_CASE("oracle correction recovers the ground truth exactly") {
  Rng rng(12);
  for (int i = 0; i < 10; ++i) {
    auto s_hat = random_tensor<float>({1, 1, 6, 6}, rng, 0.0, 1.0);
    auto g = random_binary_tensor<float>({1, 1, 6, 6}, rng);
    auto e = err_target(s_hat, g);
    auto corrected = clamp(add(s_hat, e), 0.0f, 1.0f);
    CHECK(max_abs_diff(corrected, g) == 0.0);
  }
}
