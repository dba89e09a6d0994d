#include <doctest.h>

#include <cmath>
#include <numeric>

#include "sled/distmath.hpp"
#include "test_support.hpp"

using namespace sled;
using sled::testing::Wide;

TEST_CASE("softmax_temp analytic cases") {
  const std::vector<double> zero{0.0, 0.0};
  const auto p = softmax_temp(zero, 1.0);
  CHECK(p[0] == 0.5);
  CHECK(p[1] == 0.5);

  const std::vector<double> ln2{std::log(2.0), 0.0};
  const auto q = softmax_temp(ln2, 1.0);
  CHECK(q[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(q[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  CHECK_THROWS_AS(softmax_temp(zero, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(softmax_temp(zero, -1.0), std::invalid_argument);
}

TEST_CASE("softmax_temp matches a 50-digit reference at tau = 0.5") {
  const std::vector<double> l{2.0, 1.0, 0.0};
  const auto p = softmax_temp(l, 0.5);
  const auto ref = testing::wide_softmax(l, 0.5);
  for (std::size_t j = 0; j < l.size(); ++j) {
    CHECK(std::abs(p[j] - static_cast<double>(ref[j])) < 1e-15);
  }
  // Frozen from the 50-digit evaluation: e^4, e^2, 1 over their sum.
  CHECK(std::abs(p[0] - 0.86681333219733487) < 1e-15);
  CHECK(std::abs(p[1] - 0.11731042782619836) < 1e-15);
  CHECK(std::abs(p[2] - 0.015876239976466766) < 1e-15);
}

TEST_CASE("log_softmax is stable and consistent with softmax") {
  const std::vector<double> zero{0.0, 0.0};
  const auto lz = log_softmax(zero, 1.0);
  CHECK(lz[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-15));

  const std::vector<double> spread{1000.0, 0.0};
  const auto ls = log_softmax(spread, 1.0);
  CHECK(std::isfinite(ls[1]));
  CHECK(ls[0] == doctest::Approx(0.0));
  CHECK(ls[1] == doctest::Approx(-1000.0).epsilon(1e-15));

  SynthRng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> l(1 + rng.below(30));
    for (double& x : l) x = 5.0 * rng.normal();
    const double tau = 0.2 + 3.0 * rng.uniform();
    const auto p = softmax_temp(l, tau);
    const auto lp = log_softmax(l, tau);
    double sum = 0.0;
    for (std::size_t j = 0; j < l.size(); ++j) {
      CHECK(std::abs(std::exp(lp[j]) - p[j]) <= 1e-12);
      sum += std::exp(lp[j]);
    }
    CHECK(std::abs(std::log(sum)) <= 1e-10);
  }
}

TEST_CASE("property: softmax is a distribution and preserves argmax") {
  SynthRng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> l(2 + rng.below(40));
    for (double& x : l) x = 10.0 * rng.normal();
    const double tau = 0.05 + 4.0 * rng.uniform();
    const auto p = softmax_temp(l, tau);
    const double sum = std::accumulate(p.begin(), p.end(), 0.0);
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    for (double x : p) CHECK((x >= 0.0 && x <= 1.0));
    CHECK(argmax(p) == argmax(l));
  }
}

TEST_CASE("kl_div") {
  const std::vector<double> p{1.0, 0.0};
  const std::vector<double> u{0.5, 0.5};
  CHECK(kl_div(u, u) == 0.0);
  CHECK(kl_div(p, u) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(std::isinf(kl_div(u, p)));
  const std::vector<double> three{0.2, 0.3, 0.5};
  CHECK_THROWS_AS(kl_div(p, three), std::invalid_argument);

  SynthRng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + rng.below(20);
    const auto a = testing::random_simplex(rng, d);
    const auto b = testing::random_simplex(rng, d);
    Wide ref = 0;
    for (std::size_t j = 0; j < d; ++j) ref += Wide(a[j]) * log(Wide(a[j]) / Wide(b[j]));
    CHECK(std::abs(kl_div(a, b) - static_cast<double>(ref)) <= 1e-12 * std::max(1.0, static_cast<double>(ref)));
    CHECK(kl_div(a, b) >= 0.0);
    CHECK(kl_div(a, a) <= 1e-12);
  }
}

TEST_CASE("jsd bounds and symmetry") {
  const std::vector<double> a{1.0, 0.0};
  const std::vector<double> b{0.0, 1.0};
  CHECK(jsd(a, a) == 0.0);
  CHECK(jsd(a, b) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  SynthRng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 2 + rng.below(20);
    const auto p = testing::random_simplex(rng, d);
    const auto q = testing::random_simplex(rng, d);
    const double v = jsd(p, q);
    CHECK(v >= 0.0);
    CHECK(v <= std::log(2.0) + 1e-12);
    CHECK(v == doctest::Approx(jsd(q, p)).epsilon(1e-14));
  }
}

TEST_CASE("cosine_similarity") {
  const std::vector<double> x{1.0, 0.0};
  const std::vector<double> y{0.0, 1.0};
  const std::vector<double> z{0.0, 0.0};
  CHECK(cosine_similarity(x, x) == 1.0);
  CHECK(cosine_similarity(x, y) == 0.0);
  CHECK(cosine_similarity(z, x) == 0.0);
  CHECK(cosine_similarity(x, z) == 0.0);
  const std::vector<double> neg{-2.0, 0.0};
  CHECK(cosine_similarity(x, neg) == -1.0);
}

TEST_CASE("kl_grad_onehot closed form") {
  const std::vector<double> half{0.5, 0.5};
  const auto g1 = kl_grad_onehot(half, 0, 1.0);
  CHECK(g1[0] == -0.5);
  CHECK(g1[1] == 0.5);
  const auto g2 = kl_grad_onehot(half, 0, 2.0);
  CHECK(g2[0] == -0.25);
  CHECK(g2[1] == 0.25);
  CHECK_THROWS_AS(kl_grad_onehot(half, 2, 1.0), std::out_of_range);
}

TEST_CASE("kl_grad_latent closed form") {
  SynthRng rng(9);
  std::vector<double> l(8);
  for (double& x : l) x = rng.normal();
  const auto p = softmax_temp(l, 1.3);
  const auto zero = kl_grad_latent(p, p, 1.3);
  for (double g : zero) CHECK(g == 0.0);

  std::vector<double> onehot(8, 0.0);
  onehot[3] = 1.0;
  const auto a = kl_grad_latent(p, onehot, 1.3);
  const auto b = kl_grad_onehot(p, 3, 1.3);
  for (std::size_t j = 0; j < 8; ++j) CHECK(a[j] == doctest::Approx(b[j]).epsilon(1e-15));
}

TEST_CASE("property: closed-form gradients match central differences") {
  SynthRng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 16;
    std::vector<double> l(d);
    for (double& x : l) x = 2.0 * rng.normal();
    const double tau = 0.5 + 1.5 * rng.uniform();
    const auto p = softmax_temp(l, tau);

    const std::size_t i = rng.below(d);
    std::vector<double> e(d, 0.0);
    e[i] = 1.0;
    const auto fd1 = testing::central_difference(
        [&](const std::vector<double>& x) { return testing::kl_target_softmax(e, x, tau); }, l, 1e-5);
    const auto g1 = kl_grad_onehot(p, i, tau);
    CHECK(testing::relative_error(g1, fd1) <= 1e-6);

    const auto latent = testing::random_simplex(rng, d);
    const auto fd2 = testing::central_difference(
        [&](const std::vector<double>& x) { return testing::kl_target_softmax(latent, x, tau); }, l,
        1e-5);
    const auto g2 = kl_grad_latent(p, latent, tau);
    CHECK(testing::relative_error(g2, fd2) <= 1e-6);

    CHECK(std::abs(std::accumulate(g1.begin(), g1.end(), 0.0)) <= 1e-12);
    CHECK(std::abs(std::accumulate(g2.begin(), g2.end(), 0.0)) <= 1e-12);
  }
}
