#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "semidpo/diffusion.hpp"

using namespace semidpo;

namespace {

Arch small_arch(std::size_t d = 2, std::size_t d_c = 2, std::vector<std::size_t> hidden = {8, 8}) {
  Arch a;
  a.d = d;
  a.d_c = d_c;
  a.time_emb = 4;
  a.hidden = std::move(hidden);
  a.horizon = 10;
  return a;
}

}  // namespace

TEST_CASE("schedule: closed-form cases") {
  auto s1 = make_schedule(1, 0.5, 0.5);
  REQUIRE(s1.alpha_bar.size() == 1);
  CHECK(s1.alpha_bar[0] == 0.5);

  auto s3 = make_schedule(3, 0.1, 0.1);
  CHECK(s3.alpha_bar[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s3.alpha_bar[1] == doctest::Approx(0.81).epsilon(1e-15));
  CHECK(s3.alpha_bar[2] == doctest::Approx(0.729).epsilon(1e-15));
}

TEST_CASE("schedule: alpha_bar matches a separate running product") {
  const auto s = make_schedule(100, 1e-4, 0.02);
  double prod = 1.0;
  for (int t = 1; t <= 100; ++t) {
    const double beta = 1e-4 + (0.02 - 1e-4) * (t - 1) / 99.0;
    CHECK(s.beta_at(t) == doctest::Approx(beta).epsilon(1e-14));
    prod *= 1.0 - beta;
    CHECK(s.alpha_bar_at(t) == doctest::Approx(prod).epsilon(1e-13));
    CHECK(s.sigma_at(t) == doctest::Approx(std::sqrt(beta)).epsilon(1e-14));
    CHECK(s.beta_at(t) > 0.0);
    CHECK(s.beta_at(t) < 1.0);
    if (t > 1) CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
  }
  CHECK(s.alpha_bar[99] == doctest::Approx(prod).epsilon(1e-13));
}

TEST_CASE("schedule: invalid ranges") {
  CHECK_THROWS_AS(make_schedule(0, 0.1, 0.2), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.2), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.3, 0.2), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.1, 1.0), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, std::nan(""), 0.2), ConfigError);
}

TEST_CASE("q_sample: closed form") {
  SUBCASE("identity limit") {
    const auto s = make_schedule(1, 1e-300, 1e-300);
    const Vec x0{1.5, -2.0}, eps{0.3, 0.7};
    CHECK(q_sample(x0, 1, eps, s) == x0);
  }
  SUBCASE("zero signal") {
    const auto s = make_schedule(5, 0.1, 0.3);
    const Vec x0{0.0, 0.0}, eps{0.3, -0.7};
    const Vec out = q_sample(x0, 4, eps, s);
    const double k = std::sqrt(1.0 - s.alpha_bar_at(4));
    CHECK(out[0] == k * eps[0]);
    CHECK(out[1] == k * eps[1]);
  }
  SUBCASE("hand value") {
    NoiseSchedule s{1, {0.75}, {0.25}, {std::sqrt(0.75)}};
    const Vec out = q_sample(Vec{1.0, 0.0}, 1, Vec{0.0, 1.0}, s);
    CHECK(out[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(std::sqrt(0.75)).epsilon(1e-15));
  }
  SUBCASE("dimension mismatch") {
    const auto s = make_schedule(5, 0.1, 0.3);
    CHECK_THROWS_AS(q_sample(Vec{1.0, 2.0}, 1, Vec{1.0}, s), std::invalid_argument);
    CHECK_THROWS(q_sample(Vec{1.0}, 6, Vec{1.0}, s));
  }
}

TEST_CASE("q_sample: affine in (x0, eps)") {
  const auto s = make_schedule(20, 1e-3, 0.2);
  Rng rng(3);
  for (int t : {1, 7, 20}) {
    const Vec x0 = normal_vector(rng, 3), eps = normal_vector(rng, 3);
    const Vec zero(3, 0.0);
    const Vec a = q_sample(x0, t, zero, s), b = q_sample(zero, t, eps, s);
    const Vec ab = q_sample(x0, t, eps, s);
    for (int i = 0; i < 3; ++i) {
      CHECK(ab[i] == doctest::Approx(a[i] + b[i]).epsilon(1e-14));
      CHECK(a[i] == doctest::Approx(std::sqrt(s.alpha_bar_at(t)) * x0[i]).epsilon(1e-14));
    }
  }
}

TEST_CASE("q_sample: Monte-Carlo moments") {
  const auto s = make_schedule(50, 1e-3, 0.2);
  Rng rng(17);
  const Vec x0{1.0, -2.0};
  const int t = 25, n = 10000;
  const double abar = s.alpha_bar_at(t);
  double m[2] = {0, 0}, v[2] = {0, 0};
  std::vector<Vec> draws;
  for (int i = 0; i < n; ++i) draws.push_back(q_sample(x0, t, normal_vector(rng, 2), s));
  for (const auto& x : draws)
    for (int j = 0; j < 2; ++j) m[j] += x[j] / n;
  for (const auto& x : draws)
    for (int j = 0; j < 2; ++j) v[j] += (x[j] - m[j]) * (x[j] - m[j]) / (n - 1);
  for (int j = 0; j < 2; ++j) {
    const double se_mean = std::sqrt((1.0 - abar) / n);
    CHECK(std::abs(m[j] - std::sqrt(abar) * x0[j]) < 5.0 * se_mean);
    const double se_var = (1.0 - abar) * std::sqrt(2.0 / (n - 1));
    CHECK(std::abs(v[j] - (1.0 - abar)) < 5.0 * se_var);
  }
}

TEST_CASE("denoise_loss: perfect and zero predictors") {
  const auto s = make_schedule(10, 0.05, 0.2);
  SUBCASE("predictor reproduces eps") {
    // affine model, output = x_t / sqrt(1 - abar_t); with x0 = 0 that is eps
    Arch a = small_arch(2, 1, {});
    a.time_emb = 0;
    DenoiserParams p{a, Vec(a.param_count(), 0.0)};
    const double k = 1.0 / std::sqrt(1.0 - s.alpha_bar_at(3));
    p.theta[0] = k;  // row 0, input 0
    p.theta[4] = k;  // row 1, input 1
    std::vector<DenoiseItem> batch{{{0.0, 0.0}, {0.4}, 3, {0.3, -1.1}}};
    CHECK(denoise_loss(p, batch, s) < 1e-28);
  }
  SUBCASE("zero predictor") {
    Arch a = small_arch(2, 2);
    DenoiserParams p{a, Vec(a.param_count(), 0.0)};
    std::vector<DenoiseItem> batch{{{0.5, 0.5}, {1.0, 0.0}, 4, {3.0, 4.0}}};
    CHECK(denoise_loss(p, batch, s) == 25.0);
  }
  SUBCASE("empty batch") {
    Arch a = small_arch();
    DenoiserParams p{a, Vec(a.param_count(), 0.0)};
    CHECK_THROWS_AS(denoise_loss(p, std::vector<DenoiseItem>{}, s), std::invalid_argument);
  }
}

TEST_CASE("denoise_loss: matches scalar-loop oracle and is non-negative") {
  const auto s = make_schedule(10, 0.05, 0.2);
  Rng rng(5);
  for (Activation act : {Activation::tanh, Activation::silu}) {
    Arch a = small_arch();
    a.activation = act;
    const auto p = init_params(a, rng);
    std::vector<DenoiseItem> batch;
    double want = 0.0;
    for (int i = 0; i < 7; ++i) {
      DenoiseItem it{normal_vector(rng, 2), normal_vector(rng, 2), uniform_int(rng, 1, 10),
                     normal_vector(rng, 2)};
      const Vec xt = oracle::noised(it.x0, it.eps, s.alpha_bar_at(it.t));
      want += oracle::sq_err(it.eps, oracle::mlp_forward(p, xt, it.t, it.c)) / 7.0;
      batch.push_back(it);
    }
    const double got = denoise_loss(p, batch, s);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
    CHECK(got >= 0.0);
  }
}

TEST_CASE("denoise_loss_grad: finite differences and worker invariance") {
  const auto s = make_schedule(10, 0.05, 0.2);
  Rng rng(9);
  const auto p = init_params(small_arch(), rng);
  std::vector<DenoiseItem> batch;
  for (int i = 0; i < 5; ++i)
    batch.push_back({normal_vector(rng, 2), normal_vector(rng, 2), uniform_int(rng, 1, 10),
                     normal_vector(rng, 2)});
  GradVector g1, g3;
  const double l1 = denoise_loss_grad(p, batch, s, g1, 1);
  const double l3 = denoise_loss_grad(p, batch, s, g3, 3);
  CHECK(l1 == l3);
  CHECK(g1.g == g3.g);
  CHECK(l1 == doctest::Approx(denoise_loss(p, batch, s)).epsilon(1e-14));
  const Vec fd = oracle::fd_grad(p, [&](const DenoiserParams& q) { return denoise_loss(q, batch, s); });
  CHECK(oracle::rel_err(g1.g, fd) <= 1e-5);
}

TEST_CASE("ancestral_sample: one reverse step by hand") {
  const auto s = make_schedule(1, 0.3, 0.3);
  Arch a = small_arch(3, 1);
  a.horizon = 1;
  DenoiserParams zero{a, Vec(a.param_count(), 0.0)};
  Rng rng(21), mirror(21);
  const Sample out = ancestral_sample(zero, Vec{0.2}, s, rng);
  const Vec x1 = normal_vector(mirror, 3);
  for (int i = 0; i < 3; ++i) CHECK(out.x[i] == doctest::Approx(x1[i] / std::sqrt(1.0 - 0.3)).epsilon(1e-15));
  CHECK(out.c == Vec{0.2});
}

TEST_CASE("ancestral_sample: deterministic per seed") {
  const auto s = make_schedule(20, 1e-3, 0.2);
  Rng init(4);
  Arch a = small_arch();
  a.horizon = 20;
  const auto p = init_params(a, init);
  Rng r1(77), r2(77);
  const Sample x = ancestral_sample(p, Vec{0.1, 0.2}, s, r1);
  const Sample y = ancestral_sample(p, Vec{0.1, 0.2}, s, r2);
  CHECK(x.x == y.x);
  CHECK(all_finite(x.x));
}

TEST_CASE("ancestral_sample: model fit to a point mass samples near it") {
  const auto s = make_schedule(20, 1e-3, 0.3);
  Arch a = small_arch(2, 2, {32, 32});
  a.horizon = 20;
  Rng rng(8);
  auto p = init_params(a, rng);
  const Vec c{0.7, -0.4};
  const Vec target = c;  // x* = c
  MomentumSgd opt(0.9);
  GradVector g;
  std::vector<DenoiseItem> batch(32);
  for (int step = 0; step < 3000; ++step) {
    for (auto& it : batch) it = {target, c, uniform_int(rng, 1, s.T), normal_vector(rng, 2)};
    denoise_loss_grad(p, batch, s, g);
    opt.step(p, g, 0.01);
  }
  const int n = 100;
  Vec mean(2, 0.0), var(2, 0.0);
  std::vector<Vec> xs;
  for (int i = 0; i < n; ++i) xs.push_back(ancestral_sample(p, c, s, rng).x);
  for (const auto& x : xs)
    for (int j = 0; j < 2; ++j) mean[j] += x[j] / n;
  for (const auto& x : xs)
    for (int j = 0; j < 2; ++j) var[j] += (x[j] - mean[j]) * (x[j] - mean[j]) / (n - 1);
  for (int j = 0; j < 2; ++j) {
    const double sd = std::sqrt(var[j]);
    CHECK(sd < 0.25);
    CHECK(std::abs(mean[j] - target[j]) <= 3.0 * sd + 0.05);
  }
}
