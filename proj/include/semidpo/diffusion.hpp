#pragma once

#include "semidpo/common.hpp"
#include "semidpo/model.hpp"

namespace semidpo {

/// Linear-beta DDPM schedule. Timesteps are 1-indexed: t in [1, T].
struct NoiseSchedule {
  int T = 0;
  Vec beta;       // beta[t-1]
  Vec alpha_bar;  // prod_{i<=t} (1 - beta_i)
  Vec sigma;      // reverse-step std, sqrt(beta_t)

  double beta_at(int t) const { return beta.at(static_cast<std::size_t>(t - 1)); }
  double alpha_bar_at(int t) const { return alpha_bar.at(static_cast<std::size_t>(t - 1)); }
  double sigma_at(int t) const { return sigma.at(static_cast<std::size_t>(t - 1)); }
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

struct Sample {
  Vec x;
  Vec c;
};

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Vec q_sample(std::span<const double> x0, int t, std::span<const double> eps,
             const NoiseSchedule& sched);

struct DenoiseItem {
  Vec x0;
  Vec c;
  int t = 1;
  Vec eps;
};

/// Mean over items of ||eps - eps_theta(x_t, t, c)||^2 (unit time weighting).
double denoise_loss(const DenoiserParams& params, std::span<const DenoiseItem> batch,
                    const NoiseSchedule& sched);

/// Same loss; writes its gradient w.r.t. theta into `grad`. Per-item gradients
/// are combined with a fixed-shape tree, so the result is independent of `workers`.
double denoise_loss_grad(const DenoiserParams& params, std::span<const DenoiseItem> batch,
                         const NoiseSchedule& sched, GradVector& grad, int workers = 1);

/// DDPM ancestral sampler from x_T ~ N(0, I) with sigma_t^2 = beta_t.
Sample ancestral_sample(const DenoiserParams& params, std::span<const double> c,
                        const NoiseSchedule& sched, Rng& rng);

}  // namespace semidpo
