#include "semidpo/diffusion.hpp"

#include "semidpo/parallel.hpp"

namespace semidpo {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw ConfigError("schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ConfigError("schedule: require 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(static_cast<std::size_t>(T));
  s.alpha_bar.resize(s.beta.size());
  s.sigma.resize(s.beta.size());
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
    const double b = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - b;
    s.beta[i] = b;
    s.alpha_bar[i] = prod;
    s.sigma[i] = std::sqrt(b);
  }
  return s;
}

Vec q_sample(std::span<const double> x0, int t, std::span<const double> eps,
             const NoiseSchedule& sched) {
  require_dim(eps.size(), x0.size(), "q_sample noise");
  if (t < 1 || t > sched.T) throw std::invalid_argument("q_sample: timestep out of range");
  const double ab = sched.alpha_bar_at(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Vec out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

double denoise_loss(const DenoiserParams& params, std::span<const DenoiseItem> batch,
                    const NoiseSchedule& sched) {
  require(!batch.empty(), "denoise_loss: empty batch");
  Vec per(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& it = batch[i];
    const Vec xt = q_sample(it.x0, it.t, it.eps, sched);
    const Vec out = forward(params, xt, it.t, it.c);
    double s = 0.0;
    for (std::size_t j = 0; j < out.size(); ++j) s += (it.eps[j] - out[j]) * (it.eps[j] - out[j]);
    per[i] = s;
  }
  return pairwise_sum(per) / static_cast<double>(batch.size());
}

double denoise_loss_grad(const DenoiserParams& params, std::span<const DenoiseItem> batch,
                         const NoiseSchedule& sched, GradVector& grad, int workers) {
  require(!batch.empty(), "denoise_loss_grad: empty batch");
  const std::size_t n = batch.size(), P = params.theta.size();
  Vec per(n);
  Vec buf(n * P, 0.0);
  const double scale = 1.0 / static_cast<double>(n);
  parallel_for(n, workers, [&](std::size_t i) {
    const auto& it = batch[i];
    const Vec xt = q_sample(it.x0, it.t, it.eps, sched);
    Activations acts;
    forward_cached(params, xt, it.t, it.c, acts);
    const Vec& out = acts.output();
    Vec up(out.size());
    double s = 0.0;
    for (std::size_t j = 0; j < out.size(); ++j) {
      const double r = out[j] - it.eps[j];
      s += r * r;
      up[j] = 2.0 * r;
    }
    per[i] = s;
    backward_accumulate(params, acts, up, scale, std::span<double>(buf).subspan(i * P, P));
  });
  tree_reduce_rows(buf, n, P);
  grad.g.assign(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(P));
  return pairwise_sum(per) / static_cast<double>(n);
}

Sample ancestral_sample(const DenoiserParams& params, std::span<const double> c,
                        const NoiseSchedule& sched, Rng& rng) {
  const std::size_t d = params.arch.d;
  Vec x = normal_vector(rng, d);
  for (int t = sched.T; t >= 1; --t) {
    const Vec eps_hat = forward(params, x, t, c);
    const double beta = sched.beta_at(t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
    const double coef = beta / std::sqrt(1.0 - sched.alpha_bar_at(t));
    for (std::size_t i = 0; i < d; ++i) x[i] = inv_sqrt_alpha * (x[i] - coef * eps_hat[i]);
    if (t > 1) {
      const Vec z = normal_vector(rng, d);
      const double sigma = sched.sigma_at(t);
      for (std::size_t i = 0; i < d; ++i) x[i] += sigma * z[i];
    }
  }
  return Sample{std::move(x), Vec(c.begin(), c.end())};
}

}  // namespace semidpo
