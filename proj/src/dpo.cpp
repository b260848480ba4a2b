#include "semidpo/dpo.hpp"

#include "semidpo/parallel.hpp"

namespace semidpo {

PreferencePair swapped(const PreferencePair& p) {
  PreferencePair s = p;
  std::swap(s.x0_w, s.x0_l);
  for (auto& v : s.delta_r) v = -v;
  return s;
}

namespace {

void check_pair(const DenoiserParams& params, const PreferencePair& pair,
                std::span<const double> eps) {
  const Arch& a = params.arch;
  require_dim(pair.x0_w.size(), a.d, "pair winner");
  require_dim(pair.x0_l.size(), a.d, "pair loser");
  require_dim(pair.c.size(), a.d_c, "pair condition");
  require_dim(eps.size(), a.d, "pair noise");
}

double sq_err(std::span<const double> eps, std::span<const double> out) {
  double s = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) s += (eps[i] - out[i]) * (eps[i] - out[i]);
  return s;
}

/// Policy activations on both branches plus the reference errors.
struct BranchEval {
  Activations w, l;
  double ew = 0.0, el = 0.0, ref_w = 0.0, ref_l = 0.0;
  double z = 0.0;
};

void eval_branches(const DenoiserParams& params, const DenoiserParams& ref,
                   const PreferencePair& pair, int t, std::span<const double> eps,
                   double beta_dpo, const NoiseSchedule& sched, BranchEval& b) {
  check_pair(params, pair, eps);
  require(beta_dpo > 0.0, "beta_dpo must be > 0");
  const Vec xw = q_sample(pair.x0_w, t, eps, sched);
  const Vec xl = q_sample(pair.x0_l, t, eps, sched);
  forward_cached(params, xw, t, pair.c, b.w);
  forward_cached(params, xl, t, pair.c, b.l);
  b.ew = sq_err(eps, b.w.output());
  b.el = sq_err(eps, b.l.output());
  b.ref_w = sq_err(eps, forward(ref, xw, t, pair.c));
  b.ref_l = sq_err(eps, forward(ref, xl, t, pair.c));
  b.z = -beta_dpo * ((b.ew - b.ref_w) - (b.el - b.ref_l));
}

/// upstream = coef * 2 (eps_hat - eps), the gradient of coef * ||eps - eps_hat||^2.
Vec sq_err_upstream(std::span<const double> eps, std::span<const double> out, double coef) {
  Vec up(eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) up[i] = coef * 2.0 * (out[i] - eps[i]);
  return up;
}

}  // namespace

double margin_logit(const DenoiserParams& params, const DenoiserParams& ref,
                    const PreferencePair& pair, int t, std::span<const double> eps,
                    double beta_dpo, const NoiseSchedule& sched) {
  BranchEval b;
  eval_branches(params, ref, pair, t, eps, beta_dpo, sched, b);
  return b.z;
}

double dpo_loss(const DenoiserParams& params, const DenoiserParams& ref,
                std::span<const PreferencePair> pairs, std::span<const NoiseDraw> draws,
                double beta_dpo, const NoiseSchedule& sched) {
  require(!pairs.empty(), "dpo_loss: empty batch");
  require_dim(draws.size(), pairs.size(), "dpo_loss draws");
  Vec per(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i)
    per[i] = neg_log_sigmoid(
        margin_logit(params, ref, pairs[i], draws[i].t, draws[i].eps, beta_dpo, sched));
  return pairwise_sum(per) / static_cast<double>(pairs.size());
}

PairLoss dpo_pair_loss_grad(const DenoiserParams& params, const DenoiserParams& ref,
                            const PreferencePair& pair, int t, std::span<const double> eps,
                            double beta_dpo, const NoiseSchedule& sched, double scale,
                            std::span<double> grad) {
  BranchEval b;
  eval_branches(params, ref, pair, t, eps, beta_dpo, sched, b);
  // d(-log sigmoid z)/dz = -sigmoid(-z); dz/d e_w = -beta; dz/d e_l = +beta.
  const double k = sigmoid(-b.z) * beta_dpo;
  backward_accumulate(params, b.w, sq_err_upstream(eps, b.w.output(), k), scale, grad);
  backward_accumulate(params, b.l, sq_err_upstream(eps, b.l.output(), -k), scale, grad);
  return {neg_log_sigmoid(b.z), b.z};
}

double dpo_loss_grad(const DenoiserParams& params, const DenoiserParams& ref,
                     std::span<const PreferencePair> pairs, std::span<const NoiseDraw> draws,
                     double beta_dpo, const NoiseSchedule& sched, GradVector& grad,
                     int workers) {
  require(!pairs.empty(), "dpo_loss_grad: empty batch");
  require_dim(draws.size(), pairs.size(), "dpo_loss_grad draws");
  const std::size_t n = pairs.size(), P = params.theta.size();
  Vec per(n);
  Vec buf(n * P, 0.0);
  const double scale = 1.0 / static_cast<double>(n);
  parallel_for(n, workers, [&](std::size_t i) {
    per[i] = dpo_pair_loss_grad(params, ref, pairs[i], draws[i].t, draws[i].eps, beta_dpo,
                                sched, scale, std::span<double>(buf).subspan(i * P, P))
                 .loss;
  });
  tree_reduce_rows(buf, n, P);
  grad.g.assign(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(P));
  return pairwise_sum(per) / static_cast<double>(n);
}

GradVector GradDecomposition::gradient() const {
  GradVector g{delta_phi.g};
  for (auto& v : g.g) v *= -f;
  return g;
}

GradDecomposition grad_decompose(const DenoiserParams& params, const DenoiserParams& ref,
                                 const PreferencePair& pair, int t,
                                 std::span<const double> eps, double beta_dpo,
                                 const NoiseSchedule& sched) {
  BranchEval b;
  eval_branches(params, ref, pair, t, eps, beta_dpo, sched, b);
  GradDecomposition out;
  out.z = b.z;
  out.t = t;
  out.f = sigmoid(-b.z) * beta_dpo;
  // delta_phi = -(grad e_w - grad e_l)
  out.delta_phi.g.assign(params.theta.size(), 0.0);
  backward_accumulate(params, b.w, sq_err_upstream(eps, b.w.output(), -1.0), 1.0,
                      out.delta_phi.g);
  backward_accumulate(params, b.l, sq_err_upstream(eps, b.l.output(), 1.0), 1.0,
                      out.delta_phi.g);
  return out;
}

double oracle_inner_product(const GradDecomposition& decomp, double delta_r_k) {
  if (delta_r_k == 0.0 || !std::isfinite(delta_r_k))
    throw std::invalid_argument("oracle_inner_product: reward difference must be nonzero");
  const double sign = delta_r_k > 0.0 ? 1.0 : -1.0;
  return decomp.f * sign * squared_norm(decomp.delta_phi.g);
}

double variance_lower_bound(double p_a, double p_c, double m_a, double m_c) {
  if (!(p_a >= 0.0 && p_c >= 0.0) || std::abs(p_a + p_c - 1.0) > 1e-12)
    throw std::invalid_argument("variance_lower_bound: p_a, p_c must be >= 0 and sum to 1");
  if (!(m_a >= 0.0 && m_c >= 0.0))
    throw std::invalid_argument("variance_lower_bound: magnitudes must be >= 0");
  return p_a * p_c * (m_a + m_c) * (m_a + m_c);
}

VarianceReport population_variance(std::span<const double> magnitudes,
                                   std::span<const int> signs) {
  require_dim(signs.size(), magnitudes.size(), "population_variance signs");
  const std::size_t n = magnitudes.size();
  require(n >= 1, "population_variance: empty population");
  Vec xi(n), mag_a, mag_c;
  for (std::size_t i = 0; i < n; ++i) {
    require(signs[i] == 1 || signs[i] == -1, "population_variance: sign must be +1 or -1");
    xi[i] = signs[i] * magnitudes[i];
    (signs[i] > 0 ? mag_a : mag_c).push_back(magnitudes[i]);
  }
  const auto mean = [](std::span<const double> v) {
    return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<double>(v.size());
  };
  const auto var_about = [](std::span<const double> v, double mu) {
    if (v.empty()) return 0.0;
    Vec sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - mu) * (v[i] - mu);
    return pairwise_sum(sq) / static_cast<double>(v.size());
  };

  VarianceReport r;
  r.n_a = mag_a.size();
  r.n_c = mag_c.size();
  const double mu = mean(xi);
  r.var_xi = var_about(xi, mu);
  r.p_a = static_cast<double>(r.n_a) / static_cast<double>(n);
  r.p_c = static_cast<double>(r.n_c) / static_cast<double>(n);
  r.m_a = mean(mag_a);
  r.m_c = mean(mag_c);
  // Var[xi | C] equals the variance of the magnitudes since xi = -mag there.
  r.intra = r.p_a * var_about(mag_a, r.m_a) + r.p_c * var_about(mag_c, r.m_c);
  r.inter = r.p_a * (r.m_a - mu) * (r.m_a - mu) + r.p_c * (-r.m_c - mu) * (-r.m_c - mu);
  r.bound = r.p_a * r.p_c * (r.m_a + r.m_c) * (r.m_a + r.m_c);
  return r;
}

VarianceReport variance_report(const DenoiserParams& params, const DenoiserParams& ref,
                               std::span<const PreferencePair> pairs, std::size_t k, int t,
                               std::span<const Vec> eps_draws, double beta_dpo,
                               const NoiseSchedule& sched, int workers) {
  require_dim(eps_draws.size(), pairs.size(), "variance_report noise draws");
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    require(k < p.delta_r.size(), "variance_report: pair lacks reward difference for dimension");
    if (p.delta_r[k] != 0.0) members.push_back(i);
  }
  require(members.size() >= 2, "variance_report: need >= 2 pairs with nonzero reward difference");

  Vec mags(members.size());
  std::vector<int> signs(members.size());
  parallel_for(members.size(), workers, [&](std::size_t j) {
    const auto& p = pairs[members[j]];
    const GradDecomposition dec =
        grad_decompose(params, ref, p, t, eps_draws[members[j]], beta_dpo, sched);
    mags[j] = dec.f * squared_norm(dec.delta_phi.g);
    signs[j] = p.delta_r[k] > 0.0 ? 1 : -1;
  });
  return population_variance(mags, signs);
}

}  // namespace semidpo
