#pragma once

#include "semidpo/common.hpp"
#include "semidpo/diffusion.hpp"
#include "semidpo/model.hpp"

namespace semidpo {

enum class Origin { human, pseudo };

struct PreferencePair {
  Vec c;
  Vec x0_w;
  Vec x0_l;
  Vec delta_r;  // per reward dimension r_k(x0_w) - r_k(x0_l); empty when unknown
  Vec weights;  // annotator weights on the raw rewards (sum to 1); empty when unknown
  Origin origin = Origin::human;

  bool operator==(const PreferencePair&) const = default;
};

/// Same pair with winner and loser exchanged (delta_r negated).
PreferencePair swapped(const PreferencePair& p);

/// One (t, eps) draw shared by both branches of a pair.
struct NoiseDraw {
  int t = 1;
  Vec eps;
};

/// Logit of the implicit preference classifier at (t, eps):
///   z = -beta * [(e_th(w) - e_ref(w)) - (e_th(l) - e_ref(l))],
/// where e_m(x) = ||eps - eps_m(q_sample(x, t, eps), t, c)||^2.
double margin_logit(const DenoiserParams& params, const DenoiserParams& ref,
                    const PreferencePair& pair, int t, std::span<const double> eps,
                    double beta_dpo, const NoiseSchedule& sched);

/// Mean over the batch of -log sigmoid(z), one draw per pair.
double dpo_loss(const DenoiserParams& params, const DenoiserParams& ref,
                std::span<const PreferencePair> pairs, std::span<const NoiseDraw> draws,
                double beta_dpo, const NoiseSchedule& sched);

struct PairLoss {
  double loss = 0.0;
  double z = 0.0;
};

/// Loss of one pair; grad += scale * d(-log sigmoid(z))/d theta, computed by a
/// single reverse pass with the sigmoid factor folded into the upstream vectors.
PairLoss dpo_pair_loss_grad(const DenoiserParams& params, const DenoiserParams& ref,
                            const PreferencePair& pair, int t, std::span<const double> eps,
                            double beta_dpo, const NoiseSchedule& sched, double scale,
                            std::span<double> grad);

/// Batch loss and its gradient (mean over pairs), reduced with a fixed-shape tree.
double dpo_loss_grad(const DenoiserParams& params, const DenoiserParams& ref,
                     std::span<const PreferencePair> pairs, std::span<const NoiseDraw> draws,
                     double beta_dpo, const NoiseSchedule& sched, GradVector& grad,
                     int workers = 1);

struct GradDecomposition {
  double f = 0.0;  // (1 - sigmoid(z)) * beta
  GradVector delta_phi;
  double z = 0.0;
  int t = 0;

  /// Full per-sample gradient g = -f * delta_phi.
  GradVector gradient() const;
};

GradDecomposition grad_decompose(const DenoiserParams& params, const DenoiserParams& ref,
                                 const PreferencePair& pair, int t,
                                 std::span<const double> eps, double beta_dpo,
                                 const NoiseSchedule& sched);

/// <-g, sign(dr_k) * delta_phi> = f * sign(dr_k) * ||delta_phi||^2.
double oracle_inner_product(const GradDecomposition& decomp, double delta_r_k);

/// p_a * p_c * (m_a + m_c)^2
double variance_lower_bound(double p_a, double p_c, double m_a, double m_c);

struct VarianceReport {
  double var_xi = 0.0;
  double p_a = 0.0;
  double p_c = 0.0;
  double m_a = 0.0;
  double m_c = 0.0;
  double bound = 0.0;
  double intra = 0.0;
  double inter = 0.0;
  std::size_t n_a = 0;
  std::size_t n_c = 0;
};

/// Population statistics of xi_i = sign_i * mag_i over a finite uniform
/// population, split by sign. `magnitudes` are f * ||delta_phi||^2 >= 0.
VarianceReport population_variance(std::span<const double> magnitudes,
                                   std::span<const int> signs);

/// Evaluates xi for dimension k on every pair at a fixed t and per-pair noise
/// draws, then reports the exact population decomposition. Pairs with
/// delta_r[k] == 0 are outside both sets and are skipped.
VarianceReport variance_report(const DenoiserParams& params, const DenoiserParams& ref,
                               std::span<const PreferencePair> pairs, std::size_t k, int t,
                               std::span<const Vec> eps_draws, double beta_dpo,
                               const NoiseSchedule& sched, int workers = 1);

}  // namespace semidpo
