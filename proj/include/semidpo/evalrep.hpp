#pragma once

#include <filesystem>

#include "json.hpp"
#include "semidpo/common.hpp"
#include "semidpo/diffusion.hpp"
#include "semidpo/rewards.hpp"

namespace semidpo {

struct EvalReport {
  Vec mean_reward;         // per dimension
  double aggregate = 0.0;  // unweighted mean of mean_reward
  Vec win_rate;            // vs a baseline, per dimension; empty if no baseline
  Vec interval_accuracy;   // optional
  std::size_t sample_count = 0;
  std::uint64_t seed = 0;
};

/// Seeded evaluation conditions, N(0, I) in d_c dimensions.
std::vector<Vec> eval_prompts(std::size_t n, std::size_t d_c, std::uint64_t seed);

/// Sample s of prompt p is drawn with the stream derive_seed(seed, p * n + s), so
/// two models evaluated with one seed see identical sampler noise.
std::vector<Sample> draw_samples(const DenoiserParams& params, std::span<const Vec> prompts,
                                 std::size_t n_samples_per_prompt, const NoiseSchedule& sched,
                                 std::uint64_t seed, int workers = 1);

EvalReport evaluate_model(const DenoiserParams& params, const RewardCommittee& committee,
                          std::span<const Vec> prompts, std::size_t n_samples_per_prompt,
                          const NoiseSchedule& sched, std::uint64_t seed, int workers = 1);

/// Per-dimension fraction of prompt-paired samples where a beats b (ties count
/// one half). Both models use the same sampler noise per (prompt, sample).
Vec compare_models(const DenoiserParams& a, const DenoiserParams& b,
                   const RewardCommittee& committee, std::span<const Vec> prompts,
                   std::size_t n_samples_per_prompt, const NoiseSchedule& sched,
                   std::uint64_t seed, int workers = 1);

nlohmann::ordered_json to_json(const EvalReport& r);
void write_eval_csv(const EvalReport& r, const RewardCommittee& committee,
                    const std::filesystem::path& path);

}  // namespace semidpo
