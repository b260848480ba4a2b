#include "semidpo/evalrep.hpp"

#include <fmt/format.h>

#include <fstream>

#include "semidpo/parallel.hpp"

namespace semidpo {

std::vector<Vec> eval_prompts(std::size_t n, std::size_t d_c, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xE7A1));
  std::vector<Vec> out(n);
  for (auto& c : out) c = normal_vector(rng, d_c);
  return out;
}

std::vector<Sample> draw_samples(const DenoiserParams& params, std::span<const Vec> prompts,
                                 std::size_t n_samples_per_prompt, const NoiseSchedule& sched,
                                 std::uint64_t seed, int workers) {
  require(!prompts.empty(), "evaluation needs at least one prompt");
  require(n_samples_per_prompt > 0, "evaluation needs n_samples_per_prompt > 0");
  const std::size_t n = prompts.size() * n_samples_per_prompt;
  std::vector<Sample> out(n);
  parallel_for(n, workers, [&](std::size_t i) {
    Rng rng(derive_seed(seed, i));
    out[i] = ancestral_sample(params, prompts[i / n_samples_per_prompt], sched, rng);
  });
  return out;
}

EvalReport evaluate_model(const DenoiserParams& params, const RewardCommittee& committee,
                          std::span<const Vec> prompts, std::size_t n_samples_per_prompt,
                          const NoiseSchedule& sched, std::uint64_t seed, int workers) {
  const auto samples = draw_samples(params, prompts, n_samples_per_prompt, sched, seed, workers);
  EvalReport r;
  r.sample_count = samples.size();
  r.seed = seed;
  r.mean_reward.assign(committee.size(), 0.0);
  Vec vals(samples.size());
  for (std::size_t k = 0; k < committee.size(); ++k) {
    for (std::size_t i = 0; i < samples.size(); ++i)
      vals[i] = reward_eval(committee, k, samples[i].x, samples[i].c);
    r.mean_reward[k] = pairwise_sum(vals) / static_cast<double>(vals.size());
  }
  r.aggregate = pairwise_sum(r.mean_reward) / static_cast<double>(r.mean_reward.size());
  return r;
}

Vec compare_models(const DenoiserParams& a, const DenoiserParams& b,
                   const RewardCommittee& committee, std::span<const Vec> prompts,
                   std::size_t n_samples_per_prompt, const NoiseSchedule& sched,
                   std::uint64_t seed, int workers) {
  const auto sa = draw_samples(a, prompts, n_samples_per_prompt, sched, seed, workers);
  const auto sb = draw_samples(b, prompts, n_samples_per_prompt, sched, seed, workers);
  Vec rate(committee.size(), 0.0);
  for (std::size_t k = 0; k < committee.size(); ++k) {
    double wins = 0.0;
    for (std::size_t i = 0; i < sa.size(); ++i) {
      const double ra = reward_eval(committee, k, sa[i].x, sa[i].c);
      const double rb = reward_eval(committee, k, sb[i].x, sb[i].c);
      wins += ra > rb ? 1.0 : (ra == rb ? 0.5 : 0.0);
    }
    rate[k] = wins / static_cast<double>(sa.size());
  }
  return rate;
}

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["mean_reward"] = r.mean_reward;
  j["aggregate"] = r.aggregate;
  j["win_rate"] = r.win_rate;
  j["interval_accuracy"] = r.interval_accuracy;
  j["sample_count"] = r.sample_count;
  j["seed"] = r.seed;
  return j;
}

void write_eval_csv(const EvalReport& r, const RewardCommittee& committee,
                    const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open csv for writing: " + path.string());
  os << "dimension,kind,mean_reward,win_rate\n";
  for (std::size_t k = 0; k < r.mean_reward.size(); ++k) {
    os << k << ',' << to_string(committee.specs[k].kind) << ','
       << fmt::format("{:.17g}", r.mean_reward[k]) << ',';
    if (k < r.win_rate.size()) os << fmt::format("{:.17g}", r.win_rate[k]);
    os << '\n';
  }
  os << "aggregate,," << fmt::format("{:.17g}", r.aggregate) << ",\n";
}

}  // namespace semidpo
