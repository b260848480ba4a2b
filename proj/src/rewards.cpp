#include "semidpo/rewards.hpp"

#include "semidpo/parallel.hpp"

namespace semidpo {

std::string to_string(RewardKind k) {
  switch (k) {
    case RewardKind::alignment: return "alignment";
    case RewardKind::magnitude: return "magnitude";
    case RewardKind::roughness: return "roughness";
    case RewardKind::axis: return "axis";
  }
  return "?";
}

RewardKind reward_kind_from_string(const std::string& s) {
  if (s == "alignment") return RewardKind::alignment;
  if (s == "magnitude") return RewardKind::magnitude;
  if (s == "roughness") return RewardKind::roughness;
  if (s == "axis") return RewardKind::axis;
  throw ConfigError("unknown reward kind '" + s + "'");
}

RewardSpec alignment_reward() { return {RewardKind::alignment, 1.0, {}}; }

RewardSpec magnitude_reward(double radius) {
  if (!(radius >= 0.0)) throw ConfigError("magnitude reward: radius must be >= 0");
  return {RewardKind::magnitude, radius, {}};
}

RewardSpec roughness_reward() { return {RewardKind::roughness, 1.0, {}}; }

RewardSpec axis_reward(Vec u) {
  const double n = std::sqrt(squared_norm(u));
  if (!(n > 0.0) || !std::isfinite(n)) throw ConfigError("axis reward: direction must be nonzero");
  for (auto& v : u) v /= n;
  return {RewardKind::axis, 1.0, std::move(u)};
}

double reward_eval(const RewardCommittee& committee, std::size_t k, std::span<const double> x,
                   std::span<const double> c) {
  if (k >= committee.size())
    throw std::out_of_range("reward_eval: dimension " + std::to_string(k) + " out of range");
  const RewardSpec& s = committee.specs[k];
  switch (s.kind) {
    case RewardKind::alignment: {
      require_dim(c.size(), x.size(), "alignment reward condition");
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - c[i]) * (x[i] - c[i]);
      return -acc;
    }
    case RewardKind::magnitude: {
      const double r = std::sqrt(squared_norm(x)) - s.radius;
      return -r * r;
    }
    case RewardKind::roughness: {
      double acc = 0.0;
      for (std::size_t i = 0; i + 1 < x.size(); ++i) acc += (x[i + 1] - x[i]) * (x[i + 1] - x[i]);
      return -acc;
    }
    case RewardKind::axis:
      require_dim(s.axis.size(), x.size(), "axis reward direction");
      return dot(x, s.axis);
  }
  return 0.0;
}

double reward_diff(const RewardCommittee& committee, std::size_t k, const PreferencePair& pair) {
  return reward_eval(committee, k, pair.x0_w, pair.c) - reward_eval(committee, k, pair.x0_l, pair.c);
}

Vec reward_diffs(const RewardCommittee& committee, const PreferencePair& pair) {
  Vec out(committee.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = reward_diff(committee, k, pair);
  return out;
}

Vec plausible_optimum(const RewardSpec& spec, std::span<const double> c, std::size_t d) {
  Vec base(d, 0.0);
  for (std::size_t i = 0; i < std::min(d, c.size()); ++i) base[i] = c[i];
  switch (spec.kind) {
    case RewardKind::alignment:
      return base;
    case RewardKind::magnitude: {
      const double n = std::sqrt(squared_norm(base));
      Vec out(d, 0.0);
      if (n == 0.0) {
        out[0] = spec.radius;
        return out;
      }
      for (std::size_t i = 0; i < d; ++i) out[i] = spec.radius * base[i] / n;
      return out;
    }
    case RewardKind::roughness: {
      double mean = 0.0;
      for (double v : base) mean += v;
      mean /= static_cast<double>(d);
      return Vec(d, mean);
    }
    case RewardKind::axis: {
      for (std::size_t i = 0; i < d && i < spec.axis.size(); ++i) base[i] += spec.axis[i];
      return base;
    }
  }
  return base;
}

PartitionedDataset consensus_partition(std::span<const PreferencePair> dataset,
                                       const RewardCommittee& committee, int workers) {
  const std::size_t K = committee.size();
  if (K == 0) throw ConfigError("consensus_partition: empty committee");
  const std::size_t n = dataset.size();
  std::vector<unsigned char> agree(n * K, 0);
  parallel_for(n, workers, [&](std::size_t i) {
    for (std::size_t k = 0; k < K; ++k)
      agree[i * K + k] = reward_diff(committee, k, dataset[i]) > 0.0 ? 1 : 0;
  });

  PartitionedDataset out;
  out.stats.n_total = n;
  out.stats.agree_counts.assign(K, 0);
  for (std::size_t i = 0; i < n; ++i) {
    bool all = true;
    for (std::size_t k = 0; k < K; ++k) {
      out.stats.agree_counts[k] += agree[i * K + k];
      all = all && agree[i * K + k];
    }
    if (all) {
      out.labeled.push_back(dataset[i]);
      out.labeled_source.push_back(i);
    } else {
      out.unlabeled.push_back(dataset[i]);
      out.unlabeled_source.push_back(i);
    }
  }
  out.stats.n_labeled = out.labeled.size();
  out.stats.n_unlabeled = out.unlabeled.size();
  return out;
}

}  // namespace semidpo
