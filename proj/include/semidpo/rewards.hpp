#pragma once

#include <string>

#include "semidpo/common.hpp"
#include "semidpo/dpo.hpp"

namespace semidpo {

enum class RewardKind {
  alignment,  // -||x - c||^2
  magnitude,  // -(||x|| - radius)^2
  roughness,  // -sum_i (x_{i+1} - x_i)^2
  axis,       // <x, u>
};

std::string to_string(RewardKind k);
RewardKind reward_kind_from_string(const std::string& s);

struct RewardSpec {
  RewardKind kind = RewardKind::alignment;
  double radius = 1.0;  // magnitude target
  Vec axis;             // unit direction for `axis`; normalized on construction

  bool operator==(const RewardSpec&) const = default;
};

RewardSpec alignment_reward();
RewardSpec magnitude_reward(double radius);
RewardSpec roughness_reward();
RewardSpec axis_reward(Vec u);

struct RewardCommittee {
  std::vector<RewardSpec> specs;

  std::size_t size() const { return specs.size(); }
  bool operator==(const RewardCommittee&) const = default;
};

double reward_eval(const RewardCommittee& committee, std::size_t k, std::span<const double> x,
                   std::span<const double> c);

/// r_k(x0_w, c) - r_k(x0_l, c)
double reward_diff(const RewardCommittee& committee, std::size_t k, const PreferencePair& pair);
Vec reward_diffs(const RewardCommittee& committee, const PreferencePair& pair);

/// A point near which reward k is high for condition c; used to place
/// generated candidates.
Vec plausible_optimum(const RewardSpec& spec, std::span<const double> c, std::size_t d);

struct PartitionStats {
  std::size_t n_total = 0;
  std::size_t n_labeled = 0;
  std::size_t n_unlabeled = 0;
  std::vector<std::size_t> agree_counts;  // pairs with dr_k > 0, per dimension
};

struct PartitionedDataset {
  std::vector<PreferencePair> labeled;
  std::vector<PreferencePair> unlabeled;
  std::vector<std::size_t> labeled_source;    // input index of each labeled pair
  std::vector<std::size_t> unlabeled_source;  // input index of each unlabeled pair
  PartitionStats stats;
};

/// Labeled iff every committee member strictly prefers the winner. Input order
/// is preserved within each side.
PartitionedDataset consensus_partition(std::span<const PreferencePair> dataset,
                                       const RewardCommittee& committee, int workers = 1);

}  // namespace semidpo
