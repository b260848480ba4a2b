#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "semidpo/common.hpp"
#include "semidpo/dpo.hpp"
#include "semidpo/rewards.hpp"

namespace semidpo {

struct GenProfile {
  std::size_t n_pairs = 5000;
  std::size_t d = 4;
  std::size_t d_c = 4;
  RewardCommittee committee;
  double annotator_concentration = 0.5;  // symmetric Dirichlet parameter
  double noise_scale = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Orders (xa, xb) by the annotator score sum_k w_k r_k and fills delta_r.
/// Returns nullopt on an exact score tie. gen_dataset additionally redraws pairs
/// with any zero reward difference.
std::optional<PreferencePair> label_pair(const RewardCommittee& committee, Vec c, Vec xa,
                                         Vec xb, const Vec& weights);

/// Pair i is drawn from its own stream derive_seed(seed, i), so the output is
/// fixed by the profile alone. The Dirichlet draw weighs rewards in units of
/// their mean |delta r| over a seeded pilot sample; the stored weights are the
/// equivalent simplex weights on the raw rewards.
std::vector<PreferencePair> gen_dataset(const GenProfile& profile, int workers = 1);

struct ConflictStats {
  double p_a = 0.0;
  double p_c = 0.0;
  double p_tie = 0.0;
};

std::vector<ConflictStats> conflict_stats(std::span<const PreferencePair> dataset,
                                          const RewardCommittee& committee);

inline constexpr int kDatasetVersion = 1;

struct DatasetHeader {
  int version = kDatasetVersion;
  std::size_t d = 0;
  std::size_t d_c = 0;
  std::size_t K = 0;
  std::size_t n_pairs = 0;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  std::string config_hash;
};

struct LoadedDataset {
  DatasetHeader header;
  std::vector<PreferencePair> pairs;
};

/// Line-delimited JSON: one header object, then one object per pair.
/// n_pairs and the dimensions in `header` are taken from `dataset`.
void save_dataset(std::span<const PreferencePair> dataset, DatasetHeader header,
                  const std::filesystem::path& path);
LoadedDataset load_dataset(const std::filesystem::path& path);

}  // namespace semidpo
