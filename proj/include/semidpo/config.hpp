#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "semidpo/datagen.hpp"
#include "semidpo/diffusion.hpp"
#include "semidpo/model.hpp"
#include "semidpo/rewards.hpp"

namespace semidpo {

struct ScheduleConfig {
  int T = 100;
  double beta_start = 1e-3;
  double beta_end = 0.2;
};

struct GenConfig {
  std::size_t n_pairs = 5000;
  double concentration = 0.3;
  double noise_scale = 0.5;
  std::uint64_t seed = 1;
};

struct PretrainConfig {
  int steps = 3000;
  double lr = 0.02;
  double momentum = 0.9;
  std::size_t batch = 64;
};

struct TrainConfig {
  std::string mode = "semi";  // semi | clean_only | dpo_all
  int iterations = 2;
  int cold_start_steps = 400;
  int iter_steps = 800;
  double lr0 = 1e-3;
  double lr_iter = 1e-4;
  double momentum = 0.9;
  std::size_t batch = 32;
  double warmup_frac = 0.1;
  double anchor_weight = 1.0;
  double pseudo_weight = 1.0;
  double test_frac = 0.02;
  double beta_dpo = 5.0;
  int log_every = 50;
};

struct ThresholdConfig {
  int intervals = 10;
  double percentile = 0.80;
  double acc_floor = 0.70;
  double raise_step = 0.05;
  int draws_per_pair = 4;
  int accuracy_draws = 8;
};

struct EvalConfig {
  std::size_t n_prompts = 50;
  std::size_t samples_per_prompt = 4;
  std::uint64_t seed = 7;
};

struct DiagnoseConfig {
  std::uint64_t seed = 11;
  std::size_t max_pairs = 2000;
};

struct PathsConfig {
  std::string dataset;
  std::string out_dir = "run";
  std::string ref_checkpoint;
};

struct RunConfig {
  std::uint64_t seed = 1;
  int workers = 1;
  ScheduleConfig schedule;
  Arch arch;
  RewardCommittee committee;
  GenConfig gen;
  PretrainConfig pretrain;
  TrainConfig train;
  ThresholdConfig threshold;
  EvalConfig eval;
  DiagnoseConfig diagnose;
  PathsConfig paths;

  RunConfig();
  /// Cross-field checks; also pins arch.horizon to schedule.T.
  void resolve();
};

nlohmann::ordered_json to_json(const RunConfig& c);
RunConfig config_from_json(const nlohmann::json& j);

RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& c, const std::filesystem::path& path);

/// Sets `dotted.path` in `j` to `value` (parsed as JSON when possible, else a string).
void apply_override(nlohmann::json& j, const std::string& dotted_path, const std::string& value);

/// FNV-1a 64 of the canonical JSON, as 16 hex digits.
std::uint64_t config_hash_value(const RunConfig& c);
std::string config_hash(const RunConfig& c);

NoiseSchedule make_schedule(const RunConfig& c);
GenProfile gen_profile(const RunConfig& c);

nlohmann::ordered_json to_json(const RewardSpec& s);
RewardSpec reward_spec_from_json(const nlohmann::json& j);

}  // namespace semidpo
