#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <optional>

#include "json.hpp"
#include "semidpo/config.hpp"
#include "semidpo/dpo.hpp"
#include "semidpo/evalrep.hpp"
#include "semidpo/rewards.hpp"

namespace semidpo {

// ---------------------------------------------------------------------------
// Timestep intervals and thresholds

/// Half-open range [lo, hi) of 0-based timestep indices; 1-based t maps to t - 1.
struct Interval {
  int lo = 0;
  int hi = 0;
  bool operator==(const Interval&) const = default;
};

/// N contiguous intervals with boundaries floor(j * T / N). Requires 1 <= N <= T.
std::vector<Interval> make_intervals(int T, int N);

/// Index of the interval holding 1-based timestep t.
std::size_t interval_of(int t, std::span<const Interval> intervals);

struct ThresholdParams {
  double percentile = 0.80;
  double acc_floor = 0.70;
  double raise_step = 0.05;
};

struct Confidence {
  int t = 1;
  double value = 0.0;  // |z|
};

struct ThresholdTable {
  std::vector<Interval> intervals;
  Vec tau;       // accept iff confidence > tau; +inf selects nothing
  Vec base_tau;  // percentile threshold before gating
  Vec accuracy;
  std::vector<int> raises;  // raise_step increments applied per interval
  int iteration = 0;
};

/// Nearest-rank quantile: the ceil(q n)-th smallest value. `sorted` must be ascending.
double nearest_rank(std::span<const double> sorted, double q);

/// Per-interval nearest-rank percentile thresholds. An interval whose accuracy is
/// below acc_floor is raised to the (percentile + r * raise_step) quantile, where
/// r = prior_raises[j] + 1, then further while that does not exceed the base
/// value; r accumulates across re-measurement cycles via `prior_raises`.
ThresholdTable build_thresholds(std::span<const Interval> intervals,
                                std::span<const Confidence> confidences,
                                std::span<const double> accuracy_by_interval,
                                const ThresholdParams& params,
                                std::span<const int> prior_raises = {});

// ---------------------------------------------------------------------------
// Pseudo-labels

enum class Decision { keep, swap, reject };
std::string to_string(Decision d);

struct PseudoLabelRecord {
  std::size_t pair_index = 0;  // into the unlabeled set
  int t = 1;
  Vec eps;
  double z = 0.0;
  double confidence = 0.0;
  Decision decision = Decision::reject;
  std::size_t interval = 0;
};

/// Logit of the frozen previous-iteration model; same as margin_logit.
double pseudo_logit(const DenoiserParams& frozen, const DenoiserParams& ref,
                    const PreferencePair& pair, int t, std::span<const double> eps,
                    double beta_dpo, const NoiseSchedule& sched);

/// Fraction of probes with z > 0 per interval (z == 0 counts as wrong). For each
/// interval, pair and draw, t is uniform within the interval.
Vec measure_interval_accuracy(const DenoiserParams& frozen, const DenoiserParams& ref,
                              std::span<const PreferencePair> clean_test,
                              std::span<const Interval> intervals, int draws_per_pair,
                              double beta_dpo, const NoiseSchedule& sched, Rng& rng,
                              int workers = 1);

/// Scores draws_per_pair stratified (t, eps) probes per unlabeled pair with the
/// frozen model. Every record starts as reject.
std::vector<PseudoLabelRecord> score_pseudo_labels(std::span<const PreferencePair> unlabeled,
                                                   const DenoiserParams& frozen,
                                                   const DenoiserParams& ref,
                                                   std::span<const Interval> intervals,
                                                   int draws_per_pair, double beta_dpo,
                                                   const NoiseSchedule& sched, Rng& rng,
                                                   int workers = 1);

/// keep if confidence > tau and z > 0, swap if confidence > tau and z < 0.
void decide_pseudo_labels(std::span<PseudoLabelRecord> records, const ThresholdTable& thresholds);

std::vector<PseudoLabelRecord> apply_pseudo_labels(std::span<const PreferencePair> unlabeled,
                                                   const DenoiserParams& frozen,
                                                   const DenoiserParams& ref,
                                                   const ThresholdTable& thresholds,
                                                   int draws_per_pair, double beta_dpo,
                                                   const NoiseSchedule& sched, Rng& rng,
                                                   int workers = 1);

std::vector<Confidence> confidences_of(std::span<const PseudoLabelRecord> records);

/// The pair a record trains on: the original ordering, or swapped.
PreferencePair pseudo_pair(const PseudoLabelRecord& rec, std::span<const PreferencePair> pairs);

// ---------------------------------------------------------------------------
// Losses

/// dpo_loss on the clean batch with one fresh (t, eps) draw per pair.
double anchor_loss(const DenoiserParams& params, const DenoiserParams& ref,
                   std::span<const PreferencePair> labeled_batch, double beta_dpo,
                   const NoiseSchedule& sched, Rng& rng);

/// Mean of -log sigmoid(z_hat) over accepted records at their stored (t, eps);
/// 0 when there are no records.
double pseudo_label_loss(const DenoiserParams& params, const DenoiserParams& ref,
                         std::span<const PseudoLabelRecord> accepted,
                         std::span<const PreferencePair> pairs, double beta_dpo,
                         const NoiseSchedule& sched);

struct LossWeights {
  double anchor = 1.0;
  double pseudo = 1.0;
};

double composite_loss(const DenoiserParams& params, const DenoiserParams& ref,
                      std::span<const PreferencePair> labeled_batch,
                      std::span<const PseudoLabelRecord> accepted,
                      std::span<const PreferencePair> pairs, double beta_dpo,
                      const NoiseSchedule& sched, Rng& rng, LossWeights weights = {});

// ---------------------------------------------------------------------------
// Training

struct PhaseSpec {
  int steps = 0;
  double lr = 1e-3;
  double momentum = 0.9;
  std::size_t batch = 32;
  double warmup_frac = 0.1;
  LossWeights weights;
};

struct StepLog {
  int iteration = 0;
  int step = 0;
  double anchor = 0.0;
  double pseudo = 0.0;
  double total = 0.0;
};

/// One training phase. Each step draws an anchor batch from `labeled` (fresh
/// t, eps) and, if `accepted` is non-empty, a record batch at stored (t, eps).
/// The learning rate warms up linearly over the first warmup_frac of steps.
std::vector<StepLog> train_phase(DenoiserParams& params, const DenoiserParams& ref,
                                 std::span<const PreferencePair> labeled,
                                 std::span<const PreferencePair> unlabeled,
                                 std::span<const PseudoLabelRecord> accepted,
                                 const PhaseSpec& spec, double beta_dpo,
                                 const NoiseSchedule& sched, Rng& rng, int iteration = 0,
                                 int workers = 1);

/// Fits the reference denoiser to every winner and loser sample in the dataset.
DenoiserParams pretrain_reference(const RunConfig& config,
                                  std::span<const PreferencePair> dataset,
                                  const NoiseSchedule& sched);

struct IterationState {
  int iteration = 0;
  DenoiserParams params;
  DenoiserParams ref_params;
  std::optional<ThresholdTable> thresholds;
  std::vector<nlohmann::ordered_json> metrics;
};

struct PipelineResult {
  IterationState state;
  std::vector<DenoiserParams> iterates;  // model after iteration 0, 1, ...
  std::vector<EvalReport> evals;         // per iterate
  std::vector<Vec> accuracies;           // per iterate, on the clean test split
  std::vector<ThresholdTable> thresholds;                      // iterations 1..I
  std::vector<std::vector<PseudoLabelRecord>> pseudo_labels;  // iterations 1..I
  std::vector<StepLog> trajectory;
  PartitionStats partition;
  std::vector<nlohmann::ordered_json> metrics;  // one record per iteration
};

/// Clean test split: a seeded 2%-style sample of the labeled set. Returns
/// (train, test) preserving input order within each side.
std::pair<std::vector<PreferencePair>, std::vector<PreferencePair>> split_clean(
    std::span<const PreferencePair> labeled, double test_frac, std::uint64_t seed);

/// Stream seeds used by the pipeline, exposed so equivalence tests can rebuild them.
std::uint64_t train_stream_seed(const RunConfig& config, int iteration);

/// Writes ref.ckpt, iterN.ckpt, metrics.jsonl, thresholds.jsonl (semi mode)
/// and pseudo_labels.jsonl (semi mode) under `out_dir` when it is non-empty.
PipelineResult run_pipeline(const RunConfig& config, std::span<const PreferencePair> dataset,
                            const DenoiserParams& ref,
                            const std::filesystem::path& out_dir = {});

nlohmann::ordered_json to_json(const ThresholdTable& t);
nlohmann::ordered_json to_json(const PseudoLabelRecord& r);

}  // namespace semidpo
