#include "semidpo/semitrain.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <numeric>

#include "semidpo/parallel.hpp"

namespace semidpo {

std::vector<Interval> make_intervals(int T, int N) {
  if (N < 1 || N > T) throw ConfigError("make_intervals: need 1 <= N <= T");
  std::vector<Interval> out(static_cast<std::size_t>(N));
  for (int j = 0; j < N; ++j) {
    out[j].lo = static_cast<int>(static_cast<long long>(j) * T / N);
    out[j].hi = static_cast<int>(static_cast<long long>(j + 1) * T / N);
  }
  return out;
}

std::size_t interval_of(int t, std::span<const Interval> intervals) {
  const int idx = t - 1;
  for (std::size_t j = 0; j < intervals.size(); ++j)
    if (idx >= intervals[j].lo && idx < intervals[j].hi) return j;
  throw std::invalid_argument("interval_of: timestep " + std::to_string(t) + " not covered");
}

double nearest_rank(std::span<const double> sorted, double q) {
  require(!sorted.empty(), "nearest_rank: empty sample");
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

ThresholdTable build_thresholds(std::span<const Interval> intervals,
                                std::span<const Confidence> confidences,
                                std::span<const double> accuracy_by_interval,
                                const ThresholdParams& params,
                                std::span<const int> prior_raises) {
  const auto& p = params;
  if (!(p.percentile > 0.0 && p.percentile < 1.0))
    throw ConfigError("build_thresholds: percentile must be in (0,1)");
  if (!(p.acc_floor >= 0.0 && p.acc_floor <= 1.0))
    throw ConfigError("build_thresholds: acc_floor must be in [0,1]");
  if (!(p.raise_step > 0.0 && p.raise_step <= 1.0))
    throw ConfigError("build_thresholds: raise_step must be in (0,1]");
  const std::size_t N = intervals.size();
  require_dim(accuracy_by_interval.size(), N, "build_thresholds accuracy");
  if (!prior_raises.empty()) require_dim(prior_raises.size(), N, "build_thresholds prior raises");
  for (double a : accuracy_by_interval)
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("build_thresholds: accuracy must be in [0,1]");

  std::vector<Vec> bins(N);
  for (const auto& c : confidences) {
    require(c.value >= 0.0, "build_thresholds: confidence must be >= 0");
    bins[interval_of(c.t, intervals)].push_back(c.value);
  }

  constexpr double inf = std::numeric_limits<double>::infinity();
  ThresholdTable tab;
  tab.intervals.assign(intervals.begin(), intervals.end());
  tab.accuracy.assign(accuracy_by_interval.begin(), accuracy_by_interval.end());
  tab.tau.assign(N, inf);
  tab.base_tau.assign(N, inf);
  tab.raises.assign(N, 0);
  for (std::size_t j = 0; j < N; ++j) {
    Vec& v = bins[j];
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    const double base = nearest_rank(v, p.percentile);
    tab.base_tau[j] = tab.tau[j] = base;
    if (!(accuracy_by_interval[j] < p.acc_floor)) continue;

    int r = (prior_raises.empty() ? 0 : prior_raises[j]) + 1;
    auto level = [&](int k) { return std::min(1.0, p.percentile + k * p.raise_step); };
    double tau = nearest_rank(v, level(r));
    while (tau <= base && level(r) < 1.0) tau = nearest_rank(v, level(++r));
    // Already at the top confidence: move just past it so nothing is selected.
    if (tau <= base) tau = std::nextafter(base, inf);
    tab.tau[j] = tau;
    tab.raises[j] = r;
  }
  return tab;
}

// ---------------------------------------------------------------------------

std::string to_string(Decision d) {
  switch (d) {
    case Decision::keep: return "keep";
    case Decision::swap: return "swap";
    case Decision::reject: return "reject";
  }
  return "?";
}

double pseudo_logit(const DenoiserParams& frozen, const DenoiserParams& ref,
                    const PreferencePair& pair, int t, std::span<const double> eps,
                    double beta_dpo, const NoiseSchedule& sched) {
  return margin_logit(frozen, ref, pair, t, eps, beta_dpo, sched);
}

Vec measure_interval_accuracy(const DenoiserParams& frozen, const DenoiserParams& ref,
                              std::span<const PreferencePair> clean_test,
                              std::span<const Interval> intervals, int draws_per_pair,
                              double beta_dpo, const NoiseSchedule& sched, Rng& rng,
                              int workers) {
  require(!clean_test.empty(), "measure_interval_accuracy: empty clean test set");
  require(draws_per_pair >= 1, "measure_interval_accuracy: draws_per_pair must be >= 1");
  const std::size_t d = frozen.arch.d;
  struct Probe {
    std::size_t pair, interval;
    int t;
    Vec eps;
  };
  std::vector<Probe> probes;
  for (std::size_t j = 0; j < intervals.size(); ++j) {
    require(intervals[j].hi > intervals[j].lo, "measure_interval_accuracy: empty interval");
    for (std::size_t i = 0; i < clean_test.size(); ++i)
      for (int k = 0; k < draws_per_pair; ++k) {
        const int t = 1 + uniform_int(rng, intervals[j].lo, intervals[j].hi - 1);
        probes.push_back({i, j, t, normal_vector(rng, d)});
      }
  }
  std::vector<unsigned char> correct(probes.size(), 0);
  parallel_for(probes.size(), workers, [&](std::size_t n) {
    const auto& pr = probes[n];
    correct[n] = margin_logit(frozen, ref, clean_test[pr.pair], pr.t, pr.eps, beta_dpo, sched) > 0.0;
  });
  Vec hits(intervals.size(), 0.0), total(intervals.size(), 0.0);
  for (std::size_t n = 0; n < probes.size(); ++n) {
    hits[probes[n].interval] += correct[n];
    total[probes[n].interval] += 1.0;
  }
  for (std::size_t j = 0; j < hits.size(); ++j) hits[j] /= total[j];
  return hits;
}

std::vector<PseudoLabelRecord> score_pseudo_labels(std::span<const PreferencePair> unlabeled,
                                                   const DenoiserParams& frozen,
                                                   const DenoiserParams& ref,
                                                   std::span<const Interval> intervals,
                                                   int draws_per_pair, double beta_dpo,
                                                   const NoiseSchedule& sched, Rng& rng,
                                                   int workers) {
  const int T = sched.T;
  require(draws_per_pair >= 1 && draws_per_pair <= T,
          "score_pseudo_labels: draws_per_pair must be in [1, T]");
  const std::size_t d = frozen.arch.d;
  std::vector<PseudoLabelRecord> recs;
  recs.reserve(unlabeled.size() * static_cast<std::size_t>(draws_per_pair));
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    for (int s = 0; s < draws_per_pair; ++s) {
      // stratum s of [0, T)
      const int lo = static_cast<int>(static_cast<long long>(s) * T / draws_per_pair);
      const int hi = static_cast<int>(static_cast<long long>(s + 1) * T / draws_per_pair);
      PseudoLabelRecord r;
      r.pair_index = i;
      r.t = 1 + uniform_int(rng, lo, hi - 1);
      r.eps = normal_vector(rng, d);
      r.interval = interval_of(r.t, intervals);
      recs.push_back(std::move(r));
    }
  }
  parallel_for(recs.size(), workers, [&](std::size_t n) {
    auto& r = recs[n];
    r.z = pseudo_logit(frozen, ref, unlabeled[r.pair_index], r.t, r.eps, beta_dpo, sched);
    r.confidence = std::abs(r.z);
  });
  return recs;
}

void decide_pseudo_labels(std::span<PseudoLabelRecord> records, const ThresholdTable& thresholds) {
  for (auto& r : records) {
    require(r.interval < thresholds.tau.size(), "decide_pseudo_labels: interval out of range");
    if (!(r.confidence > thresholds.tau[r.interval]) || r.z == 0.0)
      r.decision = Decision::reject;
    else
      r.decision = r.z > 0.0 ? Decision::keep : Decision::swap;
  }
}

std::vector<PseudoLabelRecord> apply_pseudo_labels(std::span<const PreferencePair> unlabeled,
                                                   const DenoiserParams& frozen,
                                                   const DenoiserParams& ref,
                                                   const ThresholdTable& thresholds,
                                                   int draws_per_pair, double beta_dpo,
                                                   const NoiseSchedule& sched, Rng& rng,
                                                   int workers) {
  auto recs = score_pseudo_labels(unlabeled, frozen, ref, thresholds.intervals, draws_per_pair,
                                  beta_dpo, sched, rng, workers);
  decide_pseudo_labels(recs, thresholds);
  return recs;
}

std::vector<Confidence> confidences_of(std::span<const PseudoLabelRecord> records) {
  std::vector<Confidence> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.t, r.confidence});
  return out;
}

PreferencePair pseudo_pair(const PseudoLabelRecord& rec, std::span<const PreferencePair> pairs) {
  require(rec.pair_index < pairs.size(), "pseudo-label record points past the unlabeled set");
  require(rec.decision != Decision::reject, "rejected pseudo-label record used for training");
  PreferencePair p = rec.decision == Decision::swap ? swapped(pairs[rec.pair_index])
                                                    : pairs[rec.pair_index];
  p.origin = Origin::pseudo;
  return p;
}

// ---------------------------------------------------------------------------

double anchor_loss(const DenoiserParams& params, const DenoiserParams& ref,
                   std::span<const PreferencePair> labeled_batch, double beta_dpo,
                   const NoiseSchedule& sched, Rng& rng) {
  require(!labeled_batch.empty(), "anchor_loss: empty batch");
  std::vector<NoiseDraw> draws(labeled_batch.size());
  for (auto& dr : draws) {
    dr.t = uniform_int(rng, 1, sched.T);
    dr.eps = normal_vector(rng, params.arch.d);
  }
  return dpo_loss(params, ref, labeled_batch, draws, beta_dpo, sched);
}

double pseudo_label_loss(const DenoiserParams& params, const DenoiserParams& ref,
                         std::span<const PseudoLabelRecord> accepted,
                         std::span<const PreferencePair> pairs, double beta_dpo,
                         const NoiseSchedule& sched) {
  if (accepted.empty()) return 0.0;
  Vec per(accepted.size());
  for (std::size_t i = 0; i < accepted.size(); ++i) {
    const PreferencePair p = pseudo_pair(accepted[i], pairs);
    per[i] = neg_log_sigmoid(margin_logit(params, ref, p, accepted[i].t, accepted[i].eps,
                                          beta_dpo, sched));
  }
  return pairwise_sum(per) / static_cast<double>(per.size());
}

double composite_loss(const DenoiserParams& params, const DenoiserParams& ref,
                      std::span<const PreferencePair> labeled_batch,
                      std::span<const PseudoLabelRecord> accepted,
                      std::span<const PreferencePair> pairs, double beta_dpo,
                      const NoiseSchedule& sched, Rng& rng, LossWeights weights) {
  const double a = anchor_loss(params, ref, labeled_batch, beta_dpo, sched, rng);
  const double p = pseudo_label_loss(params, ref, accepted, pairs, beta_dpo, sched);
  return weights.anchor * a + weights.pseudo * p;
}

// ---------------------------------------------------------------------------

std::vector<StepLog> train_phase(DenoiserParams& params, const DenoiserParams& ref,
                                 std::span<const PreferencePair> labeled,
                                 std::span<const PreferencePair> unlabeled,
                                 std::span<const PseudoLabelRecord> accepted,
                                 const PhaseSpec& spec, double beta_dpo,
                                 const NoiseSchedule& sched, Rng& rng, int iteration,
                                 int workers) {
  if (spec.steps > 0) require(!labeled.empty(), "train_phase: no labeled pairs");
  MomentumSgd opt(spec.momentum);
  const int warm = std::max(1, static_cast<int>(spec.warmup_frac * spec.steps));
  const std::size_t B = spec.batch, d = params.arch.d;
  std::vector<StepLog> log;
  log.reserve(static_cast<std::size_t>(std::max(0, spec.steps)));

  std::vector<PreferencePair> batch(B);
  std::vector<NoiseDraw> draws(B);
  GradVector ga, gp;
  for (int s = 0; s < spec.steps; ++s) {
    const double lr = spec.lr * std::min(1.0, static_cast<double>(s + 1) / warm);
    StepLog entry{iteration, s, 0.0, 0.0, 0.0};

    for (std::size_t b = 0; b < B; ++b) {
      batch[b] = labeled[static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<int>(labeled.size()) - 1))];
      draws[b].t = uniform_int(rng, 1, sched.T);
      draws[b].eps = normal_vector(rng, d);
    }
    entry.anchor = dpo_loss_grad(params, ref, batch, draws, beta_dpo, sched, ga, workers);
    GradVector total{ga.g};
    for (auto& v : total.g) v *= spec.weights.anchor;

    if (!accepted.empty()) {
      for (std::size_t b = 0; b < B; ++b) {
        const auto& rec = accepted[static_cast<std::size_t>(
            uniform_int(rng, 0, static_cast<int>(accepted.size()) - 1))];
        batch[b] = pseudo_pair(rec, unlabeled);
        draws[b].t = rec.t;
        draws[b].eps = rec.eps;
      }
      entry.pseudo = dpo_loss_grad(params, ref, batch, draws, beta_dpo, sched, gp, workers);
      for (std::size_t i = 0; i < total.g.size(); ++i) total.g[i] += spec.weights.pseudo * gp.g[i];
    }
    entry.total = spec.weights.anchor * entry.anchor + spec.weights.pseudo * entry.pseudo;
    if (!std::isfinite(entry.total))
      throw NumericError(fmt::format("non-finite loss at step {}", s));
    opt.step(params, total, lr);
    log.push_back(entry);
  }
  return log;
}

DenoiserParams pretrain_reference(const RunConfig& config,
                                  std::span<const PreferencePair> dataset,
                                  const NoiseSchedule& sched) {
  Rng rng(derive_seed(config.seed, 201));
  DenoiserParams params = init_params(config.arch, rng);
  const auto& pc = config.pretrain;
  if (pc.steps <= 0) return params;
  require(!dataset.empty(), "pretrain_reference: empty dataset");
  MomentumSgd opt(pc.momentum);
  const int n = static_cast<int>(dataset.size());
  const int warm = std::max(1, pc.steps / 10);
  std::vector<DenoiseItem> batch(pc.batch);
  GradVector g;
  for (int s = 0; s < pc.steps; ++s) {
    for (auto& it : batch) {
      const int k = uniform_int(rng, 0, 2 * n - 1);
      const auto& p = dataset[static_cast<std::size_t>(k / 2)];
      it.x0 = k % 2 == 0 ? p.x0_w : p.x0_l;
      it.c = p.c;
      it.t = uniform_int(rng, 1, sched.T);
      it.eps = normal_vector(rng, config.arch.d);
    }
    const double loss = denoise_loss_grad(params, batch, sched, g, config.workers);
    if (!std::isfinite(loss)) throw NumericError(fmt::format("pretrain: non-finite loss at step {}", s));
    opt.step(params, g, pc.lr * std::min(1.0, static_cast<double>(s + 1) / warm));
  }
  return params;
}

std::pair<std::vector<PreferencePair>, std::vector<PreferencePair>> split_clean(
    std::span<const PreferencePair> labeled, double test_frac, std::uint64_t seed) {
  const std::size_t n = labeled.size();
  std::size_t n_test = 0;
  if (n >= 2) {
    n_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(n)));
    n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<unsigned char> is_test(n, 0);
  for (std::size_t i = 0; i < n_test; ++i) is_test[idx[i]] = 1;
  std::pair<std::vector<PreferencePair>, std::vector<PreferencePair>> out;
  for (std::size_t i = 0; i < n; ++i) (is_test[i] ? out.second : out.first).push_back(labeled[i]);
  return out;
}

std::uint64_t train_stream_seed(const RunConfig& config, int iteration) {
  return derive_seed(config.seed, 301 + static_cast<std::uint64_t>(iteration));
}

nlohmann::ordered_json to_json(const ThresholdTable& t) {
  nlohmann::ordered_json j;
  j["iteration"] = t.iteration;
  auto iv = nlohmann::ordered_json::array();
  for (const auto& i : t.intervals) iv.push_back({i.lo, i.hi});
  j["intervals"] = iv;
  auto finite_or_null = [](const Vec& v) {
    auto a = nlohmann::ordered_json::array();
    for (double x : v) a.push_back(std::isfinite(x) ? nlohmann::ordered_json(x) : nullptr);
    return a;
  };
  j["tau"] = finite_or_null(t.tau);
  j["base_tau"] = finite_or_null(t.base_tau);
  j["accuracy"] = t.accuracy;
  j["raises"] = t.raises;
  return j;
}

nlohmann::ordered_json to_json(const PseudoLabelRecord& r) {
  nlohmann::ordered_json j;
  j["pair_index"] = r.pair_index;
  j["t"] = r.t;
  j["z"] = r.z;
  j["confidence"] = r.confidence;
  j["decision"] = to_string(r.decision);
  j["interval"] = r.interval;
  j["eps"] = r.eps;
  return j;
}

namespace {

class JsonlSink {
 public:
  JsonlSink() = default;
  explicit JsonlSink(const std::filesystem::path& path) {
    os_.open(path, std::ios::binary | std::ios::trunc);
    if (!os_) throw IoError("cannot open for writing: " + path.string());
  }
  void write(const nlohmann::ordered_json& j) {
    if (!os_.is_open()) return;
    os_ << j.dump() << '\n';
    os_.flush();
    if (!os_) throw IoError("write failed");
  }

 private:
  std::ofstream os_;
};

double tail_mean(const std::vector<StepLog>& log, double StepLog::*field) {
  if (log.empty()) return 0.0;
  const std::size_t n = std::max<std::size_t>(1, log.size() / 10);
  Vec v;
  for (std::size_t i = log.size() - n; i < log.size(); ++i) v.push_back(log[i].*field);
  return pairwise_sum(v) / static_cast<double>(v.size());
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& config, std::span<const PreferencePair> dataset,
                            const DenoiserParams& ref, const std::filesystem::path& out_dir) {
  const NoiseSchedule sched = make_schedule(config);
  const auto& tc = config.train;
  const bool semi = tc.mode == "semi";
  const bool dpo_all = tc.mode == "dpo_all";
  const int iterations = tc.mode == "clean_only" ? 0 : tc.iterations;
  const double beta = tc.beta_dpo;
  const int workers = config.workers;
  if (ref.arch != config.arch) throw ConfigError("reference arch does not match config arch");

  const auto part = consensus_partition(dataset, config.committee, workers);
  if (part.labeled.empty()) throw ConfigError("consensus partition produced an empty clean set");
  auto [clean_train, clean_test] =
      split_clean(part.labeled, tc.test_frac, derive_seed(config.seed, 101));
  if (clean_test.empty() && iterations > 0)
    throw ConfigError("clean set too small to hold out a test split");

  const auto intervals = make_intervals(sched.T, config.threshold.intervals);
  const ThresholdParams tparams{config.threshold.percentile, config.threshold.acc_floor,
                                config.threshold.raise_step};
  const auto prompts = eval_prompts(config.eval.n_prompts, config.arch.d_c, config.eval.seed);
  const std::string hash = config_hash(config);
  const CheckpointMeta meta{config.seed, config_hash_value(config)};

  JsonlSink metrics_out, thresholds_out, labels_out;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics_out = JsonlSink(out_dir / "metrics.jsonl");
    if (semi) {
      thresholds_out = JsonlSink(out_dir / "thresholds.jsonl");
      labels_out = JsonlSink(out_dir / "pseudo_labels.jsonl");
    }
    save_checkpoint(ref, meta, out_dir / "ref.ckpt");
  }
  {
    nlohmann::ordered_json head;
    head["record"] = "config";
    head["tool_version"] = kToolVersion;
    head["config_hash"] = hash;
    head["config"] = to_json(config);
    metrics_out.write(head);
    nlohmann::ordered_json p;
    p["record"] = "partition";
    p["n_total"] = part.stats.n_total;
    p["n_labeled"] = part.stats.n_labeled;
    p["n_unlabeled"] = part.stats.n_unlabeled;
    p["agree_counts"] = part.stats.agree_counts;
    p["n_clean_train"] = clean_train.size();
    p["n_clean_test"] = clean_test.size();
    metrics_out.write(p);
    nlohmann::ordered_json r;
    r["record"] = "reference";
    r["eval"] = to_json(evaluate_model(ref, config.committee, prompts,
                                       config.eval.samples_per_prompt, sched, config.eval.seed,
                                       workers));
    metrics_out.write(r);
  }

  PipelineResult res;
  res.partition = part.stats;
  res.state.params = ref;
  res.state.ref_params = ref;
  DenoiserParams& params = res.state.params;

  const std::span<const PreferencePair> train_pairs =
      dpo_all ? dataset : std::span<const PreferencePair>(clean_train);
  std::vector<int> prior_raises;

  for (int it = 0; it <= iterations; ++it) {
    try {
      nlohmann::ordered_json m;
      m["record"] = "iteration";
      m["iteration"] = it;
      m["mode"] = tc.mode;

      std::vector<PseudoLabelRecord> accepted;
      if (it > 0 && semi) {
        const DenoiserParams frozen = params;
        Rng prng(derive_seed(config.seed, 501 + static_cast<std::uint64_t>(it)));
        auto records = score_pseudo_labels(part.unlabeled, frozen, ref, intervals,
                                           config.threshold.draws_per_pair, beta, sched, prng,
                                           workers);
        ThresholdTable tab = build_thresholds(intervals, confidences_of(records),
                                              res.accuracies.back(), tparams, prior_raises);
        tab.iteration = it;
        prior_raises = tab.raises;
        decide_pseudo_labels(records, tab);

        std::size_t n_keep = 0, n_swap = 0, n_agree = 0;
        for (const auto& r : records) {
          if (r.decision == Decision::reject) continue;
          (r.decision == Decision::keep ? n_keep : n_swap)++;
          const PreferencePair p = pseudo_pair(r, part.unlabeled);
          const Vec dr = reward_diffs(config.committee, p);
          n_agree += std::accumulate(dr.begin(), dr.end(), 0.0) > 0.0;
          accepted.push_back(r);
        }
        m["thresholds"] = to_json(tab);
        m["n_records"] = records.size();
        m["n_accepted"] = accepted.size();
        m["n_keep"] = n_keep;
        m["n_swap"] = n_swap;
        m["acceptance_fraction"] =
            records.empty() ? 0.0 : static_cast<double>(accepted.size()) / records.size();
        m["accepted_agree_mean_reward"] =
            accepted.empty() ? 0.0 : static_cast<double>(n_agree) / accepted.size();

        thresholds_out.write(to_json(tab));
        for (const auto& r : records) {
          auto j = to_json(r);
          j["iteration"] = it;
          labels_out.write(j);
        }
        res.thresholds.push_back(std::move(tab));
        res.pseudo_labels.push_back(std::move(records));
      }

      PhaseSpec phase;
      phase.steps = it == 0 ? tc.cold_start_steps : tc.iter_steps;
      phase.lr = it == 0 ? tc.lr0 : tc.lr_iter;
      phase.momentum = tc.momentum;
      phase.batch = tc.batch;
      phase.warmup_frac = tc.warmup_frac;
      phase.weights = {tc.anchor_weight, tc.pseudo_weight};
      Rng trng(train_stream_seed(config, it));
      const auto log = train_phase(params, ref, train_pairs, part.unlabeled, accepted, phase,
                                   beta, sched, trng, it, workers);
      res.trajectory.insert(res.trajectory.end(), log.begin(), log.end());
      if (tc.log_every > 0) {
        for (const auto& e : log) {
          if (e.step % tc.log_every != 0 && e.step + 1 != static_cast<int>(log.size())) continue;
          nlohmann::ordered_json s;
          s["record"] = "step";
          s["iteration"] = it;
          s["step"] = e.step;
          s["anchor"] = e.anchor;
          s["pseudo"] = e.pseudo;
          s["total"] = e.total;
          metrics_out.write(s);
        }
      }

      Vec acc;
      if (!clean_test.empty()) {
        Rng arng(derive_seed(config.seed, 401 + static_cast<std::uint64_t>(it)));
        acc = measure_interval_accuracy(params, ref, clean_test, intervals,
                                        config.threshold.accuracy_draws, beta, sched, arng,
                                        workers);
      }
      EvalReport ev = evaluate_model(params, config.committee, prompts,
                                     config.eval.samples_per_prompt, sched, config.eval.seed,
                                     workers);
      ev.interval_accuracy = acc;

      m["steps"] = phase.steps;
      m["lr"] = phase.lr;
      m["loss_tail_mean"] = tail_mean(log, &StepLog::total);
      m["anchor_tail_mean"] = tail_mean(log, &StepLog::anchor);
      m["pseudo_tail_mean"] = tail_mean(log, &StepLog::pseudo);
      m["interval_accuracy"] = acc;
      m["eval"] = to_json(ev);
      metrics_out.write(m);

      if (!out_dir.empty()) save_checkpoint(params, meta, out_dir / fmt::format("iter{}.ckpt", it));

      res.iterates.push_back(params);
      res.accuracies.push_back(std::move(acc));
      res.evals.push_back(std::move(ev));
      res.metrics.push_back(m);
      res.state.metrics.push_back(m);
      res.state.iteration = it;
      if (!res.thresholds.empty() && it > 0 && semi) res.state.thresholds = res.thresholds.back();
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("iteration {}: {}", it, e.what()));
    } catch (const IoError& e) {
      throw IoError(fmt::format("iteration {}: {}", it, e.what()));
    }
  }
  return res;
}

}  // namespace semidpo
